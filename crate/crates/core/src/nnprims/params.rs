//! Named parameter tensors with Adam state, gradient buffers and the
//! single-file checkpoint format.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng;

const CHECKPOINT_MAGIC: &str = "TCKP1";

/// Initial values of a new parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Const(f32),
    /// Uniform on `[-bound, bound]`.
    Uniform(f32),
}

impl Init {
    /// Fan-in scaled uniform for layers followed by a ReLU.
    pub fn relu(fan_in: usize) -> Self {
        Init::Uniform((6.0 / fan_in as f32).sqrt())
    }
    /// Fan-in scaled uniform for linear or saturating layers.
    pub fn linear(fan_in: usize) -> Self {
        Init::Uniform(1.0 / (fan_in as f32).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    m: Vec<f32>,
    v: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    /// Rescale the whole gradient when its global L2 norm exceeds this.
    pub clip_norm: Option<f32>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: None }
    }
}

/// Gradient buffers aligned with a [`ParameterSet`]. Parameters that took
/// no part in a computation have no buffer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<Vec<f32>>>,
}

impl Gradients {
    pub fn new(n: usize) -> Self {
        Self { grads: vec![None; n] }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }
    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn get(&self, idx: usize) -> Option<&[f32]> {
        self.grads.get(idx).and_then(|g| g.as_deref())
    }

    pub fn accumulate(&mut self, idx: usize, g: &[f32]) {
        match &mut self.grads[idx] {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            slot => *slot = Some(g.to_vec()),
        }
    }

    /// Adds every buffer of `other` into `self`.
    pub fn merge(&mut self, other: &Gradients) {
        if self.grads.len() < other.grads.len() {
            self.grads.resize(other.grads.len(), None);
        }
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(i, g);
            }
        }
    }

    pub fn scale(&mut self, s: f32) {
        for g in self.grads.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

/// Named tensors `θ` of a model, their optimizer state and the seed they
/// were initialized from.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    seed: u64,
    step: u64,
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    magic: String,
    seed: u64,
    step: u64,
    params: Vec<ManifestEntry>,
    #[serde(default)]
    meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
}

impl ParameterSet {
    pub fn new(seed: u64) -> Self {
        Self { seed, step: 0, params: Vec::new(), index: HashMap::new() }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn step(&self) -> u64 {
        self.step
    }
    pub fn len(&self) -> usize {
        self.params.len()
    }
    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }
    pub fn params(&self) -> &[Param] {
        &self.params
    }

    /// Registers a parameter. Its initial values come from a stream keyed
    /// by the set seed and the parameter name, so adding parameters never
    /// perturbs the values of the others.
    pub fn add(&mut self, name: &str, shape: Vec<usize>, init: Init) -> Result<usize> {
        if self.index.contains_key(name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter {name}")));
        }
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Const(c) => vec![c; n],
            Init::Uniform(bound) => {
                let mut r = rng::rng_for(self.seed, &format!("init/{name}"));
                (0..n).map(|_| r.random_range(-bound..=bound)).collect()
            }
        };
        let value = Tensor::new(shape, data)?;
        let idx = self.params.len();
        self.params.push(Param { name: name.to_string(), value, m: vec![0.0; n], v: vec![0.0; n] });
        self.index.insert(name.to_string(), idx);
        Ok(idx)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn value(&self, idx: usize) -> &Tensor {
        &self.params[idx].value
    }

    pub fn value_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.params[idx].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| self.value(i))
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// One Adam update. A non-finite gradient leaves the set untouched and
    /// reports divergence.
    pub fn adam_step(&mut self, grads: &Gradients, cfg: &AdamConfig) -> Result<()> {
        if !grads.all_finite() {
            return Err(Error::Diverged("non-finite gradient".into()));
        }
        let clip = match cfg.clip_norm {
            Some(max) => {
                let n = grads.norm();
                if n > f64::from(max) {
                    (f64::from(max) / n) as f32
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - f64::from(cfg.beta1).powi(t);
        let bc2 = 1.0 - f64::from(cfg.beta2).powi(t);
        for (i, p) in self.params.iter_mut().enumerate() {
            let g = grads.get(i);
            let values = p.value.data_mut();
            for j in 0..values.len() {
                let gj = g.map_or(0.0, |g| g[j] * clip);
                p.m[j] = cfg.beta1 * p.m[j] + (1.0 - cfg.beta1) * gj;
                p.v[j] = cfg.beta2 * p.v[j] + (1.0 - cfg.beta2) * gj * gj;
                let mhat = f64::from(p.m[j]) / bc1;
                let vhat = f64::from(p.v[j]) / bc2;
                values[j] -= (f64::from(cfg.lr) * mhat / (vhat.sqrt() + f64::from(cfg.eps))) as f32;
            }
        }
        if self.params.iter().any(|p| !p.value.all_finite()) {
            return Err(Error::Diverged("non-finite parameter after update".into()));
        }
        Ok(())
    }

    /// Copies values (not optimizer state) from a set with the same layout.
    pub fn copy_values_from(&mut self, other: &ParameterSet) -> Result<()> {
        self.check_layout(other)?;
        for (p, q) in self.params.iter_mut().zip(&other.params) {
            p.value = q.value.clone();
        }
        Ok(())
    }

    /// Copies values for every parameter whose name also exists in
    /// `other`; shapes must agree.
    pub fn copy_matching(&mut self, other: &ParameterSet) -> Result<()> {
        for p in &mut self.params {
            if let Some(src) = other.by_name(&p.name) {
                if src.shape() != p.value.shape() {
                    return Err(Error::ShapeMismatch(format!("parameter {} changed shape", p.name)));
                }
                p.value = src.clone();
            }
        }
        Ok(())
    }

    fn check_layout(&self, other: &ParameterSet) -> Result<()> {
        let same = self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.name == b.name && a.value.shape() == b.value.shape());
        if same {
            Ok(())
        } else {
            Err(Error::ShapeMismatch("parameter layouts differ".into()))
        }
    }

    /// SHA-256 over names, shapes and little-endian values.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.name.as_bytes());
            h.update([0]);
            for d in p.value.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Checkpoint bytes: one JSON manifest line, then every tensor as
    /// raw `f32` little-endian in manifest order.
    pub fn to_bytes(&self, meta: &serde_json::Value) -> Vec<u8> {
        let manifest = Manifest {
            magic: CHECKPOINT_MAGIC.into(),
            seed: self.seed,
            step: self.step,
            params: self
                .params
                .iter()
                .map(|p| ManifestEntry { name: p.name.clone(), shape: p.value.shape().to_vec() })
                .collect(),
            meta: meta.clone(),
        };
        let mut out = serde_json::to_vec(&manifest).expect("manifest serializes");
        out.push(b'\n');
        for p in &self.params {
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<(Self, serde_json::Value)> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::format(path, "missing manifest line"))?;
        let manifest: Manifest =
            serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::format(path, format!("bad manifest: {e}")))?;
        if manifest.magic != CHECKPOINT_MAGIC {
            return Err(Error::format(path, format!("bad magic {:?}", manifest.magic)));
        }
        let mut set = ParameterSet::new(manifest.seed);
        set.step = manifest.step;
        let mut blob = bytes[nl + 1..].chunks_exact(4);
        for e in &manifest.params {
            let n: usize = e.shape.iter().product();
            if blob.len() < n {
                return Err(Error::format(path, "truncated parameter data"));
            }
            let data: Vec<f32> = blob
                .by_ref()
                .take(n)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let idx = set.add(&e.name, e.shape.clone(), Init::Zeros).map_err(|err| Error::format(path, err.to_string()))?;
            set.params[idx].value.data_mut().copy_from_slice(&data);
        }
        if blob.len() != 0 || !blob.remainder().is_empty() {
            return Err(Error::format(path, "trailing bytes after parameter data"));
        }
        Ok((set, manifest.meta))
    }

    pub fn save(&self, path: &Path, meta: &serde_json::Value) -> Result<()> {
        std::fs::write(path, self.to_bytes(meta)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_set(v: f32) -> ParameterSet {
        let mut s = ParameterSet::new(1);
        s.add("x", vec![1], Init::Const(v)).unwrap();
        s
    }

    fn grad_of(g: f32) -> Gradients {
        let mut gr = Gradients::new(1);
        gr.accumulate(0, &[g]);
        gr
    }

    #[test]
    fn zero_gradient_leaves_values() {
        let mut s = scalar_set(0.7);
        for _ in 0..3 {
            s.adam_step(&grad_of(0.0), &AdamConfig::default()).unwrap();
        }
        assert_eq!(s.value(0).data(), &[0.7]);
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut s = scalar_set(0.7);
        let cfg = AdamConfig { lr: 0.0, ..AdamConfig::default() };
        s.adam_step(&grad_of(3.0), &cfg).unwrap();
        assert_eq!(s.value(0).data(), &[0.7]);
    }

    #[test]
    fn constant_gradient_matches_hand_recurrence() {
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        let mut s = scalar_set(1.0);
        let g = 0.5f64;
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 1.0f64);
        for t in 1..=3 {
            s.adam_step(&grad_of(g as f32), &cfg).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.1 * mh / (vh.sqrt() + 1e-8);
        }
        assert!((f64::from(s.value(0).data()[0]) - x).abs() < 1e-6);
        // With a constant gradient every bias-corrected step is ~lr.
        assert!((x - 0.7).abs() < 1e-6);
    }

    #[test]
    fn nan_gradient_reports_divergence() {
        let mut s = scalar_set(1.0);
        let err = s.adam_step(&grad_of(f32::NAN), &AdamConfig::default()).unwrap_err();
        assert!(err.to_string().contains("diverged"));
        assert_eq!(s.value(0).data(), &[1.0]);
    }

    #[test]
    fn init_depends_on_seed_and_name_only() {
        let mut a = ParameterSet::new(5);
        a.add("w", vec![3, 3], Init::Uniform(1.0)).unwrap();
        let mut b = ParameterSet::new(5);
        b.add("other", vec![2], Init::Uniform(1.0)).unwrap();
        b.add("w", vec![3, 3], Init::Uniform(1.0)).unwrap();
        assert_eq!(a.by_name("w"), b.by_name("w"));
        let mut c = ParameterSet::new(6);
        c.add("w", vec![3, 3], Init::Uniform(1.0)).unwrap();
        assert_ne!(a.by_name("w"), c.by_name("w"));
        assert!(a.add("w", vec![1], Init::Zeros).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut s = ParameterSet::new(9);
        s.add("a", vec![2, 3], Init::Uniform(0.5)).unwrap();
        s.add("b", vec![4], Init::Const(-1.5)).unwrap();
        s.adam_step(&Gradients::new(2), &AdamConfig::default()).unwrap();
        let meta = serde_json::json!({"kind": "test"});
        let bytes = s.to_bytes(&meta);
        let (back, m) = ParameterSet::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.hash(), s.hash());
        assert_eq!(back.step(), 1);
        assert_eq!(back.seed(), 9);
        assert_eq!(m, meta);
        assert!(ParameterSet::from_bytes(&bytes[..bytes.len() - 2], Path::new("mem")).is_err());
    }
}
