//! K-means initialization and deep embedded clustering: Student-t soft
//! assignment, the sharpened target distribution, and KL refinement of
//! centroids together with the encoder.

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::nnprims::{AdamConfig, Gradients, Init, ParameterSet, Tape, Tensor, Var};
use crate::rng;

/// Row-major `n x dim` points.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    pub dim: usize,
    pub values: Vec<f32>,
}

impl Points {
    pub fn new(dim: usize, values: Vec<f32>) -> Result<Self> {
        if dim == 0 || !values.len().is_multiple_of(dim) {
            return Err(Error::ShapeMismatch(format!("{} values do not split into rows of {dim}", values.len())));
        }
        Ok(Self { dim, values })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::ShapeMismatch("rows differ in length".into()));
        }
        Self::new(dim, rows.concat())
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

fn dist2(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, y)| (f64::from(x) - y).powi(2)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    /// `k x dim`.
    pub centroids: Vec<f64>,
    pub assignments: Vec<usize>,
    pub iterations: usize,
}

/// Seeded k-means++ seeding followed by Lloyd iterations until no
/// assignment changes. A cluster that loses all members keeps its
/// previous centroid.
pub fn kmeans(points: &Points, k: usize, seed: u64) -> Result<KMeans> {
    let n = points.len();
    let d = points.dim;
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    let mut distinct: Vec<&[f32]> = (0..n).map(|i| points.row(i)).collect();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    distinct.dedup();
    if distinct.len() < k {
        return Err(Error::InsufficientData(format!("{} distinct points for {k} clusters", distinct.len())));
    }
    let mut r = rng::rng_for(seed, "kmeans");
    let mut centroids: Vec<f64> = Vec::with_capacity(k * d);
    let first = r.random_range(0..n);
    centroids.extend(points.row(first).iter().map(|&v| f64::from(v)));
    let mut nearest: Vec<f64> = (0..n).map(|i| dist2(points.row(i), &centroids[..d])).collect();
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let mut target = r.random::<f64>() * total;
        let mut pick = None;
        for (i, &w) in nearest.iter().enumerate() {
            if w > 0.0 {
                pick = Some(i);
                if target < w {
                    break;
                }
                target -= w;
            }
        }
        let pick = pick.expect("a point at positive distance exists while distinct points remain");
        centroids.extend(points.row(pick).iter().map(|&v| f64::from(v)));
        for (i, w) in nearest.iter_mut().enumerate() {
            *w = w.min(dist2(points.row(i), &centroids[c * d..(c + 1) * d]));
        }
    }
    let assign = |cs: &[f64]| -> Vec<usize> {
        (0..n)
            .map(|i| {
                let mut best = (f64::INFINITY, 0);
                for j in 0..k {
                    let dd = dist2(points.row(i), &cs[j * d..(j + 1) * d]);
                    if dd < best.0 {
                        best = (dd, j);
                    }
                }
                best.1
            })
            .collect()
    };
    let mut assignments = assign(&centroids);
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mut sums = vec![0.0f64; k * d];
        let mut counts = vec![0usize; k];
        for (i, &a) in assignments.iter().enumerate() {
            counts[a] += 1;
            for (s, &v) in sums[a * d..(a + 1) * d].iter_mut().zip(points.row(i)) {
                *s += f64::from(v);
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                for t in 0..d {
                    centroids[j * d + t] = sums[j * d + t] / counts[j] as f64;
                }
            }
        }
        let next = assign(&centroids);
        if next == assignments || iterations >= 10_000 {
            assignments = next;
            break;
        }
        assignments = next;
    }
    Ok(KMeans { centroids, assignments, iterations })
}

/// Initial cluster centroids for refinement.
pub fn kmeans_init(embeddings: &Points, k: usize, seed: u64) -> Result<Vec<f32>> {
    Ok(kmeans(embeddings, k, seed)?.centroids.iter().map(|&v| v as f32).collect())
}

/// Row-stochastic `n x k` soft assignment under a Student-t kernel with
/// `alpha` degrees of freedom.
pub fn soft_assign(embeddings: &Points, centroids: &[f32], alpha: f64) -> Vec<f64> {
    let c: Vec<f64> = centroids.iter().map(|&v| f64::from(v)).collect();
    (0..embeddings.len())
        .flat_map(|i| {
            let z: Vec<f64> = embeddings.row(i).iter().map(|&v| f64::from(v)).collect();
            crate::nnprims::loss::student_t_assign(&z, &c, alpha)
        })
        .collect()
}

/// Sharpened targets: `p_ij ∝ q_ij^2 / f_j` with cluster frequencies
/// `f_j = sum_i q_ij`.
pub fn target_distribution(q: &[f64], k: usize) -> Result<Vec<f64>> {
    let n = q.len() / k;
    let mut f = vec![0.0f64; k];
    for i in 0..n {
        for j in 0..k {
            f[j] += q[i * k + j];
        }
    }
    if let Some(j) = f.iter().position(|&v| v <= 0.0) {
        return Err(Error::CollapsedCluster { cluster: j });
    }
    let mut p = vec![0.0f64; q.len()];
    for i in 0..n {
        let row = &mut p[i * k..(i + 1) * k];
        for j in 0..k {
            row[j] = q[i * k + j] * q[i * k + j] / f[j];
        }
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    Ok(p)
}

/// `(1/n) sum_i sum_j p_ij log(p_ij / q_ij)`.
pub fn kl_divergence(p: &[f64], q: &[f64], k: usize) -> f64 {
    let n = (p.len() / k).max(1);
    p.iter()
        .zip(q)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, q)| p * (p / q).ln())
        .sum::<f64>()
        / n as f64
}

/// Something that maps item `i` to an embedding and can record that
/// mapping on a tape so its parameters receive gradients.
pub trait Embedder {
    fn count(&self) -> usize;
    fn dim(&self) -> usize;
    /// Trainable parameters; may be empty.
    fn params(&self) -> &ParameterSet;
    /// Takes trained values for every parameter of [`Embedder::params`]
    /// from a set that contains them by name.
    fn absorb(&mut self, trained: &ParameterSet) -> Result<()>;
    /// Records the embedding of item `i` (shape `[dim]`). Parameters must
    /// be looked up on the tape by name.
    fn embed_on_tape(&self, tape: &mut Tape, i: usize) -> Result<Var>;

    fn embed_all(&self) -> Result<Points> {
        let mut values = Vec::with_capacity(self.count() * self.dim());
        let ps = self.params();
        for i in 0..self.count() {
            let mut tape = Tape::new(ps);
            let v = self.embed_on_tape(&mut tape, i)?;
            values.extend_from_slice(tape.value(v).data());
        }
        Points::new(self.dim(), values)
    }
}

/// Fixed embeddings with nothing to train.
pub struct FixedEmbeddings {
    points: Points,
    params: ParameterSet,
}

impl FixedEmbeddings {
    pub fn new(points: Points) -> Self {
        Self { points, params: ParameterSet::new(0) }
    }
}

impl Embedder for FixedEmbeddings {
    fn count(&self) -> usize {
        self.points.len()
    }
    fn dim(&self) -> usize {
        self.points.dim
    }
    fn params(&self) -> &ParameterSet {
        &self.params
    }
    fn absorb(&mut self, _: &ParameterSet) -> Result<()> {
        Ok(())
    }
    fn embed_on_tape(&self, tape: &mut Tape, i: usize) -> Result<Var> {
        Ok(tape.leaf(Tensor::new(vec![self.points.dim], self.points.row(i).to_vec())?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOptions {
    pub epochs: usize,
    pub lr: f32,
    pub batch_size: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self { epochs: 10, lr: 1e-3, batch_size: 16, alpha: 1.0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineReport {
    pub centroids: Vec<f32>,
    /// Entry `e`: mean KL between the targets and soft assignments
    /// computed after `e` epochs.
    pub kl_curve: Vec<f64>,
}

const CENTROIDS: &str = "dec.centroids";

/// Minimizes `KL(P || Q)` over the embedder parameters and the
/// centroids. `P` is recomputed from the current `Q` at the start of
/// every epoch and held fixed during it.
pub fn refine(embedder: &mut dyn Embedder, centroids: &[f32], opts: &RefineOptions) -> Result<RefineReport> {
    let d = embedder.dim();
    if centroids.is_empty() || !centroids.len().is_multiple_of(d) {
        return Err(Error::ShapeMismatch(format!("{} centroid values for dimension {d}", centroids.len())));
    }
    if opts.batch_size == 0 || !(opts.alpha > 0.0) {
        return Err(Error::InvalidArgument("batch size and alpha must be positive".into()));
    }
    let k = centroids.len() / d;
    let n = embedder.count();
    let mut ps = embedder.params().clone();
    let c_idx = ps.add(CENTROIDS, vec![k, d], Init::Zeros)?;
    ps.value_mut(c_idx).data_mut().copy_from_slice(centroids);
    let adam = AdamConfig { lr: opts.lr, ..AdamConfig::default() };

    let state = |ps: &ParameterSet, emb: &dyn Embedder| -> Result<(Vec<f64>, f64)> {
        let z = emb_with(emb, ps)?;
        let q = soft_assign(&z, ps.value(c_idx).data(), opts.alpha);
        let p = target_distribution(&q, k)?;
        let kl = kl_divergence(&p, &q, k);
        Ok((p, kl))
    };
    let (mut p, kl0) = state(&ps, embedder)?;
    let mut kl_curve = vec![kl0];
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffler = rng::rng_for(opts.seed, "dec/shuffle");
    for epoch in 1..=opts.epochs {
        order.shuffle(&mut shuffler);
        for batch in order.chunks(opts.batch_size) {
            let mut grads = Gradients::new(ps.len());
            for &i in batch {
                let mut tape = Tape::new(&ps);
                let z = embedder.embed_on_tape(&mut tape, i)?;
                let m = tape.param(c_idx);
                let kl = tape.student_t_kl(z, m, &p[i * k..(i + 1) * k], opts.alpha)?;
                grads.merge(&tape.backward(kl, 1.0)?.params);
            }
            grads.scale(1.0 / n as f32);
            ps.adam_step(&grads, &adam)
                .map_err(|e| Error::Diverged(format!("refinement epoch {epoch}: {e}")))?;
        }
        let (next_p, kl) = state(&ps, embedder)?;
        if !kl.is_finite() {
            return Err(Error::Diverged(format!("non-finite KL after epoch {epoch}")));
        }
        kl_curve.push(kl);
        p = next_p;
    }
    embedder.absorb(&ps)?;
    Ok(RefineReport { centroids: ps.value(c_idx).data().to_vec(), kl_curve })
}

/// Embeddings computed with the parameter values in `ps` rather than the
/// embedder's own.
fn emb_with(emb: &dyn Embedder, ps: &ParameterSet) -> Result<Points> {
    let mut values = Vec::with_capacity(emb.count() * emb.dim());
    for i in 0..emb.count() {
        let mut tape = Tape::new(ps);
        let v = emb.embed_on_tape(&mut tape, i)?;
        values.extend_from_slice(tape.value(v).data());
    }
    Points::new(emb.dim(), values)
}

/// Index of the largest entry of each row (lowest index on ties).
pub fn hard_assign(q: &[f64], k: usize) -> Vec<usize> {
    q.chunks(k)
        .map(|row| {
            let mut best = 0;
            for j in 1..k {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    pub(crate) fn blobs(means: &[[f32; 2]], sigma: f32, per: usize, seed: u64) -> Points {
        let mut r = rng::rng(seed);
        let nd = Normal::new(0.0f32, sigma).unwrap();
        let mut v = Vec::new();
        for m in means {
            for _ in 0..per {
                v.push(m[0] + nd.sample(&mut r));
                v.push(m[1] + nd.sample(&mut r));
            }
        }
        Points::new(2, v).unwrap()
    }

    #[test]
    fn blob_means_recovered() {
        let means = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0], [10.0, 10.0]];
        let pts = blobs(&means, 1.0, 1000, 3);
        let c = kmeans_init(&pts, 4, 1).unwrap();
        for m in &means {
            let best = (0..4)
                .map(|j| ((c[2 * j] - m[0]).powi(2) + (c[2 * j + 1] - m[1]).powi(2)).sqrt())
                .fold(f32::INFINITY, f32::min);
            assert!(best < 0.1, "blob {m:?} off by {best}");
        }
    }

    #[test]
    fn k_equal_to_distinct_points_returns_them() {
        let pts = Points::new(1, vec![3.0, 1.0, 3.0, 7.0]).unwrap();
        let mut c = kmeans_init(&pts, 3, 5).unwrap();
        c.sort_by(f32::total_cmp);
        assert_eq!(c, vec![1.0, 3.0, 7.0]);
        assert!(kmeans_init(&pts, 4, 5).is_err());
    }

    #[test]
    fn same_seed_same_assignment() {
        let pts = blobs(&[[0.0, 0.0], [3.0, 3.0]], 1.5, 100, 9);
        assert_eq!(kmeans(&pts, 5, 2).unwrap().assignments, kmeans(&pts, 5, 2).unwrap().assignments);
    }

    #[test]
    fn equidistant_point_splits_evenly() {
        let q = soft_assign(&Points::new(1, vec![0.0]).unwrap(), &[-1.0, 1.0], 1.0);
        assert_eq!(q, vec![0.5, 0.5]);
    }

    #[test]
    fn soft_assign_hand_example() {
        let q = soft_assign(&Points::new(1, vec![0.0]).unwrap(), &[0.0, 2.0], 1.0);
        assert!((q[0] - 5.0 / 6.0).abs() < 1e-9);
        assert!((q[1] - 1.0 / 6.0).abs() < 1e-9);
    }

    #[test]
    fn coincident_centroid_takes_row_maximum() {
        let q = soft_assign(&Points::new(2, vec![1.0, 1.0]).unwrap(), &[1.0, 1.0, 9.0, 9.0, -5.0, 4.0], 1.0);
        assert!(q[0] > q[1] && q[0] > q[2]);
    }

    #[test]
    fn target_of_one_hot_is_one_hot() {
        let q = vec![1.0, 0.0, 0.0, 1.0];
        assert_eq!(target_distribution(&q, 2).unwrap(), q);
    }

    #[test]
    fn target_of_uniform_is_uniform() {
        let q = vec![0.25; 8];
        assert_eq!(target_distribution(&q, 4).unwrap(), q);
    }

    #[test]
    fn target_hand_example() {
        // Q rows (0.6, 0.4), (0.2, 0.8), (0.5, 0.5); f = (1.3, 1.7).
        let q = [0.6, 0.4, 0.2, 0.8, 0.5, 0.5];
        let p = target_distribution(&q, 2).unwrap();
        let f = [1.3, 1.7];
        for i in 0..3 {
            let a = q[2 * i] * q[2 * i] / f[0];
            let b = q[2 * i + 1] * q[2 * i + 1] / f[1];
            assert!((p[2 * i] - a / (a + b)).abs() < 1e-12);
            assert!((p[2 * i + 1] - b / (a + b)).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_cluster_is_collapsed() {
        let err = target_distribution(&[1.0, 0.0, 1.0, 0.0], 2).unwrap_err();
        assert!(err.to_string().contains("collapsed cluster"));
    }

    #[test]
    fn symmetric_fixpoint_has_zero_kl_and_no_update() {
        // Two points mirrored about two mirrored centroids: every row of Q
        // is (0.5, 0.5) and P = Q.
        let pts = Points::new(1, vec![0.0, 0.0]).unwrap();
        let mut emb = FixedEmbeddings::new(pts);
        let start = [-1.0f32, 1.0];
        let rep = refine(&mut emb, &start, &RefineOptions { epochs: 3, ..Default::default() }).unwrap();
        assert!(rep.kl_curve.iter().all(|&v| v == 0.0));
        assert_eq!(rep.centroids, start.to_vec());
    }

    #[test]
    fn kl_non_increasing_on_blobs() {
        let pts = blobs(&[[0.0, 0.0], [6.0, 0.0], [0.0, 6.0]], 1.0, 60, 4);
        let c = kmeans_init(&pts, 3, 0).unwrap();
        let mut emb = FixedEmbeddings::new(pts);
        let rep = refine(&mut emb, &c, &RefineOptions { epochs: 8, lr: 1e-2, ..Default::default() }).unwrap();
        for w in rep.kl_curve.windows(2) {
            assert!(w[1] <= w[0] + 1e-6, "{:?}", rep.kl_curve);
        }
    }
}
