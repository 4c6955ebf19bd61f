//! Central finite-difference checks of every tape op. Each check builds a
//! small random graph, contracts its output with a fixed random
//! projection, and compares the analytic gradients of that scalar with
//! respect to every leaf input and parameter against `(L(x+e) - L(x-e)) / 2e`.
//! The error is measured on the full gradient vector: per-entry ratios
//! are dominated by float32 rounding wherever a component is near zero.
//!
//! [`check_all`] runs every op over a range of seeds and reports the worst
//! error per op.

use rand::Rng as _;

use super::dropout::{Dropout, DropoutMode};
use super::lstm::{bilstm, LstmParams};
use super::params::{Init, ParameterSet};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::rng;

const EPS: f32 = 1e-3;
/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-3;

type Build = dyn Fn(&mut Tape, &[Var]) -> Var;

fn random_tensor(shape: &[usize], r: &mut rng::Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero so ReLU kinks stay out of reach of the
/// perturbation.
fn away_from_zero(t: &mut Tensor) {
    for v in t.data_mut() {
        if v.abs() < 0.05 {
            *v = if *v < 0.0 { -0.05 } else { 0.05 };
        }
    }
}

fn forward(ps: &ParameterSet, inputs: &[Tensor], build: &Build, drop_seed: Option<u64>) -> (Vec<f32>, f64) {
    let mut tape = match drop_seed {
        Some(s) => Tape::with_dropout(ps, Dropout::new(DropoutMode::Train, s)),
        None => Tape::new(ps),
    };
    let xs: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &xs);
    let v = tape.value(out).data().to_vec();
    (v, 0.0)
}

fn projected(ps: &ParameterSet, inputs: &[Tensor], build: &Build, proj: &[f32], drop_seed: Option<u64>) -> f64 {
    let (out, _) = forward(ps, inputs, build, drop_seed);
    out.iter().zip(proj).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum()
}

fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-6)
}

fn check(ps: &ParameterSet, inputs: &[Tensor], build: &Build, seed: u64, drop_seed: Option<u64>) -> f64 {
    let (out, _) = forward(ps, inputs, build, drop_seed);
    let mut r = rng::rng(seed ^ 0xabcdef);
    let proj: Vec<f32> = (0..out.len()).map(|_| r.random_range(-1.0..1.0)).collect();

    let mut tape = match drop_seed {
        Some(s) => Tape::with_dropout(ps, Dropout::new(DropoutMode::Train, s)),
        None => Tape::new(ps),
    };
    let xs: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let y = build(&mut tape, &xs);
    let shape = tape.shape(y).to_vec();
    let p = tape.leaf(Tensor::new(shape, proj.clone()).unwrap());
    let prod = tape.mul(y, p).unwrap();
    let loss = tape.sum(prod);
    let back = tape.backward(loss, 1.0).unwrap();
    let mut all_a = Vec::new();
    let mut all_n = Vec::new();

    for (k, x) in xs.iter().enumerate() {
        let analytic: Vec<f64> = match back.grad(*x) {
            Some(g) => g.iter().map(|&v| f64::from(v)).collect(),
            None => vec![0.0; inputs[k].len()],
        };
        let mut numeric = Vec::with_capacity(analytic.len());
        for i in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += EPS;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= EPS;
            let lp = projected(ps, &plus, build, &proj, drop_seed);
            let lm = projected(ps, &minus, build, &proj, drop_seed);
            numeric.push((lp - lm) / (2.0 * f64::from(EPS)));
        }
        all_a.extend(analytic);
        all_n.extend(numeric);
    }
    for idx in 0..ps.len() {
        let n = ps.value(idx).len();
        let analytic: Vec<f64> = match back.params.get(idx) {
            Some(g) => g.iter().map(|&v| f64::from(v)).collect(),
            None => vec![0.0; n],
        };
        let mut numeric = Vec::with_capacity(n);
        for i in 0..n {
            let mut plus = ps.clone();
            plus.value_mut(idx).data_mut()[i] += EPS;
            let mut minus = ps.clone();
            minus.value_mut(idx).data_mut()[i] -= EPS;
            let lp = projected(&plus, inputs, build, &proj, drop_seed);
            let lm = projected(&minus, inputs, build, &proj, drop_seed);
            numeric.push((lp - lm) / (2.0 * f64::from(EPS)));
        }
        all_a.extend(analytic);
        all_n.extend(numeric);
    }
    rel_err(&all_a, &all_n)
}

fn params(seed: u64, specs: &[(&str, Vec<usize>)]) -> ParameterSet {
    let mut ps = ParameterSet::new(seed);
    for (name, shape) in specs {
        ps.add(name, shape.clone(), Init::Uniform(0.8)).unwrap();
    }
    ps
}

fn conv2d(seed: u64) -> f64 {
    let ps = params(seed, &[("w", vec![3, 2, 3, 3]), ("b", vec![3])]);
    let x = random_tensor(&[2, 4, 5], &mut rng::rng(seed));
    check(&ps, &[x], &|t, xs| {
        let (w, b) = (t.param(0), t.param(1));
        t.conv2d(xs[0], w, b).unwrap()
    }, seed, None)
}

fn maxpool2(seed: u64) -> f64 {
    let ps = ParameterSet::new(seed);
    // Distinct values spaced well beyond the perturbation.
    let mut vals: Vec<f32> = (0..2 * 4 * 6).map(|i| i as f32 * 0.05).collect();
    use rand::seq::SliceRandom;
    vals.shuffle(&mut rng::rng(seed));
    let x = Tensor::new(vec![2, 4, 6], vals).unwrap();
    check(&ps, &[x], &|t, xs| t.maxpool2(xs[0]).unwrap(), seed, None)
}

fn conv_t2(seed: u64) -> f64 {
    let ps = params(seed, &[("w", vec![3, 2, 2, 2]), ("b", vec![2])]);
    let x = random_tensor(&[3, 2, 3], &mut rng::rng(seed));
    check(&ps, &[x], &|t, xs| {
        let (w, b) = (t.param(0), t.param(1));
        t.conv_t2(xs[0], w, b).unwrap()
    }, seed, None)
}

fn linear_and_elementwise(seed: u64) -> f64 {
    let ps = params(seed, &[("w", vec![4, 3]), ("b", vec![3])]);
    let mut r = rng::rng(seed);
    let x = random_tensor(&[5, 4], &mut r);
    let mut y = random_tensor(&[5, 3], &mut r);
    away_from_zero(&mut y);
    check(&ps, &[x, y], &|t, xs| {
        let (w, b) = (t.param(0), t.param(1));
        let z = t.linear(xs[0], w, Some(b)).unwrap();
        let s = t.sigmoid(z);
        let th = t.tanh(z);
        let m = t.mul(s, th).unwrap();
        let re = t.relu(xs[1]);
        let a = t.add(m, re).unwrap();
        t.scale(a, 1.7)
    }, seed, None)
}

fn relu(seed: u64) -> f64 {
    let ps = ParameterSet::new(seed);
    let mut x = random_tensor(&[3, 3, 3], &mut rng::rng(seed));
    away_from_zero(&mut x);
    check(&ps, &[x], &|t, xs| t.relu(xs[0]), seed, None)
}

fn reshaping(seed: u64) -> f64 {
    let ps = ParameterSet::new(seed);
    let mut r = rng::rng(seed);
    let a = random_tensor(&[2, 3], &mut r);
    let b = random_tensor(&[2, 3], &mut r);
    let c = random_tensor(&[2, 5], &mut r);
    check(&ps, &[a, b, c], &|t, xs| {
        let rows = t.concat(&[xs[0], xs[1]]).unwrap(); // 4 x 3
        let cols = t.concat_cols(&[xs[0], xs[2]]).unwrap(); // 2 x 8
        let part = t.columns(cols, 2, 4).unwrap(); // 2 x 4
        let pt = t.transpose(part).unwrap(); // 4 x 2
        let rr = t.reshape(rows, vec![4, 3]).unwrap();
        let m = t.mean(&[xs[0], xs[1], xs[0]]).unwrap(); // 2 x 3
        let mt = t.transpose(m).unwrap(); // 3 x 2
        let flat_a = t.reshape(pt, vec![8]).unwrap();
        let flat_b = t.reshape(rr, vec![12]).unwrap();
        let flat_c = t.reshape(mt, vec![6]).unwrap();
        t.concat(&[flat_a, flat_b, flat_c]).unwrap()
    }, seed, None)
}

fn dropout(seed: u64) -> f64 {
    let ps = ParameterSet::new(seed);
    let x = random_tensor(&[4, 6], &mut rng::rng(seed));
    check(&ps, &[x], &|t, xs| t.dropout(xs[0], 0.3).unwrap(), seed, Some(seed + 100))
}

fn attention(seed: u64) -> f64 {
    let ps = params(seed, &[("w", vec![3, 4]), ("b", vec![4]), ("u", vec![4])]);
    let mut r = rng::rng(seed);
    let hs: Vec<Tensor> = (0..3).map(|_| random_tensor(&[2, 3], &mut r)).collect();
    check(&ps, &hs, &|t, xs| {
        let (w, b, u) = (t.param(0), t.param(1), t.param(2));
        t.attention(xs, w, b, u).unwrap().0
    }, seed, None)
}

fn lstm(seed: u64) -> f64 {
    let mut ps = ParameterSet::new(seed);
    LstmParams::register(&mut ps, "f", 3, 2).unwrap();
    LstmParams::register(&mut ps, "b", 3, 2).unwrap();
    let mut r = rng::rng(seed);
    let xs: Vec<Tensor> = (0..3).map(|_| random_tensor(&[2, 3], &mut r)).collect();
    check(&ps, &xs, &|t, xs| {
        let f = LstmParams::lookup(t.params(), "f").unwrap();
        let b = LstmParams::lookup(t.params(), "b").unwrap();
        let hs = bilstm(t, xs, &f, &b).unwrap();
        t.concat(&hs).unwrap()
    }, seed, None)
}

fn cross_entropy(seed: u64) -> f64 {
    let ps = ParameterSet::new(seed);
    let mut r = rng::rng(seed);
    let x = random_tensor(&[4, 3, 3], &mut r);
    let labels: Vec<u8> = (0..9).map(|i| if i == 4 { 255 } else { r.random_range(0..4) }).collect();
    check(&ps, &[x], &move |t, xs| t.cross_entropy(xs[0], &labels).unwrap().0, seed, None)
}

fn mse(seed: u64) -> f64 {
    let ps = ParameterSet::new(seed);
    let mut r = rng::rng(seed);
    let x = random_tensor(&[2, 3, 3], &mut r);
    let target: Vec<f32> = (0..18).map(|_| r.random_range(-1.0..1.0)).collect();
    check(&ps, &[x], &move |t, xs| t.mse(xs[0], &target).unwrap(), seed, None)
}

fn student_t_kl(seed: u64) -> f64 {
    let ps = params(seed, &[("m", vec![3, 4])]);
    let mut r = rng::rng(seed);
    let z = random_tensor(&[4], &mut r);
    let mut p: Vec<f64> = (0..3).map(|_| r.random_range(0.1..1.0)).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    check(&ps, &[z], &move |t, xs| {
        let m = t.param(0);
        t.student_t_kl(xs[0], m, &p, 1.0).unwrap()
    }, seed, None)
}

/// Every checked op family with its check.
pub const OPS: [(&str, fn(u64) -> f64); 12] = [
    ("conv2d", conv2d),
    ("maxpool2", maxpool2),
    ("conv_t2", conv_t2),
    ("linear+activations", linear_and_elementwise),
    ("relu", relu),
    ("reshape/concat/columns/mean/transpose", reshaping),
    ("dropout", dropout),
    ("attention", attention),
    ("bilstm", lstm),
    ("cross_entropy", cross_entropy),
    ("mse", mse),
    ("student_t_kl", student_t_kl),
];

#[derive(Debug, Clone, PartialEq)]
pub struct OpCheck {
    pub op: &'static str,
    pub seeds: u64,
    pub max_rel_err: f64,
}

/// Worst relative error of every op over seeds `0..seeds`.
pub fn check_all(seeds: u64) -> Vec<OpCheck> {
    OPS.iter()
        .map(|&(op, f)| OpCheck { op, seeds, max_rel_err: (0..seeds).map(f).fold(0.0, f64::max) })
        .collect()
}
