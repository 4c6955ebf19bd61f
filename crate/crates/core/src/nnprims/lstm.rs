//! LSTM cells and the bidirectional wrapper, built from tape ops. Every
//! row of the input matrices is an independent sequence (one per pixel).

use super::params::{Init, ParameterSet};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Parameter indices of one LSTM direction. Gate blocks are ordered
/// input, forget, cell, output along the `4 * hidden` axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmParams {
    pub wx: usize,
    pub wh: usize,
    pub b: usize,
    pub input: usize,
    pub hidden: usize,
}

impl LstmParams {
    /// Registers `{prefix}.wx`, `{prefix}.wh` and `{prefix}.b`. The forget
    /// gate bias starts at 1.
    pub fn register(ps: &mut ParameterSet, prefix: &str, input: usize, hidden: usize) -> Result<Self> {
        let wx = ps.add(&format!("{prefix}.wx"), vec![input, 4 * hidden], Init::linear(input))?;
        let wh = ps.add(&format!("{prefix}.wh"), vec![hidden, 4 * hidden], Init::linear(hidden))?;
        let b = ps.add(&format!("{prefix}.b"), vec![4 * hidden], Init::Zeros)?;
        ps.value_mut(b).data_mut()[hidden..2 * hidden].fill(1.0);
        Ok(Self { wx, wh, b, input, hidden })
    }

    pub fn lookup(ps: &ParameterSet, prefix: &str) -> Result<Self> {
        let get = |s: &str| {
            ps.index_of(&format!("{prefix}.{s}"))
                .ok_or_else(|| Error::InvalidArgument(format!("missing parameter {prefix}.{s}")))
        };
        let (wx, wh, b) = (get("wx")?, get("wh")?, get("b")?);
        let shape = ps.value(wx).shape();
        Ok(Self { wx, wh, b, input: shape[0], hidden: shape[1] / 4 })
    }
}

/// Runs one direction over `xs` (each `rows x input`) from zero state and
/// returns the hidden state after every step, in input order.
pub fn lstm(tape: &mut Tape, xs: &[Var], p: &LstmParams, reverse: bool) -> Result<Vec<Var>> {
    if xs.is_empty() {
        return Err(Error::InvalidArgument("lstm over an empty sequence".into()));
    }
    let rows = tape.shape(xs[0])[0];
    let hd = p.hidden;
    let (wx, wh, b) = (tape.param(p.wx), tape.param(p.wh), tape.param(p.b));
    let mut h = tape.leaf(Tensor::zeros(vec![rows, hd]));
    let mut c = tape.leaf(Tensor::zeros(vec![rows, hd]));
    let mut out = vec![h; xs.len()];
    let order: Vec<usize> = if reverse { (0..xs.len()).rev().collect() } else { (0..xs.len()).collect() };
    for t in order {
        let zx = tape.linear(xs[t], wx, Some(b))?;
        let zh = tape.linear(h, wh, None)?;
        let z = tape.add(zx, zh)?;
        let i = tape.columns(z, 0, hd)?;
        let f = tape.columns(z, hd, hd)?;
        let g = tape.columns(z, 2 * hd, hd)?;
        let o = tape.columns(z, 3 * hd, hd)?;
        let i = tape.sigmoid(i);
        let f = tape.sigmoid(f);
        let g = tape.tanh(g);
        let o = tape.sigmoid(o);
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        c = tape.add(fc, ig)?;
        let tc = tape.tanh(c);
        h = tape.mul(o, tc)?;
        out[t] = h;
    }
    Ok(out)
}

/// Forward and backward passes concatenated per step:
/// `rows x 2 * hidden`, forward half first.
pub fn bilstm(tape: &mut Tape, xs: &[Var], fwd: &LstmParams, bwd: &LstmParams) -> Result<Vec<Var>> {
    let hf = lstm(tape, xs, fwd, false)?;
    let hb = lstm(tape, xs, bwd, true)?;
    hf.iter().zip(&hb).map(|(&a, &b)| tape.concat_cols(&[a, b])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn setup(input: usize, hidden: usize, seed: u64) -> (ParameterSet, LstmParams, LstmParams) {
        let mut ps = ParameterSet::new(seed);
        let f = LstmParams::register(&mut ps, "f", input, hidden).unwrap();
        let b = LstmParams::register(&mut ps, "b", input, hidden).unwrap();
        (ps, f, b)
    }

    fn sequence(rows: usize, input: usize, steps: usize, seed: u64) -> Vec<Tensor> {
        let mut r = crate::rng::rng(seed);
        (0..steps)
            .map(|_| Tensor::new(vec![rows, input], (0..rows * input).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap())
            .collect()
    }

    fn run(ps: &ParameterSet, f: &LstmParams, b: &LstmParams, seq: &[Tensor]) -> Vec<Vec<f32>> {
        let mut tape = Tape::new(ps);
        let xs: Vec<Var> = seq.iter().map(|t| tape.leaf(t.clone())).collect();
        let hs = bilstm(&mut tape, &xs, f, b).unwrap();
        hs.iter().map(|&h| tape.value(h).data().to_vec()).collect()
    }

    #[test]
    fn single_step_directions_agree_with_shared_weights() {
        let (mut ps, f, b) = setup(3, 4, 1);
        for (src, dst) in [(f.wx, b.wx), (f.wh, b.wh), (f.b, b.b)] {
            let v = ps.value(src).clone();
            *ps.value_mut(dst) = v;
        }
        let out = run(&ps, &f, &b, &sequence(2, 3, 1, 9));
        for r in 0..2 {
            let row = &out[0][r * 8..(r + 1) * 8];
            assert_eq!(row[..4], row[4..]);
        }
    }

    #[test]
    fn zero_weights_follow_closed_form_recurrence() {
        let (mut ps, f, b) = setup(2, 3, 2);
        for idx in [f.wx, f.wh, b.wx, b.wh] {
            ps.value_mut(idx).data_mut().fill(0.0);
        }
        let bias = [0.3f32, -0.2, 0.5, 1.0, 0.1, 0.0, -0.4, 0.8, 0.2, 0.6, -0.1, 0.7];
        ps.value_mut(f.b).data_mut().copy_from_slice(&bias);
        let steps = 4;
        let out = run(&ps, &f, &b, &sequence(1, 2, steps, 3));
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        // With zero weights the gates are constants of the bias, so
        // c_t = f c_{t-1} + i g and h_t = o tanh(c_t).
        for k in 0..3 {
            let (i, fg, g, o) = (
                sig(f64::from(bias[k])),
                sig(f64::from(bias[3 + k])),
                f64::from(bias[6 + k]).tanh(),
                sig(f64::from(bias[9 + k])),
            );
            let mut c = 0.0;
            for step in out.iter().take(steps) {
                c = fg * c + i * g;
                let h = o * c.tanh();
                assert!((f64::from(step[k]) - h).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn reversal_swaps_and_reverses_halves() {
        let (mut ps, f, b) = setup(3, 2, 4);
        for (src, dst) in [(f.wx, b.wx), (f.wh, b.wh), (f.b, b.b)] {
            let v = ps.value(src).clone();
            *ps.value_mut(dst) = v;
        }
        let seq = sequence(2, 3, 5, 5);
        let mut rev = seq.clone();
        rev.reverse();
        let a = run(&ps, &f, &b, &seq);
        let r = run(&ps, &f, &b, &rev);
        let steps = seq.len();
        for t in 0..steps {
            for row in 0..2 {
                let fa = &a[t][row * 4..row * 4 + 2];
                let ba = &a[t][row * 4 + 2..row * 4 + 4];
                let fr = &r[steps - 1 - t][row * 4..row * 4 + 2];
                let br = &r[steps - 1 - t][row * 4 + 2..row * 4 + 4];
                assert_eq!(fa, br);
                assert_eq!(ba, fr);
            }
        }
    }

    #[test]
    fn output_width_is_twice_hidden() {
        let (ps, f, b) = setup(3, 5, 6);
        let out = run(&ps, &f, &b, &sequence(4, 3, 2, 1));
        assert!(out.iter().all(|h| h.len() == 4 * 10));
    }
}
