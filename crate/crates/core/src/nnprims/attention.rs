//! Additive temporal attention. For each row (pixel) the score of step `t`
//! is `u . tanh(h_t W + b)`; the weights are the softmax of the scores over
//! time and the context is the weighted sum of the hidden states.

use super::kernels::{linear_backward, linear_forward};

#[derive(Debug, Clone)]
pub struct AttentionCache {
    /// `tanh(h_t W + b)` per step, each `rows x att_dim`.
    pub act: Vec<Vec<f32>>,
    /// Softmax weights, `rows x T`.
    pub weights: Vec<f32>,
}

/// Parameter shapes: `w` is `dim x att_dim`, `b` and `u` have `att_dim`
/// entries. Every `hs[t]` is `rows x dim`.
pub struct AttentionShape {
    pub rows: usize,
    pub dim: usize,
    pub att_dim: usize,
}

pub fn attention_forward(
    hs: &[&[f32]],
    s: &AttentionShape,
    w: &[f32],
    b: &[f32],
    u: &[f32],
) -> (Vec<f32>, AttentionCache) {
    let steps = hs.len();
    let mut act = Vec::with_capacity(steps);
    let mut scores = vec![0.0f32; s.rows * steps];
    for (t, h) in hs.iter().enumerate() {
        let mut a = linear_forward(h, s.rows, s.dim, w, Some(b), s.att_dim);
        a.iter_mut().for_each(|v| *v = v.tanh());
        for r in 0..s.rows {
            scores[r * steps + t] = a[r * s.att_dim..(r + 1) * s.att_dim]
                .iter()
                .zip(u)
                .map(|(x, y)| x * y)
                .sum();
        }
        act.push(a);
    }
    let mut weights = scores;
    for r in 0..s.rows {
        let row = &mut weights[r * steps..(r + 1) * steps];
        let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    let mut ctx = vec![0.0f32; s.rows * s.dim];
    for (t, h) in hs.iter().enumerate() {
        for r in 0..s.rows {
            let a = weights[r * steps + t];
            for (c, v) in ctx[r * s.dim..(r + 1) * s.dim].iter_mut().zip(&h[r * s.dim..(r + 1) * s.dim]) {
                *c += a * v;
            }
        }
    }
    (ctx, AttentionCache { act, weights })
}

/// Gradients `(d_hs, d_w, d_b, d_u)` given the context gradient `gc`.
pub fn attention_backward(
    hs: &[&[f32]],
    s: &AttentionShape,
    w: &[f32],
    u: &[f32],
    cache: &AttentionCache,
    gc: &[f32],
) -> (Vec<Vec<f32>>, Vec<f32>, Vec<f32>, Vec<f32>) {
    let steps = hs.len();
    let wts = &cache.weights;
    // d weight[r, t] = gc[r] . h_t[r]
    let mut galpha = vec![0.0f32; s.rows * steps];
    let mut ghs: Vec<Vec<f32>> = Vec::with_capacity(steps);
    for (t, h) in hs.iter().enumerate() {
        let mut gh = vec![0.0f32; s.rows * s.dim];
        for r in 0..s.rows {
            let a = wts[r * steps + t];
            let hr = &h[r * s.dim..(r + 1) * s.dim];
            let gcr = &gc[r * s.dim..(r + 1) * s.dim];
            galpha[r * steps + t] = hr.iter().zip(gcr).map(|(x, y)| x * y).sum();
            for (g, v) in gh[r * s.dim..(r + 1) * s.dim].iter_mut().zip(gcr) {
                *g = a * v;
            }
        }
        ghs.push(gh);
    }
    let mut gscore = vec![0.0f32; s.rows * steps];
    for r in 0..s.rows {
        let row = &wts[r * steps..(r + 1) * steps];
        let ga = &galpha[r * steps..(r + 1) * steps];
        let dot: f32 = row.iter().zip(ga).map(|(a, g)| a * g).sum();
        for t in 0..steps {
            gscore[r * steps + t] = row[t] * (ga[t] - dot);
        }
    }
    let mut gw = vec![0.0f32; s.dim * s.att_dim];
    let mut gb = vec![0.0f32; s.att_dim];
    let mut gu = vec![0.0f32; s.att_dim];
    for (t, h) in hs.iter().enumerate() {
        let a = &cache.act[t];
        let mut gpre = vec![0.0f32; s.rows * s.att_dim];
        for r in 0..s.rows {
            let gs = gscore[r * steps + t];
            for k in 0..s.att_dim {
                let av = a[r * s.att_dim + k];
                gu[k] += gs * av;
                gpre[r * s.att_dim + k] = gs * u[k] * (1.0 - av * av);
            }
        }
        let (gx, gwt, gbt) = linear_backward(h, s.rows, s.dim, w, s.att_dim, &gpre);
        for (g, v) in ghs[t].iter_mut().zip(&gx) {
            *g += v;
        }
        gw.iter_mut().zip(&gwt).for_each(|(g, v)| *g += v);
        gb.iter_mut().zip(&gbt).for_each(|(g, v)| *g += v);
    }
    (ghs, gw, gb, gu)
}
