//! Forward and backward kernels on raw slices. Feature maps are laid out
//! channel-first (`C x H x W`); matrices are row-major.

use super::gemm::gemm;

/// Spatial geometry of a channel-first feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn new(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w }
    }
    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn hw(&self) -> usize {
        self.h * self.w
    }
}

fn im2col(x: &[f32], d: Dims, k: usize, col: &mut [f32]) {
    let pad = (k / 2) as isize;
    let hw = d.hw();
    for c in 0..d.c {
        let plane = &x[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((c * k + ky) * k + kx) * hw..][..hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..d.h {
                    let sy = y as isize + dy;
                    let dst = &mut row[y * d.w..(y + 1) * d.w];
                    if sy < 0 || sy >= d.h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * d.w..(sy as usize + 1) * d.w];
                    for (x_out, v) in dst.iter_mut().enumerate() {
                        let sx = x_out as isize + dx;
                        *v = if sx < 0 || sx >= d.w as isize { 0.0 } else { src[sx as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f32], d: Dims, k: usize, gx: &mut [f32]) {
    let pad = (k / 2) as isize;
    let hw = d.hw();
    for c in 0..d.c {
        let plane = &mut gx[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((c * k + ky) * k + kx) * hw..][..hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..d.h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= d.h as isize {
                        continue;
                    }
                    let src = &row[y * d.w..(y + 1) * d.w];
                    let dst = &mut plane[sy as usize * d.w..(sy as usize + 1) * d.w];
                    for (x_out, v) in src.iter().enumerate() {
                        let sx = x_out as isize + dx;
                        if sx >= 0 && sx < d.w as isize {
                            dst[sx as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Same-padded, stride-1 convolution with an odd `k x k` kernel.
/// `weight` is `out_c x in_c x k x k`, `bias` has `out_c` entries.
pub fn conv2d_forward(x: &[f32], d: Dims, weight: &[f32], bias: &[f32], out_c: usize, k: usize) -> Vec<f32> {
    let ck = d.c * k * k;
    let hw = d.hw();
    let mut col = vec![0.0; ck * hw];
    im2col(x, d, k, &mut col);
    let mut y = vec![0.0; out_c * hw];
    for (o, b) in bias.iter().enumerate() {
        y[o * hw..(o + 1) * hw].fill(*b);
    }
    gemm(out_c, ck, hw, weight, false, &col, false, 1.0, &mut y);
    y
}

/// Returns `(d_input, d_weight, d_bias)`.
pub fn conv2d_backward(
    x: &[f32],
    d: Dims,
    weight: &[f32],
    out_c: usize,
    k: usize,
    gy: &[f32],
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let ck = d.c * k * k;
    let hw = d.hw();
    let mut col = vec![0.0; ck * hw];
    im2col(x, d, k, &mut col);
    let mut gw = vec![0.0; out_c * ck];
    gemm(out_c, hw, ck, gy, false, &col, true, 0.0, &mut gw);
    let gb = (0..out_c).map(|o| gy[o * hw..(o + 1) * hw].iter().sum()).collect();
    let mut gcol = vec![0.0; ck * hw];
    gemm(ck, out_c, hw, weight, true, gy, false, 0.0, &mut gcol);
    let mut gx = vec![0.0; d.len()];
    col2im(&gcol, d, k, &mut gx);
    (gx, gw, gb)
}

/// 2x2 max pooling with stride 2. Returns the pooled map and, for each
/// output, the flat input index that won (first maximum in scan order).
pub fn maxpool2_forward(x: &[f32], d: Dims) -> (Vec<f32>, Vec<u32>) {
    let (oh, ow) = (d.h / 2, d.w / 2);
    let mut y = Vec::with_capacity(d.c * oh * ow);
    let mut arg = Vec::with_capacity(d.c * oh * ow);
    for c in 0..d.c {
        let base = c * d.hw();
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + 2 * i * d.w + 2 * j;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * i + di) * d.w + 2 * j + dj;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                y.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    (y, arg)
}

pub fn maxpool2_backward(gy: &[f32], argmax: &[u32], input_len: usize) -> Vec<f32> {
    let mut gx = vec![0.0; input_len];
    for (g, &a) in gy.iter().zip(argmax) {
        gx[a as usize] += g;
    }
    gx
}

/// 2x2 transposed convolution with stride 2. `weight` is
/// `in_c x out_c x 2 x 2`; output is `out_c x 2h x 2w`.
pub fn conv_transpose2_forward(x: &[f32], d: Dims, weight: &[f32], bias: &[f32], out_c: usize) -> Vec<f32> {
    let hw = d.hw();
    let mut z = vec![0.0; out_c * 4 * hw];
    gemm(out_c * 4, d.c, hw, weight, true, x, false, 0.0, &mut z);
    let (oh, ow) = (2 * d.h, 2 * d.w);
    let mut y = vec![0.0; out_c * oh * ow];
    for o in 0..out_c {
        for di in 0..2 {
            for dj in 0..2 {
                let zr = &z[(o * 4 + di * 2 + dj) * hw..][..hw];
                for i in 0..d.h {
                    let dst = &mut y[o * oh * ow + (2 * i + di) * ow..][..ow];
                    for j in 0..d.w {
                        dst[2 * j + dj] = zr[i * d.w + j] + bias[o];
                    }
                }
            }
        }
    }
    y
}

pub fn conv_transpose2_backward(
    x: &[f32],
    d: Dims,
    weight: &[f32],
    out_c: usize,
    gy: &[f32],
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let hw = d.hw();
    let (oh, ow) = (2 * d.h, 2 * d.w);
    let mut gz = vec![0.0; out_c * 4 * hw];
    let mut gb = vec![0.0; out_c];
    for o in 0..out_c {
        for di in 0..2 {
            for dj in 0..2 {
                let zr = &mut gz[(o * 4 + di * 2 + dj) * hw..][..hw];
                for i in 0..d.h {
                    let src = &gy[o * oh * ow + (2 * i + di) * ow..][..ow];
                    for j in 0..d.w {
                        zr[i * d.w + j] = src[2 * j + dj];
                        gb[o] += src[2 * j + dj];
                    }
                }
            }
        }
    }
    let mut gx = vec![0.0; d.len()];
    gemm(d.c, out_c * 4, hw, weight, false, &gz, false, 0.0, &mut gx);
    let mut gw = vec![0.0; d.c * out_c * 4];
    gemm(d.c, hw, out_c * 4, x, false, &gz, true, 0.0, &mut gw);
    (gx, gw, gb)
}

/// `y = x W + b` for `x: rows x fin`, `W: fin x fout`.
pub fn linear_forward(x: &[f32], rows: usize, fin: usize, w: &[f32], b: Option<&[f32]>, fout: usize) -> Vec<f32> {
    let mut y = vec![0.0; rows * fout];
    if let Some(b) = b {
        for r in 0..rows {
            y[r * fout..(r + 1) * fout].copy_from_slice(b);
        }
    }
    gemm(rows, fin, fout, x, false, w, false, 1.0, &mut y);
    y
}

/// Returns `(d_x, d_w, d_b)`.
pub fn linear_backward(
    x: &[f32],
    rows: usize,
    fin: usize,
    w: &[f32],
    fout: usize,
    gy: &[f32],
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let mut gx = vec![0.0; rows * fin];
    gemm(rows, fout, fin, gy, false, w, true, 0.0, &mut gx);
    let mut gw = vec![0.0; fin * fout];
    gemm(fin, rows, fout, x, true, gy, false, 0.0, &mut gw);
    let mut gb = vec![0.0; fout];
    for r in 0..rows {
        for (g, v) in gb.iter_mut().zip(&gy[r * fout..(r + 1) * fout]) {
            *g += v;
        }
    }
    (gx, gw, gb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn random(n: usize, seed: u64) -> Vec<f32> {
        let mut r = rng::rng(seed);
        (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
    }

    /// Direct convolution sum, one output at a time.
    fn naive_conv(x: &[f32], d: Dims, w: &[f32], b: &[f32], oc: usize, k: usize) -> Vec<f32> {
        let pad = (k / 2) as isize;
        let mut y = vec![0.0f32; oc * d.hw()];
        for o in 0..oc {
            for i in 0..d.h as isize {
                for j in 0..d.w as isize {
                    let mut s = b[o];
                    for c in 0..d.c {
                        for ky in 0..k as isize {
                            for kx in 0..k as isize {
                                let (yy, xx) = (i + ky - pad, j + kx - pad);
                                if yy >= 0 && xx >= 0 && yy < d.h as isize && xx < d.w as isize {
                                    s += w[((o * d.c + c) * k + ky as usize) * k + kx as usize]
                                        * x[c * d.hw() + yy as usize * d.w + xx as usize];
                                }
                            }
                        }
                    }
                    y[o * d.hw() + i as usize * d.w + j as usize] = s;
                }
            }
        }
        y
    }

    #[test]
    fn identity_kernel_preserves_input() {
        let d = Dims::new(1, 4, 5);
        let x = random(d.len(), 1);
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        assert_eq!(conv2d_forward(&x, d, &w, &[0.0], 1, 3), x);
    }

    #[test]
    fn zero_weights_give_constant_bias() {
        let d = Dims::new(2, 3, 3);
        let x = random(d.len(), 2);
        let y = conv2d_forward(&x, d, &[0.0; 2 * 2 * 9], &[0.7, -0.2], 2, 3);
        assert!(y[..9].iter().all(|&v| v == 0.7));
        assert!(y[9..].iter().all(|&v| v == -0.2));
    }

    #[test]
    fn conv_matches_quadruple_loop() {
        for seed in 0..10 {
            let d = Dims::new(1 + seed as usize % 3, 4, 4);
            let oc = 2;
            let x = random(d.len(), seed);
            let w = random(oc * d.c * 9, seed + 100);
            let b = random(oc, seed + 200);
            let got = conv2d_forward(&x, d, &w, &b, oc, 3);
            let want = naive_conv(&x, d, &w, &b, oc, 3);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn constant_input_pools_to_constant() {
        let d = Dims::new(2, 4, 6);
        let (y, _) = maxpool2_forward(&vec![3.5; d.len()], d);
        assert_eq!(y, vec![3.5; 12]);
    }

    #[test]
    fn pool_after_upsample_recovers_block_maxima() {
        // Nearest-neighbour upsample of distinct values via a transposed
        // convolution with unit weights, then pool: every 2x2 block holds
        // one value, so pooling returns the original map.
        let d = Dims::new(1, 3, 3);
        let x: Vec<f32> = vec![5.0, -1.0, 2.0, 7.0, 0.5, 3.0, -4.0, 9.0, 1.0];
        let up = conv_transpose2_forward(&x, d, &[1.0; 4], &[0.0], 1);
        let (pooled, _) = maxpool2_forward(&up, Dims::new(1, 6, 6));
        assert_eq!(pooled, x);
    }

    #[test]
    fn pool_gradient_routes_to_argmax_only() {
        let d = Dims::new(1, 2, 2);
        let x = [0.1, 0.9, 0.3, 0.2];
        let (_, arg) = maxpool2_forward(&x, d);
        assert_eq!(maxpool2_backward(&[2.5], &arg, 4), vec![0.0, 2.5, 0.0, 0.0]);
    }

    #[test]
    fn transposed_conv_doubles_extent() {
        let d = Dims::new(3, 2, 5);
        let y = conv_transpose2_forward(&random(d.len(), 4), d, &random(3 * 2 * 4, 5), &[0.0, 0.0], 2);
        assert_eq!(y.len(), 2 * 4 * 10);
    }
}
