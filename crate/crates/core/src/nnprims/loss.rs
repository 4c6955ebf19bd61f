//! Loss kernels: pixel-wise softmax cross-entropy, mean squared error and
//! the Student-t clustering KL divergence.

use crate::error::{Error, Result};
use crate::raster::NODATA_CODE;

/// Per-pixel softmax over `classes` channel planes of `logits`
/// (`classes x pixels`).
pub fn softmax_channels(logits: &[f32], classes: usize) -> Vec<f32> {
    let n = logits.len() / classes;
    let mut out = vec![0.0f32; logits.len()];
    for p in 0..n {
        let m = (0..classes).map(|k| logits[k * n + p]).fold(f32::NEG_INFINITY, f32::max);
        let mut z = 0.0f64;
        for k in 0..classes {
            let e = f64::from(logits[k * n + p] - m).exp();
            out[k * n + p] = e as f32;
            z += e;
        }
        for k in 0..classes {
            out[k * n + p] = (f64::from(out[k * n + p]) / z) as f32;
        }
    }
    out
}

/// Summed cross-entropy over valid pixels and its gradient with respect to
/// the logits. Labels equal to the nodata code are skipped. Returns
/// `(sum of -log p, valid pixel count, d_logits)`.
pub fn cross_entropy_sum(logits: &[f32], labels: &[u8], classes: usize) -> Result<(f64, usize, Vec<f32>)> {
    let n = labels.len();
    if logits.len() != n * classes {
        return Err(Error::ShapeMismatch(format!(
            "{} logits for {n} labels and {classes} classes",
            logits.len()
        )));
    }
    let mut grad = vec![0.0f32; logits.len()];
    let mut total = 0.0f64;
    let mut valid = 0usize;
    for p in 0..n {
        let y = labels[p];
        if y == NODATA_CODE {
            continue;
        }
        if y as usize >= classes {
            return Err(Error::InvalidArgument(format!("label {y} outside {classes} classes")));
        }
        let m = (0..classes).map(|k| logits[k * n + p]).fold(f32::NEG_INFINITY, f32::max);
        let z: f64 = (0..classes).map(|k| f64::from(logits[k * n + p] - m).exp()).sum();
        let lse = f64::from(m) + z.ln();
        total += lse - f64::from(logits[y as usize * n + p]);
        for k in 0..classes {
            let prob = (f64::from(logits[k * n + p]) - lse).exp();
            grad[k * n + p] = (prob - if k == y as usize { 1.0 } else { 0.0 }) as f32;
        }
        valid += 1;
    }
    Ok((total, valid, grad))
}

/// Mean pixel-wise cross-entropy over valid pixels and its gradient.
/// The mean is taken over valid pixels only.
pub fn softmax_cross_entropy(logits: &[f32], labels: &[u8], classes: usize) -> Result<(f64, Vec<f32>)> {
    let (sum, valid, mut grad) = cross_entropy_sum(logits, labels, classes)?;
    if valid == 0 {
        return Err(Error::InsufficientData("all pixels are nodata".into()));
    }
    let inv = 1.0 / valid as f32;
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok((sum / valid as f64, grad))
}

/// Class codes from one-hot planes (`classes x pixels`); all-zero pixels
/// become nodata.
pub fn codes_from_one_hot(one_hot: &[f32], classes: usize) -> Vec<u8> {
    let n = one_hot.len() / classes;
    (0..n)
        .map(|p| {
            (0..classes)
                .find(|&k| one_hot[k * n + p] > 0.5)
                .map_or(NODATA_CODE, |k| k as u8)
        })
        .collect()
}

/// Student-t kernel soft assignment of one embedding to `k` centroids
/// (`k x dim`): `q_j ∝ (1 + |z - m_j|^2 / alpha)^(-(alpha + 1) / 2)`.
pub fn student_t_assign(z: &[f64], centroids: &[f64], alpha: f64) -> Vec<f64> {
    let dim = z.len();
    let k = centroids.len() / dim;
    let expo = -(alpha + 1.0) / 2.0;
    let mut q: Vec<f64> = (0..k)
        .map(|j| {
            let d2: f64 = z
                .iter()
                .zip(&centroids[j * dim..(j + 1) * dim])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            (1.0 + d2 / alpha).powf(expo)
        })
        .collect();
    let s: f64 = q.iter().sum();
    q.iter_mut().for_each(|v| *v /= s);
    q
}

/// `sum_j p_j log(p_j / q_j)` for one embedding against a fixed target row
/// `p`, with gradients for the embedding and the centroids.
pub fn student_t_kl(z: &[f64], centroids: &[f64], target: &[f64], alpha: f64) -> (f64, Vec<f64>, Vec<f64>) {
    let dim = z.len();
    let k = target.len();
    let q = student_t_assign(z, centroids, alpha);
    let kl: f64 = target
        .iter()
        .zip(&q)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, q)| p * (p / q).ln())
        .sum();
    let mut gz = vec![0.0; dim];
    let mut gm = vec![0.0; k * dim];
    let c = (alpha + 1.0) / alpha;
    for j in 0..k {
        let mj = &centroids[j * dim..(j + 1) * dim];
        let d2: f64 = z.iter().zip(mj).map(|(a, b)| (a - b) * (a - b)).sum();
        let coef = c * (target[j] - q[j]) / (1.0 + d2 / alpha);
        for i in 0..dim {
            let diff = z[i] - mj[i];
            gz[i] += coef * diff;
            gm[j * dim + i] -= coef * diff;
        }
    }
    (kl, gz, gm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_has_zero_loss() {
        // Huge margin: softmax saturates to one-hot in f64.
        let logits = [100.0, -100.0, -100.0, -100.0];
        let (loss, _) = softmax_cross_entropy(&logits, &[0], 4).unwrap();
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn uniform_prediction_costs_ln4() {
        let (loss, grad) = softmax_cross_entropy(&[0.3; 8], &[1, 3], 4).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert!((grad[2] - (0.25 - 1.0) / 2.0).abs() < 1e-7);
    }

    #[test]
    fn random_logits_match_log_sum_exp_formula() {
        let logits = [0.2f32, -1.3, 0.7, 2.1, 0.0, 0.4, -0.6, 1.1];
        let labels = [2u8, 255];
        let (loss, _) = softmax_cross_entropy(&logits, &labels, 4).unwrap();
        // Only pixel 0 is valid: logits (0.2, 0.7, 0.0, -0.6), label 2.
        let xs = [0.2f64, 0.7, 0.0, -0.6];
        let lse = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        let want = lse - 0.0;
        assert!((loss - want).abs() < 1e-6);
    }

    #[test]
    fn all_nodata_errors() {
        assert!(softmax_cross_entropy(&[0.0; 4], &[255], 4).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits: Vec<f32> = (0..40).map(|i| (i as f32 * 0.37).sin() * 5.0).collect();
        let p = softmax_channels(&logits, 4);
        for px in 0..10 {
            let s: f32 = (0..4).map(|k| p[k * 10 + px]).sum();
            assert!((s - 1.0).abs() <= 1e-5);
        }
    }

    #[test]
    fn one_hot_conversion() {
        assert_eq!(codes_from_one_hot(&[1.0, 0.0, 0.0, 0.0, 0.0, 1.0], 3), vec![0, 2]);
    }

    #[test]
    fn student_t_hand_example() {
        // Distances 0 and 2 with alpha = 1: kernels 1 and 1/5.
        let q = student_t_assign(&[0.0], &[0.0, 2.0], 1.0);
        assert!((q[0] - 5.0 / 6.0).abs() < 1e-12);
        assert!((q[1] - 1.0 / 6.0).abs() < 1e-12);
    }
}
