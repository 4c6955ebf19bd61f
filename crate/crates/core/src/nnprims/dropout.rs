//! Inverted dropout with seeded masks.

use rand::Rng as _;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// When dropout is active. `Mc` keeps it on at inference so repeated
/// runs with different seeds sample different thinned networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DropoutMode {
    Train,
    Mc,
    #[default]
    Off,
}

/// Mask source for one forward pass.
#[derive(Debug, Clone)]
pub struct Dropout {
    mode: DropoutMode,
    rng: Rng,
}

impl Dropout {
    pub fn new(mode: DropoutMode, seed: u64) -> Self {
        Self { mode, rng: rng::rng(seed) }
    }

    pub fn off() -> Self {
        Self::new(DropoutMode::Off, 0)
    }

    pub fn mode(&self) -> DropoutMode {
        self.mode
    }

    pub fn is_active(&self) -> bool {
        self.mode != DropoutMode::Off
    }

    /// Draws a mask of `n` multipliers: 0 for dropped units and
    /// `1 / (1 - p)` for kept ones. `None` when the mask is all ones.
    pub fn mask(&mut self, n: usize, p: f32) -> Result<Option<Vec<f32>>> {
        check_rate(p)?;
        if !self.is_active() || p == 0.0 {
            return Ok(None);
        }
        let keep = 1.0 / (1.0 - p);
        Ok(Some((0..n).map(|_| if self.rng.random::<f32>() < p { 0.0 } else { keep }).collect()))
    }
}

fn check_rate(p: f32) -> Result<()> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("dropout rate {p} outside [0, 1)")))
    }
}

/// Applies dropout to a tensor outside of any tape.
pub fn dropout(input: &Tensor, p: f32, mode: DropoutMode, seed: u64) -> Result<Tensor> {
    let mut d = Dropout::new(mode, seed);
    match d.mask(input.len(), p)? {
        None => Ok(input.clone()),
        Some(mask) => {
            let data = input.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
            Tensor::new(input.shape().to_vec(), data)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input() -> Tensor {
        Tensor::new(vec![4, 5], (0..20).map(|i| i as f32 * 0.1 - 0.7).collect()).unwrap()
    }

    #[test]
    fn zero_rate_is_identity() {
        assert_eq!(dropout(&input(), 0.0, DropoutMode::Train, 3).unwrap(), input());
    }

    #[test]
    fn off_mode_is_identity() {
        assert_eq!(dropout(&input(), 0.3, DropoutMode::Off, 3).unwrap(), input());
    }

    #[test]
    fn same_seed_same_mask() {
        let a = dropout(&input(), 0.3, DropoutMode::Mc, 11).unwrap();
        let b = dropout(&input(), 0.3, DropoutMode::Mc, 11).unwrap();
        let c = dropout(&input(), 0.3, DropoutMode::Mc, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rate_of_one_rejected() {
        assert!(dropout(&input(), 1.0, DropoutMode::Train, 0).is_err());
        assert!(dropout(&input(), -0.1, DropoutMode::Train, 0).is_err());
    }

    #[test]
    fn expectation_matches_input() {
        let x = Tensor::full(vec![1000], 2.0);
        let mut sum = 0.0f64;
        let draws = 200;
        for s in 0..draws {
            let y = dropout(&x, 0.3, DropoutMode::Train, s).unwrap();
            sum += y.data().iter().map(|&v| f64::from(v)).sum::<f64>();
        }
        let mean = sum / (draws as f64 * 1000.0);
        assert!((mean - 2.0).abs() / 2.0 < 0.02, "mean {mean}");
    }
}
