//! A small dense-network engine: matrices, affine layers with hand-written
//! backward passes, dropout, Adam and a central-difference gradient checker.

mod adam;
mod dense;
mod gradcheck;
mod matrix;

pub use adam::{AdamConfig, AdamState, ParamRef};
pub use dense::{Activation, DenseLayer, LayerCache, LayerGradients};
pub use gradcheck::{grad_check, numeric_gradient, relative_error, GradCheckReport};
pub use matrix::Matrix;

use rand::Rng;

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverted dropout: surviving units are scaled by `1 / (1 - rate)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    rate: f64,
}

impl Dropout {
    pub fn new(rate: f64) -> crate::Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(crate::Error::InvalidArgument(format!(
                "dropout rate {rate} outside [0, 1)"
            )));
        }
        Ok(Self { rate })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Draws a mask of per-unit multipliers (0 or `1/(1-rate)`).
    pub fn sample_mask<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<f64> {
        if self.rate == 0.0 {
            return vec![1.0; len];
        }
        let keep = 1.0 / (1.0 - self.rate);
        (0..len)
            .map(|_| {
                if rng.random::<f64>() < self.rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect()
    }

    pub fn apply<R: Rng + ?Sized>(&self, input: &[f64], rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let mask = self.sample_mask(input.len(), rng);
        let out = input.iter().zip(&mask).map(|(x, m)| x * m).collect();
        (out, mask)
    }
}
