use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// `y = act(W x + b)` with `W` stored out×in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerInput {
    Dense(Vec<f64>),
    OneHot { index: usize, len: usize },
}

/// What `forward` remembers for `backward`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCache {
    pub input: LayerInput,
    pub pre_activation: Vec<f64>,
    pub output: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl LayerGradients {
    pub fn zeros_like(layer: &DenseLayer) -> Self {
        Self {
            weight: Matrix::zeros(layer.weight.rows(), layer.weight.cols()),
            bias: vec![0.0; layer.bias.len()],
        }
    }
}

impl DenseLayer {
    pub fn new(weight: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if weight.rows() != bias.len() {
            return Err(Error::Shape(format!(
                "weight has {} rows but bias has {} entries",
                weight.rows(),
                bias.len()
            )));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init<R: Rng + ?Sized>(
        input_dim: usize,
        output_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        Self {
            weight: Matrix::glorot_uniform(output_dim, input_dim, input_dim, output_dim, rng),
            bias: vec![0.0; output_dim],
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, LayerCache)> {
        let mut pre = self.weight.matvec(input)?;
        for (p, b) in pre.iter_mut().zip(&self.bias) {
            *p += b;
        }
        Ok(self.finish(LayerInput::Dense(input.to_vec()), pre))
    }

    /// Forward pass for a one-hot input; reads a single weight column.
    pub fn forward_one_hot(&self, index: usize) -> Result<(Vec<f64>, LayerCache)> {
        if index >= self.input_dim() {
            return Err(Error::Shape(format!(
                "one-hot index {index} for input dimension {}",
                self.input_dim()
            )));
        }
        let pre = (0..self.output_dim())
            .map(|i| self.weight[(i, index)] + self.bias[i])
            .collect();
        let input = LayerInput::OneHot {
            index,
            len: self.input_dim(),
        };
        Ok(self.finish(input, pre))
    }

    fn finish(&self, input: LayerInput, pre: Vec<f64>) -> (Vec<f64>, LayerCache) {
        let output: Vec<f64> = pre.iter().map(|&x| self.activation.apply(x)).collect();
        let cache = LayerCache {
            input,
            pre_activation: pre,
            output: output.clone(),
        };
        (output, cache)
    }

    /// Gradient with respect to the pre-activation.
    pub fn delta(&self, cache: &LayerCache, upstream: &[f64]) -> Result<Vec<f64>> {
        if upstream.len() != self.output_dim() || cache.output.len() != self.output_dim() {
            return Err(Error::Shape(format!(
                "upstream gradient of length {} for layer output {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        Ok(upstream
            .iter()
            .zip(&cache.output)
            .map(|(g, &y)| g * self.activation.derivative_from_output(y))
            .collect())
    }

    /// Adds `scale ·` the parameter gradients into `grads`; returns the
    /// pre-activation gradient so the caller can continue backwards.
    pub fn accumulate(
        &self,
        cache: &LayerCache,
        upstream: &[f64],
        grads: &mut LayerGradients,
        scale: f64,
    ) -> Result<Vec<f64>> {
        let delta = self.delta(cache, upstream)?;
        match &cache.input {
            LayerInput::Dense(x) => {
                if x.len() != self.input_dim() {
                    return Err(Error::Shape("cache input does not match layer".into()));
                }
                grads.weight.add_outer(&delta, x, scale);
            }
            LayerInput::OneHot { index, .. } => {
                for (i, d) in delta.iter().enumerate() {
                    grads.weight[(i, *index)] += scale * d;
                }
            }
        }
        for (b, d) in grads.bias.iter_mut().zip(&delta) {
            *b += scale * d;
        }
        Ok(delta)
    }

    /// `Wᵀ δ`.
    pub fn input_gradient(&self, delta: &[f64]) -> Result<Vec<f64>> {
        self.weight.matvec_t(delta)
    }

    pub fn backward(
        &self,
        cache: &LayerCache,
        upstream: &[f64],
    ) -> Result<(Vec<f64>, LayerGradients)> {
        let mut grads = LayerGradients::zeros_like(self);
        let delta = self.accumulate(cache, upstream, &mut grads, 1.0)?;
        Ok((self.input_gradient(&delta)?, grads))
    }

    pub fn is_finite(&self) -> bool {
        self.weight.is_finite() && self.bias.iter().all(|x| x.is_finite())
    }
}
