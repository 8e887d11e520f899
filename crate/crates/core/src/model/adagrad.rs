use super::mlp::{Gradients, Mlp};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Scalar};

pub const ADAGRAD_EPSILON: f64 = 1e-10;

/// Squared-gradient accumulators, one per parameter of the model they were
/// created for.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaGrad<T> {
    weights: Vec<Matrix<T>>,
    biases: Vec<Vec<T>>,
    epsilon: T,
}

impl<T: Scalar> AdaGrad<T> {
    pub fn new(model: &Mlp<T>) -> Self {
        Self::with_epsilon(model, T::lit(ADAGRAD_EPSILON))
    }

    pub fn with_epsilon(model: &Mlp<T>, epsilon: T) -> Self {
        AdaGrad {
            weights: model
                .layers()
                .iter()
                .map(|l| Matrix::zeros(l.weight.rows(), l.weight.cols()))
                .collect(),
            biases: model.layers().iter().map(|l| vec![T::zero(); l.bias.len()]).collect(),
            epsilon,
        }
    }

    pub fn accumulators(&self) -> impl Iterator<Item = T> + '_ {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.as_slice().iter().chain(b).copied())
    }

    /// `acc += g²; p -= lr · g / (sqrt(acc) + ε)` for every parameter.
    ///
    /// All gradients are validated before anything is written, so a rejected
    /// step leaves both the model and the accumulators untouched.
    pub fn step(&mut self, model: &mut Mlp<T>, grads: &Gradients<T>, lr: T) -> Result<()> {
        if grads.layers.len() != self.weights.len() || model.layers().len() != self.weights.len() {
            return Err(Error::Logic(format!(
                "optimizer tracks {} layers, gradients have {}, model has {}",
                self.weights.len(),
                grads.layers.len(),
                model.layers().len()
            )));
        }
        for (i, (g, acc)) in grads.layers.iter().zip(&self.weights).enumerate() {
            if g.weight.shape() != acc.shape() || g.bias.len() != self.biases[i].len() {
                return Err(Error::shape("adagrad_step", g.weight.shape(), acc.shape()));
            }
            if !g.weight.is_finite() || g.bias.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!("layer {i}")));
            }
        }
        let eps = self.epsilon;
        let update = |p: &mut T, acc: &mut T, g: T| {
            *acc = *acc + g * g;
            *p = *p - lr * g / (acc.sqrt() + eps);
        };
        for ((g, layer), (acc_w, acc_b)) in grads
            .layers
            .iter()
            .zip(model.layers_mut())
            .zip(self.weights.iter_mut().zip(self.biases.iter_mut()))
        {
            let params = layer.weight.as_mut_slice().iter_mut();
            for ((p, acc), &gw) in params.zip(acc_w.as_mut_slice()).zip(g.weight.as_slice()) {
                update(p, acc, gw);
            }
            for ((p, acc), &gb) in layer.bias.iter_mut().zip(acc_b.iter_mut()).zip(&g.bias) {
                update(p, acc, gb);
            }
        }
        Ok(())
    }
}
