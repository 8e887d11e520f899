use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{self, Matrix, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Linear => x,
        }
    }
}

/// One affine layer `x · weight + bias` followed by an activation.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

impl<T: Scalar> Layer<T> {
    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Dense multilayer perceptron. Used for both bottom models and the top model.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    layers: Vec<Layer<T>>,
}

/// Everything backprop needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    pub input: Matrix<T>,
    /// Affine outputs, one per layer.
    pub pre: Vec<Matrix<T>>,
    /// Activation outputs, one per layer; the last one is the model output.
    pub post: Vec<Matrix<T>>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn output(&self) -> &Matrix<T> {
        self.post.last().unwrap_or(&self.input)
    }

    pub fn depth(&self) -> usize {
        self.pre.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

/// Parameter gradients with the same layout as an [`Mlp`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<LayerGrad<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// All entries in layer order, weights (row-major) before biases.
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weight.as_slice().iter().all(|x| x.is_zero()) && l.bias.iter().all(|x| x.is_zero())
        })
    }
}

impl<T: Scalar> Mlp<T> {
    /// Xavier-uniform weights drawn from a ChaCha stream seeded with `seed`;
    /// biases start at zero.
    pub fn init(layout: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        if layout.len() < 2 {
            return Err(Error::Config(format!(
                "layout needs at least an input and an output width, got {layout:?}"
            )));
        }
        if activations.len() != layout.len() - 1 {
            return Err(Error::Config(format!(
                "{} layers need {} activations, got {}",
                layout.len() - 1,
                layout.len() - 1,
                activations.len()
            )));
        }
        if layout.contains(&0) {
            return Err(Error::Config(format!("zero width in layout {layout:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layout
            .windows(2)
            .zip(activations)
            .map(|(dims, &activation)| {
                let (d_in, d_out) = (dims[0], dims[1]);
                let bound = (6.0 / (d_in + d_out) as f64).sqrt();
                let data = (0..d_in * d_out)
                    .map(|_| T::lit(rng.random_range(-bound..bound)))
                    .collect();
                Layer {
                    weight: Matrix::from_parts(d_in, d_out, data),
                    bias: vec![T::zero(); d_out],
                    activation,
                }
            })
            .collect();
        Ok(Mlp { layers })
    }

    /// ReLU hidden layers and a linear output layer.
    pub fn with_layout(layout: &[usize], seed: u64) -> Result<Self> {
        let n = layout.len().saturating_sub(1);
        let activations: Vec<_> = (0..n)
            .map(|i| if i + 1 == n { Activation::Linear } else { Activation::Relu })
            .collect();
        Self::init(layout, &activations, seed)
    }

    pub fn from_layers(layers: Vec<Layer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("model needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Config(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        if let Some((i, l)) = layers.iter().enumerate().find(|(_, l)| l.bias.len() != l.out_dim()) {
            return Err(Error::Config(format!(
                "layer {i} bias has {} entries for width {}",
                l.bias.len(),
                l.out_dim()
            )));
        }
        Ok(Mlp { layers })
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Widths from input to output.
    pub fn layout(&self) -> Vec<usize> {
        std::iter::once(self.in_dim())
            .chain(self.layers.iter().map(Layer::out_dim))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Flat parameter vector in the [`Gradients::flatten`] order.
    pub fn params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Mutable access to the `index`-th entry of [`Mlp::params`].
    pub fn param_mut(&mut self, mut index: usize) -> Option<&mut T> {
        for l in &mut self.layers {
            let w = l.weight.len();
            if index < w {
                return Some(&mut l.weight.as_mut_slice()[index]);
            }
            index -= w;
            if index < l.bias.len() {
                return Some(&mut l.bias[index]);
            }
            index -= l.bias.len();
        }
        None
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<(Matrix<T>, ForwardTrace<T>)> {
        if x.cols() != self.in_dim() {
            return Err(Error::shape("forward", x.shape(), self.layers[0].weight.shape()));
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Matrix<T>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = post.last().unwrap_or(x);
            let mut z = numerics::matmul(input, &layer.weight)?;
            for r in 0..z.rows() {
                for (v, &b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                    *v = *v + b;
                }
            }
            post.push(z.map(|v| layer.activation.apply(v)));
            pre.push(z);
        }
        let trace = ForwardTrace {
            input: x.clone(),
            pre,
            post,
        };
        Ok((trace.output().clone(), trace))
    }

    /// Output only, for evaluation.
    pub fn predict(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.forward(x).map(|(out, _)| out)
    }

    /// Backprop of the per-instance upstream derivatives `upstream`
    /// (`∂loss_k/∂output_k`), each row scaled by `row_weights[k]`.
    ///
    /// Parameter gradients are those of `(1/B) Σ_k w_k ⟨upstream_k, output_k⟩`
    /// with upstream and weights held constant. The returned input gradient is
    /// per instance (row `k` is `w_k · upstream_k · ∂output_k/∂input_k`, not
    /// divided by `B`), so it can be fed as the upstream of a lower model.
    pub fn backward(
        &self,
        trace: &ForwardTrace<T>,
        upstream: &Matrix<T>,
        row_weights: &[T],
    ) -> Result<(Gradients<T>, Matrix<T>)> {
        if trace.depth() != self.layers.len() {
            return Err(Error::Logic(format!(
                "trace has {} layers, model has {}",
                trace.depth(),
                self.layers.len()
            )));
        }
        if upstream.shape() != trace.output().shape() {
            return Err(Error::shape("backward", upstream.shape(), trace.output().shape()));
        }
        let batch = upstream.rows();
        let scale = T::lit(batch as f64);
        let mut delta = numerics::scale_rows(upstream, row_weights)?;
        let mut grads = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate().rev() {
            if layer.activation == Activation::Relu {
                let pre = &trace.pre[l];
                for (d, &z) in delta.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                    if z <= T::zero() {
                        *d = T::zero();
                    }
                }
            }
            let input = if l == 0 { &trace.input } else { &trace.post[l - 1] };
            let weight = numerics::t_matmul(input, &delta)?.map(|g| g / scale);
            let bias = delta.column_sums().into_iter().map(|g| g / scale).collect();
            delta = numerics::matmul_t(&delta, &layer.weight)?;
            grads.push(LayerGrad { weight, bias });
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, delta))
    }
}
