use super::party_b::b_gradients;
use super::{derive_seed, TrainConfig};
use crate::dataio::AlignedDataset;
use crate::error::Result;
use crate::model::{logistic_loss, Gradients, Mlp};
use crate::numerics::Matrix;

/// Copies of all three models at one instant. Only the evaluation and
/// diagnostics code holds both parties' models at once; nothing here crosses
/// the channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSnapshot {
    pub bottom_a: Mlp<f64>,
    pub bottom_b: Mlp<f64>,
    pub top: Mlp<f64>,
}

const SEED_BOTTOM_A: u64 = 1;
const SEED_BOTTOM_B: u64 = 2;
const SEED_TOP: u64 = 3;

impl ModelSnapshot {
    /// The models a run with `config` starts from. Bottoms map `d_in` through
    /// the hidden widths to `d_z`; the top maps `2 d_z` to one logit.
    pub fn initial(config: &TrainConfig, d_a: usize, d_b: usize) -> Result<Self> {
        let bottom_layout = |d_in: usize| {
            let mut l = vec![d_in];
            l.extend(&config.shape.bottom_hidden);
            l.push(config.d_z);
            l
        };
        let mut top_layout = vec![2 * config.d_z];
        top_layout.extend(&config.shape.top_hidden);
        top_layout.push(1);
        Ok(ModelSnapshot {
            bottom_a: Mlp::with_layout(&bottom_layout(d_a), derive_seed(config.seed, SEED_BOTTOM_A))?,
            bottom_b: Mlp::with_layout(&bottom_layout(d_b), derive_seed(config.seed, SEED_BOTTOM_B))?,
            top: Mlp::with_layout(&top_layout, derive_seed(config.seed, SEED_TOP))?,
        })
    }

    pub fn logits(&self, x_a: &Matrix<f64>, x_b: &Matrix<f64>) -> Result<Vec<f64>> {
        let z_a = self.bottom_a.predict(x_a)?;
        let z_b = self.bottom_b.predict(x_b)?;
        Ok(self.top.predict(&z_a.hcat(&z_b)?)?.into_vec())
    }

    /// Mean logistic loss over the whole dataset.
    pub fn mean_loss(&self, data: &AlignedDataset) -> Result<f64> {
        let logits = self.logits(&data.x_a, &data.x_b)?;
        let (loss, _) = logistic_loss(&data.y, &logits)?;
        Ok(loss.iter().sum::<f64>() / loss.len().max(1) as f64)
    }

    /// Exact mini-batch gradient for party A's bottom model at these
    /// parameters, computed in full precision without the channel.
    pub fn party_a_gradient(&self, data: &AlignedDataset, indices: &[usize]) -> Result<Gradients<f64>> {
        let x_a = data.x_a.select_rows(indices)?;
        let x_b = data.x_b.select_rows(indices)?;
        let y: Vec<f64> = indices.iter().map(|&i| data.y[i]).collect();
        let (z_a, trace) = self.bottom_a.forward(&x_a)?;
        let b = b_gradients(&self.bottom_b, &self.top, &z_a, &x_b, &y, None)?;
        let (grads, _) = self.bottom_a.backward(&trace, &b.dz_a, &vec![1.0; indices.len()])?;
        Ok(grads)
    }
}
