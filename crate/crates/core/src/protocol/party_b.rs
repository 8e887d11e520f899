//! Party B holds its own features, the labels, its bottom model and the top
//! model. It only ever receives party A's activations.

use std::sync::{Arc, Mutex};

use super::party_a::round_step;
use super::{PartyCounters, Trainable, Weighting, CONTROL_START, CONTROL_STOP};
use crate::dataio::BatchPlan;
use crate::error::{Error, Result};
use crate::model::{logistic_loss, Gradients, Mlp};
use crate::numerics::Matrix;
use crate::transport::{Channel, Message, MessageKind};
use crate::workset::{CacheEntry, SharedWorkset};

pub(crate) struct HeadModels {
    pub bottom: Trainable,
    pub top: Trainable,
}

/// Gradients party B derives from one batch.
#[derive(Clone, Debug)]
pub struct BGradients {
    pub top: Gradients<f64>,
    pub bottom: Gradients<f64>,
    /// Unweighted per-instance `∂loss/∂Z_A`.
    pub dz_a: Matrix<f64>,
    pub weights: Vec<f64>,
    pub loss: Vec<f64>,
}

/// Forward through `[Z_A | Bottom_B(X_B)]` and the top model, then backprop
/// the per-instance logistic loss into both of B's models.
///
/// With `stale_dz_a = None` every instance has weight 1 (the exchange round).
/// Otherwise the ad hoc `∂loss/∂Z_A` is compared against the cached one and
/// the resulting weights scale each instance's loss; weights are constants.
pub fn b_gradients(
    bottom: &Mlp<f64>,
    top: &Mlp<f64>,
    z_a: &Matrix<f64>,
    x_b: &Matrix<f64>,
    y: &[f64],
    stale_dz_a: Option<(&Matrix<f64>, Weighting)>,
) -> Result<BGradients> {
    let (z_b, trace_b) = bottom.forward(x_b)?;
    let joined = z_a.hcat(&z_b)?;
    let (logits, trace_top) = top.forward(&joined)?;
    if logits.cols() != 1 {
        return Err(Error::Config(format!("top model must emit one logit, emits {}", logits.cols())));
    }
    let (loss, dlogit) = logistic_loss(y, logits.as_slice())?;
    let dlogit = Matrix::column(&dlogit);
    let ones = vec![1.0; y.len()];
    let (top_plain, d_joined_plain) = top.backward(&trace_top, &dlogit, &ones)?;
    let (dz_a, _) = d_joined_plain.split_cols(z_a.cols())?;

    let weights = match stale_dz_a {
        None => ones,
        Some((stale, weighting)) => weighting.weights(&dz_a, stale)?,
    };
    let (top_grads, d_joined) = if weights.iter().all(|&w| w == 1.0) {
        (top_plain, d_joined_plain)
    } else {
        top.backward(&trace_top, &dlogit, &weights)?
    };
    let (_, dz_b) = d_joined.split_cols(z_a.cols())?;
    let (bottom_grads, _) = bottom.backward(&trace_b, &dz_b, &vec![1.0; y.len()])?;
    Ok(BGradients {
        top: top_grads,
        bottom: bottom_grads,
        dz_a,
        weights,
        loss,
    })
}

pub struct PartyB {
    models: Arc<Mutex<HeadModels>>,
    features: Arc<Matrix<f64>>,
    labels: Arc<Vec<f64>>,
    workset: SharedWorkset,
    plan: BatchPlan,
    channel: Channel,
    lr: f64,
    weighting: Weighting,
    counters: Arc<PartyCounters>,
}

impl PartyB {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        bottom: Mlp<f64>,
        top: Mlp<f64>,
        features: Matrix<f64>,
        labels: Vec<f64>,
        workset: SharedWorkset,
        plan: BatchPlan,
        channel: Channel,
        lr: f64,
        weighting: Weighting,
    ) -> Result<Self> {
        if bottom.in_dim() != features.cols() || features.rows() != labels.len() {
            return Err(Error::Config(format!(
                "party B bottom expects {} features, data has {} columns and {} labels for {} rows",
                bottom.in_dim(),
                features.cols(),
                labels.len(),
                features.rows()
            )));
        }
        Ok(PartyB {
            models: Arc::new(Mutex::new(HeadModels {
                bottom: Trainable::new(bottom),
                top: Trainable::new(top),
            })),
            features: Arc::new(features),
            labels: Arc::new(labels),
            workset,
            plan,
            channel,
            lr,
            weighting,
            counters: Arc::default(),
        })
    }

    pub fn await_start(&self) -> Result<()> {
        self.expect_control(CONTROL_START)
    }

    pub fn await_stop(&self) -> Result<()> {
        self.expect_control(CONTROL_STOP)
    }

    fn expect_control(&self, id: u64) -> Result<()> {
        let msg = self.channel.recv()?;
        if msg.kind != MessageKind::Control || msg.batch_id != id {
            return Err(Error::Protocol(format!(
                "expected control {id}, got {:?} {}",
                msg.kind, msg.batch_id
            )));
        }
        Ok(())
    }

    /// Receives `Z_A` for `round`, updates the top and bottom models, sends
    /// back `∇Z_A` and caches the pair. Returns the batch's mean loss.
    pub fn handle_forward(&mut self, round: u64) -> Result<f64> {
        let indices = self.plan.batch_indices(round_step(round)?)?;
        let msg = self.channel.recv()?;
        if msg.kind != MessageKind::ForwardAct || msg.batch_id != round {
            return Err(Error::Protocol(format!(
                "expected activations for round {round}, got {:?} for {}",
                msg.kind, msg.batch_id
            )));
        }
        let z_a = msg.payload_f64();
        if z_a.rows() != indices.len() {
            return Err(Error::shape("forward activations", z_a.shape(), (indices.len(), z_a.cols())));
        }
        let x_b = self.features.select_rows(&indices)?;
        let y: Vec<f64> = indices.iter().map(|&i| self.labels[i]).collect();
        let grads = {
            let mut m = self.models.lock().unwrap();
            let g = b_gradients(&m.bottom.model, &m.top.model, &z_a, &x_b, &y, None)?;
            m.top.step(&g.top, self.lr)?;
            m.bottom.step(&g.bottom, self.lr)?;
            g
        };
        self.channel
            .send(&Message::from_f64(MessageKind::BackwardDer, round, &grads.dz_a))?;
        let entry = CacheEntry::new(round, z_a, grads.dz_a, indices);
        self.workset.insert(entry, round)?;
        self.counters.count_round();
        Ok(grads.loss.iter().sum::<f64>() / grads.loss.len() as f64)
    }

    pub fn local_worker(&self) -> LocalWorkerB {
        LocalWorkerB {
            models: Arc::clone(&self.models),
            features: Arc::clone(&self.features),
            labels: Arc::clone(&self.labels),
            workset: self.workset.clone(),
            lr: self.lr,
            weighting: self.weighting,
            counters: Arc::clone(&self.counters),
        }
    }

    /// `(bottom, top)`.
    pub fn models(&self) -> (Mlp<f64>, Mlp<f64>) {
        let m = self.models.lock().unwrap();
        (m.bottom.model.clone(), m.top.model.clone())
    }

    pub fn workset(&self) -> &SharedWorkset {
        &self.workset
    }

    pub fn channel(&self) -> &Channel {
        &self.channel
    }

    pub fn counters(&self) -> &PartyCounters {
        &self.counters
    }
}

/// Party B's local worker: feeds cached activations with fresh `Z_B` through
/// the top model and updates both of B's models.
#[derive(Clone)]
pub struct LocalWorkerB {
    models: Arc<Mutex<HeadModels>>,
    features: Arc<Matrix<f64>>,
    labels: Arc<Vec<f64>>,
    workset: SharedWorkset,
    lr: f64,
    weighting: Weighting,
    counters: Arc<PartyCounters>,
}

impl LocalWorkerB {
    pub fn take(&self) -> Option<CacheEntry> {
        let entry = self.workset.take_next();
        if entry.is_none() {
            self.counters.count_bubble();
        }
        entry
    }

    fn batch(&self, entry: &CacheEntry) -> Result<(Matrix<f64>, Vec<f64>)> {
        let x_b = self.features.select_rows(&entry.batch_indices)?;
        let y = entry.batch_indices.iter().map(|&i| self.labels[i]).collect();
        Ok((x_b, y))
    }

    pub fn gradients(&self, entry: &CacheEntry) -> Result<BGradients> {
        let (x_b, y) = self.batch(entry)?;
        let m = self.models.lock().unwrap();
        b_gradients(
            &m.bottom.model,
            &m.top.model,
            &entry.z_a,
            &x_b,
            &y,
            Some((&entry.dz_a, self.weighting)),
        )
    }

    pub fn apply(&self, entry: &CacheEntry) -> Result<Vec<f64>> {
        let (x_b, y) = self.batch(entry)?;
        let mut m = self.models.lock().unwrap();
        let g = b_gradients(
            &m.bottom.model,
            &m.top.model,
            &entry.z_a,
            &x_b,
            &y,
            Some((&entry.dz_a, self.weighting)),
        )?;
        m.top.step(&g.top, self.lr)?;
        m.bottom.step(&g.bottom, self.lr)?;
        drop(m);
        self.counters.count_local_step(&g.weights);
        Ok(g.weights)
    }

    pub fn step(&self) -> Result<bool> {
        match self.take() {
            Some(entry) => self.apply(&entry).map(|_| true),
            None => Ok(false),
        }
    }

    pub fn models(&self) -> (Mlp<f64>, Mlp<f64>) {
        let m = self.models.lock().unwrap();
        (m.bottom.model.clone(), m.top.model.clone())
    }
}
