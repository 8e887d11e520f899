//! Party A holds features only. It never sees labels or either of party B's
//! models; all it learns from B are the derivatives of the loss with respect
//! to its own activations.

use std::sync::{Arc, Mutex};

use super::{PartyCounters, Trainable, Weighting, CONTROL_START, CONTROL_STOP};
use crate::dataio::BatchPlan;
use crate::error::{Error, Result};
use crate::model::{ForwardTrace, Gradients, Mlp};
use crate::numerics::Matrix;
use crate::transport::{Channel, Message, MessageKind};
use crate::workset::{CacheEntry, SharedWorkset};

struct PendingForward {
    round: u64,
    indices: Vec<usize>,
    z_a: Matrix<f64>,
    trace: ForwardTrace<f64>,
}

pub struct PartyA {
    bottom: Arc<Mutex<Trainable>>,
    features: Arc<Matrix<f64>>,
    workset: SharedWorkset,
    plan: BatchPlan,
    channel: Channel,
    lr: f64,
    weighting: Weighting,
    counters: Arc<PartyCounters>,
    pending: Option<PendingForward>,
}

impl PartyA {
    pub(crate) fn new(
        bottom: Mlp<f64>,
        features: Matrix<f64>,
        workset: SharedWorkset,
        plan: BatchPlan,
        channel: Channel,
        lr: f64,
        weighting: Weighting,
    ) -> Result<Self> {
        if bottom.in_dim() != features.cols() {
            return Err(Error::Config(format!(
                "party A bottom expects {} features, data has {}",
                bottom.in_dim(),
                features.cols()
            )));
        }
        Ok(PartyA {
            bottom: Arc::new(Mutex::new(Trainable::new(bottom))),
            features: Arc::new(features),
            workset,
            plan,
            channel,
            lr,
            weighting,
            counters: Arc::default(),
            pending: None,
        })
    }

    pub fn start(&self) -> Result<()> {
        self.channel.send(&Message::control(CONTROL_START))
    }

    pub fn stop(&self) -> Result<()> {
        self.channel.send(&Message::control(CONTROL_STOP))
    }

    /// First half of round `round`: compute `Z_A` for the round's batch and
    /// send it.
    pub fn send_forward(&mut self, round: u64) -> Result<()> {
        if self.pending.is_some() {
            return Err(Error::Logic("previous round was not finished".into()));
        }
        let indices = self.plan.batch_indices(round_step(round)?)?;
        let x = self.features.select_rows(&indices)?;
        let (z_a, trace) = self.bottom.lock().unwrap().model.forward(&x)?;
        self.channel
            .send(&Message::from_f64(MessageKind::ForwardAct, round, &z_a))?;
        self.pending = Some(PendingForward {
            round,
            indices,
            z_a,
            trace,
        });
        Ok(())
    }

    /// Second half: receive `∇Z_A`, update the bottom model and cache the pair.
    pub fn finish_round(&mut self) -> Result<()> {
        let pending = self
            .pending
            .take()
            .ok_or_else(|| Error::Logic("no forward pass awaiting derivatives".into()))?;
        let msg = self.channel.recv()?;
        if msg.kind != MessageKind::BackwardDer || msg.batch_id != pending.round {
            return Err(Error::Protocol(format!(
                "expected derivatives for round {}, got {:?} for {}",
                pending.round, msg.kind, msg.batch_id
            )));
        }
        let dz_a = msg.payload_f64();
        if dz_a.shape() != pending.z_a.shape() {
            return Err(Error::shape("backward derivatives", dz_a.shape(), pending.z_a.shape()));
        }
        {
            let mut bottom = self.bottom.lock().unwrap();
            let ones = vec![1.0; dz_a.rows()];
            let (grads, _) = bottom.model.backward(&pending.trace, &dz_a, &ones)?;
            bottom.step(&grads, self.lr)?;
        }
        let entry = CacheEntry::new(pending.round, pending.z_a, dz_a, pending.indices);
        self.workset.insert(entry, pending.round)?;
        self.counters.count_round();
        Ok(())
    }

    pub fn local_worker(&self) -> LocalWorkerA {
        LocalWorkerA {
            bottom: Arc::clone(&self.bottom),
            features: Arc::clone(&self.features),
            workset: self.workset.clone(),
            lr: self.lr,
            weighting: self.weighting,
            counters: Arc::clone(&self.counters),
        }
    }

    pub fn bottom(&self) -> Mlp<f64> {
        self.bottom.lock().unwrap().model.clone()
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

/// Party A's local worker: draws cached batches and updates the bottom model
/// from stale derivatives.
#[derive(Clone)]
pub struct LocalWorkerA {
    bottom: Arc<Mutex<Trainable>>,
    features: Arc<Matrix<f64>>,
    workset: SharedWorkset,
    lr: f64,
    weighting: Weighting,
    counters: Arc<PartyCounters>,
}

impl LocalWorkerA {
    /// Next cached batch under round-robin sampling, with its use counted.
    /// `None` is a bubble.
    pub fn take(&self) -> Option<CacheEntry> {
        let entry = self.workset.take_next();
        if entry.is_none() {
            self.counters.count_bubble();
        }
        entry
    }

    /// Estimated gradient and instance weights for `entry` at the current
    /// parameters, without updating anything.
    pub fn gradients(&self, entry: &CacheEntry) -> Result<(Gradients<f64>, Vec<f64>)> {
        let x = self.features.select_rows(&entry.batch_indices)?;
        let bottom = self.bottom.lock().unwrap();
        local_gradients(&bottom.model, &x, entry, self.weighting)
    }

    /// One local update from `entry`. Returns the instance weights used.
    pub fn apply(&self, entry: &CacheEntry) -> Result<Vec<f64>> {
        let x = self.features.select_rows(&entry.batch_indices)?;
        let mut bottom = self.bottom.lock().unwrap();
        let (grads, weights) = local_gradients(&bottom.model, &x, entry, self.weighting)?;
        bottom.step(&grads, self.lr)?;
        drop(bottom);
        self.counters.count_local_step(&weights);
        Ok(weights)
    }

    /// `take` then `apply`; `false` on a bubble.
    pub fn step(&self) -> Result<bool> {
        match self.take() {
            Some(entry) => self.apply(&entry).map(|_| true),
            None => Ok(false),
        }
    }

    pub fn bottom(&self) -> Mlp<f64> {
        self.bottom.lock().unwrap().model.clone()
    }

    pub fn features(&self) -> &Matrix<f64> {
        &self.features
    }
}

/// Recomputes the ad hoc activations on the cached batch, weights instances by
/// how far they moved from the cached ones, and backpropagates the cached
/// derivatives through the current model.
pub fn local_gradients(
    bottom: &Mlp<f64>,
    x_batch: &Matrix<f64>,
    entry: &CacheEntry,
    weighting: Weighting,
) -> Result<(Gradients<f64>, Vec<f64>)> {
    let (z_ad_hoc, trace) = bottom.forward(x_batch)?;
    let weights = weighting.weights(&z_ad_hoc, &entry.z_a)?;
    let (grads, _) = bottom.backward(&trace, &entry.dz_a, &weights)?;
    Ok((grads, weights))
}

pub(crate) fn round_step(round: u64) -> Result<usize> {
    round
        .checked_sub(1)
        .map(|s| s as usize)
        .ok_or_else(|| Error::Logic("rounds are numbered from 1".into()))
}
