//! The two parties, their exchange and local-update steps, and the training
//! loop for Vanilla VFL, FedBCD and cache-enabled local updates.
//!
//! All three algorithms run on one engine. Every mini-batch gets at most `R`
//! updates: the one made during its exchange round plus up to `R - 1` local
//! updates drawn from the workset. Vanilla is `R = 1`; FedBCD is `W = 1`
//! without instance weighting.

mod config;
mod party_a;
mod party_b;
mod session;
mod snapshot;

pub use config::{Algorithm, ModelShape, Schedule, TrainConfig};
pub use party_a::{local_gradients, LocalWorkerA, PartyA};
pub use party_b::{b_gradients, BGradients, LocalWorkerB, PartyB};
pub use session::{run_training, RoundReport, Session, TrainingRun};
pub use snapshot::ModelSnapshot;

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::model::{AdaGrad, Gradients, Mlp};
use crate::numerics::{self, Matrix};

/// A model and its optimizer state.
#[derive(Clone, Debug)]
pub(crate) struct Trainable {
    pub model: Mlp<f64>,
    pub opt: AdaGrad<f64>,
}

impl Trainable {
    pub fn new(model: Mlp<f64>) -> Self {
        let opt = AdaGrad::new(&model);
        Trainable { model, opt }
    }

    pub fn step(&mut self, grads: &Gradients<f64>, lr: f64) -> Result<()> {
        self.opt.step(&mut self.model, grads, lr)
    }
}

/// Running per-party tallies, shared between a party's workers.
#[derive(Debug, Default)]
pub struct PartyCounters {
    rounds: AtomicU64,
    local_steps: AtomicU64,
    bubbles: AtomicU64,
    weights_seen: AtomicU64,
    weights_zeroed: AtomicU64,
}

impl PartyCounters {
    pub fn rounds(&self) -> u64 {
        self.rounds.load(Ordering::Relaxed)
    }

    pub fn local_steps(&self) -> u64 {
        self.local_steps.load(Ordering::Relaxed)
    }

    pub fn bubbles(&self) -> u64 {
        self.bubbles.load(Ordering::Relaxed)
    }

    /// `(instance weights computed, of which zero)` over all local steps.
    pub fn weight_tally(&self) -> (u64, u64) {
        (
            self.weights_seen.load(Ordering::Relaxed),
            self.weights_zeroed.load(Ordering::Relaxed),
        )
    }

    pub(crate) fn count_round(&self) {
        self.rounds.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn count_bubble(&self) {
        self.bubbles.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn count_local_step(&self, weights: &[f64]) {
        self.local_steps.fetch_add(1, Ordering::Relaxed);
        self.weights_seen.fetch_add(weights.len() as u64, Ordering::Relaxed);
        let zeroed = weights.iter().filter(|&&w| w == 0.0).count() as u64;
        self.weights_zeroed.fetch_add(zeroed, Ordering::Relaxed);
    }
}

/// Control frame batch ids.
pub(crate) const CONTROL_START: u64 = 0;
pub(crate) const CONTROL_STOP: u64 = 1;

/// Instance weighting rule applied during local updates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Weighting {
    /// Every instance keeps weight 1.
    Off,
    /// Cosine between ad hoc and stale statistics, zeroed below `cos ξ`.
    Threshold { cos_xi: f64 },
}

impl Weighting {
    pub fn from_xi(xi_degrees: Option<f64>) -> Result<Self> {
        match xi_degrees {
            None => Ok(Weighting::Off),
            Some(xi) => Ok(Weighting::Threshold {
                cos_xi: cos_threshold(xi)?,
            }),
        }
    }

    pub fn weights(&self, ad_hoc: &Matrix<f64>, stale: &Matrix<f64>) -> Result<Vec<f64>> {
        match *self {
            Weighting::Off => {
                if ad_hoc.shape() != stale.shape() {
                    return Err(Error::shape("ins_weight", ad_hoc.shape(), stale.shape()));
                }
                Ok(vec![1.0; ad_hoc.rows()])
            }
            Weighting::Threshold { cos_xi } => threshold_weights(ad_hoc, stale, cos_xi),
        }
    }
}

fn cos_threshold(xi_degrees: f64) -> Result<f64> {
    if !(xi_degrees > 0.0 && xi_degrees <= 180.0) {
        return Err(Error::Domain(format!("xi must lie in (0, 180] degrees, got {xi_degrees}")));
    }
    Ok(xi_degrees.to_radians().cos())
}

fn threshold_weights(ad_hoc: &Matrix<f64>, stale: &Matrix<f64>, cos_xi: f64) -> Result<Vec<f64>> {
    let mut w = numerics::row_cosine(ad_hoc, stale)?;
    w.iter_mut().filter(|c| **c < cos_xi).for_each(|c| *c = 0.0);
    Ok(w)
}

/// Per-instance weights: the row cosine between ad hoc and stale statistics,
/// set to zero wherever it falls below `cos ξ`.
pub fn ins_weight(ad_hoc: &Matrix<f64>, stale: &Matrix<f64>, xi_degrees: f64) -> Result<Vec<f64>> {
    threshold_weights(ad_hoc, stale, cos_threshold(xi_degrees)?)
}

/// SplitMix64 finalizer, used to give each model its own seed.
pub(crate) fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
