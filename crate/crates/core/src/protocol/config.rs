use std::fmt;
use std::str::FromStr;

use super::Weighting;
use crate::error::{Error, Result};
use crate::transport::ChannelConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Vanilla,
    FedBcd,
    Celu,
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "vanilla" => Ok(Algorithm::Vanilla),
            "fedbcd" => Ok(Algorithm::FedBcd),
            "celu" => Ok(Algorithm::Celu),
            other => Err(Error::Config(format!("unknown algorithm {other:?}"))),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Vanilla => "vanilla",
            Algorithm::FedBcd => "fedbcd",
            Algorithm::Celu => "celu",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schedule {
    /// Single-threaded `[exchange, up to R-1 local steps]` per round; the
    /// reference for every bitwise test.
    Deterministic,
    /// Local workers free-run against the worksets while the communication
    /// worker exchanges.
    Concurrent,
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "deterministic" => Ok(Schedule::Deterministic),
            "concurrent" => Ok(Schedule::Concurrent),
            other => Err(Error::Config(format!("unknown schedule {other:?}"))),
        }
    }
}

/// Hidden widths of the split model. Both bottoms end in `d_z` units; the top
/// model consumes the concatenation `[Z_A | Z_B]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelShape {
    pub bottom_hidden: Vec<usize>,
    pub top_hidden: Vec<usize>,
}

impl Default for ModelShape {
    fn default() -> Self {
        ModelShape {
            bottom_hidden: vec![32],
            top_hidden: vec![],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub batch_size: usize,
    /// Maximum number of updates per mini-batch, counting the exchange update.
    pub local_steps: usize,
    pub workset: usize,
    /// Weighting threshold angle in degrees; `None` disables weighting.
    pub xi_degrees: Option<f64>,
    pub lr: f64,
    pub epochs: usize,
    /// Stop after this many rounds even if epochs remain.
    pub max_rounds: Option<usize>,
    pub seed: u64,
    pub d_z: usize,
    pub shape: ModelShape,
    pub channel: ChannelConfig,
    pub eval_every: usize,
    pub schedule: Schedule,
    /// Record the gradient-direction cosine at every party A local step.
    pub diagnostics: bool,
    /// Simulated seconds charged per model update, on top of communication.
    pub compute_cost_s: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            algorithm: Algorithm::Celu,
            batch_size: 256,
            local_steps: 5,
            workset: 5,
            xi_degrees: Some(60.0),
            lr: 0.05,
            epochs: 1,
            max_rounds: None,
            seed: 0,
            d_z: 16,
            shape: ModelShape::default(),
            channel: ChannelConfig::default(),
            eval_every: 100,
            schedule: Schedule::Deterministic,
            diagnostics: false,
            compute_cost_s: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn vanilla() -> Self {
        TrainConfig {
            algorithm: Algorithm::Vanilla,
            local_steps: 1,
            workset: 1,
            xi_degrees: None,
            ..Self::default()
        }
    }

    pub fn fedbcd(local_steps: usize) -> Self {
        TrainConfig {
            algorithm: Algorithm::FedBcd,
            local_steps,
            workset: 1,
            xi_degrees: None,
            ..Self::default()
        }
    }

    pub fn celu(local_steps: usize, workset: usize, xi_degrees: Option<f64>) -> Self {
        TrainConfig {
            algorithm: Algorithm::Celu,
            local_steps,
            workset,
            xi_degrees,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.batch_size == 0 {
            return fail("batch size must be at least 1".into());
        }
        if self.local_steps == 0 {
            return fail("R must be at least 1".into());
        }
        if self.workset == 0 {
            return fail("W must be at least 1".into());
        }
        if self.d_z == 0 {
            return fail("d_z must be at least 1".into());
        }
        if self.eval_every == 0 {
            return fail("eval_every must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(self.compute_cost_s >= 0.0 && self.compute_cost_s.is_finite()) {
            return fail("compute cost must be non-negative".into());
        }
        if let Some(xi) = self.xi_degrees {
            if !(xi > 0.0 && xi <= 180.0) {
                return fail(format!("xi must lie in (0, 180] degrees, got {xi}"));
            }
        }
        match self.algorithm {
            Algorithm::Vanilla if self.local_steps != 1 => {
                return fail(format!("vanilla requires R = 1, got {}", self.local_steps));
            }
            Algorithm::FedBcd if self.workset != 1 || self.xi_degrees.is_some() => {
                return fail("fedbcd requires W = 1 and weighting disabled".into());
            }
            _ => {}
        }
        self.channel.validate()
    }

    pub fn weighting(&self) -> Result<Weighting> {
        Weighting::from_xi(self.xi_degrees)
    }

    /// Local uses allowed per cached batch.
    pub fn local_uses(&self) -> u32 {
        (self.local_steps - 1) as u32
    }
}
