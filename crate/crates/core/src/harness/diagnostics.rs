use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::AlignedDataset;
use crate::error::{Error, Result};
use crate::model::{AdaGrad, Gradients};
use crate::protocol::{b_gradients, local_gradients, ModelSnapshot, Weighting};
use crate::workset::CacheEntry;

/// Constants of the convergence bound that a run cannot measure.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiagnosticsConfig {
    /// Lipschitz constant `L`.
    pub lipschitz: f64,
    /// Gradient moment bound `σ`.
    pub sigma: f64,
    /// Parameter dimension `d`.
    pub dim: f64,
    /// Failure probability `δ`.
    pub delta: f64,
}

impl DiagnosticsConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("L", self.lipschitz), ("sigma", self.sigma), ("d", self.dim), ("delta", self.delta)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.delta >= 1.0 {
            return Err(Error::Config(format!("delta must be below 1, got {}", self.delta)));
        }
        Ok(())
    }
}

/// `Δ = L² ln(2d/δ) / B · (1 + 1/W) + σ² (2 - ρ)`.
pub fn theoretical_delta(diag: &DiagnosticsConfig, batch_size: usize, workset: usize, rho: f64) -> Result<f64> {
    diag.validate()?;
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::Domain(format!("rho must lie in (0, 1], got {rho}")));
    }
    if batch_size == 0 || workset == 0 {
        return Err(Error::Config("B and W must be at least 1".into()));
    }
    let (b, w) = (batch_size as f64, workset as f64);
    let sampling = diag.lipschitz.powi(2) * (2.0 * diag.dim / diag.delta).ln() / b * (1.0 + 1.0 / w);
    Ok(sampling + diag.sigma.powi(2) * (2.0 - rho))
}

pub const MIN_PROBE_TRIALS: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VarianceProbeConfig {
    pub batch_size: usize,
    pub workset: usize,
    pub trials: usize,
    /// Learning rate of the local steps that age the cached statistics.
    pub lr: f64,
    pub weighting: Weighting,
    pub seed: u64,
}

/// Monte-Carlo estimates of `E‖g̃ - ∇f‖²`, `E‖g - ∇f‖²` and `E‖g̃ - g‖²` for
/// party A's bottom model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VarianceProbe {
    pub term_sampling: f64,
    pub term_staleness: f64,
    pub lhs: f64,
    pub trials: usize,
    /// Trials in which `‖g̃ - ∇f‖² ≤ 2‖g - ∇f‖² + 2‖g̃ - g‖²` held.
    pub trials_holding: usize,
}

impl VarianceProbe {
    pub fn bound(&self) -> f64 {
        2.0 * self.term_sampling + 2.0 * self.term_staleness
    }

    pub fn holds(&self) -> bool {
        within(self.lhs, self.bound())
    }
}

fn within(lhs: f64, bound: f64) -> bool {
    lhs <= bound * (1.0 + 1e-12) + 1e-300
}

fn sq_dist(u: &Gradients<f64>, v: &Gradients<f64>) -> f64 {
    u.flatten().iter().zip(v.flatten()).map(|(a, b)| (a - b).powi(2)).sum()
}

/// Each trial draws a workset of `W` batches, caches their activations and
/// derivatives at the snapshot, ages party A's bottom model by `W - 1` local
/// steps over the first `W - 1` batches, then compares on the remaining batch
/// the cached-statistics gradient `g̃`, the exact mini-batch gradient `g` and
/// the full-batch gradient `∇f`, all at the aged parameters. Party B's models
/// stay at the snapshot. Meant for small datasets: `∇f` is recomputed over all
/// rows every trial.
pub fn variance_probe(
    data: &AlignedDataset,
    snapshot: &ModelSnapshot,
    config: &VarianceProbeConfig,
) -> Result<VarianceProbe> {
    if config.trials < MIN_PROBE_TRIALS {
        return Err(Error::Config(format!(
            "variance probe needs at least {MIN_PROBE_TRIALS} trials, got {}",
            config.trials
        )));
    }
    if config.batch_size == 0 || config.batch_size > data.n() {
        return Err(Error::Config(format!(
            "batch size {} outside 1..={}",
            config.batch_size,
            data.n()
        )));
    }
    if config.workset == 0 {
        return Err(Error::Config("W must be at least 1".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let everyone: Vec<usize> = (0..data.n()).collect();
    let (mut sampling, mut staleness, mut lhs) = (0.0, 0.0, 0.0);
    let mut holding = 0;
    for _ in 0..config.trials {
        let entries = (0..config.workset)
            .map(|id| {
                let mut idx = index::sample(&mut rng, data.n(), config.batch_size).into_vec();
                idx.sort_unstable();
                cache_at(snapshot, data, id as u64 + 1, idx)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut bottom = snapshot.bottom_a.clone();
        let mut opt = AdaGrad::new(&bottom);
        let (probe, aging) = entries.split_last().expect("workset is non-empty");
        for entry in aging {
            let x = data.x_a.select_rows(&entry.batch_indices)?;
            let (g, _) = local_gradients(&bottom, &x, entry, config.weighting)?;
            opt.step(&mut bottom, &g, config.lr)?;
        }

        let aged = ModelSnapshot {
            bottom_a: bottom,
            ..snapshot.clone()
        };
        let x = data.x_a.select_rows(&probe.batch_indices)?;
        let (g_tilde, _) = local_gradients(&aged.bottom_a, &x, probe, config.weighting)?;
        let g = aged.party_a_gradient(data, &probe.batch_indices)?;
        let full = aged.party_a_gradient(data, &everyone)?;

        let (s, t, l) = (sq_dist(&g, &full), sq_dist(&g_tilde, &g), sq_dist(&g_tilde, &full));
        if within(l, 2.0 * s + 2.0 * t) {
            holding += 1;
        }
        sampling += s;
        staleness += t;
        lhs += l;
    }
    let n = config.trials as f64;
    Ok(VarianceProbe {
        term_sampling: sampling / n,
        term_staleness: staleness / n,
        lhs: lhs / n,
        trials: config.trials,
        trials_holding: holding,
    })
}

fn cache_at(s: &ModelSnapshot, data: &AlignedDataset, id: u64, idx: Vec<usize>) -> Result<CacheEntry> {
    let z_a = s.bottom_a.predict(&data.x_a.select_rows(&idx)?)?;
    let y: Vec<f64> = idx.iter().map(|&i| data.y[i]).collect();
    let b = b_gradients(&s.bottom_b, &s.top, &z_a, &data.x_b.select_rows(&idx)?, &y, None)?;
    Ok(CacheEntry::new(id, z_a, b.dz_a, idx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::generate_synthetic;
    use crate::protocol::TrainConfig;

    fn diag(lipschitz: f64, sigma: f64, dim: f64, delta: f64) -> DiagnosticsConfig {
        DiagnosticsConfig {
            lipschitz,
            sigma,
            dim,
            delta,
        }
    }

    #[test]
    fn delta_examples() {
        let d = diag(2.0, 0.5, 10.0, 0.1);
        let got = theoretical_delta(&d, 100, 5, 0.8).unwrap();
        let oracle = 4.0 * 200f64.ln() / 100.0 * 1.2 + 0.25 * 1.2;
        assert!((got - oracle).abs() < 1e-12);
        assert!((got - 0.55432).abs() < 1e-4);
        let isolated = theoretical_delta(&diag(3.0, 1.0, 0.05, 0.1), 7, 2, 1.0).unwrap();
        assert!((isolated - 1.0).abs() < 1e-12);
    }

    #[test]
    fn delta_is_decreasing_in_w_and_rho() {
        let d = diag(1.5, 0.7, 100.0, 0.05);
        for w in 1..20 {
            assert!(theoretical_delta(&d, 32, w + 1, 0.5).unwrap() < theoretical_delta(&d, 32, w, 0.5).unwrap());
        }
        for k in 1..10 {
            let (lo, hi) = (k as f64 / 10.0, (k + 1) as f64 / 10.0);
            assert!(theoretical_delta(&d, 32, 4, hi).unwrap() < theoretical_delta(&d, 32, 4, lo).unwrap());
        }
    }

    #[test]
    fn delta_rejects_bad_inputs() {
        let d = diag(2.0, 0.5, 10.0, 0.1);
        for rho in [0.0, -0.2, 1.01, f64::NAN] {
            assert!(matches!(theoretical_delta(&d, 10, 2, rho), Err(Error::Domain(_))));
        }
        assert!(theoretical_delta(&diag(2.0, 0.5, 10.0, 1.0), 10, 2, 0.5).is_err());
        assert!(theoretical_delta(&diag(-1.0, 0.5, 10.0, 0.5), 10, 2, 0.5).is_err());
        assert!(theoretical_delta(&d, 0, 2, 0.5).is_err());
    }

    fn setup(n: usize) -> (AlignedDataset, ModelSnapshot) {
        let data = generate_synthetic(n, 6, 4, 21).unwrap();
        let mut c = TrainConfig { d_z: 4, ..TrainConfig::default() };
        c.shape.bottom_hidden = vec![8];
        let s = ModelSnapshot::initial(&c, data.d_a(), data.d_b()).unwrap();
        (data, s)
    }

    fn probe_config(batch_size: usize, workset: usize, trials: usize) -> VarianceProbeConfig {
        VarianceProbeConfig {
            batch_size,
            workset,
            trials,
            lr: 0.1,
            weighting: Weighting::Off,
            seed: 5,
        }
    }

    #[test]
    fn probe_without_staleness_collapses() {
        let (data, s) = setup(120);
        let p = variance_probe(&data, &s, &probe_config(16, 1, 30)).unwrap();
        assert_eq!(p.term_staleness, 0.0);
        assert_eq!(p.lhs, p.term_sampling);
        assert!(p.term_sampling > 0.0);
        assert_eq!(p.trials_holding, 30);
    }

    #[test]
    fn probe_full_batch_has_no_sampling_term() {
        let (data, s) = setup(60);
        let p = variance_probe(&data, &s, &probe_config(60, 3, 30)).unwrap();
        assert_eq!(p.term_sampling, 0.0);
        assert!(p.term_staleness > 0.0);
        assert_eq!(p.lhs, p.term_staleness);
    }

    #[test]
    fn probe_bound_holds_trialwise() {
        let (data, s) = setup(200);
        let p = variance_probe(&data, &s, &probe_config(16, 4, 60)).unwrap();
        assert_eq!(p.trials_holding, p.trials);
        assert!(p.holds());
        assert!(p.term_staleness > 0.0 && p.term_sampling > 0.0);
    }

    #[test]
    fn probe_needs_enough_trials() {
        let (data, s) = setup(50);
        assert!(matches!(variance_probe(&data, &s, &probe_config(8, 2, 29)), Err(Error::Config(_))));
        assert!(variance_probe(&data, &s, &probe_config(51, 2, 30)).is_err());
    }
}
