use crate::error::{Error, Result};
use crate::numerics::{self, Scalar};

/// Header of the per-run metrics CSV.
pub const METRICS_HEADER: &str =
    "round,local_steps,bytes_sent,simulated_time_s,train_loss,eval_auc,rho_estimate,weights_zeroed_fraction";

/// One evaluation point of a training run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRecord {
    pub round: u64,
    /// Local updates made so far by party A.
    pub local_steps: u64,
    pub bytes_sent: u64,
    pub simulated_time_s: f64,
    pub train_loss: f64,
    pub eval_auc: f64,
    pub rho_estimate: Option<f64>,
    /// Share of instance weights zeroed since the previous record.
    pub weights_zeroed_fraction: f64,
}

impl MetricsRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.round,
            self.local_steps,
            self.bytes_sent,
            self.simulated_time_s,
            self.train_loss,
            self.eval_auc,
            self.rho_estimate.map(|r| r.to_string()).unwrap_or_default(),
            self.weights_zeroed_fraction
        )
    }
}

/// Metrics CSV text: header plus one line per record.
pub fn to_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Labels must be 0 or 1.
pub fn auc<T: Scalar>(labels: &[T], scores: &[T]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(Error::Metric(format!(
            "{} labels but {} scores",
            labels.len(),
            scores.len()
        )));
    }
    let mut pairs = Vec::with_capacity(labels.len());
    for (&y, &s) in labels.iter().zip(scores) {
        let positive = if y == T::one() {
            true
        } else if y == T::zero() {
            false
        } else {
            return Err(Error::Metric(format!("label {y} is not 0 or 1")));
        };
        if s.is_nan() {
            return Err(Error::Metric("NaN score".into()));
        }
        pairs.push((s, positive));
    }
    let n_pos = pairs.iter().filter(|p| p.1).count();
    let n_neg = pairs.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric("AUC needs both classes".into()));
    }
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    // Sum of midranks of the positives (Mann-Whitney U).
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i;
        while j < pairs.len() && pairs[j].0 == pairs[i].0 {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0;
        rank_sum += midrank * pairs[i..j].iter().filter(|p| p.1).count() as f64;
        i = j;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Cosine between an estimated and a true gradient; `None` when either is
/// zero.
pub fn empirical_rho<T: Scalar>(g_tilde: &[T], g: &[T]) -> Option<f64> {
    if g_tilde.len() != g.len() {
        return None;
    }
    let eps = T::lit(numerics::ZERO_NORM_EPS);
    if numerics::norm(g_tilde) <= eps || numerics::norm(g) <= eps {
        return None;
    }
    Some(numerics::cosine(g_tilde, g).as_f64())
}

/// Linearly interpolated `q`-quantile of the finite values; `None` if there
/// are none.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

/// Mean and sample standard deviation (zero for fewer than two values).
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, var.sqrt()))
}

/// Threshold a run must cross.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Target {
    /// `train_loss <= value`.
    TrainLoss(f64),
    /// `eval_auc >= value`.
    EvalAuc(f64),
}

impl Target {
    pub fn reached(&self, r: &MetricsRecord) -> bool {
        match *self {
            Target::TrainLoss(t) => r.train_loss <= t,
            Target::EvalAuc(t) => r.eval_auc >= t,
        }
    }
}

/// Round of the first record meeting `target`, scanning in order.
pub fn rounds_to_target(records: &[MetricsRecord], target: Target) -> Option<u64> {
    records.iter().find(|r| target.reached(r)).map(|r| r.round)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_auc(labels: &[f64], scores: &[f64]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &yi) in labels.iter().enumerate() {
            for (j, &yj) in labels.iter().enumerate() {
                if yi == 1.0 && yj == 0.0 {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[1.0, 1.0, 0.0, 0.0], &[0.9, 0.8, 0.2, 0.1]).unwrap(), 1.0);
        assert_eq!(auc(&[1.0, 0.0, 1.0, 0.0], &[0.9, 0.8, 0.7, 0.6]).unwrap(), 0.75);
        assert_eq!(auc(&[1.0, 0.0, 1.0, 0.0], &[0.3; 4]).unwrap(), 0.5);
        assert_eq!(auc(&[1.0f32, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn auc_errors() {
        assert!(matches!(auc(&[1.0, 1.0], &[0.1, 0.2]), Err(Error::Metric(_))));
        assert!(matches!(auc(&[0.0, 2.0], &[0.1, 0.2]), Err(Error::Metric(_))));
        assert!(auc(&[0.0, 1.0], &[0.1]).is_err());
        assert!(auc(&[0.0, 1.0], &[0.1, f64::NAN]).is_err());
    }

    proptest! {
        #[test]
        fn auc_matches_pair_count(
            data in prop::collection::vec((0u8..2, 0u8..6), 2..40)
        ) {
            let labels: Vec<f64> = data.iter().map(|d| d.0 as f64).collect();
            let scores: Vec<f64> = data.iter().map(|d| d.1 as f64).collect();
            prop_assume!(labels.contains(&0.0) && labels.contains(&1.0));
            let got = auc(&labels, &scores).unwrap();
            prop_assert!((got - brute_auc(&labels, &scores)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&got));
        }
    }

    #[test]
    fn rho_examples() {
        let g = [0.3, -1.2, 2.0];
        assert!((empirical_rho(&g, &g).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = g.iter().map(|x| -x).collect();
        assert!((empirical_rho(&neg, &g).unwrap() + 1.0).abs() < 1e-12);
        assert!((empirical_rho(&[1.0, 0.0], &[1.0, 1.0]).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-8);
        assert_eq!(empirical_rho(&[0.0, 0.0], &[1.0, 1.0]), None);
        assert_eq!(empirical_rho(&[1.0], &[1.0, 1.0]), None);
    }

    #[test]
    fn quantile_and_spread() {
        assert_eq!(quantile(&[], 0.05), None);
        assert_eq!(quantile(&[3.0], 0.05), Some(3.0));
        assert_eq!(quantile(&[4.0, 0.0, 2.0], 0.5), Some(2.0));
        assert!((quantile(&[0.0, 10.0], 0.05).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(mean_std(&[7.0, 7.0, 7.0]), Some((7.0, 0.0)));
        let (m, s) = mean_std(&[1.0, 3.0]).unwrap();
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-12);
    }

    fn rec(round: u64, loss: f64, auc: f64) -> MetricsRecord {
        MetricsRecord {
            round,
            local_steps: 0,
            bytes_sent: 0,
            simulated_time_s: 0.0,
            train_loss: loss,
            eval_auc: auc,
            rho_estimate: None,
            weights_zeroed_fraction: 0.0,
        }
    }

    #[test]
    fn first_crossing_wins() {
        let rs = [rec(0, 0.7, 0.5), rec(10, 0.4, 0.8), rec(20, 0.5, 0.7), rec(30, 0.3, 0.9)];
        assert_eq!(rounds_to_target(&rs, Target::TrainLoss(0.45)), Some(10));
        assert_eq!(rounds_to_target(&rs, Target::EvalAuc(0.85)), Some(30));
        assert_eq!(rounds_to_target(&rs, Target::TrainLoss(0.1)), None);
    }

    #[test]
    fn csv_shape() {
        let mut r = rec(5, 0.25, 0.75);
        let text = to_csv(&[r]);
        assert!(text.starts_with(&format!("{METRICS_HEADER}\n")));
        assert_eq!(text.lines().nth(1).unwrap(), "5,0,0,0,0.25,0.75,,0");
        r.rho_estimate = Some(0.5);
        assert_eq!(r.csv_row().split(',').nth(6), Some("0.5"));
        assert_eq!(METRICS_HEADER.split(',').count(), 8);
    }
}
