//! Weighting, adaptation and retention steps of the sampler.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::proposal::Proposal;
use crate::error::{Error, Result};
use crate::likelihood::NoiseFamily;
use crate::prior::LogPrior;
use crate::spd::SpdMatrix;
use crate::store::SampleStore;
use crate::util::{logsumexp, weighted_moments};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightDenominator {
    #[default]
    Standard,
    /// Deterministic mixture over past proposals, dropping those whose mean
    /// moved by more than `epsilon` (relative) from the previous one.
    Mixture { epsilon: f64 },
}

impl WeightDenominator {
    pub const DEFAULT_EPSILON: f64 = 0.3;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Retention {
    #[default]
    All,
    /// Keep only samples with normalised weight at least `1/N`.
    Relevant,
}

/// Cyclic proposal-scale schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaSchedule {
    pub delta0: f64,
    pub a: f64,
    pub delta_min: f64,
}

impl Default for DeltaSchedule {
    fn default() -> Self {
        DeltaSchedule {
            delta0: 1.0,
            a: 0.1,
            delta_min: 0.05,
        }
    }
}

impl DeltaSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_min > 0.0 && self.delta0 >= self.delta_min) {
            return Err(Error::invalid("need delta0 >= delta_min > 0"));
        }
        if !(self.a > 0.0 && self.a < 1.0) {
            return Err(Error::invalid("need 0 < a < 1"));
        }
        Ok(())
    }
}

pub fn adapt_delta(delta: f64, schedule: &DeltaSchedule) -> f64 {
    if delta >= schedule.delta_min {
        schedule.a * delta
    } else {
        schedule.delta0
    }
}

/// Log importance weights of samples drawn from `proposals[current]`.
///
/// In mixture mode every proposal in the list enters the denominator with equal mass.
pub fn is_log_weights(
    samples: &[DVector<f64>],
    log_targets: &[f64],
    proposals: &[Proposal],
    current: usize,
    mode: &WeightDenominator,
) -> Result<Vec<f64>> {
    if proposals.is_empty() || current >= proposals.len() {
        return Err(Error::invalid("empty proposal list"));
    }
    Error::check_dim(samples.len(), log_targets.len())?;
    Ok(samples
        .iter()
        .zip(log_targets)
        .map(|(x, lt)| {
            let den = log_denominator(x.as_slice(), proposals, current, mode);
            weight_from(*lt, den)
        })
        .collect())
}

pub(crate) fn log_denominator(x: &[f64], proposals: &[Proposal], current: usize, mode: &WeightDenominator) -> f64 {
    match mode {
        WeightDenominator::Standard => proposals[current].log_density(x),
        WeightDenominator::Mixture { .. } => {
            let ld: Vec<f64> = proposals.iter().map(|p| p.log_density(x)).collect();
            logsumexp(&ld) - (proposals.len() as f64).ln()
        }
    }
}

pub(crate) fn weight_from(log_target: f64, log_den: f64) -> f64 {
    if log_target == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        log_target - log_den
    }
}

/// New proposal: mean at the MAP, covariance from the weighted samples plus `delta I`.
pub fn adapt_proposal(
    samples: &[DVector<f64>],
    weights: &[f64],
    theta_map: &DVector<f64>,
    delta: f64,
) -> Result<(DVector<f64>, SpdMatrix)> {
    let m = theta_map.len();
    if !(delta > 0.0) {
        return Err(Error::invalid("delta must be positive"));
    }
    let mut cov = if samples.is_empty() {
        DMatrix::zeros(m, m)
    } else {
        weighted_moments(samples, weights).1
    };
    for i in 0..m {
        cov[(i, i)] += delta;
    }
    let cov = SpdMatrix::with_policy((&cov + cov.transpose()) * 0.5, crate::spd::JitterPolicy::Escalate)?;
    Ok((theta_map.clone(), cov))
}

/// Indices whose normalised weight is at least `1/n`.
pub fn retain_relevant(weights: &[f64], n: usize) -> Vec<usize> {
    let thr = 1.0 / n as f64;
    weights
        .iter()
        .enumerate()
        .filter(|(_, w)| **w >= thr * (1.0 - 1e-12))
        .map(|(i, _)| i)
        .collect()
}

/// Log-domain form of the relevance test, used while streaming.
pub(crate) fn is_relevant(log_w: f64, log_norm: f64, n: usize) -> bool {
    log_w > f64::NEG_INFINITY && log_w - log_norm + (n as f64).ln() >= -1e-12
}

/// Re-expresses every stored weight against the final target, reusing stored residuals.
///
/// The final target uses all residual columns and the full prior. Returns the corrected
/// log-weights in store order and writes them into the store.
pub fn final_reweight(
    store: &mut SampleStore,
    sigma_final: &SpdMatrix,
    family: &NoiseFamily,
    prior: &LogPrior,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(store.retained());
    for (t, it) in store.iterations_mut().iter_mut().enumerate() {
        let snapshot = it.clone();
        for (n, s) in it.samples.iter_mut().enumerate() {
            if s.residuals.ncols() == 0 {
                return Err(Error::MissingResiduals { iteration: t, sample: n });
            }
            let lt = snapshot.log_target_of(s, family, prior)?;
            let lp = prior.log_density(s.theta.as_slice());
            let lw = if s.log_weight == f64::NEG_INFINITY || lp == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                let lfinal = family.loglik(&s.residuals, sigma_final)? + lp;
                s.log_weight + lfinal - lt
            };
            s.log_corrected = lw;
            out.push(lw);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn delta_schedule() {
        let s = DeltaSchedule::default();
        assert_relative_eq!(adapt_delta(1.0, &s), 0.1);
        assert_relative_eq!(adapt_delta(0.1, &s), 0.01);
        assert_eq!(adapt_delta(0.01, &s), 1.0);
        let s = DeltaSchedule { delta0: 1.0, a: 0.5, delta_min: 0.2 };
        assert_relative_eq!(adapt_delta(0.2, &s), 0.1);
    }

    #[test]
    fn adapt_examples() {
        let (mu, cov) = adapt_proposal(&[DVector::from_vec(vec![3.0, 4.0])], &[1.0], &DVector::zeros(2), 0.5).unwrap();
        assert_eq!(mu, DVector::zeros(2));
        assert_relative_eq!(cov.matrix(), &(DMatrix::identity(2, 2) * 0.5));
        let pts = [DVector::from_vec(vec![0.0, 0.0]), DVector::from_vec(vec![2.0, 0.0])];
        let map = DVector::from_vec(vec![7.0, 7.0]);
        let (mu, cov) = adapt_proposal(&pts, &[0.5, 0.5], &map, 0.5).unwrap();
        assert_eq!(mu, map);
        assert_relative_eq!(cov.matrix(), &DMatrix::from_row_slice(2, 2, &[1.5, 0.0, 0.0, 0.5]), epsilon = 1e-12);
    }

    #[test]
    fn retention_examples() {
        assert_eq!(retain_relevant(&[0.25; 4], 4), vec![0, 1, 2, 3]);
        assert_eq!(retain_relevant(&[1.0 - 2e-9, 1e-9, 1e-9], 3), vec![0]);
        assert_eq!(retain_relevant(&[0.5, 0.3, 0.1, 0.1], 4), vec![0, 1]);
        let w = [0.1; 10];
        assert_eq!(retain_relevant(&w, 10).len(), 10);
    }

    #[test]
    fn weights_examples() {
        let target = Proposal::gaussian(DVector::zeros(1), SpdMatrix::identity(1)).unwrap();
        let q = Proposal::gaussian(DVector::zeros(1), SpdMatrix::from_diagonal(&[4.0]).unwrap()).unwrap();
        let xs = [DVector::zeros(1)];
        let lt = [target.log_density(&[0.0])];
        let w = is_log_weights(&xs, &lt, std::slice::from_ref(&q), 0, &WeightDenominator::Standard).unwrap();
        assert_relative_eq!(w[0], 2f64.ln(), epsilon = 1e-12);
        let mix = WeightDenominator::Mixture { epsilon: 0.3 };
        let wm = is_log_weights(&xs, &lt, &[q.clone(), q.clone()], 1, &mix).unwrap();
        assert_relative_eq!(wm[0], w[0], epsilon = 1e-12);
        let self_w = is_log_weights(&xs, &lt, &[target], 0, &WeightDenominator::Standard).unwrap();
        assert_eq!(self_w[0], 0.0);
        assert!(is_log_weights(&xs, &lt, &[], 0, &WeightDenominator::Standard).is_err());
    }
}
