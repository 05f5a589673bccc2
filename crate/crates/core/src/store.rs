//! Per-iteration record of drawn samples, weights and residual blocks.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::likelihood::NoiseFamily;
use crate::prior::LogPrior;
use crate::spd::SpdMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct StoredSample {
    pub theta: DVector<f64>,
    /// Index of the proposal the sample was drawn from.
    pub proposal: usize,
    /// `log pi_t(theta)` at draw time.
    pub log_target: f64,
    /// `log q(theta)` (or the log mixture density) used in the weight.
    pub log_denominator: f64,
    pub log_weight: f64,
    /// Weight after the end-of-run correction; equals `log_weight` until then.
    pub log_corrected: f64,
    /// K × R residual block (K × |batch| while a mini-batch run is in progress).
    pub residuals: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalRecord {
    pub mean: DVector<f64>,
    pub cov: SpdMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub proposals: Vec<ProposalRecord>,
    /// Noise covariance defining this iteration's target.
    pub target_sigma: SpdMatrix,
    /// Columns entering the target likelihood; `None` means all of them.
    pub target_columns: Option<Vec<usize>>,
    pub prior_power: f64,
    /// Number of samples drawn (retained or not).
    pub drawn: usize,
    pub samples: Vec<StoredSample>,
}

impl IterationRecord {
    /// Recomputes `log pi_t` for a stored sample from its residuals.
    pub fn log_target_of(&self, s: &StoredSample, family: &NoiseFamily, prior: &LogPrior) -> Result<f64> {
        let lp = prior.log_density(s.theta.as_slice());
        if lp == f64::NEG_INFINITY {
            return Ok(lp);
        }
        let ll = match &self.target_columns {
            Some(cols) if s.residuals.ncols() != cols.len() => {
                family.loglik(&s.residuals.select_columns(cols), &self.target_sigma)?
            }
            _ => family.loglik(&s.residuals, &self.target_sigma)?,
        };
        Ok(ll + self.prior_power * lp)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleStore {
    iterations: Vec<IterationRecord>,
}

impl SampleStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, it: IterationRecord) {
        self.iterations.push(it);
    }

    pub fn iterations(&self) -> &[IterationRecord] {
        &self.iterations
    }

    pub fn iterations_mut(&mut self) -> &mut [IterationRecord] {
        &mut self.iterations
    }

    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }

    /// Total number of drawn samples across all iterations (the `NT` of estimators).
    pub fn total_drawn(&self) -> usize {
        self.iterations.iter().map(|i| i.drawn).sum()
    }

    pub fn retained(&self) -> usize {
        self.iterations.iter().map(|i| i.samples.len()).sum()
    }

    pub fn samples(&self) -> impl Iterator<Item = (usize, &StoredSample)> {
        self.iterations
            .iter()
            .enumerate()
            .flat_map(|(t, it)| it.samples.iter().map(move |s| (t, s)))
    }

    pub fn corrected_log_weights(&self) -> Vec<f64> {
        self.samples().map(|(_, s)| s.log_corrected).collect()
    }

    /// Checks that every stored sample has a residual block of the given shape.
    pub fn check_residuals(&self, k: usize, r: usize) -> Result<()> {
        for (t, it) in self.iterations.iter().enumerate() {
            for (n, s) in it.samples.iter().enumerate() {
                if s.residuals.nrows() != k || s.residuals.ncols() != r {
                    return Err(Error::MissingResiduals { iteration: t, sample: n });
                }
            }
        }
        Ok(())
    }
}
