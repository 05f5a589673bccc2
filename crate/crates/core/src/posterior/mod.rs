//! Second inference stage: recycling stored samples into conditional, joint and
//! marginal posterior approximations over the noise covariance.
//!
//! Nothing in this module evaluates the forward model; every likelihood is rebuilt
//! from stored residual blocks.

mod wishart;

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use wishart::{choose_phi, ln_multigamma, sample_wishart, wishart_logpdf, WishartParams};

use crate::atais::AtaisOutput;
use crate::error::{Error, Result};
use crate::likelihood::NoiseFamily;
use crate::prior::LogPrior;
use crate::rng::{role, RngStream};
use crate::spd::SpdMatrix;
use crate::store::{SampleStore, StoredSample};
use crate::util::{argmax, logsumexp, normalize_log_weights, percentile_sorted};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Stored samples flattened in store order, with whatever is reusable across many Σ.
struct Prepared<'a> {
    samples: Vec<&'a StoredSample>,
    /// `log g(theta) - log q(theta)`; `-inf` for samples that carry no weight.
    log_base: Vec<f64>,
    /// `E E^T` per sample (Gaussian noise only).
    scatter: Option<Vec<DMatrix<f64>>>,
    r: usize,
}

impl<'a> Prepared<'a> {
    fn new(store: &'a SampleStore, prior: &LogPrior, family: &NoiseFamily) -> Result<Self> {
        let samples: Vec<&StoredSample> = store.samples().map(|(_, s)| s).collect();
        let r = samples.first().map_or(0, |s| s.residuals.ncols());
        for (t, it) in store.iterations().iter().enumerate() {
            for (n, s) in it.samples.iter().enumerate() {
                if s.residuals.ncols() != r || r == 0 {
                    return Err(Error::MissingResiduals { iteration: t, sample: n });
                }
            }
        }
        let log_base = samples
            .iter()
            .map(|s| {
                let lp = prior.log_density(s.theta.as_slice());
                if lp == f64::NEG_INFINITY || s.log_weight == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else {
                    lp - s.log_denominator
                }
            })
            .collect();
        let scatter = match family {
            NoiseFamily::Gaussian => Some(
                samples
                    .par_iter()
                    .map(|s| &s.residuals * s.residuals.transpose())
                    .collect(),
            ),
            NoiseFamily::StudentT { .. } => None,
        };
        Ok(Prepared {
            samples,
            log_base,
            scatter,
            r,
        })
    }

    /// `log rho` of every sample under `sigma`.
    fn log_rho(&self, sigma: &SpdMatrix, family: &NoiseFamily) -> Result<Vec<f64>> {
        if let Some(first) = self.samples.first() {
            Error::check_dim(first.residuals.nrows(), sigma.dim())?;
        }
        match &self.scatter {
            Some(scatter) => {
                let inv = sigma.inverse();
                let (k, r) = (sigma.dim() as f64, self.r as f64);
                let c = -0.5 * r * (k * LN_2PI + sigma.log_det());
                Ok(self
                    .log_base
                    .iter()
                    .zip(scatter)
                    .map(|(b, s)| {
                        if *b == f64::NEG_INFINITY {
                            return *b;
                        }
                        b + c - 0.5 * inv.dot(s)
                    })
                    .collect())
            }
            None => self
                .log_base
                .iter()
                .zip(&self.samples)
                .map(|(b, s)| {
                    if *b == f64::NEG_INFINITY {
                        return Ok(*b);
                    }
                    Ok(b + family.loglik(&s.residuals, sigma)?)
                })
                .collect(),
        }
    }
}

/// Unnormalised `log rho = log l(Y | theta, Sigma) + log g(theta) - log q(theta)` for
/// every stored sample, in store order.
pub fn conditional_log_weights(
    store: &SampleStore,
    sigma: &SpdMatrix,
    prior: &LogPrior,
    family: &NoiseFamily,
) -> Result<Vec<f64>> {
    Prepared::new(store, prior, family)?.log_rho(sigma, family)
}

/// Normalised weights of the stored samples targeting `p(theta | Y, Sigma)`.
pub fn conditional_reweight(
    store: &SampleStore,
    sigma: &SpdMatrix,
    prior: &LogPrior,
    family: &NoiseFamily,
) -> Result<Vec<f64>> {
    normalize_log_weights(&conditional_log_weights(store, sigma, prior, family)?)
}

/// Weighted pairs `(theta_s, Sigma_j)` approximating the joint posterior.
///
/// `log beta[s, j] = log_rho[(s, j)] + log_gamma[j]`.
#[derive(Debug, Clone)]
pub struct JointApproximation {
    pub sigmas: Vec<SpdMatrix>,
    pub log_rho: DMatrix<f64>,
    pub log_gamma: Vec<f64>,
    /// Normalised theta marginal, one entry per stored sample.
    pub alpha: Vec<f64>,
    /// Normalised Sigma marginal, one entry per matrix.
    pub lambda: Vec<f64>,
    log_norm: f64,
    drawn: usize,
}

impl JointApproximation {
    pub fn j(&self) -> usize {
        self.sigmas.len()
    }

    pub fn log_beta(&self, s: usize, j: usize) -> f64 {
        self.log_rho[(s, j)] + self.log_gamma[j]
    }

    /// Normalised joint weights as an `S x J` matrix.
    pub fn beta(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.log_rho.nrows(), self.j(), |s, j| (self.log_beta(s, j) - self.log_norm).exp())
    }

    /// Log of the sum of all unnormalised joint weights.
    pub fn log_total(&self) -> f64 {
        self.log_norm
    }

    /// Samples drawn in the first stage, including the ones that were not stored.
    pub fn drawn(&self) -> usize {
        self.drawn
    }

    pub fn log_evidence(&self) -> Result<f64> {
        marginal_likelihood(self, self.drawn)
    }
}

/// Combines the stored samples with matrices `sigmas` drawn from `sigma_proposal`.
/// A `None` prior is flat over SPD matrices.
pub fn joint_weights(
    store: &SampleStore,
    sigmas: &[SpdMatrix],
    sigma_prior: Option<&WishartParams>,
    sigma_proposal: &WishartParams,
    prior: &LogPrior,
    family: &NoiseFamily,
) -> Result<JointApproximation> {
    if sigmas.is_empty() {
        return Err(Error::invalid("need at least one covariance draw"));
    }
    let prep = Prepared::new(store, prior, family)?;
    let log_gamma: Vec<f64> = sigmas
        .iter()
        .map(|s| {
            match sigma_prior {
                Some(p) if p == sigma_proposal => Ok(0.0),
                Some(p) => Ok(wishart_logpdf(s, p)? - wishart_logpdf(s, sigma_proposal)?),
                None => Ok(-wishart_logpdf(s, sigma_proposal)?),
            }
        })
        .collect::<Result<_>>()?;
    let columns: Vec<Vec<f64>> = sigmas
        .par_iter()
        .map(|s| prep.log_rho(s, family))
        .collect::<Result<_>>()?;
    let n_s = prep.samples.len();
    let j = sigmas.len();
    let log_rho = DMatrix::from_fn(n_s, j, |s, c| columns[c][s]);

    let per_col: Vec<f64> = (0..j)
        .map(|c| logsumexp(log_rho.column(c).as_slice()) + log_gamma[c])
        .collect();
    let log_norm = logsumexp(&per_col);
    let mut alpha = vec![0.0; n_s];
    let mut lambda = vec![0.0; j];
    if log_norm.is_finite() {
        for c in 0..j {
            for s in 0..n_s {
                let b = (log_rho[(s, c)] + log_gamma[c] - log_norm).exp();
                alpha[s] += b;
                lambda[c] += b;
            }
        }
    }
    Ok(JointApproximation {
        sigmas: sigmas.to_vec(),
        log_rho,
        log_gamma,
        alpha,
        lambda,
        log_norm,
        drawn: store.total_drawn(),
    })
}

/// `log p(Y)` estimate: log-mean-exp of every joint weight over `J * drawn` terms,
/// where `drawn` counts all first-stage samples (dropped ones contribute zero).
pub fn marginal_likelihood(joint: &JointApproximation, drawn: usize) -> Result<f64> {
    if !joint.log_norm.is_finite() || drawn == 0 {
        return Err(Error::DegenerateWeights);
    }
    Ok(joint.log_norm - ((joint.j() * drawn) as f64).ln())
}

/// Entrywise credible bounds for the noise covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct CredibleInterval {
    pub level: f64,
    pub lower: DMatrix<f64>,
    pub upper: DMatrix<f64>,
}

impl CredibleInterval {
    pub fn contains(&self, m: &DMatrix<f64>) -> DMatrix<bool> {
        DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| {
            self.lower[(i, j)] <= m[(i, j)] && m[(i, j)] <= self.upper[(i, j)]
        })
    }
}

/// Multinomial resampling of `sigmas` by `lambda`, then linear-interpolated percentiles
/// per entry.
pub fn credible_interval<R: Rng + ?Sized>(
    sigmas: &[SpdMatrix],
    lambda: &[f64],
    level: f64,
    n_resample: usize,
    rng: &mut R,
) -> Result<CredibleInterval> {
    Error::check_dim(sigmas.len(), lambda.len())?;
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid("level must lie in (0, 1)"));
    }
    if n_resample == 0 || sigmas.is_empty() {
        return Err(Error::invalid("need matrices and at least one resample"));
    }
    let dist = WeightedIndex::new(lambda).map_err(|_| Error::DegenerateWeights)?;
    let picks: Vec<usize> = (0..n_resample).map(|_| rng.sample(&dist)).collect();
    let k = sigmas[0].dim();
    let (lo_p, hi_p) = (0.5 * (1.0 - level), 1.0 - 0.5 * (1.0 - level));
    let mut lower = DMatrix::zeros(k, k);
    let mut upper = DMatrix::zeros(k, k);
    let mut vals = vec![0.0; n_resample];
    for i in 0..k {
        for j in 0..k {
            for (v, &p) in vals.iter_mut().zip(&picks) {
                *v = sigmas[p].matrix()[(i, j)];
            }
            vals.sort_by(f64::total_cmp);
            lower[(i, j)] = percentile_sorted(&vals, lo_p);
            upper[(i, j)] = percentile_sorted(&vals, hi_p);
        }
    }
    Ok(CredibleInterval { level, lower, upper })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NuSelection {
    pub nu: usize,
    /// `(nu, log p(Y | nu))` in ascending `nu`.
    pub evidence: Vec<(usize, f64)>,
}

/// Empirical-Bayes choice of the Wishart dof over `grid` (ties go to the smallest).
pub fn select_nu(
    store: &SampleStore,
    sigma_ml: &SpdMatrix,
    prior: &LogPrior,
    family: &NoiseFamily,
    grid: &[usize],
    j_per_nu: usize,
    rng: RngStream,
) -> Result<NuSelection> {
    if grid.is_empty() {
        return Err(Error::invalid("empty dof grid"));
    }
    if j_per_nu == 0 {
        return Err(Error::invalid("need at least one matrix per dof"));
    }
    let mut grid = grid.to_vec();
    grid.sort_unstable();
    let mut evidence = Vec::with_capacity(grid.len());
    for &nu in &grid {
        let w = WishartParams::centred_on(sigma_ml, nu as f64)?;
        let mut r = rng.child(nu as u64).rng();
        let sigmas: Vec<SpdMatrix> = (0..j_per_nu).map(|_| sample_wishart(&w, &mut r)).collect::<Result<_>>()?;
        let joint = joint_weights(store, &sigmas, Some(&w), &w, prior, family)?;
        evidence.push((nu, joint.log_evidence()?));
    }
    let logs: Vec<f64> = evidence.iter().map(|e| e.1).collect();
    let best = argmax(&logs).ok_or(Error::DegenerateWeights)?;
    Ok(NuSelection {
        nu: grid[best],
        evidence,
    })
}

/// Prior over the noise covariance in the second stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SigmaPrior {
    /// Same Wishart as the proposal, so `gamma_j = 1`.
    #[default]
    Proposal,
    /// Improper flat prior; `gamma_j = 1 / q(Sigma_j)`.
    Flat,
}

/// Settings of the covariance stage run after a first-stage output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaPosteriorConfig {
    pub dof: f64,
    pub j: usize,
    pub level: f64,
    #[serde(default)]
    pub sigma_prior: SigmaPrior,
    /// Resample count for intervals; defaults to `j`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_resample: Option<usize>,
}

impl Default for SigmaPosteriorConfig {
    fn default() -> Self {
        SigmaPosteriorConfig {
            dof: 100.0,
            j: 1000,
            level: 0.95,
            sigma_prior: SigmaPrior::Proposal,
            n_resample: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SigmaPosterior {
    pub joint: JointApproximation,
    pub interval: CredibleInterval,
    pub log_evidence: f64,
}

/// Wishart draws centred on the first-stage estimate (prior = proposal), joint
/// weights, evidence and entrywise intervals.
pub fn sigma_posterior(
    out: &AtaisOutput,
    cfg: &SigmaPosteriorConfig,
    prior: &LogPrior,
    family: &NoiseFamily,
    rng: RngStream,
) -> Result<SigmaPosterior> {
    let w = WishartParams::centred_on(&out.sigma_ml, cfg.dof)?;
    let mut r = rng.child(role::SIGMA).rng();
    let sigmas: Vec<SpdMatrix> = (0..cfg.j).map(|_| sample_wishart(&w, &mut r)).collect::<Result<_>>()?;
    let sigma_prior = match cfg.sigma_prior {
        SigmaPrior::Proposal => Some(&w),
        SigmaPrior::Flat => None,
    };
    let joint = joint_weights(&out.store, &sigmas, sigma_prior, &w, prior, family)?;
    let log_evidence = joint.log_evidence()?;
    let interval = credible_interval(
        &joint.sigmas,
        &joint.lambda,
        cfg.level,
        cfg.n_resample.unwrap_or(cfg.j),
        &mut rng.child(role::RESAMPLE).rng(),
    )?;
    Ok(SigmaPosterior {
        joint,
        interval,
        log_evidence,
    })
}
