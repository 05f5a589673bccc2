//! Adaptive importance sampling against a sequence of conditional posteriors,
//! alternating with maximum-likelihood noise-covariance estimation.

mod engine;
pub mod proposal;
pub mod weights;

use nalgebra::{DMatrix, DVector};

pub(crate) use engine::{draw_group, GroupDraw, Target};
pub use proposal::{Proposal, ProposalFamily};
pub use weights::{
    adapt_delta, adapt_proposal, final_reweight, is_log_weights, retain_relevant, DeltaSchedule, Retention,
    WeightDenominator,
};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::likelihood::{ml_covariance, NoiseFamily};
use crate::model::{residuals, ForwardModel};
use crate::prior::LogPrior;
use crate::rng::{role, RngStream};
use crate::spd::SpdMatrix;
use crate::store::{IterationRecord, ProposalRecord, SampleStore, StoredSample};
use crate::util::{argmax, ess, normalize_log_weights};

#[derive(Debug, Clone)]
pub struct AtaisConfig {
    /// Samples per proposal per iteration.
    pub n: usize,
    /// Iterations.
    pub t: usize,
    /// Leading iterations whose target uses the identity noise covariance.
    pub warmup: usize,
    /// One initial mean per proposal; its length sets the number of proposals.
    pub init_means: Vec<DVector<f64>>,
    pub init_cov: SpdMatrix,
    /// Starting noise covariance; identity when `None`.
    pub init_sigma: Option<SpdMatrix>,
    pub delta: DeltaSchedule,
    pub proposal_family: ProposalFamily,
    pub denominator: WeightDenominator,
    pub retention: Retention,
}

impl AtaisConfig {
    pub fn new(n: usize, t: usize, init_mean: DVector<f64>, init_cov: SpdMatrix) -> Self {
        AtaisConfig {
            n,
            t,
            warmup: 0,
            init_means: vec![init_mean],
            init_cov,
            init_sigma: None,
            delta: DeltaSchedule::default(),
            proposal_family: ProposalFamily::Gaussian,
            denominator: WeightDenominator::Standard,
            retention: Retention::All,
        }
    }

    pub fn proposals(&self) -> usize {
        self.init_means.len()
    }

    pub fn validate(&self, m: usize, k: usize) -> Result<()> {
        if self.n == 0 || self.t == 0 {
            return Err(Error::invalid("N and T must be at least 1"));
        }
        if self.warmup >= self.t {
            return Err(Error::invalid("warm-up must be shorter than T"));
        }
        if self.init_means.is_empty() {
            return Err(Error::invalid("need at least one proposal"));
        }
        for mu in &self.init_means {
            Error::check_dim(m, mu.len())?;
        }
        Error::check_dim(m, self.init_cov.dim())?;
        if let Some(s) = &self.init_sigma {
            Error::check_dim(k, s.dim())?;
        }
        self.delta.validate()?;
        if let WeightDenominator::Mixture { epsilon } = self.denominator {
            if !(epsilon > 0.0 && epsilon <= 1.0) {
                return Err(Error::invalid("mixture epsilon must lie in (0, 1]"));
            }
        }
        if let ProposalFamily::StudentT { dof } = self.proposal_family {
            if !(dof > 0.0) {
                return Err(Error::invalid("proposal dof must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationSummary {
    pub theta_map: DVector<f64>,
    pub sigma_ml: DMatrix<f64>,
    pub log_pi_map: f64,
    pub delta: f64,
    pub ess: f64,
    /// Frobenius norm of the change in the noise-covariance estimate.
    pub sigma_change: f64,
    pub retained: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtaisOutput {
    pub theta_map: DVector<f64>,
    pub sigma_ml: SpdMatrix,
    pub log_pi_map: f64,
    /// Samples with corrected weights in `log_corrected`.
    pub store: SampleStore,
    pub trajectory: Vec<IterationSummary>,
    /// Parameter vectors pushed through the model.
    pub model_evaluations: u64,
}

impl AtaisOutput {
    pub fn normalized_weights(&self) -> Result<Vec<f64>> {
        normalize_log_weights(&self.store.corrected_log_weights())
    }

    /// Self-normalised posterior mean of theta under the corrected weights.
    pub fn posterior_mean(&self) -> Result<DVector<f64>> {
        let w = self.normalized_weights()?;
        let mut mean = DVector::zeros(self.theta_map.len());
        for ((_, s), w) in self.store.samples().zip(&w) {
            mean.axpy(*w, &s.theta, 1.0);
        }
        Ok(mean)
    }
}

/// Running MAP / ML estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct AtaisState {
    pub theta_map: Option<DVector<f64>>,
    pub map_residuals: Option<DMatrix<f64>>,
    pub sigma_ml: SpdMatrix,
    pub log_pi_map: f64,
}

impl AtaisState {
    pub fn new(sigma0: SpdMatrix) -> Self {
        AtaisState {
            theta_map: None,
            map_residuals: None,
            sigma_ml: sigma0,
            log_pi_map: f64::NEG_INFINITY,
        }
    }

    /// Replaces the MAP by `theta_max` when its log-target beats the stored one, then
    /// re-scores the MAP under the next target (identity covariance while warming up).
    ///
    /// Returns whether the MAP changed.
    #[allow(clippy::too_many_arguments)]
    pub fn global_max_update(
        &mut self,
        theta_max: &DVector<f64>,
        residuals_max: &DMatrix<f64>,
        log_target: f64,
        family: &NoiseFamily,
        prior: &LogPrior,
        next_is_warmup: bool,
    ) -> Result<bool> {
        let improved = log_target > self.log_pi_map;
        if improved {
            self.sigma_ml = family.estimate_scale(residuals_max)?;
            self.theta_map = Some(theta_max.clone());
            self.map_residuals = Some(residuals_max.clone());
        }
        if let (Some(th), Some(e)) = (&self.theta_map, &self.map_residuals) {
            let next = if next_is_warmup {
                SpdMatrix::identity(e.nrows())
            } else {
                self.sigma_ml.clone()
            };
            self.log_pi_map = family.loglik(e, &next)? + prior.log_density(th.as_slice());
        }
        Ok(improved)
    }
}

/// Sample with the largest log-target (lowest index on ties) and the ML covariance of
/// its residuals. Evaluates the model once.
pub fn current_max<M: ForwardModel + ?Sized>(
    samples: &[DVector<f64>],
    log_targets: &[f64],
    model: &M,
    data: &Dataset,
) -> Result<(usize, DMatrix<f64>)> {
    let i = argmax(log_targets).ok_or(Error::DegenerateWeights)?;
    let e = residuals(model, samples[i].as_slice(), data)?;
    Ok((i, ml_covariance(&e)))
}

struct Local {
    theta: DVector<f64>,
    residuals: DMatrix<f64>,
    log_pi: f64,
}

fn relative_jump(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let d = (a - b).norm();
    let s = a.norm().max(b.norm());
    if s == 0.0 {
        0.0
    } else {
        d / s
    }
}

pub fn run_atais<M: ForwardModel + ?Sized>(
    config: &AtaisConfig,
    model: &M,
    data: &Dataset,
    prior: &LogPrior,
    family: &NoiseFamily,
    rng: RngStream,
) -> Result<AtaisOutput> {
    let (m, k) = (model.param_dim(), data.k());
    Error::check_dim(model.output_dim(), k)?;
    config.validate(m, k)?;
    family.validate()?;
    let h_count = config.proposals();
    let identity = SpdMatrix::identity(k);

    let mut proposals: Vec<Proposal> = config
        .init_means
        .iter()
        .map(|mu| Proposal::new(config.proposal_family, mu.clone(), config.init_cov.clone()))
        .collect::<Result<_>>()?;
    let mut pool: Vec<Proposal> = Vec::new();
    let mut prev_means: Option<Vec<DVector<f64>>> = None;

    let mut state = AtaisState::new(config.init_sigma.clone().unwrap_or_else(|| identity.clone()));
    let mut locals: Vec<Option<Local>> = (0..h_count).map(|_| None).collect();
    let mut delta = config.delta.delta0;
    let mut store = SampleStore::new();
    let mut trajectory = Vec::with_capacity(config.t);
    let mut evaluations = 0u64;

    for t in 1..=config.t {
        let target_sigma = if t <= config.warmup {
            identity.clone()
        } else {
            state.sigma_ml.clone()
        };
        let target = Target {
            sigma: &target_sigma,
            columns: None,
            prior_power: 1.0,
        };

        // Mixture pool: surviving past proposals followed by the current ones.
        let mut mixture = pool.clone();
        let offset = mixture.len();
        mixture.extend(proposals.iter().cloned());

        let mut groups: Vec<GroupDraw> = Vec::with_capacity(h_count);
        for h in 0..h_count {
            let mut r = rng.path(&[t as u64, h as u64, role::PROPOSAL]).rng();
            let (mix, cur) = match config.denominator {
                WeightDenominator::Standard => (&proposals[..], h),
                WeightDenominator::Mixture { .. } => (&mixture[..], offset + h),
            };
            let g = draw_group(
                model,
                data,
                prior,
                family,
                &target,
                mix,
                cur,
                &config.denominator,
                config.n,
                config.retention,
                &mut r,
            )?;
            evaluations += g.evaluations;
            groups.push(g);
        }

        let pooled: Vec<f64> = groups.iter().flat_map(|g| g.log_weights.iter().copied()).collect();
        let ess_t = normalize_log_weights(&pooled).and_then(|w| ess(&w)).unwrap_or(0.0);

        for (h, g) in groups.iter_mut().enumerate() {
            let lt = g.best_log_target();
            let better = locals[h].as_ref().is_none_or(|l| lt > l.log_pi);
            if better {
                if let Some((i, e)) = g.best.take() {
                    locals[h] = Some(Local {
                        theta: g.thetas[i].clone(),
                        residuals: e,
                        log_pi: lt,
                    });
                }
            }
        }

        let best_h = argmax(
            &locals
                .iter()
                .map(|l| l.as_ref().map_or(f64::NEG_INFINITY, |l| l.log_pi))
                .collect::<Vec<_>>(),
        );
        let prev_sigma = state.sigma_ml.matrix().clone();
        let next_is_warmup = t < config.warmup;
        if let Some(h) = best_h {
            let l = locals[h].as_ref().expect("argmax is finite");
            state.global_max_update(&l.theta, &l.residuals, l.log_pi, family, prior, next_is_warmup)?;
        }
        let next_sigma = if next_is_warmup {
            identity.clone()
        } else {
            state.sigma_ml.clone()
        };
        for l in locals.iter_mut().flatten() {
            l.log_pi = family.loglik(&l.residuals, &next_sigma)? + prior.log_density(l.theta.as_slice());
        }

        // Proposal adaptation.
        let mut next_props = Vec::with_capacity(h_count);
        for (h, g) in groups.iter().enumerate() {
            let centre = if h_count == 1 {
                state.theta_map.clone()
            } else {
                locals[h].as_ref().map(|l| l.theta.clone())
            }
            .unwrap_or_else(|| proposals[h].mean.clone());
            let (mu, cov) = match normalize_log_weights(&g.log_weights) {
                Ok(w) => adapt_proposal(&g.thetas, &w, &centre, delta)?,
                Err(_) => adapt_proposal(&[], &[], &centre, delta)?,
            };
            next_props.push(Proposal::new(config.proposal_family, mu, cov)?);
        }

        // Record the iteration.
        let mut samples = Vec::new();
        for (h, g) in groups.into_iter().enumerate() {
            for (i, e) in g.kept {
                samples.push(StoredSample {
                    theta: g.thetas[i].clone(),
                    proposal: h,
                    log_target: g.log_targets[i],
                    log_denominator: g.log_dens[i],
                    log_weight: g.log_weights[i],
                    log_corrected: g.log_weights[i],
                    residuals: e,
                });
            }
        }
        let retained = samples.len();
        store.push(IterationRecord {
            proposals: proposals
                .iter()
                .map(|p| ProposalRecord {
                    mean: p.mean.clone(),
                    cov: p.cov.clone(),
                })
                .collect(),
            target_sigma,
            target_columns: None,
            prior_power: 1.0,
            drawn: config.n * h_count,
            samples,
        });

        let theta_map = state.theta_map.clone().unwrap_or_else(|| DVector::from_element(m, f64::NAN));
        trajectory.push(IterationSummary {
            sigma_change: (state.sigma_ml.matrix() - &prev_sigma).norm(),
            theta_map,
            sigma_ml: state.sigma_ml.matrix().clone(),
            log_pi_map: state.log_pi_map,
            delta,
            ess: ess_t,
            retained,
        });

        // Past proposals enter the mixture pool unless their mean jumped.
        if let WeightDenominator::Mixture { epsilon } = config.denominator {
            if let Some(prev) = &prev_means {
                for (p, old) in proposals.iter().zip(prev) {
                    if relative_jump(&p.mean, old) <= epsilon {
                        pool.push(p.clone());
                    }
                }
            }
        }
        prev_means = Some(proposals.iter().map(|p| p.mean.clone()).collect());
        proposals = next_props;
        delta = adapt_delta(delta, &config.delta);
    }

    let theta_map = state.theta_map.clone().ok_or(Error::DegenerateWeights)?;
    final_reweight(&mut store, &state.sigma_ml, family, prior)?;
    Ok(AtaisOutput {
        theta_map,
        sigma_ml: state.sigma_ml,
        log_pi_map: state.log_pi_map,
        store,
        trajectory,
        model_evaluations: evaluations,
    })
}

#[cfg(test)]
mod tests;
