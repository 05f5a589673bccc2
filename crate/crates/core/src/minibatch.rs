//! Mini-batch variants of the sampler: one disjoint batch of observation columns per
//! iteration, with either full-data re-scoring of the per-iteration candidates or
//! Gaussian fusion of the per-batch approximations.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::atais::{
    adapt_delta, adapt_proposal, draw_group, final_reweight, AtaisConfig, AtaisOutput, IterationSummary, Proposal,
    Target, WeightDenominator,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::likelihood::NoiseFamily;
use crate::model::{residuals, residuals_columns, ForwardModel};
use crate::prior::LogPrior;
use crate::rng::{role, RngStream};
use crate::spd::SpdMatrix;
use crate::store::{IterationRecord, ProposalRecord, SampleStore, StoredSample};
use crate::util::{argmax, ess, normalize_log_weights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchStrategy {
    /// Score every iteration's MAP candidate on the full data at the end.
    Rescore,
    /// Fuse per-batch Gaussian approximations; the full posterior is never evaluated.
    Fusion,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub batches: Vec<Vec<usize>>,
    pub strategy: BatchStrategy,
}

impl BatchPlan {
    /// Random permutation of `0..r` cut into contiguous blocks of `l`.
    pub fn random<G: Rng + ?Sized>(r: usize, l: usize, strategy: BatchStrategy, rng: &mut G) -> Result<Self> {
        if l == 0 || !r.is_multiple_of(l) {
            return Err(Error::invalid(format!("batch size {l} must divide R = {r}")));
        }
        let mut idx: Vec<usize> = (0..r).collect();
        idx.shuffle(rng);
        Self::new(idx.chunks(l).map(<[usize]>::to_vec).collect(), r, strategy)
    }

    pub fn new(batches: Vec<Vec<usize>>, r: usize, strategy: BatchStrategy) -> Result<Self> {
        let l = batches.first().map_or(0, Vec::len);
        if l == 0 {
            return Err(Error::invalid("empty batch"));
        }
        let mut seen = vec![false; r];
        for b in &batches {
            if b.len() != l {
                return Err(Error::invalid("batches must have equal size"));
            }
            for &i in b {
                if i >= r || seen[i] {
                    return Err(Error::invalid(format!("column {i} out of range or repeated")));
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::invalid("batches do not cover every column"));
        }
        Ok(BatchPlan {
            batch_size: l,
            batches,
            strategy,
        })
    }

    pub fn t(&self) -> usize {
        self.batches.len()
    }
}

/// `sum over batch columns of log l(y_r | theta, Sigma) + prior_power * log g(theta)`.
#[allow(clippy::too_many_arguments)]
pub fn subposterior_logpdf<M: ForwardModel + ?Sized>(
    model: &M,
    theta: &[f64],
    batch: &[usize],
    sigma: &SpdMatrix,
    data: &Dataset,
    prior: &LogPrior,
    family: &NoiseFamily,
    prior_power: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let lp = prior.log_density(theta);
    if lp == f64::NEG_INFINITY {
        return Ok(lp);
    }
    let e = residuals_columns(model, theta, data, batch)?;
    let lp = if prior_power == 0.0 { 0.0 } else { prior_power * lp };
    Ok(family.loglik(&e, sigma)? + lp)
}

/// Precision-weighted product of Gaussians: `(sum L_i^{-1})^{-1}` and
/// `cov * sum L_i^{-1} mu_i`.
pub fn gaussian_product(means: &[DVector<f64>], covs: &[SpdMatrix]) -> Result<(DVector<f64>, SpdMatrix)> {
    Error::check_dim(means.len(), covs.len())?;
    let m = means.first().ok_or_else(|| Error::invalid("no components"))?.len();
    let mut precision = DMatrix::zeros(m, m);
    let mut h = DVector::zeros(m);
    for (mu, c) in means.iter().zip(covs) {
        Error::check_dim(m, mu.len())?;
        Error::check_dim(m, c.dim())?;
        precision += c.inverse();
        h += c.solve_vec(mu);
    }
    let prec = SpdMatrix::new(precision)?;
    let mean = prec.solve_vec(&h);
    let cov = SpdMatrix::new(prec.inverse())?;
    Ok((mean, cov))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinibatchOutput {
    pub output: AtaisOutput,
    pub plan: BatchPlan,
    /// Per-iteration MAP candidate and its noise covariance estimate.
    pub candidates: Vec<(DVector<f64>, SpdMatrix)>,
    /// Fused covariance `Lambda_tot` after each iteration (fusion only).
    pub fused_covs: Vec<SpdMatrix>,
}

/// Runs one iteration per batch of `plan`. `config.t` must equal the number of batches
/// and a single proposal is supported.
pub fn run_atais_minibatch<M: ForwardModel + ?Sized>(
    config: &AtaisConfig,
    plan: &BatchPlan,
    model: &M,
    data: &Dataset,
    prior: &LogPrior,
    family: &NoiseFamily,
    rng: RngStream,
) -> Result<MinibatchOutput> {
    let (m, k) = (model.param_dim(), data.k());
    Error::check_dim(model.output_dim(), k)?;
    config.validate(m, k)?;
    family.validate()?;
    if config.t != plan.t() {
        return Err(Error::invalid(format!(
            "T = {} but the plan has {} batches",
            config.t,
            plan.t()
        )));
    }
    if config.proposals() != 1 {
        return Err(Error::invalid("mini-batch runs use a single proposal"));
    }
    BatchPlan::new(plan.batches.clone(), data.r(), plan.strategy)?;
    let fusion = plan.strategy == BatchStrategy::Fusion;
    let prior_power = if fusion { 1.0 / plan.t() as f64 } else { 1.0 };
    let identity = SpdMatrix::identity(k);

    let mut proposal = Proposal::new(config.proposal_family, config.init_means[0].clone(), config.init_cov.clone())?;
    let mut sigma = config.init_sigma.clone().unwrap_or_else(|| identity.clone());
    let mut map: Option<DVector<f64>> = None;
    let mut log_pi_map = f64::NEG_INFINITY;
    let mut delta = config.delta.delta0;
    let mut store = SampleStore::new();
    let mut trajectory = Vec::with_capacity(config.t);
    let mut candidates = Vec::with_capacity(config.t);
    let mut fused_covs = Vec::new();
    let mut local_means: Vec<DVector<f64>> = Vec::new();
    let mut local_covs: Vec<SpdMatrix> = Vec::new();
    let mut evaluations = 0u64;

    for t in 1..=config.t {
        let batch = &plan.batches[t - 1];
        let target_sigma = if t <= config.warmup { identity.clone() } else { sigma.clone() };
        let target = Target {
            sigma: &target_sigma,
            columns: Some(batch),
            prior_power,
        };
        let mut r = rng.path(&[t as u64, 0, role::PROPOSAL]).rng();
        let mut g = draw_group(
            model,
            data,
            prior,
            family,
            &target,
            std::slice::from_ref(&proposal),
            0,
            &WeightDenominator::Standard,
            config.n,
            config.retention,
            &mut r,
        )?;
        evaluations += g.evaluations;
        let w = normalize_log_weights(&g.log_weights);
        let ess_t = w.as_ref().ok().and_then(|w| ess(w).ok()).unwrap_or(0.0);
        let prev_sigma = sigma.matrix().clone();
        let best_lt = g.best_log_target();

        if fusion {
            if let Some((i, _)) = g.best.take() {
                let (_, lam) = match &w {
                    Ok(w) => adapt_proposal(&g.thetas, w, &g.thetas[i], config.delta.delta_min)?,
                    Err(_) => adapt_proposal(&[], &[], &g.thetas[i], config.delta.delta_min)?,
                };
                local_means.push(g.thetas[i].clone());
                local_covs.push(lam);
            }
            if !local_means.is_empty() {
                let (mu, cov) = gaussian_product(&local_means, &local_covs)?;
                let e = residuals(model, mu.as_slice(), data)?;
                evaluations += 1;
                sigma = family.estimate_scale(&e)?;
                log_pi_map = family.loglik(&e, &sigma)? + prior.log_density(mu.as_slice());
                map = Some(mu);
                fused_covs.push(cov);
            }
        } else {
            // Re-score the running MAP on this batch before comparing.
            let map_lt = match &map {
                Some(th) => {
                    evaluations += 1;
                    subposterior_logpdf(model, th.as_slice(), batch, &target_sigma, data, prior, family, 1.0)?
                }
                None => f64::NEG_INFINITY,
            };
            if best_lt > map_lt {
                let (i, e) = g.best.take().expect("finite best has residuals");
                sigma = family.estimate_scale(&e)?;
                map = Some(g.thetas[i].clone());
                log_pi_map = best_lt;
            } else {
                log_pi_map = map_lt;
            }
        }
        if let Some(th) = &map {
            candidates.push((th.clone(), sigma.clone()));
        }

        let centre = map.clone().unwrap_or_else(|| proposal.mean.clone());
        let (mu, cov) = match &w {
            Ok(w) => adapt_proposal(&g.thetas, w, &centre, delta)?,
            Err(_) => adapt_proposal(&[], &[], &centre, delta)?,
        };

        let samples: Vec<StoredSample> = g
            .kept
            .into_iter()
            .map(|(i, e)| StoredSample {
                theta: g.thetas[i].clone(),
                proposal: 0,
                log_target: g.log_targets[i],
                log_denominator: g.log_dens[i],
                log_weight: g.log_weights[i],
                log_corrected: g.log_weights[i],
                residuals: e,
            })
            .collect();
        let retained = samples.len();
        store.push(IterationRecord {
            proposals: vec![ProposalRecord {
                mean: proposal.mean.clone(),
                cov: proposal.cov.clone(),
            }],
            target_sigma,
            target_columns: Some(batch.clone()),
            prior_power,
            drawn: config.n,
            samples,
        });
        trajectory.push(IterationSummary {
            theta_map: map.clone().unwrap_or_else(|| DVector::from_element(m, f64::NAN)),
            sigma_change: (sigma.matrix() - &prev_sigma).norm(),
            sigma_ml: sigma.matrix().clone(),
            log_pi_map,
            delta,
            ess: ess_t,
            retained,
        });
        proposal = Proposal::new(config.proposal_family, mu, cov)?;
        delta = adapt_delta(delta, &config.delta);
    }

    let mut theta_map = map.ok_or(Error::DegenerateWeights)?;
    if fusion {
        let fused = Proposal::gaussian(theta_map.clone(), fused_covs.last().expect("fused").clone())?;
        for it in store.iterations_mut() {
            for s in &mut it.samples {
                s.log_corrected = if s.log_weight == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else {
                    fused.log_density(s.theta.as_slice()) - s.log_denominator
                };
            }
        }
    } else {
        // Score each distinct candidate on the full data.
        let mut scores = Vec::with_capacity(candidates.len());
        let mut last: Option<(&DVector<f64>, DMatrix<f64>)> = None;
        let mut full = Vec::with_capacity(candidates.len());
        for (th, s) in &candidates {
            let e = match &last {
                Some((prev, e)) if *prev == th => e.clone(),
                _ => {
                    evaluations += 1;
                    residuals(model, th.as_slice(), data)?
                }
            };
            let lp = prior.log_density(th.as_slice());
            scores.push(family.loglik(&e, s)? + lp);
            full.push(e.clone());
            last = Some((th, e));
        }
        let best = argmax(&scores).ok_or(Error::DegenerateWeights)?;
        theta_map = candidates[best].0.clone();
        sigma = family.estimate_scale(&full[best])?;
        log_pi_map = family.loglik(&full[best], &sigma)? + prior.log_density(theta_map.as_slice());

        // Full-data residuals for the stored samples, then the usual correction.
        for it in store.iterations_mut() {
            for s in &mut it.samples {
                if s.residuals.ncols() != data.r() {
                    evaluations += 1;
                    s.residuals = residuals(model, s.theta.as_slice(), data)?;
                } else if let Some(cols) = &it.target_columns {
                    let mut e = DMatrix::zeros(k, data.r());
                    for (j, &c) in cols.iter().enumerate() {
                        e.set_column(c, &s.residuals.column(j));
                    }
                    s.residuals = e;
                }
            }
        }
        final_reweight(&mut store, &sigma, family, prior)?;
    }

    Ok(MinibatchOutput {
        output: AtaisOutput {
            theta_map,
            sigma_ml: sigma,
            log_pi_map,
            store,
            trajectory,
            model_evaluations: evaluations,
        },
        plan: plan.clone(),
        candidates,
        fused_covs,
    })
}
