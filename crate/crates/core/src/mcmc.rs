//! Random-walk Metropolis–Hastings baselines: a conditional chain in the parameter
//! space, joint chains over parameters and noise covariance, an adaptive variant and
//! MH-within-Gibbs.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::likelihood::NoiseFamily;
use crate::model::{residuals, ForwardModel};
use crate::posterior::{sample_wishart, wishart_logpdf, WishartParams};
use crate::prior::LogPrior;
use crate::rng::{sample_mvn, standard_normal_vec};
use crate::spd::SpdMatrix;
use crate::util::argmax;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChainRecord {
    /// Parameter state after each step.
    pub thetas: Vec<DVector<f64>>,
    /// Noise covariance after each step; empty for conditional chains.
    pub sigmas: Vec<DMatrix<f64>>,
    pub log_targets: Vec<f64>,
    /// Accepted and proposed moves per block.
    pub accepted: Vec<u64>,
    pub proposed: Vec<u64>,
    /// Σ proposals discarded for not being positive definite.
    pub spd_rejections: u64,
    pub evaluations: u64,
}

impl ChainRecord {
    fn with_blocks(blocks: usize, cap: usize) -> Self {
        ChainRecord {
            thetas: Vec::with_capacity(cap),
            accepted: vec![0; blocks],
            proposed: vec![0; blocks],
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn acceptance_rate(&self, block: usize) -> f64 {
        match self.proposed.get(block) {
            Some(&p) if p > 0 => self.accepted[block] as f64 / p as f64,
            _ => 0.0,
        }
    }

    /// Index of the visited state with the largest log-target.
    pub fn best(&self) -> Option<usize> {
        argmax(&self.log_targets)
    }

    /// The highest-target visited state.
    pub fn map_estimate(&self) -> Option<(DVector<f64>, Option<DMatrix<f64>>)> {
        let i = self.best()?;
        Some((self.thetas[i].clone(), self.sigmas.get(i).cloned()))
    }

    fn push(&mut self, theta: &DVector<f64>, sigma: Option<&SpdMatrix>, lt: f64) {
        self.thetas.push(theta.clone());
        if let Some(s) = sigma {
            self.sigmas.push(s.matrix().clone());
        }
        self.log_targets.push(lt);
    }
}

/// Metropolis–Hastings accept test on a log acceptance ratio.
pub fn mh_accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    if log_ratio.is_nan() {
        return false;
    }
    log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
}

/// Random-walk Gaussian MH on a parameter-space target.
pub fn mh_conditional<F, R>(
    mut target: F,
    init: &DVector<f64>,
    proposal_cov: &SpdMatrix,
    t: usize,
    rng: &mut R,
) -> Result<ChainRecord>
where
    F: FnMut(&[f64]) -> Result<f64>,
    R: Rng + ?Sized,
{
    Error::check_dim(init.len(), proposal_cov.dim())?;
    let mut lt = target(init.as_slice())?;
    if lt == f64::NEG_INFINITY || lt.is_nan() {
        return Err(Error::invalid("chain initialised outside the target support"));
    }
    let mut rec = ChainRecord::with_blocks(1, t);
    rec.evaluations = 1;
    let mut x = init.clone();
    for _ in 0..t {
        let y = sample_mvn(rng, &x, proposal_cov.lower());
        let ly = target(y.as_slice())?;
        rec.evaluations += 1;
        rec.proposed[0] += 1;
        if mh_accept(ly - lt, rng) {
            x = y;
            lt = ly;
            rec.accepted[0] += 1;
        }
        rec.push(&x, None, lt);
    }
    Ok(rec)
}

/// `log l(Y | theta, Sigma) + log g(theta)` as a closure, `-inf` where the model output
/// overflows.
pub fn conditional_target<'a, M: ForwardModel + ?Sized>(
    model: &'a M,
    data: &'a Dataset,
    sigma: &'a SpdMatrix,
    prior: &'a LogPrior,
    family: &'a NoiseFamily,
) -> impl Fn(&[f64]) -> Result<f64> + 'a {
    move |th: &[f64]| {
        let lp = prior.log_density(th);
        if lp == f64::NEG_INFINITY {
            return Ok(lp);
        }
        match residuals(model, th, data) {
            Ok(e) => Ok(family.loglik(&e, sigma)? + lp),
            Err(Error::NonFinite { .. }) => Ok(f64::NEG_INFINITY),
            Err(e) => Err(e),
        }
    }
}

/// Joint posterior over `(theta, Sigma)`. Without a Σ prior the density is flat over
/// SPD matrices.
pub struct JointTarget<'a, M: ?Sized> {
    pub model: &'a M,
    pub data: &'a Dataset,
    pub prior: &'a LogPrior,
    pub family: NoiseFamily,
    pub sigma_prior: Option<WishartParams>,
}

impl<M: ForwardModel + ?Sized> JointTarget<'_, M> {
    /// Residuals at `theta`, `None` outside the prior support or on overflow.
    fn residuals(&self, theta: &[f64]) -> Result<Option<(DMatrix<f64>, f64)>> {
        let lp = self.prior.log_density(theta);
        if lp == f64::NEG_INFINITY {
            return Ok(None);
        }
        match residuals(self.model, theta, self.data) {
            Ok(e) => Ok(Some((e, lp))),
            Err(Error::NonFinite { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn log_density_given(&self, res: Option<&(DMatrix<f64>, f64)>, sigma: &SpdMatrix) -> Result<f64> {
        let Some((e, lp)) = res else {
            return Ok(f64::NEG_INFINITY);
        };
        let ls = match &self.sigma_prior {
            Some(w) => wishart_logpdf(sigma, w)?,
            None => 0.0,
        };
        Ok(self.family.loglik(e, sigma)? + lp + ls)
    }

    pub fn log_density(&self, theta: &[f64], sigma: &SpdMatrix) -> Result<f64> {
        self.log_density_given(self.residuals(theta)?.as_ref(), sigma)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainInit {
    pub theta: DVector<f64>,
    pub sigma: SpdMatrix,
}

fn default_true() -> bool {
    true
}

/// Joint random walk: `theta' ~ N(theta, a I)`, `Sigma' ~ Wishart(dof, Sigma / dof)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointMhConfig {
    pub a: f64,
    pub dof: usize,
    pub t: usize,
    /// Include `q(Sigma | Sigma') / q(Sigma' | Sigma)` in the acceptance ratio.
    #[serde(default = "default_true")]
    pub wishart_correction: bool,
}

impl JointMhConfig {
    pub fn new(a: f64, dof: usize, t: usize) -> Self {
        JointMhConfig {
            a,
            dof,
            t,
            wishart_correction: true,
        }
    }

    fn validate(&self, k: usize) -> Result<()> {
        if !(self.a > 0.0) {
            return Err(Error::invalid("theta proposal scale must be positive"));
        }
        if self.dof < k {
            return Err(Error::invalid(format!("Wishart dof {} must be at least K = {k}", self.dof)));
        }
        Ok(())
    }

    /// `log q(current | proposed) - log q(proposed | current)` for the Wishart move;
    /// zero when the correction is switched off.
    pub fn sigma_move_log_ratio(&self, current: &SpdMatrix, proposed: &SpdMatrix) -> Result<f64> {
        if !self.wishart_correction {
            return Ok(0.0);
        }
        let nu = self.dof as f64;
        let back = WishartParams::centred_on(proposed, nu)?;
        let fwd = WishartParams::centred_on(current, nu)?;
        Ok(wishart_logpdf(current, &back)? - wishart_logpdf(proposed, &fwd)?)
    }

    /// Log acceptance ratio of a joint move from a state with log-target `lt` to one
    /// with `ly`.
    pub fn log_acceptance(&self, lt: f64, ly: f64, current: &SpdMatrix, proposed: &SpdMatrix) -> Result<f64> {
        if ly == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(ly - lt + self.sigma_move_log_ratio(current, proposed)?)
    }

    pub fn propose_sigma<R: Rng + ?Sized>(&self, current: &SpdMatrix, rng: &mut R) -> Result<SpdMatrix> {
        sample_wishart(&WishartParams::centred_on(current, self.dof as f64)?, rng)
    }
}

fn check_init<M: ForwardModel + ?Sized>(target: &JointTarget<'_, M>, init: &ChainInit) -> Result<()> {
    Error::check_dim(target.model.param_dim(), init.theta.len())?;
    Error::check_dim(target.data.k(), init.sigma.dim())
}

pub fn mh_joint<M: ForwardModel + ?Sized, R: Rng + ?Sized>(
    target: &JointTarget<'_, M>,
    init: &ChainInit,
    cfg: &JointMhConfig,
    rng: &mut R,
) -> Result<ChainRecord> {
    check_init(target, init)?;
    cfg.validate(init.sigma.dim())?;
    let step = cfg.a.sqrt();
    joint_chain(target, init, cfg, cfg.t, rng, |_, _| None, step)
}

/// Shared loop of the joint samplers. `adapt(step, chain)` may return a new θ-proposal
/// factor (lower Cholesky) before each step.
fn joint_chain<M, R, A>(
    target: &JointTarget<'_, M>,
    init: &ChainInit,
    cfg: &JointMhConfig,
    t: usize,
    rng: &mut R,
    mut adapt: A,
    step: f64,
) -> Result<ChainRecord>
where
    M: ForwardModel + ?Sized,
    R: Rng + ?Sized,
    A: FnMut(usize, &ChainRecord) -> Option<DMatrix<f64>>,
{
    let m = init.theta.len();
    let mut lower = DMatrix::identity(m, m) * step;
    let mut rec = ChainRecord::with_blocks(1, t);
    let mut theta = init.theta.clone();
    let mut sigma = init.sigma.clone();
    let mut lt = target.log_density(theta.as_slice(), &sigma)?;
    rec.evaluations = 1;
    for i in 0..t {
        if let Some(l) = adapt(i, &rec) {
            lower = l;
        }
        let th = sample_mvn(rng, &theta, &lower);
        let sg = cfg.propose_sigma(&sigma, rng)?;
        let ly = target.log_density(th.as_slice(), &sg)?;
        rec.evaluations += 1;
        rec.proposed[0] += 1;
        if mh_accept(cfg.log_acceptance(lt, ly, &sigma, &sg)?, rng) {
            theta = th;
            sigma = sg;
            lt = ly;
            rec.accepted[0] += 1;
        }
        rec.push(&theta, Some(&sigma), lt);
    }
    Ok(rec)
}

/// Running mean and covariance (Welford).
#[derive(Debug, Clone)]
pub struct RunningCovariance {
    n: usize,
    mean: DVector<f64>,
    m2: DMatrix<f64>,
}

impl RunningCovariance {
    pub fn new(dim: usize) -> Self {
        RunningCovariance {
            n: 0,
            mean: DVector::zeros(dim),
            m2: DMatrix::zeros(dim, dim),
        }
    }

    pub fn push(&mut self, x: &DVector<f64>) {
        self.n += 1;
        let d = x - &self.mean;
        self.mean += &d / self.n as f64;
        let d2 = x - &self.mean;
        self.m2.ger(1.0, &d, &d2, 1.0);
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Sample covariance plus `floor * I`.
    pub fn covariance(&self, floor: f64) -> DMatrix<f64> {
        let d = self.mean.len();
        let mut c = if self.n > 1 {
            &self.m2 / (self.n - 1) as f64
        } else {
            DMatrix::zeros(d, d)
        };
        c = (&c + c.transpose()) * 0.5;
        for i in 0..d {
            c[(i, i)] += floor;
        }
        c
    }
}

pub const ADAPT_FLOOR: f64 = 1e-6;

/// The θ-proposal starts at `a0 I`; after `warmup` steps it becomes the empirical
/// covariance of all past θ states (plus a floor), refreshed every `every` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveMhConfig {
    pub dof: usize,
    pub t: usize,
    pub warmup: usize,
    pub every: usize,
    pub a0: f64,
}

impl AdaptiveMhConfig {
    pub fn new(dof: usize, t: usize) -> Self {
        AdaptiveMhConfig {
            dof,
            t,
            warmup: t / 10,
            every: 100,
            a0: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.warmup >= self.t {
            return Err(Error::invalid("warm-up must be shorter than the chain"));
        }
        if self.every == 0 || !(self.a0 > 0.0) {
            return Err(Error::invalid("adaptation period and initial scale must be positive"));
        }
        Ok(())
    }

    /// Adaptation hook shared by the joint and parameter-only chains.
    fn adapter(&self, m: usize) -> impl FnMut(usize, &ChainRecord) -> Option<DMatrix<f64>> {
        let (warmup, every) = (self.warmup, self.every);
        let mut acc = RunningCovariance::new(m);
        move |step, rec| {
            if let Some(x) = rec.thetas.last() {
                acc.push(x);
            }
            if step < warmup || (step - warmup) % every != 0 {
                return None;
            }
            let c = SpdMatrix::with_policy(acc.covariance(ADAPT_FLOOR), crate::spd::JitterPolicy::Escalate).ok()?;
            Some(c.lower().clone())
        }
    }
}

pub fn adaptive_mh<M: ForwardModel + ?Sized, R: Rng + ?Sized>(
    target: &JointTarget<'_, M>,
    init: &ChainInit,
    cfg: &AdaptiveMhConfig,
    rng: &mut R,
) -> Result<ChainRecord> {
    check_init(target, init)?;
    cfg.validate()?;
    let joint = JointMhConfig::new(cfg.a0, cfg.dof, cfg.t);
    joint.validate(init.sigma.dim())?;
    joint_chain(target, init, &joint, cfg.t, rng, cfg.adapter(init.theta.len()), cfg.a0.sqrt())
}

/// Parameter-only chain with the same adaptation rule as [`adaptive_mh`].
pub fn adaptive_mh_conditional<F, R>(
    mut target: F,
    init: &DVector<f64>,
    cfg: &AdaptiveMhConfig,
    rng: &mut R,
) -> Result<(ChainRecord, DMatrix<f64>)>
where
    F: FnMut(&[f64]) -> Result<f64>,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    let m = init.len();
    let mut adapt = cfg.adapter(m);
    let mut lower = DMatrix::identity(m, m) * cfg.a0.sqrt();
    let mut lt = target(init.as_slice())?;
    let mut rec = ChainRecord::with_blocks(1, cfg.t);
    rec.evaluations = 1;
    let mut x = init.clone();
    for i in 0..cfg.t {
        if let Some(l) = adapt(i, &rec) {
            lower = l;
        }
        let y = sample_mvn(rng, &x, &lower);
        let ly = target(y.as_slice())?;
        rec.evaluations += 1;
        rec.proposed[0] += 1;
        if mh_accept(ly - lt, rng) {
            x = y;
            lt = ly;
            rec.accepted[0] += 1;
        }
        rec.push(&x, None, lt);
    }
    Ok((rec, &lower * lower.transpose()))
}

/// Blockwise sampler: `inner_steps` θ moves with `N(theta, theta_sd^2 I)` proposals,
/// then `inner_steps` Σ moves adding `N(0, sigma_sd^2)` to every upper-triangle entry
/// and mirroring. Non-SPD Σ proposals are rejected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GibbsConfig {
    pub inner_steps: usize,
    /// Outer sweeps.
    pub t: usize,
    pub theta_sd: f64,
    pub sigma_sd: f64,
}

impl GibbsConfig {
    pub fn new(inner_steps: usize, t: usize) -> Self {
        GibbsConfig {
            inner_steps,
            t,
            theta_sd: 1.0,
            sigma_sd: 0.1,
        }
    }
}

/// Perturbs every upper-triangle entry at once and mirrors.
pub fn perturb_symmetric<R: Rng + ?Sized>(sigma: &DMatrix<f64>, sd: f64, rng: &mut R) -> DMatrix<f64> {
    let k = sigma.nrows();
    let mut out = sigma.clone();
    for j in 0..k {
        for i in 0..=j {
            let v = sigma[(i, j)] + sd * rng.sample::<f64, _>(StandardNormal);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

pub fn mh_within_gibbs<M: ForwardModel + ?Sized, R: Rng + ?Sized>(
    target: &JointTarget<'_, M>,
    init: &ChainInit,
    cfg: &GibbsConfig,
    rng: &mut R,
) -> Result<ChainRecord> {
    check_init(target, init)?;
    if cfg.inner_steps == 0 || !(cfg.theta_sd > 0.0 && cfg.sigma_sd > 0.0) {
        return Err(Error::invalid("need at least one inner step and positive step sizes"));
    }
    let m = init.theta.len();
    let mut rec = ChainRecord::with_blocks(2, cfg.t);
    let mut theta = init.theta.clone();
    let mut sigma = init.sigma.clone();
    let mut res = target.residuals(theta.as_slice())?;
    let mut lt = target.log_density_given(res.as_ref(), &sigma)?;
    rec.evaluations = 1;
    if lt == f64::NEG_INFINITY {
        return Err(Error::invalid("chain initialised outside the target support"));
    }
    for _ in 0..cfg.t {
        for _ in 0..cfg.inner_steps {
            let th = &theta + standard_normal_vec(rng, m) * cfg.theta_sd;
            let r2 = target.residuals(th.as_slice())?;
            rec.evaluations += 1;
            rec.proposed[0] += 1;
            let ly = target.log_density_given(r2.as_ref(), &sigma)?;
            if mh_accept(ly - lt, rng) {
                theta = th;
                res = r2;
                lt = ly;
                rec.accepted[0] += 1;
            }
        }
        for _ in 0..cfg.inner_steps {
            rec.proposed[1] += 1;
            let cand = perturb_symmetric(sigma.matrix(), cfg.sigma_sd, rng);
            let Ok(sg) = SpdMatrix::new(cand) else {
                rec.spd_rejections += 1;
                continue;
            };
            let ly = target.log_density_given(res.as_ref(), &sg)?;
            if mh_accept(ly - lt, rng) {
                sigma = sg;
                lt = ly;
                rec.accepted[1] += 1;
            }
        }
        rec.push(&theta, Some(&sigma), lt);
    }
    Ok(rec)
}
