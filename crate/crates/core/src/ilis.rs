//! Inverted layered importance sampling: Wishart draws for the noise covariance on top,
//! one MH chain per draw on the conditional posterior below, chains weighted by an
//! estimate of their normalising constant.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::likelihood::NoiseFamily;
use crate::mcmc::{conditional_target, mh_conditional, ChainRecord, RunningCovariance};
use crate::model::ForwardModel;
use crate::posterior::{sample_wishart, wishart_logpdf, WishartParams};
use crate::prior::LogPrior;
use crate::rng::{role, RngStream};
use crate::spd::SpdMatrix;
use crate::util::{logsumexp, normalize_log_weights};

pub const GD_FLOOR: f64 = 1e-6;
pub const GD_MASS: f64 = 0.99;

/// Log normalising constant of `exp(log_target)` from draws of the normalised density.
///
/// Reciprocal importance sampling with a moment-matched Gaussian restricted to its
/// 99% ellipsoid; states outside the ellipsoid contribute zero.
pub fn estimate_log_z(states: &[DVector<f64>], log_target: &[f64]) -> Result<f64> {
    Error::check_dim(states.len(), log_target.len())?;
    let m = states.first().map_or(0, |s| s.len());
    if m == 0 || states.len() < 2 * m {
        return Err(Error::invalid(format!("need at least {} chain states, got {}", 2 * m.max(1), states.len())));
    }
    let mut acc = RunningCovariance::new(m);
    for s in states {
        Error::check_dim(m, s.len())?;
        acc.push(s);
    }
    if acc.covariance(0.0).trace() <= 0.0 {
        return Err(Error::invalid("degenerate chain: all states identical"));
    }
    let cov = SpdMatrix::new(acc.covariance(GD_FLOOR))
        .map_err(|_| Error::invalid("degenerate chain covariance"))?;
    let radius = ChiSquared::new(m as f64).expect("positive dof").inverse_cdf(GD_MASS);
    let mean = acc.mean();
    let log_norm = -0.5 * (m as f64 * (2.0 * std::f64::consts::PI).ln() + cov.log_det()) - GD_MASS.ln();
    let terms: Vec<f64> = states
        .iter()
        .zip(log_target)
        .filter_map(|(s, &lt)| {
            let d2 = cov.quad_form((s - mean).as_slice());
            (d2 <= radius).then_some(log_norm - 0.5 * d2 - lt)
        })
        .collect();
    if terms.is_empty() {
        return Err(Error::invalid("no chain state inside the instrumental support"));
    }
    Ok(-(logsumexp(&terms) - (states.len() as f64).ln()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IlisConfig {
    /// Number of covariance draws, one chain each.
    pub j: usize,
    /// Chain length including burn-in.
    pub t: usize,
    /// Discarded leading states; defaults to 20% of `t`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    /// Random-walk covariance, scalar times identity.
    pub mh_scale: f64,
    pub init: Vec<f64>,
}

impl IlisConfig {
    /// Localization defaults: 10 chains of length 200 from `[0, 0]` with `0.05 I`.
    pub fn localization() -> Self {
        IlisConfig {
            j: 10,
            t: 200,
            burn_in: None,
            mh_scale: 0.05,
            init: vec![0.0, 0.0],
        }
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.t / 5)
    }
}

#[derive(Debug, Clone)]
pub struct IlisOutput {
    pub sigmas: Vec<SpdMatrix>,
    /// Post burn-in states per chain.
    pub chains: Vec<Vec<DVector<f64>>>,
    pub acceptance: Vec<f64>,
    pub log_z: Vec<f64>,
    pub log_gamma: Vec<f64>,
    pub gamma_bar: Vec<f64>,
    pub evaluations: u64,
}

impl IlisOutput {
    /// Every state of chain `j` carries weight `gamma_bar[j] / len(chain j)`.
    pub fn state_weights(&self) -> Vec<f64> {
        self.chains
            .iter()
            .zip(&self.gamma_bar)
            .flat_map(|(c, &g)| std::iter::repeat_n(g / c.len() as f64, c.len()))
            .collect()
    }

    pub fn theta_mean(&self) -> DVector<f64> {
        let m = self.chains[0][0].len();
        let mut out = DVector::zeros(m);
        for (c, &g) in self.chains.iter().zip(&self.gamma_bar) {
            for s in c {
                out += s * (g / c.len() as f64);
            }
        }
        out
    }

    pub fn sigma_mean(&self) -> DMatrix<f64> {
        let k = self.sigmas[0].dim();
        self.sigmas
            .iter()
            .zip(&self.gamma_bar)
            .fold(DMatrix::zeros(k, k), |acc, (s, &g)| acc + s.matrix() * g)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn run_ilis<M: ForwardModel + Sync + ?Sized>(
    cfg: &IlisConfig,
    wishart_proposal: &WishartParams,
    wishart_prior: Option<&WishartParams>,
    model: &M,
    data: &Dataset,
    prior: &LogPrior,
    family: &NoiseFamily,
    rng: &RngStream,
) -> Result<IlisOutput> {
    let burn = cfg.burn_in();
    if cfg.j == 0 || burn >= cfg.t {
        return Err(Error::invalid("ILIS needs J >= 1 and a burn-in shorter than the chain"));
    }
    Error::check_dim(model.param_dim(), cfg.init.len())?;
    Error::check_dim(data.k(), wishart_proposal.dim())?;
    let m = cfg.init.len();
    let cov = SpdMatrix::identity(m).scaled(cfg.mh_scale)?;
    let init = DVector::from_column_slice(&cfg.init);

    let per: Vec<(SpdMatrix, ChainRecord, f64, f64)> = (0..cfg.j)
        .into_par_iter()
        .map(|j| {
            let stream = rng.child(j as u64);
            let sigma = sample_wishart(wishart_proposal, &mut stream.child(role::SIGMA).rng())?;
            let chain = {
                let target = conditional_target(model, data, &sigma, prior, family);
                mh_conditional(&target, &init, &cov, cfg.t, &mut stream.child(role::CHAIN).rng())?
            };
            let log_z = estimate_log_z(&chain.thetas[burn..], &chain.log_targets[burn..])?;
            let lg = log_z + wishart_prior.map_or(Ok(0.0), |w| wishart_logpdf(&sigma, w))?
                - wishart_logpdf(&sigma, wishart_proposal)?;
            Ok((sigma, chain, log_z, lg))
        })
        .collect::<Result<_>>()?;

    let mut out = IlisOutput {
        sigmas: Vec::with_capacity(cfg.j),
        chains: Vec::with_capacity(cfg.j),
        acceptance: Vec::with_capacity(cfg.j),
        log_z: Vec::with_capacity(cfg.j),
        log_gamma: Vec::with_capacity(cfg.j),
        gamma_bar: Vec::new(),
        evaluations: 0,
    };
    for (sigma, chain, log_z, lg) in per {
        out.evaluations += chain.evaluations;
        out.acceptance.push(chain.acceptance_rate(0));
        out.log_z.push(log_z);
        out.log_gamma.push(lg);
        out.chains.push(chain.thetas[burn..].to_vec());
        out.sigmas.push(sigma);
    }
    out.gamma_bar = normalize_log_weights(&out.log_gamma)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{generate_synthetic, ExperimentSpec};
    use crate::rng::standard_normal_vec;
    use approx::assert_relative_eq;

    fn gaussian_draws(n: usize, seed: u64) -> Vec<DVector<f64>> {
        let mut r = RngStream::new(seed).rng();
        (0..n).map(|_| standard_normal_vec(&mut r, 1)).collect()
    }

    #[test]
    fn recovers_known_constant() {
        let xs = gaussian_draws(10_000, 1);
        let c: f64 = 5.0;
        let log_norm = -0.5 * (2.0 * std::f64::consts::PI).ln();
        let scaled: Vec<f64> = xs.iter().map(|x| c.ln() + log_norm - 0.5 * x[0] * x[0]).collect();
        let est = estimate_log_z(&xs, &scaled).unwrap();
        assert!((est - c.ln()).abs() < 0.05, "{est}");
        let unit: Vec<f64> = xs.iter().map(|x| log_norm - 0.5 * x[0] * x[0]).collect();
        assert!(estimate_log_z(&xs, &unit).unwrap().abs() < 0.05);
    }

    #[test]
    fn scaling_shifts_by_log_c() {
        let xs = gaussian_draws(500, 2);
        let lt: Vec<f64> = xs.iter().map(|x| -0.5 * x[0] * x[0]).collect();
        let shifted: Vec<f64> = lt.iter().map(|v| v + 3.0).collect();
        let a = estimate_log_z(&xs, &lt).unwrap();
        let b = estimate_log_z(&xs, &shifted).unwrap();
        assert_relative_eq!(b - a, 3.0, epsilon = 1e-10);
    }

    #[test]
    fn degenerate_chain_is_rejected() {
        let xs = vec![DVector::from_vec(vec![1.0, 2.0]); 50];
        assert!(estimate_log_z(&xs, &[0.0; 50]).is_err());
        let few = gaussian_draws(1, 3);
        assert!(estimate_log_z(&few, &[0.0]).is_err());
    }

    fn loc() -> (ExperimentSpec, Dataset) {
        let spec = ExperimentSpec::localization();
        let data = generate_synthetic(&spec, RngStream::new(5)).unwrap();
        (spec, data)
    }

    #[test]
    fn localization_run() {
        let (spec, data) = loc();
        let model = spec.build_model();
        let cfg = IlisConfig::localization();
        let w = WishartParams::new(4.0, SpdMatrix::identity(3).scaled(3.0).unwrap()).unwrap();
        let out = run_ilis(&cfg, &w, None, &*model, &data, &spec.prior, &NoiseFamily::Gaussian, &RngStream::new(6))
            .unwrap();
        assert_eq!(out.chains.len(), 10);
        assert_eq!(out.chains[0].len(), 160);
        assert_eq!(out.evaluations, 10 * 201);
        assert_relative_eq!(out.gamma_bar.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(out.state_weights().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(out.theta_mean().iter().all(|v| v.is_finite()));

        let single = IlisConfig { j: 1, ..cfg };
        let one = run_ilis(&single, &w, None, &*model, &data, &spec.prior, &NoiseFamily::Gaussian, &RngStream::new(6))
            .unwrap();
        assert_eq!(one.gamma_bar, vec![1.0]);
    }

    #[test]
    fn gamma_bar_invariant_to_target_scale() {
        let (spec, data) = loc();
        let model = spec.build_model();
        let cfg = IlisConfig { j: 4, ..IlisConfig::localization() };
        let w = WishartParams::new(4.0, SpdMatrix::identity(3).scaled(3.0).unwrap()).unwrap();
        let a = run_ilis(&cfg, &w, None, &*model, &data, &spec.prior, &NoiseFamily::Gaussian, &RngStream::new(7))
            .unwrap();
        // a constant Wishart prior multiplies every gamma_j by the same factor
        let flat = WishartParams::new(4.0, SpdMatrix::identity(3).scaled(3.0).unwrap()).unwrap();
        let b = run_ilis(&cfg, &w, Some(&flat), &*model, &data, &spec.prior, &NoiseFamily::Gaussian, &RngStream::new(7))
            .unwrap();
        for (x, y) in a.gamma_bar.iter().zip(&b.gamma_bar) {
            assert!((x - y).abs() < 1e-8);
        }
        let shifted: Vec<f64> = a.log_gamma.iter().map(|v| v + 12.5).collect();
        let g = normalize_log_weights(&shifted).unwrap();
        for (x, y) in a.gamma_bar.iter().zip(&g) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn chain_mean_on_gaussian_conditional() {
        // 2D target N(mu, diag(0.04, 0.09)) sampled by the same chain used per layer
        let mu = [1.0, -0.5];
        let target = |t: &[f64]| Ok(-0.5 * ((t[0] - mu[0]).powi(2) / 0.04 + (t[1] - mu[1]).powi(2) / 0.09));
        let cov = SpdMatrix::identity(2).scaled(0.05).unwrap();
        let rec = mh_conditional(target, &DVector::from_vec(vec![1.0, -0.5]), &cov, 20_000, &mut RngStream::new(8).rng())
            .unwrap();
        let kept = &rec.thetas[4000..];
        let n = kept.len() as f64;
        for (d, (&m, v)) in mu.iter().zip([0.04, 0.09]).enumerate() {
            let mean = kept.iter().map(|s| s[d]).sum::<f64>() / n;
            // autocorrelated chain: allow for an effective size of n / 20
            let se = (v / (n / 20.0)).sqrt();
            assert!((mean - m).abs() < 3.0 * se, "{d} {mean}");
        }
    }
}
