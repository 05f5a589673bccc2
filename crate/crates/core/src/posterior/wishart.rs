use std::f64::consts::{LN_2, PI};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::rng::standard_normal_vec;
use crate::spd::{JitterPolicy, SpdMatrix};

/// Wishart distribution with `dof` degrees of freedom and reference matrix `phi`
/// (mean `dof * phi`).
#[derive(Debug, Clone, PartialEq)]
pub struct WishartParams {
    pub dof: f64,
    pub phi: SpdMatrix,
}

impl WishartParams {
    pub fn new(dof: f64, phi: SpdMatrix) -> Result<Self> {
        let k = phi.dim() as f64;
        if !(dof.is_finite() && dof >= k) {
            return Err(Error::invalid(format!("Wishart dof {dof} must be at least K = {k}")));
        }
        Ok(WishartParams { dof, phi })
    }

    /// Reference matrix `Sigma / dof`, so that the mean equals `sigma`.
    pub fn centred_on(sigma: &SpdMatrix, dof: f64) -> Result<Self> {
        Self::new(dof, choose_phi(sigma, dof)?)
    }

    pub fn dim(&self) -> usize {
        self.phi.dim()
    }

    pub fn mean(&self) -> DMatrix<f64> {
        self.phi.matrix() * self.dof
    }
}

/// `ln Gamma_K(a)`.
pub fn ln_multigamma(k: usize, a: f64) -> f64 {
    let kf = k as f64;
    kf * (kf - 1.0) / 4.0 * PI.ln() + (1..=k).map(|i| ln_gamma(a + (1.0 - i as f64) / 2.0)).sum::<f64>()
}

pub fn wishart_logpdf(sigma: &SpdMatrix, params: &WishartParams) -> Result<f64> {
    let k = params.dim();
    Error::check_dim(k, sigma.dim())?;
    let (nu, kf) = (params.dof, k as f64);
    Ok(0.5 * (nu - kf - 1.0) * sigma.log_det() - 0.5 * params.phi.trace_solve(sigma.matrix())
        - 0.5 * nu * kf * LN_2
        - 0.5 * nu * params.phi.log_det()
        - ln_multigamma(k, 0.5 * nu))
}

/// Sum of `dof` outer products of `N(0, phi)` draws. Requires an integer `dof`.
pub fn sample_wishart<R: Rng + ?Sized>(params: &WishartParams, rng: &mut R) -> Result<SpdMatrix> {
    let nu = params.dof;
    if nu.fract() != 0.0 {
        return Err(Error::invalid(format!("sampler needs an integer dof, got {nu}")));
    }
    let k = params.dim();
    let l = params.phi.lower();
    let mut acc = DMatrix::zeros(k, k);
    let mut s = DVector::zeros(k);
    for _ in 0..nu as usize {
        let z = standard_normal_vec(rng, k);
        l.mul_to(&z, &mut s);
        acc.ger(1.0, &s, &s, 1.0);
    }
    SpdMatrix::with_policy((&acc + acc.transpose()) * 0.5, JitterPolicy::Escalate)
}

/// `Phi = Sigma / dof`, which puts the Wishart mean at `sigma`.
pub fn choose_phi(sigma: &SpdMatrix, dof: f64) -> Result<SpdMatrix> {
    if !(dof >= sigma.dim() as f64) {
        return Err(Error::invalid(format!("dof {dof} must be at least K = {}", sigma.dim())));
    }
    sigma.scaled(1.0 / dof)
}
