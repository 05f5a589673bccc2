//! Log-likelihoods, the ML covariance and the fixed-point scale estimator.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{residuals, ForwardModel};
use crate::prior::LogPrior;
use crate::spd::{JitterPolicy, SpdMatrix};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub const FIXED_POINT_TOL: f64 = 1e-8;
pub const FIXED_POINT_MAX_ITER: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseFamily {
    #[default]
    Gaussian,
    StudentT { dof: f64 },
}

fn column(res: &DMatrix<f64>, r: usize) -> &[f64] {
    let k = res.nrows();
    &res.as_slice()[r * k..(r + 1) * k]
}

/// `e_r^T Sigma^{-1} e_r` for every column.
pub fn quad_forms(res: &DMatrix<f64>, sigma: &SpdMatrix) -> Result<Vec<f64>> {
    Error::check_dim(sigma.dim(), res.nrows())?;
    Ok((0..res.ncols()).map(|r| sigma.quad_form(column(res, r))).collect())
}

pub fn gaussian_loglik(res: &DMatrix<f64>, sigma: &SpdMatrix) -> Result<f64> {
    let q: f64 = quad_forms(res, sigma)?.iter().sum();
    let (k, r) = (res.nrows() as f64, res.ncols() as f64);
    Ok(-0.5 * r * k * LN_2PI - 0.5 * r * sigma.log_det() - 0.5 * q)
}

/// Gaussian log-likelihood from the scatter matrix `S = sum_r e_r e_r^T` of `r` columns.
pub fn gaussian_loglik_scatter(scatter: &DMatrix<f64>, r: usize, sigma: &SpdMatrix) -> Result<f64> {
    Error::check_dim(sigma.dim(), scatter.nrows())?;
    let (k, r) = (scatter.nrows() as f64, r as f64);
    Ok(-0.5 * r * k * LN_2PI - 0.5 * r * sigma.log_det() - 0.5 * sigma.trace_solve(scatter))
}

pub fn student_t_loglik(res: &DMatrix<f64>, sigma: &SpdMatrix, dof: f64) -> Result<f64> {
    if !(dof.is_finite() && dof > 0.0) {
        return Err(Error::invalid(format!("Student-t dof must be positive, got {dof}")));
    }
    let k = res.nrows() as f64;
    let norm = ln_gamma(0.5 * (dof + k)) - ln_gamma(0.5 * dof) - 0.5 * k * (dof * std::f64::consts::PI).ln()
        - 0.5 * sigma.log_det();
    let q = quad_forms(res, sigma)?;
    let tail: f64 = q.iter().map(|s| (s / dof).ln_1p()).sum();
    Ok(res.ncols() as f64 * norm - 0.5 * (dof + k) * tail)
}

/// `(1/R) sum_r e_r e_r^T`.
pub fn ml_covariance(res: &DMatrix<f64>) -> DMatrix<f64> {
    let r = res.ncols().max(1) as f64;
    let s = res * res.transpose();
    (&s + s.transpose()) * (0.5 / r)
}

/// Iterates `Sigma_k = (1/R) sum eta(e^T Sigma_{k-1}^{-1} e) e e^T` until the relative
/// Frobenius change drops below `tol`.
pub fn fixedpoint_scale<F>(
    res: &DMatrix<f64>,
    eta: F,
    sigma0: &SpdMatrix,
    tol: f64,
    max_iter: usize,
) -> Result<SpdMatrix>
where
    F: Fn(f64) -> f64,
{
    let (k, r) = (res.nrows(), res.ncols());
    Error::check_dim(k, sigma0.dim())?;
    if r == 0 {
        return Err(Error::invalid("no residual columns"));
    }
    let mut prev = sigma0.clone();
    let mut next = DMatrix::zeros(k, k);
    for _ in 0..max_iter {
        next.fill(0.0);
        for c in 0..r {
            let e = res.column(c);
            let w = eta(prev.quad_form(column(res, c)));
            next.ger(w / r as f64, &e, &e, 1.0);
        }
        next = (&next + next.transpose()) * 0.5;
        let denom = prev.matrix().norm();
        let change = (&next - prev.matrix()).norm() / denom;
        if change < tol {
            return SpdMatrix::with_policy(next, JitterPolicy::Escalate);
        }
        prev = SpdMatrix::with_policy(next.clone(), JitterPolicy::Escalate)?;
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        last: Box::new(next),
    })
}

impl NoiseFamily {
    pub fn validate(&self) -> Result<()> {
        match self {
            NoiseFamily::StudentT { dof } if !(dof.is_finite() && *dof > 0.0) => {
                Err(Error::invalid(format!("Student-t dof must be positive, got {dof}")))
            }
            _ => Ok(()),
        }
    }

    pub fn loglik(&self, res: &DMatrix<f64>, sigma: &SpdMatrix) -> Result<f64> {
        match self {
            NoiseFamily::Gaussian => gaussian_loglik(res, sigma),
            NoiseFamily::StudentT { dof } => student_t_loglik(res, sigma, *dof),
        }
    }

    /// `eta(s) = -2 h'(s) / h(s)` of the elliptical generator.
    pub fn eta(&self, k: usize) -> impl Fn(f64) -> f64 {
        let dof = match self {
            NoiseFamily::Gaussian => None,
            NoiseFamily::StudentT { dof } => Some(*dof),
        };
        move |s| match dof {
            None => 1.0,
            Some(v) => (v + k as f64) / (v + s),
        }
    }

    /// ML estimate of the noise scale matrix from residuals.
    ///
    /// For Student-t noise a non-converged fixed point falls back to its last iterate.
    pub fn estimate_scale(&self, res: &DMatrix<f64>) -> Result<SpdMatrix> {
        let ml = SpdMatrix::with_policy(ml_covariance(res), JitterPolicy::Escalate)?;
        match self {
            NoiseFamily::Gaussian => Ok(ml),
            NoiseFamily::StudentT { .. } => {
                match fixedpoint_scale(res, self.eta(res.nrows()), &ml, FIXED_POINT_TOL, FIXED_POINT_MAX_ITER) {
                    Ok(s) => Ok(s),
                    Err(Error::NoConvergence { last, .. }) => {
                        log::debug!("fixed-point scale did not converge, using last iterate");
                        SpdMatrix::with_policy(*last, JitterPolicy::Escalate)
                    }
                    Err(e) => Err(e),
                }
            }
        }
    }
}

/// `log l(Y | theta, Sigma) + log g(theta)`; `-inf` without evaluating the model
/// when theta is outside the prior support.
pub fn log_posterior_cond<M: ForwardModel + ?Sized>(
    model: &M,
    theta: &[f64],
    data: &Dataset,
    sigma: &SpdMatrix,
    prior: &LogPrior,
    family: &NoiseFamily,
) -> Result<f64> {
    let lp = prior.log_density(theta);
    if lp == f64::NEG_INFINITY {
        return Ok(lp);
    }
    let e = residuals(model, theta, data)?;
    Ok(family.loglik(&e, sigma)? + lp)
}
