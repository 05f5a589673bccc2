use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;

use crate::spd::SpdMatrix;

/// Log-density over the parameter space. `-inf` outside the support.
#[derive(Clone)]
pub enum LogPrior {
    /// Improper `g(theta) ∝ 1`; log-density 0 everywhere.
    Flat,
    /// Uniform on the closed box `[lower, upper]`.
    UniformBox { lower: Vec<f64>, upper: Vec<f64> },
    Gaussian { mean: DVector<f64>, cov: SpdMatrix },
    Custom(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
}

impl fmt::Debug for LogPrior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LogPrior::Flat => write!(f, "Flat"),
            LogPrior::UniformBox { lower, upper } => f
                .debug_struct("UniformBox")
                .field("lower", lower)
                .field("upper", upper)
                .finish(),
            LogPrior::Gaussian { mean, .. } => f.debug_struct("Gaussian").field("mean", mean).finish_non_exhaustive(),
            LogPrior::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl LogPrior {
    pub fn uniform_box(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        assert!(lower.iter().zip(&upper).all(|(l, u)| l < u), "empty box");
        LogPrior::UniformBox { lower, upper }
    }

    pub fn log_density(&self, theta: &[f64]) -> f64 {
        match self {
            LogPrior::Flat => 0.0,
            LogPrior::UniformBox { lower, upper } => {
                let mut lv = 0.0;
                for ((x, l), u) in theta.iter().zip(lower).zip(upper) {
                    if !(*l..=*u).contains(x) {
                        return f64::NEG_INFINITY;
                    }
                    lv -= (u - l).ln();
                }
                lv
            }
            LogPrior::Gaussian { mean, cov } => {
                let d: Vec<f64> = theta.iter().zip(mean.iter()).map(|(a, b)| a - b).collect();
                let m = d.len() as f64;
                -0.5 * (m * (2.0 * std::f64::consts::PI).ln() + cov.log_det() + cov.quad_form(&d))
            }
            LogPrior::Custom(f) => f(theta),
        }
    }

    pub fn is_flat(&self) -> bool {
        matches!(self, LogPrior::Flat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_support() {
        let p = LogPrior::uniform_box(vec![0.0, 0.0], vec![5.0, 2.0]);
        assert!((p.log_density(&[1.0, 1.0]) + 10f64.ln()).abs() < 1e-12);
        assert_eq!(p.log_density(&[5.1, 1.0]), f64::NEG_INFINITY);
        assert!(p.log_density(&[5.0, 0.0]).is_finite());
        assert_eq!(LogPrior::Flat.log_density(&[1e9]), 0.0);
    }

    #[test]
    fn gaussian_at_mean() {
        let p = LogPrior::Gaussian {
            mean: DVector::from_vec(vec![1.0]),
            cov: SpdMatrix::from_diagonal(&[4.0]).unwrap(),
        };
        let want = -0.5 * (2.0 * std::f64::consts::PI * 4.0).ln();
        assert!((p.log_density(&[1.0]) - want).abs() < 1e-12);
    }
}
