use nalgebra::DVector;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::rng::standard_normal_vec;
use crate::spd::SpdMatrix;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProposalFamily {
    #[default]
    Gaussian,
    StudentT {
        dof: f64,
    },
}

/// Location-scale proposal `q(theta | mu, Lambda)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub family: ProposalFamily,
    pub mean: DVector<f64>,
    pub cov: SpdMatrix,
}

impl Proposal {
    pub fn new(family: ProposalFamily, mean: DVector<f64>, cov: SpdMatrix) -> Result<Self> {
        Error::check_dim(mean.len(), cov.dim())?;
        if let ProposalFamily::StudentT { dof } = family {
            if !(dof.is_finite() && dof > 0.0) {
                return Err(Error::invalid(format!("proposal dof must be positive, got {dof}")));
            }
        }
        Ok(Proposal { family, mean, cov })
    }

    pub fn gaussian(mean: DVector<f64>, cov: SpdMatrix) -> Result<Self> {
        Self::new(ProposalFamily::Gaussian, mean, cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = standard_normal_vec(rng, self.dim());
        let step = self.cov.lower() * z;
        match self.family {
            ProposalFamily::Gaussian => &self.mean + step,
            ProposalFamily::StudentT { dof } => {
                let w: f64 = ChiSquared::new(dof).expect("validated dof").sample(rng);
                &self.mean + step / (w / dof).sqrt()
            }
        }
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let d: Vec<f64> = x.iter().zip(self.mean.iter()).map(|(a, b)| a - b).collect();
        let q = self.cov.quad_form(&d);
        let m = self.dim() as f64;
        match self.family {
            ProposalFamily::Gaussian => -0.5 * (m * LN_2PI + self.cov.log_det() + q),
            ProposalFamily::StudentT { dof } => {
                ln_gamma(0.5 * (dof + m)) - ln_gamma(0.5 * dof) - 0.5 * m * (dof * std::f64::consts::PI).ln()
                    - 0.5 * self.cov.log_det()
                    - 0.5 * (dof + m) * (q / dof).ln_1p()
            }
        }
    }
}
