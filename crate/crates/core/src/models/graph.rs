use std::f64::consts::FRAC_PI_4;

use nalgebra::DMatrix;
use rand::Rng;

use crate::data::{AuxInput, Dataset};
use crate::error::{Error, Result};
use crate::model::ForwardModel;
use crate::rng::RngStream;

/// Ten nonlinear signals over time, one per graph node.
#[derive(Debug, Clone, Default)]
pub struct GraphSignals {
    cache: Vec<TimeFeatures>,
}

#[derive(Debug, Clone, Copy)]
struct TimeFeatures {
    tau: f64,
    sin_t: f64,
    cos_2t: f64,
    exp_01t: f64,
    exp_1mt: f64,
    log_1p2t: f64,
    cos_2t_pi4: f64,
}

impl TimeFeatures {
    fn new(tau: f64) -> Self {
        TimeFeatures {
            tau,
            sin_t: tau.sin(),
            cos_2t: (2.0 * tau).cos(),
            exp_01t: (0.1 * tau).exp(),
            exp_1mt: (1.0 - tau).exp(),
            log_1p2t: (2.0 * tau).ln_1p(),
            cos_2t_pi4: (2.0 * tau + FRAC_PI_4).cos(),
        }
    }
}

struct ThetaFeatures {
    exp_08t3: f64,
    sin_t3: f64,
    sin_t4: f64,
    exp_inv: f64,
}

impl GraphSignals {
    /// Precomputes time features for the given grid (column `r` at `times[r]`).
    pub fn with_grid(times: &[f64]) -> Self {
        GraphSignals {
            cache: times.iter().map(|&t| TimeFeatures::new(t)).collect(),
        }
    }

    fn theta_features(theta: &[f64], r: usize) -> Result<ThetaFeatures> {
        if theta[2] == -1.0 {
            return Err(Error::Model {
                index: r,
                reason: "theta_3 = -1".into(),
            });
        }
        Ok(ThetaFeatures {
            exp_08t3: (0.8 * theta[2]).exp(),
            sin_t3: theta[2].sin(),
            sin_t4: theta[3].sin(),
            exp_inv: (1.0 / (1.0 + theta[2])).exp(),
        })
    }

    fn eval(th: &[f64], g: &ThetaFeatures, x: &TimeFeatures, out: &mut [f64]) {
        let (t1, t2, t3, t4) = (th[0], th[1], th[2], th[3]);
        let tau = x.tau;
        out[0] = -t4 * tau + 5.0 * t1 * t1;
        out[1] = 2.0 * t3 * (t2 * tau).sin();
        out[2] = t1 - t3 + t1 * x.cos_2t;
        out[3] = 3.0 * t4 + 3.0 * t2 + t1 * x.exp_01t;
        out[4] = t3 * t3 - 2.0 * t1 + 3.0 * t2 - g.exp_08t3 * x.exp_1mt;
        out[5] = 5.0 * (t4 + t3) - t2 * x.log_1p2t;
        out[6] = 3.0 * t2 - 0.2 * tau * g.sin_t3;
        out[7] = 3.0 * t1 + 5.0 * t3 - 20.0 * g.sin_t4 * x.cos_2t_pi4;
        out[8] = t2 + 4.0 * t4 + 5.0 * g.exp_inv * tau;
        out[9] = 5.0 * t1 + 10.0 * t3 - 5.0 * t4 * x.sin_t;
    }

    fn features(&self, r: usize, aux: Option<&AuxInput>) -> Result<TimeFeatures> {
        let tau = aux.and_then(AuxInput::scalar).ok_or_else(|| Error::Model {
            index: r,
            reason: "missing time input".into(),
        })?;
        match self.cache.get(r) {
            Some(f) if f.tau == tau => Ok(*f),
            _ => Ok(TimeFeatures::new(tau)),
        }
    }
}

impl ForwardModel for GraphSignals {
    fn param_dim(&self) -> usize {
        4
    }

    fn output_dim(&self) -> usize {
        10
    }

    fn evaluate_into(&self, theta: &[f64], r: usize, aux: Option<&AuxInput>, out: &mut [f64]) -> Result<()> {
        let g = Self::theta_features(theta, r)?;
        Self::eval(theta, &g, &self.features(r, aux)?, out);
        Ok(())
    }

    fn evaluate_columns(&self, theta: &[f64], data: &Dataset, cols: &[usize]) -> Result<DMatrix<f64>> {
        let g = Self::theta_features(theta, cols.first().copied().unwrap_or(0))?;
        let mut out = DMatrix::zeros(10, cols.len());
        for (j, &r) in cols.iter().enumerate() {
            let x = self.features(r, data.aux(r))?;
            Self::eval(theta, &g, &x, &mut out.as_mut_slice()[10 * j..10 * j + 10]);
        }
        Ok(out)
    }
}

/// Sparse, strictly diagonally dominant precision matrix on `k` nodes.
///
/// Each pair is an edge with probability `p`; edge weights have magnitude in
/// `[0.4, 0.8]` and random sign. The diagonal is the absolute row sum plus 0.1, or 1
/// for isolated nodes.
pub fn random_precision(k: usize, p: f64, stream: RngStream) -> DMatrix<f64> {
    let mut rng = stream.rng();
    let mut prec = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in i + 1..k {
            if rng.random::<f64>() < p {
                let mag = rng.random_range(0.4..=0.8);
                let v = if rng.random::<bool>() { mag } else { -mag };
                prec[(i, j)] = v;
                prec[(j, i)] = v;
            }
        }
    }
    for i in 0..k {
        let s: f64 = prec.row(i).iter().map(|v: &f64| v.abs()).sum();
        prec[(i, i)] = if s > 0.0 { s + 0.1 } else { 1.0 };
    }
    prec
}

/// 1 where `|p_ij| >= threshold`.
pub fn threshold_adjacency(p: &DMatrix<f64>, threshold: f64) -> DMatrix<u8> {
    p.map(|v| u8::from(v.abs() >= threshold))
}
