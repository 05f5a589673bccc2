use nalgebra::DMatrix;

use crate::data::{AuxInput, Dataset};
use crate::error::{Error, Result};
use crate::model::ForwardModel;

/// Received-strength model: `f_i(theta) = -A ln ||theta - s_i||^2` for each sensor `s_i`.
/// The same vector is observed for every column.
#[derive(Debug, Clone)]
pub struct Localization {
    pub amplitude: f64,
    pub sensors: Vec<[f64; 2]>,
}

impl Default for Localization {
    fn default() -> Self {
        Localization {
            amplitude: 10.0,
            sensors: vec![[0.5, 1.0], [3.5, 1.0], [2.0, 3.0]],
        }
    }
}

impl Localization {
    fn eval(&self, theta: &[f64], out: &mut [f64]) -> Result<()> {
        for (i, s) in self.sensors.iter().enumerate() {
            let d2 = (theta[0] - s[0]).powi(2) + (theta[1] - s[1]).powi(2);
            if d2 == 0.0 {
                return Err(Error::Model {
                    index: 0,
                    reason: format!("theta coincides with sensor {}", i + 1),
                });
            }
            out[i] = -self.amplitude * d2.ln();
        }
        Ok(())
    }
}

impl ForwardModel for Localization {
    fn param_dim(&self) -> usize {
        2
    }

    fn output_dim(&self) -> usize {
        self.sensors.len()
    }

    fn evaluate_into(&self, theta: &[f64], r: usize, _aux: Option<&AuxInput>, out: &mut [f64]) -> Result<()> {
        self.eval(theta, out).map_err(|e| match e {
            Error::Model { reason, .. } => Error::Model { index: r, reason },
            e => e,
        })
    }

    fn evaluate_columns(&self, theta: &[f64], _data: &Dataset, cols: &[usize]) -> Result<DMatrix<f64>> {
        let k = self.output_dim();
        let mut f = vec![0.0; k];
        if let Some(&first) = cols.first() {
            self.evaluate_into(theta, first, None, &mut f)?;
        }
        Ok(DMatrix::from_fn(k, cols.len(), |i, _| f[i]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let m = Localization::default();
        let mut out = [0.0; 3];
        m.evaluate_into(&[1.5, 1.0], 0, None, &mut out).unwrap();
        assert_eq!(out[0], 0.0);
        m.evaluate_into(&[2.5, 2.0], 0, None, &mut out).unwrap();
        assert!((out[2] + 10.0 * 1.25f64.ln()).abs() < 1e-12);
        assert!((out[2] + 2.23144).abs() < 1e-5);
        assert!(matches!(
            m.evaluate_into(&[3.5, 1.0], 4, None, &mut out),
            Err(Error::Model { index: 4, .. })
        ));
    }
}
