use nalgebra::DMatrix;

use super::ode::{rk4_solve, Trajectory};
use crate::data::{AuxInput, Dataset};
use crate::error::{Error, Result};
use crate::model::ForwardModel;

/// Two-compartment system driven by a piecewise input, solved with RK4 from a zero state.
/// Parameters are `[k12, k21, k1e, b]`.
#[derive(Debug, Clone, Copy)]
pub struct Biology {
    pub step: f64,
}

impl Default for Biology {
    fn default() -> Self {
        Biology { step: 0.01 }
    }
}

pub fn input(tau: f64) -> f64 {
    if tau <= 1.0 {
        tau + 0.5
    } else {
        1.5 * (1.0 - tau).exp()
    }
}

impl Biology {
    pub fn solve(&self, theta: &[f64], t_end: f64) -> Result<Trajectory> {
        let (k12, k21, k1e, b) = (theta[0], theta[1], theta[2], theta[3]);
        rk4_solve(
            |t, y, dy| {
                dy[0] = -(k1e + k12) * y[0] + k21 * y[1] + b * input(t);
                dy[1] = k12 * y[0] - k21 * y[1];
            },
            &[0.0, 0.0],
            0.0,
            t_end,
            self.step,
        )
    }
}

fn time_of(r: usize, aux: Option<&AuxInput>) -> Result<f64> {
    match aux.and_then(AuxInput::scalar) {
        Some(t) if t >= 0.0 => Ok(t),
        _ => Err(Error::Model {
            index: r,
            reason: "needs a non-negative time input".into(),
        }),
    }
}

impl ForwardModel for Biology {
    fn param_dim(&self) -> usize {
        4
    }

    fn output_dim(&self) -> usize {
        2
    }

    fn evaluate_into(&self, theta: &[f64], r: usize, aux: Option<&AuxInput>, out: &mut [f64]) -> Result<()> {
        let t = time_of(r, aux)?;
        self.solve(theta, t)?.at(t, out);
        Ok(())
    }

    fn evaluate_columns(&self, theta: &[f64], data: &Dataset, cols: &[usize]) -> Result<DMatrix<f64>> {
        let times: Vec<f64> = cols.iter().map(|&r| time_of(r, data.aux(r))).collect::<Result<_>>()?;
        let t_end = times.iter().copied().fold(0.0, f64::max);
        let tr = self.solve(theta, t_end)?;
        let mut out = DMatrix::zeros(2, cols.len());
        for (j, t) in times.iter().enumerate() {
            tr.at(*t, &mut out.as_mut_slice()[2 * j..2 * j + 2]);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Midpoint rule with a tiny step as an independent reference.
    fn reference(theta: &[f64], t: f64) -> [f64; 2] {
        let (k12, k21, k1e, b) = (theta[0], theta[1], theta[2], theta[3]);
        let f = |s: f64, y: [f64; 2]| {
            [
                -(k1e + k12) * y[0] + k21 * y[1] + b * input(s),
                k12 * y[0] - k21 * y[1],
            ]
        };
        let n = (t / 2e-5).round() as usize;
        let h = t / n as f64;
        let mut y = [0.0, 0.0];
        for i in 0..n {
            let s = i as f64 * h;
            let k1 = f(s, y);
            let mid = [y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1]];
            let k2 = f(s + 0.5 * h, mid);
            y = [y[0] + h * k2[0], y[1] + h * k2[1]];
        }
        y
    }

    #[test]
    fn unforced_is_zero() {
        let tr = Biology::default().solve(&[1.0, 2.0, 0.5, 0.0], 5.0).unwrap();
        assert!((0..tr.len()).all(|i| tr.state(i) == [0.0, 0.0]));
        assert_eq!(input(1.0), 1.5 * (0.0f64).exp());
    }

    #[test]
    fn matches_reference() {
        let th = [1.0, 1.0, 1.0, 2.0];
        let m = Biology::default();
        for t in [0.5, 1.0, 2.0, 5.0] {
            let mut o = [0.0; 2];
            m.evaluate_into(&th, 0, Some(&AuxInput::Scalar(t)), &mut o).unwrap();
            let r = reference(&th, t);
            assert!((o[0] - r[0]).abs() < 1e-5 && (o[1] - r[1]).abs() < 1e-5, "{t}: {o:?} {r:?}");
        }
    }

    #[test]
    fn batch_matches_pointwise() {
        let times: Vec<f64> = (0..100).map(|i| 5.0 * i as f64 / 99.0).collect();
        let d = Dataset::new(DMatrix::zeros(2, 100)).unwrap().with_times(&times).unwrap();
        let m = Biology::default();
        let th = [0.7, 1.3, 0.4, 2.5];
        let f = m.evaluate_columns(&th, &d, &[3, 50, 99]).unwrap();
        let mut o = [0.0; 2];
        m.evaluate_into(&th, 50, d.aux(50), &mut o).unwrap();
        assert!((f[(0, 1)] - o[0]).abs() < 1e-12 && (f[(1, 1)] - o[1]).abs() < 1e-12);
    }
}
