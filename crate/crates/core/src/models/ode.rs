//! Fixed-step classical Runge-Kutta integration.

use crate::error::{Error, Result};

/// States on a uniform grid `t0 + i h`, with linear interpolation in between.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t0: f64,
    pub h: f64,
    pub dim: usize,
    states: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn end(&self) -> f64 {
        self.t0 + (self.len() - 1) as f64 * self.h
    }

    /// State at `t`, linearly interpolated between grid points.
    pub fn at(&self, t: f64, out: &mut [f64]) {
        let last = self.len() - 1;
        let x = ((t - self.t0) / self.h).max(0.0);
        let i = (x.floor() as usize).min(last);
        let frac = x - i as f64;
        if i == last || frac <= 1e-12 {
            out.copy_from_slice(self.state(i));
            return;
        }
        let (a, b) = (self.state(i), self.state(i + 1));
        for d in 0..self.dim {
            out[d] = a[d] + frac * (b[d] - a[d]);
        }
    }
}

/// Integrates `y' = field(t, y)` from `t0` to at least `t_end` with step `h`.
pub fn rk4_solve<F>(field: F, y0: &[f64], t0: f64, t_end: f64, h: f64) -> Result<Trajectory>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid("step must be positive"));
    }
    let dim = y0.len();
    let steps = ((t_end - t0) / h - 1e-9).ceil().max(0.0) as usize;
    let mut states = Vec::with_capacity((steps + 1) * dim);
    states.extend_from_slice(y0);
    let mut y = y0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
        (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);
    for i in 0..steps {
        let t = t0 + i as f64 * h;
        field(t, &y, &mut k1);
        for d in 0..dim {
            tmp[d] = y[d] + 0.5 * h * k1[d];
        }
        field(t + 0.5 * h, &tmp, &mut k2);
        for d in 0..dim {
            tmp[d] = y[d] + 0.5 * h * k2[d];
        }
        field(t + 0.5 * h, &tmp, &mut k3);
        for d in 0..dim {
            tmp[d] = y[d] + h * k3[d];
        }
        field(t + h, &tmp, &mut k4);
        for d in 0..dim {
            y[d] += h / 6.0 * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d]);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: i + 1 });
        }
        states.extend_from_slice(&y);
    }
    Ok(Trajectory { t0, h, dim, states })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay(_t: f64, y: &[f64], dy: &mut [f64]) {
        dy[0] = -y[0];
    }

    #[test]
    fn one_step() {
        let tr = rk4_solve(decay, &[1.0], 0.0, 0.1, 0.1).unwrap();
        assert_eq!(tr.len(), 2);
        assert!((tr.state(1)[0] - 0.904_837_5).abs() < 1e-7);
    }

    #[test]
    fn zero_field() {
        let tr = rk4_solve(|_, _, dy: &mut [f64]| dy.fill(0.0), &[2.0, -1.0], 0.0, 1.0, 0.1).unwrap();
        for i in 0..tr.len() {
            assert_eq!(tr.state(i), &[2.0, -1.0]);
        }
    }

    #[test]
    fn fourth_order() {
        let err = |h: f64| {
            let tr = rk4_solve(decay, &[1.0], 0.0, 1.0, h).unwrap();
            (tr.state(tr.len() - 1)[0] - (-1f64).exp()).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!((ratio - 16.0).abs() < 1.0, "{ratio}");
    }

    #[test]
    fn interpolation() {
        let tr = rk4_solve(|_, _, dy: &mut [f64]| dy[0] = 1.0, &[0.0], 0.0, 1.0, 0.25).unwrap();
        let mut o = [0.0];
        tr.at(0.6, &mut o);
        assert!((o[0] - 0.6).abs() < 1e-12);
        tr.at(1.0, &mut o);
        assert!((o[0] - 1.0).abs() < 1e-12);
    }
}
