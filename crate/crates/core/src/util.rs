//! Small log-domain and weighting helpers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m.is_infinite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Self-normalises log-weights. Fails when every weight is zero.
pub fn normalize_log_weights(logw: &[f64]) -> Result<Vec<f64>> {
    let z = logsumexp(logw);
    if !z.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    let mut w: Vec<f64> = logw.iter().map(|l| (l - z).exp()).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    Ok(w)
}

/// `1 / sum w^2` of normalised weights.
pub fn ess(weights: &[f64]) -> Result<f64> {
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    if s2 <= 0.0 || !s2.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    Ok(1.0 / s2)
}

/// Weighted mean and covariance about that mean (weights assumed normalised).
pub fn weighted_moments(points: &[DVector<f64>], weights: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let m = points[0].len();
    let mut mean = DVector::zeros(m);
    for (p, w) in points.iter().zip(weights) {
        if *w > 0.0 {
            mean.axpy(*w, p, 1.0);
        }
    }
    let mut cov = DMatrix::zeros(m, m);
    for (p, w) in points.iter().zip(weights) {
        if *w > 0.0 {
            let d = p - &mean;
            cov.ger(*w, &d, &d, 1.0);
        }
    }
    (mean, cov)
}

/// Index of the largest value, lowest index on ties. `None` if all are `-inf` or NaN.
pub fn argmax(xs: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &x) in xs.iter().enumerate() {
        if x == f64::NEG_INFINITY || x.is_nan() {
            continue;
        }
        match best {
            Some(b) if xs[b] >= x => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Percentile by linear interpolation between order statistics of sorted data.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}
