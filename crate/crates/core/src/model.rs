//! Forward-model interface and residual computation.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;

use crate::data::{AuxInput, Dataset};
use crate::error::{Error, Result};

/// A vectorial map `f_r(theta)` from parameters to one K-vector per observation column.
pub trait ForwardModel: Send + Sync {
    fn param_dim(&self) -> usize;
    fn output_dim(&self) -> usize;

    /// Writes `f_r(theta)` into `out` (length K).
    fn evaluate_into(
        &self,
        theta: &[f64],
        r: usize,
        aux: Option<&AuxInput>,
        out: &mut [f64],
    ) -> Result<()>;

    /// Evaluates the listed columns, returning a K × cols.len() matrix.
    ///
    /// Models that share work across columns (ODE solves) override this.
    fn evaluate_columns(&self, theta: &[f64], data: &Dataset, cols: &[usize]) -> Result<DMatrix<f64>> {
        let k = self.output_dim();
        let mut out = DMatrix::zeros(k, cols.len());
        for (j, &r) in cols.iter().enumerate() {
            let slot = &mut out.as_mut_slice()[j * k..(j + 1) * k];
            self.evaluate_into(theta, r, data.aux(r), slot)?;
        }
        Ok(out)
    }
}

impl<M: ForwardModel + ?Sized> ForwardModel for &M {
    fn param_dim(&self) -> usize {
        (**self).param_dim()
    }
    fn output_dim(&self) -> usize {
        (**self).output_dim()
    }
    fn evaluate_into(&self, theta: &[f64], r: usize, aux: Option<&AuxInput>, out: &mut [f64]) -> Result<()> {
        (**self).evaluate_into(theta, r, aux, out)
    }
    fn evaluate_columns(&self, theta: &[f64], data: &Dataset, cols: &[usize]) -> Result<DMatrix<f64>> {
        (**self).evaluate_columns(theta, data, cols)
    }
}

fn check_shapes<M: ForwardModel + ?Sized>(model: &M, theta: &[f64], data: &Dataset) -> Result<()> {
    Error::check_dim(model.param_dim(), theta.len())?;
    Error::check_dim(model.output_dim(), data.k())?;
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("theta must be finite"));
    }
    Ok(())
}

/// `y_r - f_r(theta)` for every column r.
pub fn residuals<M: ForwardModel + ?Sized>(model: &M, theta: &[f64], data: &Dataset) -> Result<DMatrix<f64>> {
    let cols: Vec<usize> = (0..data.r()).collect();
    residuals_columns(model, theta, data, &cols)
}

/// Residuals restricted to `cols`, in that order.
pub fn residuals_columns<M: ForwardModel + ?Sized>(
    model: &M,
    theta: &[f64],
    data: &Dataset,
    cols: &[usize],
) -> Result<DMatrix<f64>> {
    check_shapes(model, theta, data)?;
    let f = model.evaluate_columns(theta, data, cols)?;
    let mut e = data.observations().select_columns(cols);
    e -= f;
    if let Some(pos) = e.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            index: cols[pos / data.k()],
        });
    }
    Ok(e)
}

/// Wraps a model and counts evaluations.
///
/// `calls` counts parameter vectors pushed through the model (one per
/// `evaluate_columns`), `columns` counts individual `f_r` evaluations.
#[derive(Debug)]
pub struct CountingModel<M> {
    inner: M,
    calls: AtomicU64,
    columns: AtomicU64,
}

impl<M> CountingModel<M> {
    pub fn new(inner: M) -> Self {
        CountingModel {
            inner,
            calls: AtomicU64::new(0),
            columns: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn columns(&self) -> u64 {
        self.columns.load(Ordering::Relaxed)
    }

    pub fn inner(&self) -> &M {
        &self.inner
    }
}

impl<M: ForwardModel> ForwardModel for CountingModel<M> {
    fn param_dim(&self) -> usize {
        self.inner.param_dim()
    }

    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }

    fn evaluate_into(&self, theta: &[f64], r: usize, aux: Option<&AuxInput>, out: &mut [f64]) -> Result<()> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.columns.fetch_add(1, Ordering::Relaxed);
        self.inner.evaluate_into(theta, r, aux, out)
    }

    fn evaluate_columns(&self, theta: &[f64], data: &Dataset, cols: &[usize]) -> Result<DMatrix<f64>> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.columns.fetch_add(cols.len() as u64, Ordering::Relaxed);
        self.inner.evaluate_columns(theta, data, cols)
    }
}

/// A model given by a closure `(theta, aux) -> f`, mostly for tests and toys.
pub struct FnModel<F> {
    m: usize,
    k: usize,
    f: F,
}

impl<F> FnModel<F>
where
    F: Fn(&[f64], Option<&AuxInput>, &mut [f64]) + Send + Sync,
{
    pub fn new(m: usize, k: usize, f: F) -> Self {
        FnModel { m, k, f }
    }
}

impl<F> ForwardModel for FnModel<F>
where
    F: Fn(&[f64], Option<&AuxInput>, &mut [f64]) + Send + Sync,
{
    fn param_dim(&self) -> usize {
        self.m
    }
    fn output_dim(&self) -> usize {
        self.k
    }
    fn evaluate_into(&self, theta: &[f64], _r: usize, aux: Option<&AuxInput>, out: &mut [f64]) -> Result<()> {
        (self.f)(theta, aux, out);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear() -> FnModel<impl Fn(&[f64], Option<&AuxInput>, &mut [f64]) + Send + Sync> {
        FnModel::new(1, 2, |th: &[f64], aux: Option<&AuxInput>, out: &mut [f64]| {
            let t = aux.and_then(AuxInput::scalar).unwrap_or(0.0);
            out[0] = th[0] * t;
            out[1] = th[0];
        })
    }

    #[test]
    fn exact_fit_is_zero() {
        let m = linear();
        let y = DMatrix::from_row_slice(2, 3, &[0.0, 2.0, 4.0, 2.0, 2.0, 2.0]);
        let d = Dataset::new(y).unwrap().with_times(&[0.0, 1.0, 2.0]).unwrap();
        let e = residuals(&m, &[2.0], &d).unwrap();
        assert!(e.iter().all(|v| *v == 0.0));
        let e = residuals_columns(&m, &[1.0], &d, &[2]).unwrap();
        assert_eq!(e.as_slice(), &[2.0, 1.0]);
    }

    #[test]
    fn counting() {
        let m = CountingModel::new(linear());
        let d = Dataset::new(DMatrix::zeros(2, 5)).unwrap();
        residuals(&m, &[1.0], &d).unwrap();
        residuals(&m, &[1.0], &d).unwrap();
        assert_eq!(m.calls(), 2);
        assert_eq!(m.columns(), 10);
    }

    #[test]
    fn dimension_checks() {
        let m = linear();
        let d = Dataset::new(DMatrix::zeros(3, 5)).unwrap();
        assert!(matches!(residuals(&m, &[1.0], &d), Err(Error::DimensionMismatch { .. })));
    }
}
