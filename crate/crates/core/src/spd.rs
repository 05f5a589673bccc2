//! Symmetric positive-definite matrices with a cached Cholesky factor.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-10;
const JITTER_START: f64 = 1e-12;
const JITTER_MAX: f64 = 1e-6;

/// What to do when a matrix fails the Cholesky test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JitterPolicy {
    #[default]
    Reject,
    /// Add `eps * I` starting at 1e-12 and doubling while `eps <= 1e-6`.
    Escalate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    matrix: DMatrix<f64>,
    lower: DMatrix<f64>,
    log_det: f64,
    jitter: f64,
}

fn cholesky_lower(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = nalgebra::Cholesky::new(m.clone())?;
    let l = chol.unpack();
    if l.diagonal().iter().all(|d| d.is_finite() && *d > 0.0) {
        Some(l)
    } else {
        None
    }
}

impl SpdMatrix {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        Self::with_policy(matrix, JitterPolicy::Reject)
    }

    pub fn with_policy(matrix: DMatrix<f64>, policy: JitterPolicy) -> Result<Self> {
        let k = matrix.nrows();
        Error::check_dim(k, matrix.ncols())?;
        if k == 0 {
            return Err(Error::invalid("empty matrix"));
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::NotPositiveDefinite);
        }
        let scale = matrix.amax().max(f64::MIN_POSITIVE);
        let mut asym = 0.0_f64;
        for i in 0..k {
            for j in 0..i {
                asym = asym.max((matrix[(i, j)] - matrix[(j, i)]).abs());
            }
        }
        if asym > SYMMETRY_TOL * scale.max(1.0) {
            return Err(Error::NotSymmetric(asym));
        }
        let sym = (&matrix + matrix.transpose()) * 0.5;

        if let Some(l) = cholesky_lower(&sym) {
            return Ok(Self::from_parts(sym, l, 0.0));
        }
        if policy == JitterPolicy::Reject {
            return Err(Error::NotPositiveDefinite);
        }
        let mut eps = JITTER_START;
        while eps <= JITTER_MAX {
            let mut shifted = sym.clone();
            for i in 0..k {
                shifted[(i, i)] += eps;
            }
            if let Some(l) = cholesky_lower(&shifted) {
                return Ok(Self::from_parts(shifted, l, eps));
            }
            eps *= 2.0;
        }
        Err(Error::NotPositiveDefinite)
    }

    fn from_parts(matrix: DMatrix<f64>, lower: DMatrix<f64>, jitter: f64) -> Self {
        let log_det = 2.0 * lower.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        SpdMatrix {
            matrix,
            lower,
            log_det,
            jitter,
        }
    }

    pub fn identity(k: usize) -> Self {
        let m = DMatrix::identity(k, k);
        Self::from_parts(m.clone(), m, 0.0)
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    /// Lower Cholesky factor `L` with `L L^T = self`.
    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Jitter added to the diagonal during construction (0 if none).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Solves `L y = x` in place.
    pub fn forward_solve_in_place(&self, x: &mut [f64]) {
        let k = self.dim();
        debug_assert_eq!(x.len(), k);
        for i in 0..k {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lower[(i, j)] * x[j];
            }
            x[i] = s / self.lower[(i, i)];
        }
    }

    /// `x^T self^{-1} x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let k = self.dim();
        let mut buf = [0.0_f64; 16];
        if k <= buf.len() {
            let y = &mut buf[..k];
            y.copy_from_slice(x);
            self.forward_solve_in_place(y);
            y.iter().map(|v| v * v).sum()
        } else {
            let mut y = x.to_vec();
            self.forward_solve_in_place(&mut y);
            y.iter().map(|v| v * v).sum()
        }
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = b.clone();
        let l = &self.lower;
        let lt = l.transpose();
        assert!(l.solve_lower_triangular_mut(&mut out));
        assert!(lt.solve_upper_triangular_mut(&mut out));
        out
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut out = b.clone();
        assert!(self.lower.solve_lower_triangular_mut(&mut out));
        assert!(self.lower.transpose().solve_upper_triangular_mut(&mut out));
        out
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let inv = self.solve(&DMatrix::identity(self.dim(), self.dim()));
        (&inv + inv.transpose()) * 0.5
    }

    /// `tr(self^{-1} b)`.
    pub fn trace_solve(&self, b: &DMatrix<f64>) -> f64 {
        self.solve(b).trace()
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::invalid(format!("scale factor {c} must be positive")));
        }
        let k = self.dim() as f64;
        Ok(SpdMatrix {
            matrix: &self.matrix * c,
            lower: &self.lower * c.sqrt(),
            log_det: self.log_det + k * c.ln(),
            jitter: self.jitter * c,
        })
    }
}
