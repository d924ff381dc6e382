//! Dense least squares through a thin QR factorization.

use nalgebra::{DMatrix, DVector};

/// Designs whose condition number exceeds this are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// A factored least-squares design, reusable across many right-hand sides.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    solve_mat: DMatrix<f64>,
    xtx_inv: DMatrix<f64>,
    condition: f64,
}

impl LeastSquares {
    /// Factor `x` (n × k, n ≥ k). Returns the condition number as the error
    /// when the design is numerically rank deficient.
    pub fn new(x: &DMatrix<f64>) -> Result<Self, f64> {
        let (n, k) = x.shape();
        if n < k || k == 0 {
            return Err(f64::INFINITY);
        }
        let qr = x.clone().qr();
        let r = qr.r();
        let sv = r.singular_values();
        let smax = sv.max();
        let smin = sv.min();
        let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if !condition.is_finite() || condition > MAX_CONDITION {
            return Err(condition);
        }
        let r_inv = r.try_inverse().ok_or(f64::INFINITY)?;
        let q = qr.q();
        let solve_mat = &r_inv * q.transpose();
        let xtx_inv = &r_inv * r_inv.transpose();
        Ok(Self {
            solve_mat,
            xtx_inv,
            condition,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, f64> {
        Self::new(&rows_to_matrix(rows))
    }

    pub fn nobs(&self) -> usize {
        self.solve_mat.ncols()
    }

    pub fn nparams(&self) -> usize {
        self.solve_mat.nrows()
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// `(X'X)⁻¹`.
    pub fn xtx_inv(&self) -> &DMatrix<f64> {
        &self.xtx_inv
    }

    pub fn solve(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.nobs(), "right-hand side length");
        let y = DVector::from_column_slice(y);
        (&self.solve_mat * y).iter().copied().collect()
    }
}

pub fn rows_to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let k = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j])
}
