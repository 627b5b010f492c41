//! Dense Hessian construction and direct inversion.
//!
//! Independent of the closed forms in [`crate::metrics`]; used to check them
//! and as the `O(n^3)` baseline in benchmarks.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::metrics::RowContext;

/// Largest row width the oracle will materialize.
pub const ORACLE_MAX_N: usize = 256;

/// Dampened row Hessian `2 x x^T + (2S/n) I`.
#[derive(Debug, Clone)]
pub struct HessianProbe {
    pub h: DMatrix<f64>,
    pub s: f64,
    pub n: usize,
}

impl HessianProbe {
    pub fn build(ctx: &RowContext) -> Result<Self> {
        Self::build_capped(ctx, ORACLE_MAX_N)
    }

    pub fn build_capped(ctx: &RowContext, cap: usize) -> Result<Self> {
        let n = ctx.n();
        if n > cap {
            return Err(Error::Range(format!("oracle limited to n <= {cap}, got {n}")));
        }
        let x = ctx.x();
        let s = ctx.s0();
        let damp = 2.0 * s / n as f64;
        let h = DMatrix::from_fn(n, n, |i, j| {
            let v = 2.0 * x[i] * x[j];
            if i == j {
                v + damp
            } else {
                v
            }
        });
        Ok(Self { h, s, n })
    }

    /// Full inverse via LU with partial pivoting.
    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        self.clone().into_inverse()
    }

    /// As [`inverse`](Self::inverse), consuming the probe.
    pub fn into_inverse(self) -> Result<DMatrix<f64>> {
        self.h
            .try_inverse()
            .ok_or_else(|| Error::Numerical("dampened Hessian is singular".into()))
    }

    /// `det(H)` via LU.
    pub fn determinant(&self) -> f64 {
        self.h.clone().lu().determinant()
    }

    /// Cofactor of the diagonal entry `q`: determinant of `H` with row and
    /// column `q` removed.
    pub fn cofactor(&self, q: usize) -> Result<f64> {
        if q >= self.n {
            return Err(Error::Dimension(format!("index {q} out of range for n = {}", self.n)));
        }
        if self.n == 1 {
            return Ok(1.0);
        }
        let minor = self.h.clone().remove_row(q).remove_column(q);
        Ok(minor.lu().determinant())
    }
}

/// `(H^-1)_qq` read off a full numerical inverse.
pub fn hqq_inv_brute(ctx: &RowContext, q: usize) -> Result<f64> {
    if q >= ctx.n() {
        return Err(Error::Dimension(format!("index {q} out of range for n = {}", ctx.n())));
    }
    let probe = HessianProbe::build(ctx)?;
    Ok(probe.inverse()?[(q, q)])
}

/// Whole inverse diagonal from a single inversion.
pub fn hqq_inv_brute_all(ctx: &RowContext) -> Result<Vec<f64>> {
    hqq_inv_brute_all_capped(ctx, ORACLE_MAX_N)
}

pub fn hqq_inv_brute_all_capped(ctx: &RowContext, cap: usize) -> Result<Vec<f64>> {
    let probe = HessianProbe::build_capped(ctx, cap)?;
    let n = probe.n;
    let inv = probe.into_inverse()?;
    Ok((0..n).map(|q| inv[(q, q)]).collect())
}
