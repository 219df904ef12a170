//! Small dense solves and the Woodbury form of `(U Vᵀ + t H)⁻¹` for diagonal `H`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// LU solve of a small square system, retried once with a diagonal shift of
/// `1e-12 · trace / dim` when the matrix is numerically singular.
pub fn solve_small(m: &DMatrix<f64>, rhs: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let d = m.nrows();
    if d == 0 {
        return Ok(DMatrix::zeros(0, rhs.ncols()));
    }
    if let Some(x) = lu_solve(m, rhs) {
        return Ok(x);
    }
    let shift = 1e-12 * m.trace().abs().max(f64::MIN_POSITIVE) / d as f64;
    let reg = m + DMatrix::identity(d, d) * shift;
    lu_solve(&reg, rhs).ok_or_else(|| Error::Singular(what.to_string()))
}

fn lu_solve(m: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let lu = m.clone().lu();
    let diag = lu.u().diagonal();
    let big = diag.amax();
    let small = diag.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if !(small > 1e-15 * big) || !big.is_finite() {
        return None;
    }
    let x = lu.solve(rhs)?;
    x.iter().all(|v| v.is_finite()).then_some(x)
}

pub fn solve_small_vec(m: &DMatrix<f64>, rhs: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let r = DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice());
    Ok(solve_small(m, &r, what)?.column(0).into_owned())
}

/// Solves `(Q + diag(d)) X = R` for symmetric positive definite systems,
/// falling back to LU when Cholesky fails.
pub fn solve_shifted(q: &DMatrix<f64>, d: &DVector<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut b = q.clone();
    for i in 0..d.len() {
        b[(i, i)] += d[i];
    }
    if let Some(ch) = b.clone().cholesky() {
        return Ok(ch.solve(rhs));
    }
    solve_small(&b, rhs, "Q + tH")
}

/// Applies `(U Vᵀ + t H)⁻¹` through the `k × k` capacitance matrix
/// `I + t⁻¹ Vᵀ H⁻¹ U`.
#[derive(Clone, Debug)]
pub struct Woodbury<'a> {
    h: &'a DVector<f64>,
    u: &'a DMatrix<f64>,
    v: &'a DMatrix<f64>,
    t: f64,
    cap: DMatrix<f64>,
}

impl<'a> Woodbury<'a> {
    pub fn new(h: &'a DVector<f64>, u: &'a DMatrix<f64>, v: &'a DMatrix<f64>, t: f64) -> Self {
        let k = u.ncols();
        let mut hinv_u = u.clone();
        for (i, mut row) in hinv_u.row_iter_mut().enumerate() {
            row /= h[i];
        }
        let cap = DMatrix::identity(k, k) + v.transpose() * hinv_u / t;
        Self { h, u, v, t, cap }
    }

    pub fn apply(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut hr = rhs.clone();
        for (i, mut row) in hr.row_iter_mut().enumerate() {
            row /= self.h[i];
        }
        if self.u.ncols() == 0 {
            return Ok(hr / self.t);
        }
        let inner = solve_small(&self.cap, &(self.v.transpose() * &hr), "Woodbury capacitance")?;
        let mut corr = self.u * inner;
        for (i, mut row) in corr.row_iter_mut().enumerate() {
            row /= self.h[i];
        }
        Ok(hr / self.t - corr / (self.t * self.t))
    }
}

/// `(U Vᵀ + t H)⁻¹ rhs` for diagonal `H`.
pub fn woodbury_apply(
    h: &DVector<f64>,
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    t: f64,
    rhs: &DVector<f64>,
) -> Result<DVector<f64>> {
    let r = DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice());
    Ok(Woodbury::new(h, u, v, t).apply(&r)?.column(0).into_owned())
}
