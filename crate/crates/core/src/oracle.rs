//! Dense reference solver and KKT measurements.
//!
//! The solver is a plain primal barrier method: for increasing `t` it
//! minimizes `t (½xᵀQx + cᵀx) + Σ φ_i(x_i)` subject to `Ax = b` by
//! infeasible-start Newton steps on the full KKT system, with an exact line
//! search once the iterate is feasible. It shares nothing with the path
//! following code except the barrier formulas.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::QpInstance;

/// Largest total dimension the oracle accepts.
pub const ORACLE_MAX_DIM: usize = 2000;

#[derive(Clone, Debug)]
pub struct OracleSolution {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub s: DVector<f64>,
    pub objective: f64,
    pub newton_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// `‖Qx + c − Aᵀy − s‖₂`
    pub stationarity: f64,
    /// `‖Ax − b‖₁`
    pub primal_residual: f64,
    /// Largest sign violation of `s` on half-line coordinates; box
    /// coordinates accept either sign.
    pub dual_domain: f64,
    /// `|yᵀ(Ax − b)| + Σ_i max(s_i (x_i − lo_i), s_i (x_i − hi_i))`
    pub gap_estimate: f64,
    pub objective: f64,
}

pub fn kkt_residuals(inst: &QpInstance, x: &DVector<f64>, s: &DVector<f64>, y: &DVector<f64>) -> Result<KktReport> {
    let n = inst.n();
    for (what, v, len) in [("x", x, n), ("s", s, n), ("y", y, inst.m())] {
        if v.len() != len {
            return Err(Error::Dimension { what, expected: len, found: v.len() });
        }
    }
    let qx = inst.objective().apply(x);
    let stationarity = (&qx + inst.c() - inst.a().transpose() * y - s).norm();
    let r = inst.a() * x - inst.b();
    let mut gap = y.dot(&r).abs();
    let mut dual_domain = 0.0f64;
    for (i, b) in inst.blocks().iter().enumerate() {
        let lo = s[i] * (x[i] - b.lo());
        if b.is_bounded() {
            gap += lo.max(s[i] * (x[i] - b.hi()));
        } else {
            dual_domain = dual_domain.max(-s[i]);
            gap += lo.max(0.0);
        }
    }
    Ok(KktReport {
        stationarity,
        primal_residual: r.abs().sum(),
        dual_domain,
        gap_estimate: gap,
        objective: 0.5 * x.dot(&qx) + inst.c().dot(x),
    })
}

struct Local {
    g: DVector<f64>,
    h: DVector<f64>,
}

fn barrier(inst: &QpInstance, x: &DVector<f64>) -> Result<Local> {
    let n = x.len();
    let mut g = DVector::zeros(n);
    let mut h = DVector::zeros(n);
    for (i, b) in inst.blocks().iter().enumerate() {
        let (_, gi, hi) = b.eval(i, x[i])?;
        g[i] = gi;
        h[i] = hi;
    }
    Ok(Local { g, h })
}

fn max_interior_step(inst: &QpInstance, x: &DVector<f64>, dx: &DVector<f64>) -> f64 {
    inst.blocks()
        .iter()
        .enumerate()
        .map(|(i, b)| b.max_step(x[i], dx[i], 0.99))
        .fold(1.0, f64::min)
}

/// Derivative of `σ ↦ t f(x + σ dx) + φ(x + σ dx)`.
fn slope(inst: &QpInstance, q: &DMatrix<f64>, t: f64, x: &DVector<f64>, dx: &DVector<f64>, sigma: f64) -> f64 {
    let z = x + dx * sigma;
    let mut d = t * (q * &z + inst.c()).dot(dx);
    for (i, b) in inst.blocks().iter().enumerate() {
        let a = z[i] - b.lo();
        let mut gi = -1.0 / a;
        if b.is_bounded() {
            gi += 1.0 / (b.hi() - z[i]);
        }
        d += gi * dx[i];
    }
    d
}

/// Pulls `x` back onto `Ax = b` along `H⁻¹Aᵀ`, which mostly moves
/// coordinates far from their bounds. Skipped if it would leave the domain.
fn reproject(inst: &QpInstance, x: &mut DVector<f64>) -> Result<()> {
    let m = inst.m();
    if m == 0 {
        return Ok(());
    }
    let r = inst.a() * &*x - inst.b();
    let hinv = barrier(inst, x)?.h.map(|h| 1.0 / h);
    let mut ha = inst.a().transpose();
    for (i, mut row) in ha.row_iter_mut().enumerate() {
        row *= hinv[i];
    }
    let Some(z) = (inst.a() * &ha).lu().solve(&r) else {
        return Ok(());
    };
    let dx = -(ha * z);
    if max_interior_step(inst, x, &dx) >= 1.0 {
        *x += dx;
    }
    Ok(())
}

/// Solves the instance to duality gap `tol · (1 + |f(x)|)`. Tolerances much
/// below `1e-9` push iterates within rounding distance of their bounds.
pub fn dense_solve_qp(inst: &QpInstance, tol: f64) -> Result<OracleSolution> {
    let (n, m) = (inst.n(), inst.m());
    if n + m > ORACLE_MAX_DIM {
        return Err(Error::InvalidParameter(format!("oracle handles at most {ORACLE_MAX_DIM} variables, got {}", n + m)));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter("oracle tolerance must be positive".into()));
    }
    let q = inst.objective().to_dense();
    let nu: f64 = inst.blocks().iter().map(|b| b.nu()).sum();
    let mut x = DVector::from_fn(n, |i, _| {
        let b = inst.blocks()[i];
        b.analytic_center().unwrap_or(b.lo() + 1.0)
    });
    let mut nu_dual = DVector::zeros(m);
    let mut t = 1.0f64;
    let mut steps = 0usize;
    let cap = 500 + 50 * n;
    loop {
        // Centering at t.
        for _ in 0..200 {
            steps += 1;
            if steps > cap {
                return Err(Error::IterationLimit(cap));
            }
            let loc = barrier(inst, &x)?;
            let grad = (&q * &x + inst.c()) * t + &loc.g;
            let r = inst.a() * &x - inst.b();
            // Symmetric scaling by H^{-1/2} on the x block keeps the solve
            // accurate when coordinates approach their bounds.
            let d = loc.h.map(|h| 1.0 / h.sqrt());
            let mut kkt = DMatrix::zeros(n + m, n + m);
            for i in 0..n {
                for j in 0..n {
                    kkt[(i, j)] = t * q[(i, j)] * d[i] * d[j];
                }
                kkt[(i, i)] += 1.0;
                for k in 0..m {
                    let v = inst.a()[(k, i)] * d[i];
                    kkt[(i, n + k)] = v;
                    kkt[(n + k, i)] = v;
                }
            }
            let mut rhs = DVector::zeros(n + m);
            rhs.rows_mut(0, n).copy_from(&(-grad.component_mul(&d)));
            rhs.rows_mut(n, m).copy_from(&(-&r));
            let mut sol = kkt
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::Singular("oracle KKT system".into()))?;
            for i in 0..n {
                sol[i] *= d[i];
            }
            let dx = sol.rows(0, n).into_owned();
            let w = sol.rows(n, m).into_owned();
            let smax = max_interior_step(inst, &x, &dx);
            let feasible = r.abs().sum() <= 1e-10 * (1.0 + inst.b().abs().sum());
            let decrement = dx.dot(&(&q * &dx * t + loc.h.component_mul(&dx)));
            let damped = smax.min(1.0 / (1.0 + decrement.sqrt()));
            let sigma = if !feasible && smax < 1.0 {
                smax
            } else if slope(inst, &q, t, &x, &dx, 0.0) > -0.5 * decrement {
                // The slope has drowned in cancellation; fall back to the
                // self-concordant damped step.
                if decrement < 0.25 { smax.min(1.0) } else { damped }
            } else {
                // Exact line search on the convex one-dimensional restriction.
                let hi = smax.min(1.0);
                if slope(inst, &q, t, &x, &dx, hi) <= 0.0 {
                    hi
                } else {
                    let (mut a, mut b) = (0.0, hi);
                    for _ in 0..60 {
                        let mid = 0.5 * (a + b);
                        if slope(inst, &q, t, &x, &dx, mid) > 0.0 {
                            b = mid;
                        } else {
                            a = mid;
                        }
                    }
                    a.max(damped)
                }
            };
            x += &dx * sigma;
            nu_dual = w;
            if feasible {
                reproject(inst, &mut x)?;
            }
            if feasible && decrement < 1e-12 {
                break;
            }
        }
        if nu / t <= tol * (1.0 + inst.value(&x).abs()) {
            break;
        }
        t *= 8.0;
    }
    let y = -&nu_dual / t;
    let s = -barrier(inst, &x)?.g / t;
    let objective = inst.value(&x);
    Ok(OracleSolution { x, y, s, objective, newton_steps: steps })
}
