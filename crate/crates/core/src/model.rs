//! The generic program `min ½xᵀQx + cᵀx  s.t. Ax = b, x ∈ K`, its validation,
//! and the reduction that produces a strictly feasible starting pair.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::barrier::{BlockDomain, LocalMetric};
use crate::error::{Error, Result};

/// Quadratic term, either as factors `U Vᵀ` (both `n × k`) or a dense matrix.
#[derive(Clone, Debug)]
pub enum Objective {
    Factored { u: DMatrix<f64>, v: DMatrix<f64> },
    Dense(DMatrix<f64>),
}

impl Objective {
    pub fn zero(n: usize) -> Self {
        Objective::Factored { u: DMatrix::zeros(n, 0), v: DMatrix::zeros(n, 0) }
    }

    pub fn dim(&self) -> usize {
        match self {
            Objective::Factored { u, .. } => u.nrows(),
            Objective::Dense(q) => q.nrows(),
        }
    }

    /// Number of factor columns, or `None` for a dense objective.
    pub fn rank(&self) -> Option<usize> {
        match self {
            Objective::Factored { u, .. } => Some(u.ncols()),
            Objective::Dense(_) => None,
        }
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Objective::Factored { u, v } => u * (v.transpose() * x),
            Objective::Dense(q) => q * x,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Objective::Factored { u, v } => u * v.transpose(),
            Objective::Dense(q) => q.clone(),
        }
    }

    /// Upper bound on the spectral norm.
    pub fn norm_bound(&self) -> f64 {
        match self {
            Objective::Factored { u, v } => u.norm() * v.norm(),
            Objective::Dense(q) => q.norm(),
        }
    }

    fn scaled(&self, f: f64) -> Self {
        match self {
            Objective::Factored { u, v } => Objective::Factored { u: u * f, v: v.clone() },
            Objective::Dense(q) => Objective::Dense(q * f),
        }
    }

    /// Appends one zero row (and column, for dense).
    fn padded(&self) -> Self {
        match self {
            Objective::Factored { u, v } => Objective::Factored {
                u: u.clone().insert_row(u.nrows(), 0.0),
                v: v.clone().insert_row(v.nrows(), 0.0),
            },
            Objective::Dense(q) => {
                let n = q.nrows();
                Objective::Dense(q.clone().insert_row(n, 0.0).insert_column(n, 0.0))
            }
        }
    }
}

/// Outer radius `R`, inner radius `r` and Lipschitz bound `L`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Radii {
    pub outer: f64,
    pub inner: f64,
    pub lipschitz: f64,
    /// Set when `inner` was not supplied and was guessed from the box widths.
    pub inner_assumed: bool,
}

#[derive(Clone, Debug)]
pub struct QpInstance {
    objective: Objective,
    c: DVector<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    blocks: Vec<BlockDomain>,
    weights: DVector<f64>,
    radii: Radii,
    kappa: f64,
}

#[derive(Clone, Debug)]
pub struct QpBuilder {
    objective: Objective,
    c: DVector<f64>,
    a: Option<(DMatrix<f64>, DVector<f64>)>,
    blocks: Option<Vec<BlockDomain>>,
    weights: Option<DVector<f64>>,
    outer: Option<f64>,
    inner: Option<f64>,
    lipschitz: Option<f64>,
}

impl QpBuilder {
    pub fn constraints(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a = Some((a, b));
        self
    }

    pub fn blocks(mut self, blocks: Vec<BlockDomain>) -> Self {
        self.blocks = Some(blocks);
        self
    }

    pub fn weights(mut self, w: DVector<f64>) -> Self {
        self.weights = Some(w);
        self
    }

    pub fn outer_radius(mut self, r: f64) -> Self {
        self.outer = Some(r);
        self
    }

    pub fn inner_radius(mut self, r: f64) -> Self {
        self.inner = Some(r);
        self
    }

    pub fn lipschitz(mut self, l: f64) -> Self {
        self.lipschitz = Some(l);
        self
    }

    pub fn build(self) -> Result<QpInstance> {
        let n = self.c.len();
        let dim = |what, expected, found| {
            if expected == found {
                Ok(())
            } else {
                Err(Error::Dimension { what, expected, found })
            }
        };
        dim("objective", n, self.objective.dim())?;
        if let Objective::Factored { u, v } = &self.objective {
            dim("objective factor V rows", n, v.nrows())?;
            dim("objective factor V columns", u.ncols(), v.ncols())?;
        }
        let (a, b) = self.a.unwrap_or_else(|| (DMatrix::zeros(0, n), DVector::zeros(0)));
        dim("constraint matrix columns", n, a.ncols())?;
        dim("constraint right-hand side", a.nrows(), b.len())?;
        let blocks = self.blocks.ok_or_else(|| Error::InvalidParameter("block domains are required".into()))?;
        dim("block list", n, blocks.len())?;
        let weights = self.weights.unwrap_or_else(|| DVector::from_element(n, 1.0));
        dim("weights", n, weights.len())?;
        if let Some(w) = weights.iter().find(|w| !(**w >= 1.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter(format!("weights must be finite and at least 1, got {w}")));
        }
        let all_finite = self.c.iter().chain(a.iter()).chain(b.iter()).all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::InvalidParameter("non-finite entry in c, A or b".into()));
        }
        check_symmetric(&self.objective)?;

        let outer = match self.outer {
            Some(r) => r,
            None => {
                if blocks.iter().any(|b| !b.is_bounded()) {
                    return Err(Error::InvalidParameter("an unbounded block needs an explicit outer radius".into()));
                }
                blocks.iter().map(|b| b.lo().powi(2).max(b.hi().powi(2))).sum::<f64>().sqrt().max(f64::MIN_POSITIVE)
            }
        };
        let (inner, inner_assumed) = match self.inner {
            Some(r) => (r, false),
            None => {
                let hw = blocks
                    .iter()
                    .filter(|b| b.is_bounded())
                    .map(|b| 0.5 * (b.hi() - b.lo()))
                    .fold(f64::INFINITY, f64::min);
                (if hw.is_finite() { hw } else { 1.0 }, true)
            }
        };
        let lipschitz = match self.lipschitz {
            Some(l) => l,
            None => self.c.norm().max(self.objective.norm_bound()).max(f64::MIN_POSITIVE),
        };
        for (name, v) in [("outer radius", outer), ("inner radius", inner), ("lipschitz bound", lipschitz)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        let kappa = blocks.iter().zip(weights.iter()).map(|(b, w)| w * b.nu()).sum();
        Ok(QpInstance {
            objective: self.objective,
            c: self.c,
            a,
            b,
            blocks,
            weights,
            radii: Radii { outer, inner, lipschitz, inner_assumed },
            kappa,
        })
    }
}

fn check_symmetric(obj: &Objective) -> Result<()> {
    let n = obj.dim();
    if n > 400 {
        return Ok(());
    }
    let q = obj.to_dense();
    let scale = q.amax().max(1.0);
    let asym = (&q - q.transpose()).amax();
    if asym > 1e-9 * scale {
        return Err(Error::InvalidParameter(format!("objective matrix is not symmetric (max deviation {asym:e})")));
    }
    if matches!(obj, Objective::Dense(_)) && n > 0 {
        let min_eig = q.symmetric_eigenvalues().min();
        if min_eig < -1e-8 * scale * n as f64 {
            return Err(Error::InvalidParameter(format!("objective matrix is not PSD (eigenvalue {min_eig:e})")));
        }
    }
    Ok(())
}

impl QpInstance {
    pub fn builder(objective: Objective, c: DVector<f64>) -> QpBuilder {
        QpBuilder {
            objective,
            c,
            a: None,
            blocks: None,
            weights: None,
            outer: None,
            inner: None,
            lipschitz: None,
        }
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn blocks(&self) -> &[BlockDomain] {
        &self.blocks
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn radii(&self) -> Radii {
        self.radii
    }

    /// `κ = Σ w_i ν_i`
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&self.objective.apply(x)) + self.c.dot(x)
    }

    pub fn residual_l1(&self, x: &DVector<f64>) -> f64 {
        (&self.a * x - &self.b).lp_norm(1)
    }

    /// Entrywise 1-norm of `A`, which bounds `‖Ax‖₁` by `‖x‖_∞` times itself.
    pub fn a_norm1(&self) -> f64 {
        self.a.iter().map(|v| v.abs()).sum()
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.len() == self.n() && self.blocks.iter().zip(x.iter()).all(|(b, v)| b.contains(*v))
    }

    /// Weighted barrier center, the per-block midpoints.
    pub fn analytic_center(&self) -> Option<DVector<f64>> {
        let v: Option<Vec<f64>> = self.blocks.iter().map(|b| b.analytic_center()).collect();
        v.map(DVector::from_vec)
    }

    pub fn metric(&self, x: &DVector<f64>) -> Result<LocalMetric> {
        LocalMetric::assemble(&self.blocks, &self.weights, x)
    }

    /// Upper bound on `value(x) − OPT` certified by the multipliers `y`, with
    /// `s = c + Qx − Aᵀy` acting as the dual slack. Infinite when a half-line
    /// coordinate has a negative slack.
    pub fn gap_bound(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let s = &self.c + self.objective.apply(x) - self.a.transpose() * y;
        let mut gap = y.dot(&(&self.a * x - &self.b)).abs();
        for (i, blk) in self.blocks.iter().enumerate() {
            let lo = s[i] * (x[i] - blk.lo());
            gap += if blk.is_bounded() {
                lo.max(s[i] * (x[i] - blk.hi()))
            } else if s[i] >= 0.0 {
                lo
            } else {
                f64::INFINITY
            };
        }
        gap
    }

    /// Objective bound `εLR(R+1)` and feasibility bound `3ε(R‖A‖₁ + ‖b‖₁)`
    /// carried by an `ε`-accurate solve.
    pub fn guarantee(&self, eps: f64) -> (f64, f64) {
        let Radii { outer, lipschitz, .. } = self.radii;
        (
            eps * lipschitz * outer * (outer + 1.0),
            3.0 * eps * (outer * self.a_norm1() + self.b.lp_norm(1)),
        )
    }
}

/// The program extended by one slack coordinate `τ ≥ 0` so that a strictly
/// feasible, well-centered starting pair is known in closed form.
#[derive(Clone, Debug)]
pub struct AugmentedInstance {
    pub base: QpInstance,
    pub original: QpInstance,
    pub epsilon: f64,
    pub rho: f64,
    pub origin_x0: DVector<f64>,
    /// `‖s̄₀ + ∇φ̄_w(x̄₀)‖*` at the starting point.
    pub initial_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Restriction {
    pub objective: f64,
    pub residual_l1: f64,
    pub tau: f64,
}

/// Builds the extended program and its starting pair `(x̄₀, s̄₀)`.
pub fn augment_for_initial_point(
    inst: &QpInstance,
    eps: f64,
) -> Result<(AugmentedInstance, DVector<f64>, DVector<f64>)> {
    if !(eps > 0.0 && eps <= 0.5) {
        return Err(Error::InvalidParameter(format!("epsilon must lie in (0, 1/2], got {eps}")));
    }
    let x0 = inst
        .analytic_center()
        .ok_or_else(|| Error::InvalidParameter("every block must be bounded to have a center".into()))?;
    let Radii { outer, lipschitz, .. } = inst.radii;
    let rho = 1.0 / (lipschitz * outer * (outer + 1.0));
    let scale = eps * rho;
    let n = inst.n();

    let s0 = (inst.c() + inst.objective.apply(&x0)) * scale;
    let slack_col = inst.b() - inst.a() * &x0;
    let mut a_bar = inst.a().clone().insert_column(n, 0.0);
    a_bar.set_column(n, &slack_col);
    let c_bar = (inst.c() * scale).insert_row(n, 1.0);
    let mut blocks = inst.blocks.clone();
    blocks.push(BlockDomain::positive());
    let weights = inst.weights.clone().insert_row(n, 1.0);

    let base = QpInstance::builder(inst.objective.scaled(scale).padded(), c_bar)
        .constraints(a_bar, inst.b().clone())
        .blocks(blocks)
        .weights(weights)
        .outer_radius(outer)
        .inner_radius(inst.radii.inner)
        .lipschitz(lipschitz)
        .build()?;

    let x_bar = x0.clone().insert_row(n, 1.0);
    let s_bar = s0.insert_row(n, 1.0);
    let metric = base.metric(&x_bar)?;
    let mut resid = s_bar.clone();
    for (i, blk) in base.blocks.iter().enumerate() {
        resid[i] += base.weights[i] * blk.grad_hess(x_bar[i]).0;
    }
    let initial_residual = metric.weighted_dual_norm(&resid);
    if initial_residual > eps * (1.0 + 1e-9) {
        return Err(Error::InvalidParameter(format!(
            "starting residual {initial_residual:e} exceeds epsilon; the Lipschitz bound or outer radius is too small"
        )));
    }
    let aug = AugmentedInstance { base, original: inst.clone(), epsilon: eps, rho, origin_x0: x0, initial_residual };
    Ok((aug, x_bar, s_bar))
}

impl AugmentedInstance {
    /// Drops the slack coordinate and measures the result on the original
    /// program.
    pub fn restrict(&self, x_bar: &DVector<f64>) -> (DVector<f64>, Restriction) {
        let n = self.original.n();
        let x = x_bar.rows(0, n).into_owned();
        let report = Restriction {
            objective: self.original.value(&x),
            residual_l1: self.original.residual_l1(&x),
            tau: x_bar[n],
        };
        (x, report)
    }
}
