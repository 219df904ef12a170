//! SVM training on top of the QP solver.
//!
//! Every variant is a box-constrained QP with one or two equality rows and
//! objective `½ zᵀ Q̂ z + pᵀz`, where `Q̂_rc = s_r s_c K(x_{j(r)}, x_{j(c)})`.
//! Classification uses `s = y`, one-class uses `s = 1`, and the regression
//! variants stack two copies of the data with `s = (1, −1)`.

use std::fmt;
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::barrier::BlockDomain;
use crate::error::{Error, Result};
use crate::ipm::{solve, Backend, Mode, Solution, SolveReport, SolverOptions};
use crate::kernel::{exact_gaussian_kernel, gaussian_lowrank_factor, KernelFactorization, DEFAULT_RANK_CAP};
use crate::model::{Objective, QpInstance};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Variant {
    /// Separable classification; `radius` caps every dual coefficient.
    HardMargin { radius: f64 },
    CSvc { c: f64 },
    NuSvc { nu: f64 },
    OneClass { nu: f64 },
    EpsSvr { tube: f64, c: f64 },
    NuSvr { nu: f64, c: f64 },
}

impl Variant {
    fn is_regression(&self) -> bool {
        matches!(self, Variant::EpsSvr { .. } | Variant::NuSvr { .. })
    }

    fn is_classification(&self) -> bool {
        matches!(self, Variant::HardMargin { .. } | Variant::CSvc { .. } | Variant::NuSvc { .. })
    }

    /// True when the textbook form is a maximization that was negated.
    pub fn negated(&self) -> bool {
        matches!(self, Variant::HardMargin { .. } | Variant::CSvc { .. })
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Variant::HardMargin { radius } => write!(f, "hard radius {radius:e}"),
            Variant::CSvc { c } => write!(f, "c-svc C {c:e}"),
            Variant::NuSvc { nu } => write!(f, "nu-svc nu {nu:e}"),
            Variant::OneClass { nu } => write!(f, "one-class nu {nu:e}"),
            Variant::EpsSvr { tube, c } => write!(f, "eps-svr epsilon {tube:e} C {c:e}"),
            Variant::NuSvr { nu, c } => write!(f, "nu-svr nu {nu:e} C {c:e}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum KernelChoice {
    Linear,
    /// `epsilon` is the entrywise factorization accuracy; `None` derives it
    /// from the training accuracy.
    Gaussian { epsilon: Option<f64> },
}

#[derive(Clone, Debug)]
pub struct SvmSpec {
    pub x: DMatrix<f64>,
    pub y: Option<DVector<f64>>,
    pub variant: Variant,
    pub kernel: KernelChoice,
}

impl SvmSpec {
    pub fn validate(&self) -> Result<()> {
        let n = self.x.nrows();
        if n == 0 {
            return Err(Error::InvalidParameter("empty training set".into()));
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite feature value".into()));
        }
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
            }
        };
        let unit = |v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("nu must lie in (0, 1], got {v}")))
            }
        };
        match self.variant {
            Variant::HardMargin { radius } => positive("radius", radius)?,
            Variant::CSvc { c } => positive("C", c)?,
            Variant::NuSvc { nu } | Variant::OneClass { nu } => unit(nu)?,
            Variant::EpsSvr { tube, c } => {
                positive("C", c)?;
                if !(tube >= 0.0 && tube.is_finite()) {
                    return Err(Error::InvalidParameter(format!("tube width must be non-negative, got {tube}")));
                }
            }
            Variant::NuSvr { nu, c } => {
                unit(nu)?;
                positive("C", c)?;
            }
        }
        if let KernelChoice::Gaussian { epsilon: Some(e) } = self.kernel {
            if !(e > 0.0 && e < 1.0) {
                return Err(Error::InvalidParameter(format!("kernel accuracy must be in (0, 1), got {e}")));
            }
        }
        if matches!(self.variant, Variant::OneClass { .. }) {
            return Ok(());
        }
        let y = self.y.as_ref().ok_or_else(|| Error::InvalidParameter("this variant needs labels".into()))?;
        if y.len() != n {
            return Err(Error::Dimension { what: "labels", expected: n, found: y.len() });
        }
        if self.variant.is_classification() {
            if let Some(bad) = y.iter().find(|&&l| l != 1.0 && l != -1.0) {
                return Err(Error::InvalidParameter(format!("class labels must be ±1, got {bad}")));
            }
            let pos = y.iter().filter(|&&l| l > 0.0).count();
            let neg = n - pos;
            if pos == 0 || neg == 0 {
                return Err(Error::InvalidParameter("both classes must be present".into()));
            }
            if let Variant::NuSvc { nu } = self.variant {
                let bound = 2.0 * pos.min(neg) as f64 / n as f64;
                if nu > bound {
                    return Err(Error::Infeasible(format!("nu = {nu} exceeds the feasibility bound {bound}")));
                }
            }
        } else if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite target".into()));
        }
        Ok(())
    }
}

/// How QP coordinates map back to training points.
#[derive(Clone, Debug)]
struct Layout {
    /// Training point of each coordinate.
    point: Vec<usize>,
    /// Sign of each coordinate in `Q̂`; also the primary equality row.
    sign: DVector<f64>,
    /// Whether an all-ones second equality row is present.
    ones_row: bool,
    upper: f64,
}

fn layout(spec: &SvmSpec) -> Layout {
    let n = spec.x.nrows();
    let labels = || spec.y.clone().unwrap_or_else(|| DVector::from_element(n, 1.0));
    let stacked = || DVector::from_fn(2 * n, |r, _| if r < n { 1.0 } else { -1.0 });
    let single: Vec<usize> = (0..n).collect();
    let double: Vec<usize> = (0..2 * n).map(|r| r % n).collect();
    match spec.variant {
        Variant::HardMargin { radius } => Layout { point: single, sign: labels(), ones_row: false, upper: radius },
        Variant::CSvc { c } => Layout { point: single, sign: labels(), ones_row: false, upper: c },
        Variant::NuSvc { .. } => Layout { point: single, sign: labels(), ones_row: true, upper: 1.0 / n as f64 },
        Variant::OneClass { .. } => {
            Layout { point: single, sign: DVector::from_element(n, 1.0), ones_row: false, upper: 1.0 / n as f64 }
        }
        Variant::EpsSvr { c, .. } => Layout { point: double, sign: stacked(), ones_row: false, upper: c },
        Variant::NuSvr { c, .. } => Layout { point: double, sign: stacked(), ones_row: true, upper: c / n as f64 },
    }
}

fn linear_term(spec: &SvmSpec, lay: &Layout) -> DVector<f64> {
    let n = spec.x.nrows();
    let y = || spec.y.clone().unwrap_or_else(|| DVector::zeros(n));
    match spec.variant {
        Variant::HardMargin { .. } | Variant::CSvc { .. } => DVector::from_element(n, -1.0),
        Variant::NuSvc { .. } | Variant::OneClass { .. } => DVector::zeros(n),
        Variant::EpsSvr { tube, .. } => {
            let y = y();
            DVector::from_fn(2 * n, |r, _| tube + lay.sign[r] * y[r % n])
        }
        Variant::NuSvr { .. } => {
            let y = y();
            DVector::from_fn(2 * n, |r, _| lay.sign[r] * y[r % n])
        }
    }
}

/// Builds the QP from kernel factors `K ≈ UVᵀ` of the training points.
pub fn reduce_with_factors(spec: &SvmSpec, u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<QpInstance> {
    spec.validate()?;
    let n = spec.x.nrows();
    if u.nrows() != n || v.nrows() != n {
        return Err(Error::Dimension { what: "kernel factor rows", expected: n, found: u.nrows().min(v.nrows()) });
    }
    let lay = layout(spec);
    let dim = lay.point.len();
    let lift = |f: &DMatrix<f64>| DMatrix::from_fn(dim, f.ncols(), |r, c| lay.sign[r] * f[(lay.point[r], c)]);
    let p = linear_term(spec, &lay);
    let rows = if lay.ones_row { 2 } else { 1 };
    let mut a = DMatrix::zeros(rows, dim);
    a.row_mut(0).copy_from(&lay.sign.transpose());
    let mut b = DVector::zeros(rows);
    match spec.variant {
        Variant::OneClass { nu } => b[0] = nu,
        Variant::NuSvc { nu } => b[1] = nu,
        Variant::NuSvr { nu, c } => b[1] = c * nu,
        _ => {}
    }
    if lay.ones_row {
        a.row_mut(1).fill(1.0);
    }
    let blocks = vec![BlockDomain::interval(0.0, lay.upper)?; dim];
    QpInstance::builder(Objective::Factored { u: lift(u), v: lift(v) }, p).constraints(a, b).blocks(blocks).build()
}

/// Factors `K` for the spec's kernel at entrywise accuracy `eps`. The linear
/// kernel is exact with `U = V = X`.
pub fn kernel_factors(spec: &SvmSpec, eps: f64) -> Result<(DMatrix<f64>, DMatrix<f64>, Option<KernelFactorization>)> {
    match spec.kernel {
        KernelChoice::Linear => Ok((spec.x.clone(), spec.x.clone(), None)),
        KernelChoice::Gaussian { .. } => {
            let f = gaussian_lowrank_factor(&spec.x, eps, DEFAULT_RANK_CAP)?;
            Ok((f.u.clone(), f.v.clone(), Some(f)))
        }
    }
}

/// QP for the spec at its own kernel accuracy (`1e-6` when unset).
pub fn reduce_to_qp(spec: &SvmSpec) -> Result<QpInstance> {
    spec.validate()?;
    let eps = match spec.kernel {
        KernelChoice::Gaussian { epsilon } => epsilon.unwrap_or(1e-6),
        KernelChoice::Linear => 0.0,
    };
    let (u, v, _) = kernel_factors(spec, eps)?;
    reduce_with_factors(spec, &u, &v)
}

/// Symmetric square root of the kernel approximation restricted to
/// eigenvalues above `floor`.
fn compress(u: &DMatrix<f64>, v: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let k = u * v.transpose();
    let eig = SymmetricEigen::new(k);
    let keep: Vec<usize> = (0..eig.eigenvalues.len()).filter(|&i| eig.eigenvalues[i] > floor).collect();
    DMatrix::from_fn(u.nrows(), keep.len(), |r, c| {
        let i = keep[c];
        eig.eigenvectors[(r, i)] * eig.eigenvalues[i].sqrt()
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainOptions {
    /// Target accuracy of the dual objective.
    pub epsilon: f64,
    pub mode: Mode,
    pub backend: Backend,
    pub alpha: Option<f64>,
    pub seed: u64,
    pub delta_apx: f64,
    pub max_iterations: Option<usize>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            mode: Mode::Practical,
            backend: Backend::Dense,
            alpha: None,
            seed: 0,
            delta_apx: 0.01,
            max_iterations: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    /// Objective of the textbook form (a maximum for hard margin and C-SVC).
    pub dual_objective: f64,
    /// `|aᵀz − b|` summed over the equality rows.
    pub constraint_residual: f64,
    pub qp_epsilon: f64,
    pub kernel_epsilon: Option<f64>,
    pub kernel_degree: Option<usize>,
    pub kernel_rank: usize,
    pub solver_rank: usize,
    pub support: usize,
    pub solver: SolveReport,
}

#[derive(Clone, Debug)]
pub enum ModelKernel {
    Linear { w: DVector<f64> },
    /// Decision through the factorization; `weights = Vᵀ coef`.
    Factored { factor: Box<KernelFactorization>, points: DMatrix<f64>, weights: DVector<f64> },
    /// Exact Gaussian kernel over the stored points.
    Exact { points: DMatrix<f64> },
}

#[derive(Clone, Debug)]
pub struct SvmModel {
    pub variant: Variant,
    /// QP solution, of length `n` or `2n`.
    pub alpha: DVector<f64>,
    /// Per training point: `decision(x) = Σ coef_j K(x_j, x) − bias`.
    pub coef: DVector<f64>,
    pub bias: f64,
    pub support: Vec<usize>,
    pub kernel: ModelKernel,
}

/// Interior band below which a coefficient counts as at its bound.
fn band(upper: f64) -> f64 {
    1e-6 * upper
}

/// Recovers per-point coefficients and the bias from a QP solution.
/// `gradient` is `Q̂z + p` at the solution; `multiplier` is the solver's
/// estimate of the primary equality multiplier, used when one side of a
/// two-row problem has no interior coordinate.
pub fn recover_primal(spec: &SvmSpec, alpha: &DVector<f64>, gradient: &DVector<f64>, multiplier: Option<f64>) -> Result<(DVector<f64>, f64, Vec<usize>)> {
    let lay = layout(spec);
    let n = spec.x.nrows();
    if alpha.len() != lay.point.len() || gradient.len() != lay.point.len() {
        return Err(Error::Dimension { what: "dual coefficients", expected: lay.point.len(), found: alpha.len() });
    }
    let tau = band(lay.upper);
    let interior: Vec<usize> = (0..alpha.len()).filter(|&r| alpha[r] > tau && alpha[r] < lay.upper - tau).collect();
    let mut coef = DVector::zeros(n);
    for r in 0..alpha.len() {
        coef[lay.point[r]] += lay.sign[r] * alpha[r];
    }
    let support: Vec<usize> = (0..n).filter(|&j| (0..alpha.len()).any(|r| lay.point[r] == j && alpha[r] > tau)).collect();
    if support.is_empty() {
        return Err(Error::DegenerateModel("no coefficient is away from zero".into()));
    }
    let mean = |side: f64| {
        let g: Vec<f64> = interior.iter().filter(|&&r| lay.sign[r] == side).map(|&r| gradient[r]).collect();
        (!g.is_empty()).then(|| g.iter().sum::<f64>() / g.len() as f64)
    };
    let lambda = if lay.ones_row {
        match (mean(1.0), mean(-1.0)) {
            (Some(p), Some(m)) => Some(0.5 * (p - m)),
            _ => multiplier,
        }
    } else if interior.is_empty() {
        multiplier
    } else {
        Some(interior.iter().map(|&r| gradient[r] / lay.sign[r]).sum::<f64>() / interior.len() as f64)
    };
    let lambda = lambda.ok_or_else(|| Error::DegenerateModel("no coefficient strictly inside its box".into()))?;
    // Regression decisions carry the opposite sign of the stacked coefficients.
    let flip = if spec.variant.is_regression() { -1.0 } else { 1.0 };
    Ok((coef * flip, lambda * flip, support))
}

fn gaussian_row(points: &DMatrix<f64>, x: &[f64]) -> DVector<f64> {
    DVector::from_fn(points.nrows(), |j, _| {
        (-points.row(j).iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).exp()
    })
}

impl SvmModel {
    pub fn dim(&self) -> usize {
        match &self.kernel {
            ModelKernel::Linear { w } => w.len(),
            ModelKernel::Factored { points, .. } | ModelKernel::Exact { points } => points.ncols(),
        }
    }

    /// `(decision value, label)`; the label is the sign of the decision.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        if x.len() != self.dim() {
            return Err(Error::Dimension { what: "query point", expected: self.dim(), found: x.len() });
        }
        let raw = match &self.kernel {
            ModelKernel::Linear { w } => w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>(),
            ModelKernel::Factored { factor, points, weights } => {
                let far = (0..points.nrows()).any(|j| {
                    points.row(j).iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() > factor.radius
                });
                if far {
                    gaussian_row(points, x).dot(&self.coef)
                } else {
                    factor.rows_for(x)?.0.dot(weights)
                }
            }
            ModelKernel::Exact { points } => gaussian_row(points, x).dot(&self.coef),
        };
        let d = raw - self.bias;
        Ok((d, if d >= 0.0 { 1.0 } else { -1.0 }))
    }

    /// Plain-text dump; [`SvmModel::read_text`] reads it back with an exact
    /// kernel.
    pub fn write_text(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "svm-model 1")?;
        writeln!(w, "variant {}", self.variant)?;
        let (kind, points) = match &self.kernel {
            ModelKernel::Linear { .. } => ("linear".to_string(), None),
            ModelKernel::Factored { factor, points, .. } => {
                (format!("gaussian epsilon {:e} degree {} rank {}", factor.epsilon, factor.degree, factor.rank), Some(points))
            }
            ModelKernel::Exact { points } => ("gaussian exact".to_string(), Some(points)),
        };
        writeln!(w, "kernel {kind}")?;
        writeln!(w, "dim {}", self.dim())?;
        writeln!(w, "bias {:e}", self.bias)?;
        let join = |v: &mut dyn Iterator<Item = f64>| v.map(|a| format!("{a:e}")).collect::<Vec<_>>().join(" ");
        writeln!(w, "alpha {}", join(&mut self.alpha.iter().copied()))?;
        if let ModelKernel::Linear { w: wv } = &self.kernel {
            writeln!(w, "w {}", join(&mut wv.iter().copied()))?;
        }
        writeln!(w, "support {}", self.support.len())?;
        for &j in &self.support {
            let row = points.map(|p| join(&mut p.row(j).iter().copied())).unwrap_or_default();
            writeln!(w, "{} {:e} {}", j, self.coef[j], row)?;
        }
        Ok(())
    }

    /// Reads a dump. Gaussian models come back with an exact kernel over the
    /// support points.
    pub fn read_text(r: impl BufRead) -> Result<Self> {
        let lines: Vec<String> = r.lines().collect::<std::io::Result<_>>()?;
        let mut it = lines.iter().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut next = |key: &str| -> Result<(usize, Vec<String>)> {
            let (no, line) = it.next().ok_or(Error::Parse { line: 0, msg: format!("missing '{key}' line") })?;
            let mut toks = line.split_whitespace().map(str::to_string);
            match toks.next() {
                Some(k) if k == key => Ok((no, toks.collect())),
                _ => Err(Error::Parse { line: no, msg: format!("expected '{key}'") }),
            }
        };
        let num = |no: usize, s: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| Error::Parse { line: no, msg: format!("bad number '{s}'") })
        };
        let (no, head) = next("svm-model")?;
        if head != ["1"] {
            return Err(Error::Parse { line: no, msg: "unsupported model version".into() });
        }
        let (no, v) = next("variant")?;
        let field = |name: &str| -> Result<f64> {
            let i = v.iter().position(|t| t == name).ok_or(Error::Parse { line: no, msg: format!("missing {name}") })?;
            num(no, v.get(i + 1).map(String::as_str).unwrap_or(""))
        };
        let variant = match v.first().map(String::as_str) {
            Some("hard") => Variant::HardMargin { radius: field("radius")? },
            Some("c-svc") => Variant::CSvc { c: field("C")? },
            Some("nu-svc") => Variant::NuSvc { nu: field("nu")? },
            Some("one-class") => Variant::OneClass { nu: field("nu")? },
            Some("eps-svr") => Variant::EpsSvr { tube: field("epsilon")?, c: field("C")? },
            Some("nu-svr") => Variant::NuSvr { nu: field("nu")?, c: field("C")? },
            _ => return Err(Error::Parse { line: no, msg: "unknown variant".into() }),
        };
        let (no, kern) = next("kernel")?;
        let linear = match kern.first().map(String::as_str) {
            Some("linear") => true,
            Some("gaussian") => false,
            _ => return Err(Error::Parse { line: no, msg: "unknown kernel".into() }),
        };
        let (no, d) = next("dim")?;
        let dim = d.first().and_then(|s| s.parse::<usize>().ok()).ok_or(Error::Parse { line: no, msg: "bad dim".into() })?;
        let (no, b) = next("bias")?;
        let bias = num(no, b.first().map(String::as_str).unwrap_or(""))?;
        let (no, a) = next("alpha")?;
        let alpha = DVector::from_vec(a.iter().map(|s| num(no, s)).collect::<Result<_>>()?);
        let w = if linear {
            let (no, w) = next("w")?;
            let w = DVector::from_vec(w.iter().map(|s| num(no, s)).collect::<Result<Vec<_>>>()?);
            if w.len() != dim {
                return Err(Error::Parse { line: no, msg: "weight length differs from dim".into() });
            }
            Some(w)
        } else {
            None
        };
        let (no, s) = next("support")?;
        let count = s.first().and_then(|s| s.parse::<usize>().ok()).ok_or(Error::Parse { line: no, msg: "bad count".into() })?;
        let mut support = Vec::with_capacity(count);
        let mut coefs = Vec::with_capacity(count);
        let mut rows = Vec::with_capacity(count * dim);
        for _ in 0..count {
            let (no, line) = it.next().ok_or(Error::Parse { line: 0, msg: "truncated support list".into() })?;
            let toks: Vec<&str> = line.split_whitespace().collect();
            let want = if linear { 2 } else { 2 + dim };
            if toks.len() != want {
                return Err(Error::Parse { line: no, msg: format!("expected {want} fields, found {}", toks.len()) });
            }
            support.push(toks[0].parse::<usize>().map_err(|_| Error::Parse { line: no, msg: "bad index".into() })?);
            coefs.push(num(no, toks[1])?);
            for t in &toks[2..] {
                rows.push(num(no, t)?);
            }
        }
        let kernel = match w {
            Some(w) => ModelKernel::Linear { w },
            None => ModelKernel::Exact { points: DMatrix::from_row_slice(count, dim, &rows) },
        };
        let (coef, support) = match &kernel {
            ModelKernel::Linear { .. } => {
                let n = support.iter().map(|j| j + 1).max().unwrap_or(0);
                let mut c = DVector::zeros(n);
                for (&j, &v) in support.iter().zip(&coefs) {
                    c[j] = v;
                }
                (c, support)
            }
            _ => (DVector::from_vec(coefs), support),
        };
        Ok(SvmModel { variant, alpha, coef, bias, support, kernel })
    }
}

/// Dual objective of the textbook form at `alpha` with the exact kernel
/// `k` (`n × n`).
pub fn dual_objective(spec: &SvmSpec, k: &DMatrix<f64>, alpha: &DVector<f64>) -> Result<f64> {
    let lay = layout(spec);
    if alpha.len() != lay.point.len() {
        return Err(Error::Dimension { what: "dual coefficients", expected: lay.point.len(), found: alpha.len() });
    }
    let n = spec.x.nrows();
    let mut beta = DVector::zeros(n);
    for r in 0..alpha.len() {
        beta[lay.point[r]] += lay.sign[r] * alpha[r];
    }
    let val = 0.5 * beta.dot(&(k * &beta)) + linear_term(spec, &lay).dot(alpha);
    Ok(if spec.variant.negated() { -val } else { val })
}

/// Exact kernel matrix of the training points for the spec's kernel.
pub fn exact_kernel(spec: &SvmSpec) -> Result<DMatrix<f64>> {
    match spec.kernel {
        KernelChoice::Linear => Ok(&spec.x * spec.x.transpose()),
        KernelChoice::Gaussian { .. } => exact_gaussian_kernel(&spec.x),
    }
}

/// Reference QP with the exact kernel as a dense objective.
pub fn exact_qp(spec: &SvmSpec) -> Result<QpInstance> {
    spec.validate()?;
    let k = exact_kernel(spec)?;
    let lay = layout(spec);
    let dim = lay.point.len();
    let q = DMatrix::from_fn(dim, dim, |r, c| lay.sign[r] * lay.sign[c] * k[(lay.point[r], lay.point[c])]);
    let approx = reduce_with_factors(spec, &DMatrix::zeros(spec.x.nrows(), 1), &DMatrix::zeros(spec.x.nrows(), 1))?;
    QpInstance::builder(Objective::Dense(q), approx.c().clone())
        .constraints(approx.a().clone(), approx.b().clone())
        .blocks(approx.blocks().to_vec())
        .build()
}

/// The QP `train` solves for accuracy `epsilon`, with the kernel
/// factorization and entry accuracy used (Gaussian kernel only).
pub fn training_instance(spec: &SvmSpec, epsilon: f64) -> Result<(QpInstance, Option<KernelFactorization>, Option<f64>)> {
    spec.validate()?;
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
    }
    let n = spec.x.nrows();
    let lay = layout(spec);
    let outer_sq = lay.point.len() as f64 * lay.upper * lay.upper;
    let (u, v, factor, kernel_eps) = match spec.kernel {
        KernelChoice::Linear => (spec.x.clone(), spec.x.clone(), None, None),
        KernelChoice::Gaussian { epsilon: fixed } => {
            // |zᵀ(Q̂ − Q̃)z| ≤ ε₁·n·‖z‖² ≤ ε₁·n·R², split between the
            // polynomial and the eigenvalue floor.
            let eps1 = fixed.unwrap_or((epsilon / (4.0 * n as f64 * outer_sq)).min(0.1));
            let f = gaussian_lowrank_factor(&spec.x, eps1, DEFAULT_RANK_CAP)?;
            let (u, v) = if f.rank >= n {
                let g = compress(&f.u, &f.v, eps1);
                (g.clone(), g)
            } else {
                (f.u.clone(), f.v.clone())
            };
            (u, v, Some(f), Some(eps1))
        }
    };
    Ok((reduce_with_factors(spec, &u, &v)?, factor, kernel_eps))
}

/// Everything a training run produced.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: SvmModel,
    pub report: TrainReport,
    pub instance: QpInstance,
    pub solution: Solution,
}

/// Trains to dual-objective accuracy `opts.epsilon`. Half of the budget goes
/// to the solver and half to the kernel approximation.
pub fn train(spec: &SvmSpec, opts: &TrainOptions) -> Result<(SvmModel, TrainReport)> {
    let out = train_detailed(spec, opts)?;
    Ok((out.model, out.report))
}

pub fn train_detailed(spec: &SvmSpec, opts: &TrainOptions) -> Result<TrainOutcome> {
    let (inst, factor, kernel_eps) = training_instance(spec, opts.epsilon)?;
    let lay = layout(spec);
    let radii = inst.radii();
    let qp_eps = (0.5 * opts.epsilon / (radii.lipschitz * radii.outer * (radii.outer + 1.0))).min(0.5);
    let sol = solve(
        &inst,
        &SolverOptions {
            epsilon: qp_eps,
            mode: opts.mode,
            backend: opts.backend,
            alpha: opts.alpha,
            max_iterations: opts.max_iterations,
            seed: opts.seed,
            delta_apx: opts.delta_apx,
        },
    )?;
    let alpha = sol.x.map(|a| a.clamp(0.0, lay.upper));
    let gradient = inst.objective().apply(&alpha) + inst.c();
    let (coef, bias, support) = recover_primal(spec, &alpha, &gradient, sol.y.get(0).copied())?;
    let kernel = match &factor {
        None => ModelKernel::Linear { w: spec.x.transpose() * &coef },
        Some(f) => ModelKernel::Factored {
            factor: Box::new(f.clone()),
            points: spec.x.clone(),
            weights: f.v.transpose() * &coef,
        },
    };
    let constraint_residual = (inst.a() * &alpha - inst.b()).abs().sum();
    let qp_value = 0.5 * alpha.dot(&inst.objective().apply(&alpha)) + inst.c().dot(&alpha);
    let report = TrainReport {
        dual_objective: if spec.variant.negated() { -qp_value } else { qp_value },
        constraint_residual,
        qp_epsilon: qp_eps,
        kernel_epsilon: kernel_eps,
        kernel_degree: factor.as_ref().map(|f| f.degree),
        kernel_rank: factor.as_ref().map_or(spec.x.ncols(), |f| f.rank),
        solver_rank: inst.objective().rank().unwrap_or(0),
        support: support.len(),
        solver: sol.report.clone(),
    };
    let model = SvmModel { variant: spec.variant, alpha, coef, bias, support, kernel };
    Ok(TrainOutcome { model, report, instance: inst, solution: sol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::dense_solve_qp;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_point(variant: Variant, kernel: KernelChoice) -> SvmSpec {
        SvmSpec {
            x: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]),
            y: Some(DVector::from_vec(vec![1.0, -1.0])),
            variant,
            kernel,
        }
    }

    fn blobs(rng: &mut ChaCha8Rng, n: usize, d: usize, sep: f64) -> SvmSpec {
        let y = DVector::from_fn(n, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });
        let x = DMatrix::from_fn(n, d, |i, j| {
            let centre = if j == 0 { sep * y[i] } else { 0.0 };
            centre + rng.random_range(-0.3..0.3)
        });
        SvmSpec { x, y: Some(y), variant: Variant::CSvc { c: 1.0 }, kernel: KernelChoice::Linear }
    }

    #[test]
    fn reductions_have_the_right_shape() {
        let s = two_point(Variant::HardMargin { radius: 10.0 }, KernelChoice::Linear);
        let q = reduce_to_qp(&s).unwrap();
        assert_eq!((q.n(), q.m()), (2, 1));
        assert_eq!(q.a().row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, -1.0]);
        assert!(q.blocks().iter().all(|b| b.lo() == 0.0 && b.hi() == 10.0));
        assert_eq!(q.objective().to_dense(), DMatrix::from_element(2, 2, 1.0));
        assert_eq!(q.c(), &DVector::from_element(2, -1.0));

        let mut s = two_point(Variant::NuSvc { nu: 0.5 }, KernelChoice::Linear);
        let q = reduce_to_qp(&s).unwrap();
        assert_eq!(q.m(), 2);
        assert_eq!(q.b(), &DVector::from_vec(vec![0.0, 0.5]));
        assert!(q.blocks().iter().all(|b| b.hi() == 0.5));
        assert_eq!(q.c(), &DVector::zeros(2));

        s.x = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0]);
        s.y = Some(DVector::from_vec(vec![0.5, -1.0, 2.0]));
        s.variant = Variant::EpsSvr { tube: 0.1, c: 2.0 };
        let q = reduce_to_qp(&s).unwrap();
        assert_eq!((q.n(), q.m()), (6, 1));
        assert_eq!(q.a().row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 1.0, 1.0, -1.0, -1.0, -1.0]);
        let want_c = [0.6, -0.9, 2.1, -0.4, 1.1, -1.9];
        for (a, b) in q.c().iter().zip(want_c) {
            assert_relative_eq!(*a, b, epsilon = 1e-15);
        }
        let k = &s.x * s.x.transpose();
        let qd = q.objective().to_dense();
        assert_eq!(qd.view((0, 0), (3, 3)), k);
        assert_eq!(qd.view((0, 3), (3, 3)), -&k);
        assert_eq!(qd.view((3, 3), (3, 3)), k);

        s.variant = Variant::NuSvr { nu: 0.5, c: 3.0 };
        let q = reduce_to_qp(&s).unwrap();
        assert_eq!((q.n(), q.m()), (6, 2));
        assert_eq!(q.b(), &DVector::from_vec(vec![0.0, 1.5]));
        assert!(q.blocks().iter().all(|b| b.hi() == 1.0));

        s.variant = Variant::OneClass { nu: 0.5 };
        s.y = None;
        let q = reduce_to_qp(&s).unwrap();
        assert_eq!((q.n(), q.m()), (3, 1));
        assert_eq!(q.a().row(0).iter().copied().collect::<Vec<_>>(), vec![1.0; 3]);
        assert_eq!(q.b()[0], 0.5);
    }

    #[test]
    fn validation_errors() {
        let s = two_point(Variant::NuSvc { nu: 1.0 }, KernelChoice::Linear);
        assert!(s.validate().is_ok());
        let mut s = blobs(&mut ChaCha8Rng::seed_from_u64(0), 10, 2, 1.0);
        s.y.as_mut().unwrap().iter_mut().skip(2).for_each(|v| *v = 1.0);
        s.variant = Variant::NuSvc { nu: 0.5 };
        assert!(matches!(s.validate(), Err(Error::Infeasible(_))));
        s.variant = Variant::CSvc { c: -1.0 };
        assert!(s.validate().is_err());
        s.variant = Variant::CSvc { c: 1.0 };
        s.y = None;
        assert!(s.validate().is_err());
        s.variant = Variant::OneClass { nu: 0.3 };
        assert!(s.validate().is_ok());
        s.variant = Variant::OneClass { nu: 1.5 };
        assert!(s.validate().is_err());
    }

    #[test]
    fn two_point_hard_margin() {
        let s = two_point(Variant::HardMargin { radius: 10.0 }, KernelChoice::Linear);
        let (m, r) = train(&s, &TrainOptions { epsilon: 1e-9, ..Default::default() }).unwrap();
        assert!((m.alpha[0] - 0.5).abs() < 1e-4 && (m.alpha[1] - 0.5).abs() < 1e-4, "{}", m.alpha);
        let ModelKernel::Linear { w } = &m.kernel else { panic!() };
        assert!((w[0] - 1.0).abs() < 1e-4 && w[1].abs() < 1e-12);
        assert!(m.bias.abs() < 1e-4);
        assert!((r.dual_objective - 0.5).abs() < 1e-4);
        let (d, l) = m.predict(&[1.0, 0.0]).unwrap();
        assert!(d >= 1.0 - 1e-3 && l == 1.0);
    }

    #[test]
    fn two_point_gaussian_separates() {
        let s = two_point(Variant::CSvc { c: 1.0 }, KernelChoice::Gaussian { epsilon: None });
        let (m, _) = train(&s, &TrainOptions { epsilon: 1e-4, ..Default::default() }).unwrap();
        assert_eq!(m.predict(&[1.0, 0.0]).unwrap().1, 1.0);
        assert_eq!(m.predict(&[-1.0, 0.0]).unwrap().1, -1.0);
    }

    #[test]
    fn linear_csvc_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = blobs(&mut rng, 30, 3, 0.4);
        let (m, r) = train(&s, &TrainOptions { epsilon: 1e-4, ..Default::default() }).unwrap();
        let o = dense_solve_qp(&exact_qp(&s).unwrap(), 1e-10).unwrap();
        let k = exact_kernel(&s).unwrap();
        let best = dual_objective(&s, &k, &o.x).unwrap();
        assert_relative_eq!(r.dual_objective, dual_objective(&s, &k, &m.alpha).unwrap(), epsilon = 1e-9);
        assert!((r.dual_objective - best).abs() <= 1e-4, "{} vs {best}", r.dual_objective);
        assert!(r.constraint_residual <= 3e-4);
        assert!(m.alpha.iter().all(|&a| (0.0..=1.0).contains(&a)));
        let acc = (0..30).filter(|&i| m.predict(s.x.row(i).transpose().as_slice()).unwrap().1 == s.y.as_ref().unwrap()[i]).count();
        assert!(acc >= 29);
    }

    #[test]
    fn every_variant_trains() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let base = blobs(&mut rng, 16, 2, 0.6);
        let targets = DVector::from_fn(16, |i, _| base.x[(i, 0)] * 2.0 + 0.1);
        let cases = [
            (Variant::CSvc { c: 1.0 }, base.y.clone()),
            (Variant::NuSvc { nu: 0.4 }, base.y.clone()),
            (Variant::OneClass { nu: 0.5 }, None),
            (Variant::EpsSvr { tube: 0.05, c: 10.0 }, Some(targets.clone())),
            (Variant::NuSvr { nu: 0.5, c: 10.0 }, Some(targets.clone())),
        ];
        for (variant, y) in cases {
            let s = SvmSpec { x: base.x.clone(), y, variant, kernel: KernelChoice::Linear };
            let (m, r) = train(&s, &TrainOptions { epsilon: 1e-5, ..Default::default() }).unwrap();
            let o = dense_solve_qp(&exact_qp(&s).unwrap(), 1e-10).unwrap();
            let k = exact_kernel(&s).unwrap();
            let best = dual_objective(&s, &k, &o.x).unwrap();
            assert!((r.dual_objective - best).abs() <= 1e-5 * (1.0 + best.abs()), "{variant}: {} vs {best}", r.dual_objective);
            if variant.is_regression() {
                let err: f64 = (0..16).map(|i| (m.predict(s.x.row(i).transpose().as_slice()).unwrap().0 - targets[i]).abs()).fold(0.0, f64::max);
                assert!(err < 0.3, "{variant}: max regression error {err}");
            }
            if variant.is_classification() {
                let y = s.y.as_ref().unwrap();
                let acc = (0..16).filter(|&i| m.predict(s.x.row(i).transpose().as_slice()).unwrap().1 == y[i]).count();
                assert!(acc >= 15, "{variant}: accuracy {acc}/16");
            }
        }
    }

    #[test]
    fn zero_alpha_is_degenerate() {
        let s = two_point(Variant::CSvc { c: 1.0 }, KernelChoice::Linear);
        let z = DVector::zeros(2);
        assert!(matches!(recover_primal(&s, &z, &z, None), Err(Error::DegenerateModel(_))));
    }

    #[test]
    fn mirrored_data_has_no_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let half = DMatrix::from_fn(8, 2, |_, j| if j == 0 { rng.random_range(0.3..1.0) } else { rng.random_range(-1.0..1.0) });
        let x = DMatrix::from_fn(16, 2, |i, j| if i < 8 { half[(i, j)] } else { -half[(i - 8, j)] });
        let y = DVector::from_fn(16, |i, _| if i < 8 { 1.0 } else { -1.0 });
        let s = SvmSpec { x, y: Some(y), variant: Variant::CSvc { c: 1.0 }, kernel: KernelChoice::Linear };
        let (m, _) = train(&s, &TrainOptions { epsilon: 1e-5, ..Default::default() }).unwrap();
        assert!(m.bias.abs() < 1e-3, "{}", m.bias);
    }

    #[test]
    fn label_flip_negates_decision() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = blobs(&mut rng, 12, 2, 0.3);
        let mut f = s.clone();
        f.y = Some(-s.y.clone().unwrap());
        let o = TrainOptions { epsilon: 1e-5, ..Default::default() };
        let (a, _) = train(&s, &o).unwrap();
        let (b, _) = train(&f, &o).unwrap();
        for q in [[0.1, 0.2], [-1.0, 0.5], [2.0, -1.0]] {
            let (da, db) = (a.predict(&q).unwrap().0, b.predict(&q).unwrap().0);
            assert!((da + db).abs() < 1e-3, "{da} {db}");
        }
        assert!(a.predict(&[1.0]).is_err());
    }

    #[test]
    fn factored_prediction_tracks_exact_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut s = blobs(&mut rng, 20, 2, 0.5);
        s.kernel = KernelChoice::Gaussian { epsilon: Some(1e-7) };
        let (m, _) = train(&s, &TrainOptions { epsilon: 1e-3, ..Default::default() }).unwrap();
        let exact = SvmModel { kernel: ModelKernel::Exact { points: s.x.clone() }, ..m.clone() };
        let bound = 20.0 * 1e-7 * m.coef.abs().sum();
        for _ in 0..10 {
            let q = [rng.random_range(-0.8..0.8), rng.random_range(-0.5..0.5)];
            let diff = (m.predict(&q).unwrap().0 - exact.predict(&q).unwrap().0).abs();
            assert!(diff <= bound, "{diff} > {bound}");
        }
    }

    #[test]
    fn model_dump_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut s = blobs(&mut rng, 10, 2, 0.5);
        for kernel in [KernelChoice::Linear, KernelChoice::Gaussian { epsilon: Some(1e-6) }] {
            s.kernel = kernel;
            let (m, _) = train(&s, &TrainOptions { epsilon: 1e-3, ..Default::default() }).unwrap();
            let mut buf = Vec::new();
            m.write_text(&mut buf).unwrap();
            let back = SvmModel::read_text(&buf[..]).unwrap();
            assert_eq!(back.variant, m.variant);
            assert_eq!(back.support, m.support);
            assert_eq!(back.bias, m.bias);
            for q in [[0.2, 0.1], [-0.4, 0.3]] {
                let (a, b) = (m.predict(&q).unwrap().0, back.predict(&q).unwrap().0);
                assert!((a - b).abs() < 1e-5, "{a} {b}");
            }
        }
        assert!(matches!(SvmModel::read_text(&b"svm-model 2\n"[..]), Err(Error::Parse { line: 1, .. })));
    }
}
