//! The robust path-following loop: coordinate errors, the soft-max potential,
//! the step direction, the Newton step and the outer solve.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::barrier::BlockDomain;
use crate::error::{Error, Result};
use crate::linalg::{solve_shifted, solve_small, Woodbury};
use crate::maintenance::LowRankMaintainer;
use crate::model::{augment_for_initial_point, Objective, QpInstance, Restriction};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// The published constants; step sizes are tiny and runs are long.
    Theory,
    /// Larger steps with an adaptive schedule and a potential guard.
    #[default]
    Practical,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Forms `Q + tH` and recomputes the approximate pair exactly every step.
    #[default]
    Dense,
    /// Implicit low-rank representation plus sketch-driven approximate pair.
    LowRank,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IpmParams {
    pub lambda: f64,
    /// Drift tolerance for the approximate pair.
    pub eps_bar: f64,
    pub alpha: f64,
    pub eps_t: f64,
    /// Initial (theory: fixed) step on `t`.
    pub h: f64,
    pub h_max: f64,
    pub t_start: f64,
    pub t_end: f64,
    /// Potential guard.
    pub phi_max: f64,
    pub mode: Mode,
    pub max_iterations: usize,
}

impl IpmParams {
    /// Constants exactly as in the analysis, for the program being centered.
    pub fn theory(inst: &QpInstance, eps: f64) -> Self {
        let n = inst.n() as f64;
        let w = inst.weights();
        let lambda = 64.0 * (256.0 * n * w.sum()).ln();
        let eps_bar = 1.0 / (1440.0 * lambda);
        let alpha = eps_bar / 2.0;
        let h = alpha / (64.0 * inst.kappa().sqrt());
        Self {
            lambda,
            eps_bar,
            alpha,
            eps_t: eps_bar / 4.0 * min_ratio(inst),
            h,
            h_max: h,
            t_start: 1.0,
            t_end: eps * eps / (4.0 * inst.kappa()),
            phi_max: (lambda / 64.0).cosh(),
            mode: Mode::Theory,
            max_iterations: usize::MAX,
        }
    }

    /// Practical constants: a smaller `λ`, `α = 1/(8λ)` unless overridden,
    /// and an adaptive step on `t`.
    pub fn practical(inst: &QpInstance, eps: f64, alpha: Option<f64>) -> Self {
        let n = inst.n() as f64;
        let lambda = 16.0 * (16.0 * n).ln();
        let alpha = alpha.unwrap_or(1.0 / (8.0 * lambda));
        let eps_bar = 2.0 * alpha;
        let h = 0.5 / inst.kappa().sqrt();
        Self {
            lambda,
            eps_bar,
            alpha,
            eps_t: eps_bar / 4.0 * min_ratio(inst),
            h,
            h_max: h,
            t_start: 1.0,
            t_end: eps * eps / (4.0 * inst.kappa()),
            phi_max: n * (lambda / 16.0).cosh(),
            mode: Mode::Practical,
            max_iterations: 1_000_000,
        }
    }
}

fn min_ratio(inst: &QpInstance) -> f64 {
    inst.blocks()
        .iter()
        .zip(inst.weights().iter())
        .map(|(b, w)| w / (w + b.nu()))
        .fold(f64::INFINITY, f64::min)
}

/// `μ_i = s_i/t + w_i ∇φ_i(x_i)` and `γ_i = ‖μ_i‖*_{x_i}`.
pub fn error_terms(
    blocks: &[BlockDomain],
    weights: &DVector<f64>,
    x: &DVector<f64>,
    s: &DVector<f64>,
    t: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = blocks.len();
    let mut mu = DVector::zeros(n);
    let mut gamma = DVector::zeros(n);
    for i in 0..n {
        let (_, g, h) = blocks[i].eval(i, x[i])?;
        mu[i] = s[i] / t + weights[i] * g;
        gamma[i] = mu[i].abs() / h.sqrt();
    }
    Ok((mu, gamma))
}

fn ln_cosh(z: f64) -> f64 {
    let a = z.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

fn log_sum_exp(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `ln Φ`, finite even where `Φ` itself overflows.
pub fn log_potential(gamma: &DVector<f64>, lambda: f64, w: &DVector<f64>) -> f64 {
    log_sum_exp(gamma.iter().zip(w.iter()).map(|(g, wi)| ln_cosh(lambda * g / wi)))
}

/// `Φ = Σ cosh(λ γ_i / w_i)`.
pub fn potential(gamma: &DVector<f64>, lambda: f64, w: &DVector<f64>) -> f64 {
    if gamma.iter().zip(w.iter()).all(|(g, wi)| lambda * g / wi <= 700.0) {
        gamma.iter().zip(w.iter()).map(|(g, wi)| (lambda * g / wi).cosh()).sum()
    } else {
        log_potential(gamma, lambda, w).exp()
    }
}

#[derive(Clone, Debug)]
pub struct StepVectors {
    pub mu: DVector<f64>,
    pub gamma: DVector<f64>,
    pub c_coef: DVector<f64>,
    pub delta_mu: DVector<f64>,
    pub phi: f64,
    /// `Σ w_j⁻¹ cosh²(λ γ_j / w_j)`.
    pub alpha_bar: f64,
}

/// `sinh(λγ/w)/γ · μ`, the unnormalized direction entry, with its `γ → 0` limit.
pub(crate) fn raw_direction(mu: f64, gamma: f64, w: f64, lambda: f64) -> f64 {
    let z = lambda * gamma / w;
    if z < 1e-8 {
        lambda / w * mu
    } else {
        z.sinh() / gamma * mu
    }
}

pub(crate) fn alpha_bar_term(gamma: f64, w: f64, lambda: f64) -> f64 {
    (lambda * gamma / w).cosh().powi(2) / w
}

/// `δ_μ,i = −α c_i μ_i`.
pub fn step_direction(mu: DVector<f64>, gamma: DVector<f64>, lambda: f64, alpha: f64, w: &DVector<f64>) -> StepVectors {
    let n = mu.len();
    // ln √(Σ w⁻¹ cosh²)
    let ln_den = 0.5 * log_sum_exp(gamma.iter().zip(w.iter()).map(|(g, wi)| 2.0 * ln_cosh(lambda * g / wi) - wi.ln()));
    let mut c_coef = DVector::zeros(n);
    for i in 0..n {
        let z = lambda * gamma[i] / w[i];
        c_coef[i] = if z < 1e-8 {
            (lambda / w[i]) * (-ln_den).exp()
        } else {
            let ln_sinh = z + (-(-2.0 * z).exp()).ln_1p() - std::f64::consts::LN_2;
            (ln_sinh - ln_den).exp() / gamma[i]
        };
    }
    let delta_mu = -alpha * c_coef.component_mul(&mu);
    let phi = potential(&gamma, lambda, w);
    StepVectors { mu, gamma, c_coef, delta_mu, phi, alpha_bar: (2.0 * ln_den).exp() }
}

#[derive(Clone, Debug)]
pub struct Step {
    pub dx: DVector<f64>,
    pub ds: DVector<f64>,
    pub dy: DVector<f64>,
}

fn finish_step(a: &DMatrix<f64>, hw: &DVector<f64>, t: f64, dmu: &DVector<f64>, z: DVector<f64>, w: DMatrix<f64>) -> Result<Step> {
    let m = a.nrows();
    let (dx, dy) = if m == 0 {
        (z * t, DVector::zeros(0))
    } else {
        let schur = a * &w;
        let rhs = a * &z;
        let dy = -solve_small(&schur, &DMatrix::from_column_slice(m, 1, rhs.as_slice()), "A B⁻¹ Aᵀ")?.column(0) * t;
        (z * t + &w * &dy, dy)
    };
    let ds = (dmu - hw.component_mul(&dx)) * t;
    Ok(Step { dx, ds, dy })
}

/// Newton step with a dense `Q`.
pub fn dense_step(q: &DMatrix<f64>, a: &DMatrix<f64>, hw: &DVector<f64>, t: f64, dmu: &DVector<f64>) -> Result<Step> {
    let n = hw.len();
    let mut rhs = DMatrix::zeros(n, 1 + a.nrows());
    rhs.set_column(0, dmu);
    rhs.columns_mut(1, a.nrows()).copy_from(&a.transpose());
    let sol = solve_shifted(q, &(hw * t), &rhs)?;
    let z = sol.column(0).into_owned();
    let w = sol.columns(1, a.nrows()).into_owned();
    finish_step(a, hw, t, dmu, z, w)
}

/// Newton step with `Q = U Vᵀ`, never forming an `n × n` matrix.
pub fn woodbury_step(
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    a: &DMatrix<f64>,
    hw: &DVector<f64>,
    t: f64,
    dmu: &DVector<f64>,
) -> Result<Step> {
    let n = hw.len();
    let hwt = hw * t;
    let mut rhs = DMatrix::zeros(n, 1 + a.nrows());
    rhs.set_column(0, dmu);
    rhs.columns_mut(1, a.nrows()).copy_from(&a.transpose());
    let sol = Woodbury::new(&hwt, u, v, 1.0).apply(&rhs)?;
    let z = sol.column(0).into_owned();
    let w = sol.columns(1, a.nrows()).into_owned();
    finish_step(a, hw, t, dmu, z, w)
}

/// Step `(δ_x, δ_s, δ_y)` for direction `δ_μ` at weighted Hessian `hw` and
/// path parameter `t`.
pub fn central_path_step(inst: &QpInstance, hw: &DVector<f64>, t: f64, dmu: &DVector<f64>, backend: Backend) -> Result<Step> {
    match (inst.objective(), backend) {
        (Objective::Factored { u, v }, Backend::LowRank) => woodbury_step(u, v, inst.a(), hw, t, dmu),
        (obj, _) => dense_step(&obj.to_dense(), inst.a(), hw, t, dmu),
    }
}

/// `(‖A δ_x‖, ‖δ_s − Q δ_x + Aᵀ δ_y‖)`.
pub fn certify_step(inst: &QpInstance, step: &Step) -> (f64, f64) {
    let ra = (inst.a() * &step.dx).norm();
    let rd = (&step.ds - inst.objective().apply(&step.dx) + inst.a().transpose() * &step.dy).norm();
    (ra, rd)
}

#[derive(Clone, Debug, Default)]
pub struct AdvanceInfo {
    /// `‖δ_μ‖*_{w,x̄}`
    pub delta_mu_norm: f64,
    /// `‖δ_x‖_{w,x̄}`
    pub dx_norm: f64,
    /// `‖δ_s‖*_{w,x̄}`
    pub ds_norm: f64,
    /// Fraction of the step actually taken.
    pub scale: f64,
}

/// Holds the exact pair and the approximate pair the step is computed from.
pub trait PathMaintainer {
    /// Moves the exact pair by the step computed at the approximate pair.
    fn advance(&mut self, params: &IpmParams) -> Result<AdvanceInfo>;
    /// Informs the maintainer of the new path parameter and refreshes the
    /// approximate pair.
    fn retarget(&mut self, t: f64, params: &IpmParams) -> Result<()>;
    /// Exact `(x, s, y)`.
    fn exact(&mut self) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)>;
    /// Number of approximate-pair entries refreshed so far.
    fn refreshes(&self) -> usize {
        0
    }
}

/// Keeps the approximate pair equal to the exact pair. A factored objective
/// is still solved through Woodbury; a dense one through `Q + tH`.
pub struct DenseMaintainer<'a> {
    inst: &'a QpInstance,
    q: Option<DMatrix<f64>>,
    x: DVector<f64>,
    s: DVector<f64>,
    y: DVector<f64>,
    t: f64,
}

impl<'a> DenseMaintainer<'a> {
    pub fn new(inst: &'a QpInstance, x: DVector<f64>, s: DVector<f64>, t: f64) -> Self {
        let q = match inst.objective() {
            Objective::Dense(q) => Some(q.clone()),
            Objective::Factored { .. } => None,
        };
        Self { q, inst, x, s, y: DVector::zeros(inst.m()), t }
    }
}

impl PathMaintainer for DenseMaintainer<'_> {
    fn advance(&mut self, params: &IpmParams) -> Result<AdvanceInfo> {
        let inst = self.inst;
        let metric = inst.metric(&self.x)?;
        let (mu, gamma) = error_terms(inst.blocks(), inst.weights(), &self.x, &self.s, self.t)?;
        let sv = step_direction(mu, gamma, params.lambda, params.alpha, inst.weights());
        let hw = metric.weighted_hess();
        let step = match (&self.q, inst.objective()) {
            (None, Objective::Factored { u, v }) => woodbury_step(u, v, inst.a(), &hw, self.t, &sv.delta_mu)?,
            (Some(q), _) => dense_step(q, inst.a(), &hw, self.t, &sv.delta_mu)?,
            (None, obj) => dense_step(&obj.to_dense(), inst.a(), &hw, self.t, &sv.delta_mu)?,
        };
        let mut scale = 1.0f64;
        for (i, blk) in inst.blocks().iter().enumerate() {
            scale = scale.min(blk.max_step(self.x[i], step.dx[i], 0.9));
        }
        if scale < 1.0 && params.mode == Mode::Theory {
            return Err(Error::InvariantViolation("step leaves the domain".into()));
        }
        self.x += &step.dx * scale;
        self.s += &step.ds * scale;
        self.y += &step.dy * scale;
        Ok(AdvanceInfo {
            delta_mu_norm: metric.weighted_dual_norm(&sv.delta_mu),
            dx_norm: metric.weighted_norm(&step.dx),
            ds_norm: metric.weighted_dual_norm(&step.ds),
            scale,
        })
    }

    fn retarget(&mut self, t: f64, _: &IpmParams) -> Result<()> {
        self.t = t;
        Ok(())
    }

    fn exact(&mut self) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
        Ok((self.x.clone(), self.s.clone(), self.y.clone()))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Path parameter after the step.
    pub t: f64,
    pub h: f64,
    /// Potential at the exact pair and the new `t`.
    pub phi: f64,
    pub delta_mu_norm: f64,
    pub dx_norm: f64,
    pub ds_norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// `t` reached `t_end`.
    PathEnd,
    /// The duality-gap certificate met its target first.
    GapCertified,
}

#[derive(Clone, Debug)]
pub struct CenteringOutcome {
    pub x: DVector<f64>,
    pub s: DVector<f64>,
    pub y: DVector<f64>,
    pub t: f64,
    pub iterations: usize,
    pub max_phi: f64,
    pub stop: StopReason,
}

/// Follows the path from `params.t_start` down to `params.t_end`. In practical
/// mode the loop also stops once the gap bound drops to `gap_target`.
pub fn centering(
    inst: &QpInstance,
    maint: &mut dyn PathMaintainer,
    params: &IpmParams,
    gap_target: Option<f64>,
    mut observer: Option<&mut dyn FnMut(&IterationRecord)>,
) -> Result<CenteringOutcome> {
    let mut t = params.t_start;
    let mut h = params.h;
    let mut iter = 0usize;
    let mut stalled = 0usize;
    let mut max_phi = 0.0f64;
    let mut stop = StopReason::PathEnd;
    let w = inst.weights();
    while t > params.t_end {
        if iter >= params.max_iterations {
            return Err(Error::IterationLimit(params.max_iterations));
        }
        let info = maint.advance(params)?;
        let (x, s, y) = maint.exact()?;
        let phi_at = |tn: f64| -> Result<f64> {
            let (_, g) = error_terms(inst.blocks(), w, &x, &s, tn)?;
            Ok(potential(&g, params.lambda, w))
        };
        let (h_used, t_new, phi) = match params.mode {
            Mode::Theory => {
                let tn = ((1.0 - h) * t).max(params.t_end);
                let phi = phi_at(tn)?;
                if phi > params.phi_max {
                    return Err(Error::InvariantViolation(format!(
                        "potential {phi:e} exceeds its bound {:e} at iteration {iter}",
                        params.phi_max
                    )));
                }
                (h, tn, phi)
            }
            Mode::Practical => {
                let mut ht = h;
                loop {
                    let tn = ((1.0 - ht) * t).max(params.t_end);
                    let phi = phi_at(tn)?;
                    if phi <= params.phi_max {
                        break (ht, tn, phi);
                    }
                    ht *= 0.5;
                    if ht < 1e-12 {
                        break (0.0, t, phi_at(t)?);
                    }
                }
            }
        };
        if params.mode == Mode::Practical {
            if h_used == h {
                h = (h * 1.25).min(params.h_max);
            } else if h_used > 0.0 {
                h = h_used;
            } else {
                h = (h * 0.5).max(1e-12);
            }
            stalled = if h_used == 0.0 { stalled + 1 } else { 0 };
            if stalled > 500 {
                return Err(Error::InvariantViolation("path following stalled: potential stays above its guard".into()));
            }
        }
        t = t_new;
        max_phi = max_phi.max(phi);
        if let Some(obs) = observer.as_deref_mut() {
            obs(&IterationRecord {
                iteration: iter,
                t,
                h: h_used,
                phi,
                delta_mu_norm: info.delta_mu_norm,
                dx_norm: info.dx_norm,
                ds_norm: info.ds_norm,
            });
        }
        iter += 1;
        maint.retarget(t, params)?;
        if let Some(target) = gap_target {
            if inst.gap_bound(&x, &y) <= target {
                stop = StopReason::GapCertified;
                break;
            }
        }
    }
    let (x, s, y) = maint.exact()?;
    Ok(CenteringOutcome { x, s, y, t, iterations: iter, max_phi, stop })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverOptions {
    pub epsilon: f64,
    pub mode: Mode,
    pub backend: Backend,
    /// Practical-mode step length; ignored in theory mode.
    pub alpha: Option<f64>,
    pub max_iterations: Option<usize>,
    pub seed: u64,
    /// Failure probability of each sketch query in the low-rank backend.
    pub delta_apx: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            mode: Mode::Practical,
            backend: Backend::Dense,
            alpha: None,
            max_iterations: None,
            seed: 0,
            delta_apx: 0.01,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveReport {
    pub objective: f64,
    pub residual_l1: f64,
    pub tau: f64,
    /// Upper bound on `objective − OPT` implied by the final dual certificate.
    pub gap_bound: f64,
    /// `max_i ‖μ_i‖*/w_i` at the final pair; at most 1 licenses the
    /// approximate-optimality bound.
    pub final_proximity: f64,
    pub iterations: usize,
    pub final_t: f64,
    pub max_phi: f64,
    pub stop: StopReason,
    pub params: IpmParams,
    pub backend: Backend,
    pub refreshes: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub x: DVector<f64>,
    /// Multipliers of `Ax = b`, in the original scaling.
    pub y: DVector<f64>,
    /// `c + Qx − Aᵀy`, in the original scaling.
    pub s: DVector<f64>,
    pub report: SolveReport,
}

pub fn solve(inst: &QpInstance, opts: &SolverOptions) -> Result<Solution> {
    solve_observed(inst, opts, None)
}

/// Reduces to the slack-augmented program, follows its path and restricts.
pub fn solve_observed(
    inst: &QpInstance,
    opts: &SolverOptions,
    observer: Option<&mut dyn FnMut(&IterationRecord)>,
) -> Result<Solution> {
    let start = Instant::now();
    let eps = opts.epsilon;
    let (aug, x0, s0) = augment_for_initial_point(inst, eps)?;
    let base = &aug.base;
    let mut params = match opts.mode {
        Mode::Theory => IpmParams::theory(base, eps),
        Mode::Practical => IpmParams::practical(base, eps, opts.alpha),
    };
    if let Some(cap) = opts.max_iterations {
        params.max_iterations = cap;
    }
    let gap_target = (opts.mode == Mode::Practical).then_some(eps * eps);
    let (out, refreshes) = match opts.backend {
        Backend::Dense => {
            let mut m = DenseMaintainer::new(base, x0, s0, params.t_start);
            (centering(base, &mut m, &params, gap_target, observer)?, 0)
        }
        Backend::LowRank => {
            let mut m = LowRankMaintainer::new(base, x0, s0, params.t_start, &params, opts.seed, opts.delta_apx)?;
            let out = centering(base, &mut m, &params, gap_target, observer)?;
            (out, m.refreshes())
        }
    };
    let (_, gamma) = error_terms(base.blocks(), base.weights(), &out.x, &out.s, out.t)?;
    let final_proximity = gamma.iter().zip(base.weights().iter()).map(|(g, w)| g / w).fold(0.0, f64::max);
    let gap_aug = base.gap_bound(&out.x, &out.y);
    let (x, Restriction { objective, residual_l1, tau }) = aug.restrict(&out.x);
    let scale = eps * aug.rho;
    let y = &out.y / scale;
    let s = inst.c() + inst.objective().apply(&x) - inst.a().transpose() * &y;
    Ok(Solution {
        x,
        y,
        s,
        report: SolveReport {
            objective,
            residual_l1,
            tau,
            gap_bound: gap_aug / scale,
            final_proximity,
            iterations: out.iterations,
            final_t: out.t,
            max_phi: out.max_phi,
            stop: out.stop,
            params,
            backend: opts.backend,
            refreshes,
            seconds: start.elapsed().as_secs_f64(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::BlockDomain;
    use crate::model::tests::random_instance;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_box() -> (Vec<BlockDomain>, DVector<f64>) {
        (vec![BlockDomain::interval(0.0, 2.0).unwrap()], DVector::from_element(1, 1.0))
    }

    #[test]
    fn error_terms_examples() {
        let (b, w) = one_box();
        let one = DVector::from_element(1, 1.0);
        let (mu, g) = error_terms(&b, &w, &one, &DVector::zeros(1), 1.0).unwrap();
        assert_eq!((mu[0], g[0]), (0.0, 0.0));
        let (mu, g) = error_terms(&b, &w, &one, &DVector::from_element(1, 2.0), 2.0).unwrap();
        assert_relative_eq!(mu[0], 1.0);
        assert_relative_eq!(g[0], 1.0 / 2f64.sqrt(), epsilon = 1e-15);
        let (mu2, g2) = error_terms(&b, &w, &one, &DVector::from_element(1, 6.0), 6.0).unwrap();
        assert_eq!((mu2[0], g2[0]), (mu[0], g[0]));
    }

    #[test]
    fn potential_examples() {
        let w = DVector::from_element(5, 1.0);
        assert_eq!(potential(&DVector::zeros(5), 3.0, &w), 5.0);
        let w1 = DVector::from_element(1, 1.0);
        assert_relative_eq!(potential(&DVector::from_element(1, 1.0), 1.0, &w1), 1.5430806348152437, epsilon = 1e-15);
        let big = potential(&DVector::from_element(3, 800.0), 1.0, &DVector::from_element(3, 1.0));
        assert!(big.is_infinite());
        let lp = log_potential(&DVector::from_element(3, 800.0), 1.0, &DVector::from_element(3, 1.0));
        assert_relative_eq!(lp, 800.0 - std::f64::consts::LN_2 + 3f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn direction_examples() {
        let w = DVector::from_element(3, 1.0);
        let sv = step_direction(DVector::zeros(3), DVector::zeros(3), 10.0, 0.1, &w);
        assert_eq!(sv.delta_mu.amax(), 0.0);
        let w1 = DVector::from_element(1, 1.0);
        let sv = step_direction(DVector::from_element(1, 1.0), DVector::from_element(1, 1.0), 1.0, 0.1, &w1);
        assert_relative_eq!(sv.c_coef[0], 1f64.tanh(), epsilon = 1e-14);
        assert_relative_eq!(sv.delta_mu[0], -0.1 * 1f64.tanh(), epsilon = 1e-14);
    }

    #[test]
    fn direction_norm_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let n = rng.random_range(1..30);
            let hess = DVector::from_fn(n, |_, _| rng.random_range(0.1f64..10.0));
            let w = DVector::from_fn(n, |_, _| rng.random_range(1.0..4.0));
            let mu = DVector::from_fn(n, |_, _| rng.random_range(-3.0f64..3.0));
            let gamma = DVector::from_fn(n, |i, _| mu[i].abs() / hess[i].sqrt());
            let lambda = rng.random_range(1.0..200.0);
            let alpha = rng.random_range(1e-4..0.5);
            let sv = step_direction(mu, gamma, lambda, alpha, &w);
            let metric = crate::barrier::LocalMetric { hess, weights: w };
            assert!(metric.weighted_dual_norm(&sv.delta_mu) <= alpha * (1.0 + 1e-12));
        }
    }

    #[test]
    fn projection_vanishes_without_rows() {
        let q = DMatrix::zeros(1, 1);
        let a = DMatrix::zeros(0, 1);
        let st = dense_step(&q, &a, &DVector::from_element(1, 1.0), 1.0, &DVector::from_element(1, 0.5)).unwrap();
        assert_relative_eq!(st.dx[0], 0.5);
        assert_relative_eq!(st.ds[0], 0.0);
    }

    #[test]
    fn steps_certified_and_backends_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..40 {
            let n = rng.random_range(2..50);
            let inst = random_instance(&mut rng, n, 1 + trial % 5, trial % 3);
            let x = inst.analytic_center().unwrap();
            let hw = inst.metric(&x).unwrap().weighted_hess();
            let dmu = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let t = rng.random_range(0.01..2.0);
            let d = central_path_step(&inst, &hw, t, &dmu, Backend::Dense).unwrap();
            let l = central_path_step(&inst, &hw, t, &dmu, Backend::LowRank).unwrap();
            let (ra, rd) = certify_step(&inst, &d);
            assert!(ra <= 1e-9 * (1.0 + d.dx.norm()));
            assert!(rd <= 1e-9 * (1.0 + d.ds.norm()));
            assert!((&d.dx - &l.dx).norm() <= 1e-8 * d.dx.norm().max(1e-12));
            assert!((&d.ds - &l.ds).norm() <= 1e-8 * d.ds.norm().max(1e-12));
        }
    }

    #[test]
    fn empty_path_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inst = random_instance(&mut rng, 4, 1, 1);
        let x = inst.analytic_center().unwrap();
        let s = DVector::zeros(4);
        let mut params = IpmParams::practical(&inst, 0.1, None);
        params.t_end = params.t_start;
        let mut m = DenseMaintainer::new(&inst, x.clone(), s.clone(), 1.0);
        let out = centering(&inst, &mut m, &params, None, None).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.x, x);
    }

    #[test]
    fn practical_solve_is_accurate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let inst = random_instance(&mut rng, 20, 3, 2);
            let sol = solve(&inst, &SolverOptions::default()).unwrap();
            let (obj_tol, feas_tol) = inst.guarantee(1e-3);
            assert!(sol.report.gap_bound <= obj_tol, "{:?}", sol.report);
            assert!(sol.report.residual_l1 <= feas_tol);
            assert!(sol.report.final_proximity <= 1.0);
            assert!(inst.contains(&sol.x));
        }
    }
}
