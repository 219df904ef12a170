//! Implicit representation of the exact primal-dual pair when `Q = U Vᵀ`.
//!
//! With `H = H_{w,x̄}` (diagonal) the pair is held as
//!
//! ```text
//! x = x̂ + H^{-1/2} (h β_x + ĥ β̂_x + h̃ β̃_x)
//! s = ŝ + H^{1/2}  (h β_s + ĥ β̂_s + h̃ β̃_s)
//! ```
//!
//! where `h = H^{-1/2} δ̄_μ`, `ĥ = H^{-1/2} U` and `h̃ = H^{-1/2} Aᵀ`. A central
//! path step only touches the `O(k + m)` coefficients; changing one entry of
//! the approximate pair touches one row of everything.

use nalgebra::{DMatrix, DVector};

use crate::barrier::BlockDomain;
use crate::error::{Error, Result};
use crate::ipm::{alpha_bar_term, raw_direction};
use crate::linalg::{solve_small, solve_small_vec};
use crate::model::{Objective, QpInstance};

/// Coefficients of the representation.
#[derive(Clone, Debug, PartialEq)]
pub struct Coefficients {
    pub beta_x: f64,
    pub beta_s: f64,
    pub beta_hat_x: DVector<f64>,
    pub beta_hat_s: DVector<f64>,
    pub beta_tilde_x: DVector<f64>,
    pub beta_tilde_s: DVector<f64>,
}

impl Coefficients {
    fn zeros(k: usize, m: usize) -> Self {
        Self {
            beta_x: 0.0,
            beta_s: 0.0,
            beta_hat_x: DVector::zeros(k),
            beta_hat_s: DVector::zeros(k),
            beta_tilde_x: DVector::zeros(m),
            beta_tilde_s: DVector::zeros(m),
        }
    }
}

/// Change of one row caused by refreshing one entry of `(x̄, s̄)`, expressed on
/// the vectors the sketches track: `H^{1/2} x̂`, `H^{-1/2} ŝ`, `h`, `ĥ`, `h̃`.
#[derive(Clone, Debug, PartialEq)]
pub struct RowDelta {
    pub index: usize,
    pub scaled_x_hat: f64,
    pub scaled_s_hat: f64,
    pub h: f64,
    pub h_hat: DVector<f64>,
    pub h_tilde: DVector<f64>,
}

/// New values for entries of the approximate pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Refresh {
    pub index: usize,
    pub x_bar: Option<f64>,
    pub s_bar: Option<f64>,
}

/// Small matrix accumulated with Neumaier compensation, so that adding and
/// later removing the same row contribution leaves no drift.
#[derive(Clone, Debug)]
struct Summary {
    sum: DMatrix<f64>,
    comp: DMatrix<f64>,
}

impl Summary {
    fn zeros(r: usize, c: usize) -> Self {
        Self { sum: DMatrix::zeros(r, c), comp: DMatrix::zeros(r, c) }
    }

    fn add(&mut self, p: usize, q: usize, x: f64) {
        let s = self.sum[(p, q)];
        let t = s + x;
        self.comp[(p, q)] += if s.abs() >= x.abs() { (s - t) + x } else { (x - t) + s };
        self.sum[(p, q)] = t;
    }

    fn value(&self) -> DMatrix<f64> {
        &self.sum + &self.comp
    }
}

#[derive(Clone, Debug)]
pub struct ExactDs {
    u: DMatrix<f64>,
    v: DMatrix<f64>,
    a: DMatrix<f64>,
    blocks: Vec<BlockDomain>,
    w: DVector<f64>,
    lambda: f64,
    alpha: f64,
    t_bar: f64,

    x_bar: DVector<f64>,
    s_bar: DVector<f64>,
    hw: DVector<f64>,
    /// Binary summation tree over the per-row terms of `ᾱ`; leaves start at
    /// `ab_tree.len() / 2`, the total sits at index 1.
    ab_tree: Vec<f64>,
    dbar: DVector<f64>,
    alpha_bar: f64,

    x_hat: DVector<f64>,
    s_hat: DVector<f64>,
    h: DVector<f64>,
    h_hat: DMatrix<f64>,
    h_tilde: DMatrix<f64>,
    coef: Coefficients,

    u1: Summary,
    u2: Summary,
    u3: Summary,
    u4: Summary,
    u5: Summary,
    u6: Summary,

    y: DVector<f64>,
}

/// Dense recomputation of every maintained quantity, compared entrywise.
#[derive(Clone, Debug, Default)]
pub struct InvariantReport {
    /// Largest relative deviation over `h, ĥ, h̃, u₁…u₆, ᾱ, δ̄_μ`.
    pub max_relative: f64,
    pub worst: &'static str,
}

fn rel(a: f64, scale: f64) -> f64 {
    a / scale.max(1e-300)
}

impl ExactDs {
    #[allow(clippy::too_many_arguments)]
    pub fn initialize(
        inst: &QpInstance,
        x: &DVector<f64>,
        s: &DVector<f64>,
        x_bar: &DVector<f64>,
        s_bar: &DVector<f64>,
        t_bar: f64,
        lambda: f64,
        alpha: f64,
    ) -> Result<Self> {
        let (u, v) = match inst.objective() {
            Objective::Factored { u, v } => (u.clone(), v.clone()),
            Objective::Dense(_) => {
                return Err(Error::InvalidParameter("the low-rank backend needs a factored objective".into()))
            }
        };
        let n = inst.n();
        let (k, m) = (u.ncols(), inst.m());
        let mut ds = Self {
            u,
            v,
            a: inst.a().clone(),
            blocks: inst.blocks().to_vec(),
            w: inst.weights().clone(),
            lambda,
            alpha,
            t_bar,
            x_bar: x_bar.clone(),
            s_bar: s_bar.clone(),
            hw: DVector::zeros(n),
            ab_tree: vec![0.0; 2 * n.next_power_of_two().max(1)],
            dbar: DVector::zeros(n),
            alpha_bar: 0.0,
            x_hat: x.clone(),
            s_hat: s.clone(),
            h: DVector::zeros(n),
            h_hat: DMatrix::zeros(n, k),
            h_tilde: DMatrix::zeros(n, m),
            coef: Coefficients::zeros(k, m),
            u1: Summary::zeros(k, m),
            u2: Summary::zeros(k, m),
            u3: Summary::zeros(m, m),
            u4: Summary::zeros(m, 1),
            u5: Summary::zeros(k, 1),
            u6: Summary::zeros(k, k),
            y: DVector::zeros(m),
        };
        for i in 0..n {
            ds.set_local(i)?;
            ds.add_summaries(i, 1.0);
        }
        Ok(ds)
    }

    pub fn n(&self) -> usize {
        self.hw.len()
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn t_bar(&self) -> f64 {
        self.t_bar
    }

    pub fn x_bar(&self) -> &DVector<f64> {
        &self.x_bar
    }

    pub fn s_bar(&self) -> &DVector<f64> {
        &self.s_bar
    }

    /// Diagonal of `H_{w,x̄}`.
    pub fn weighted_hess(&self) -> &DVector<f64> {
        &self.hw
    }

    pub fn coefficients(&self) -> &Coefficients {
        &self.coef
    }

    pub fn alpha_bar(&self) -> f64 {
        self.alpha_bar
    }

    fn set_alpha_term(&mut self, i: usize, v: f64) {
        let mut p = self.ab_tree.len() / 2 + i;
        self.ab_tree[p] = v;
        while p > 1 {
            p /= 2;
            self.ab_tree[p] = self.ab_tree[2 * p] + self.ab_tree[2 * p + 1];
        }
        self.alpha_bar = self.ab_tree[1];
    }

    /// Multipliers accumulated over all moves.
    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn set_y(&mut self, y: DVector<f64>) {
        self.y = y;
    }

    /// `δ_μ = ᾱ^{-1/2} δ̄_μ` at the approximate pair.
    pub fn delta_mu(&self) -> DVector<f64> {
        &self.dbar / self.alpha_bar.sqrt()
    }

    pub fn h(&self) -> &DVector<f64> {
        &self.h
    }

    pub fn h_hat(&self) -> &DMatrix<f64> {
        &self.h_hat
    }

    pub fn h_tilde(&self) -> &DMatrix<f64> {
        &self.h_tilde
    }

    /// `H^{1/2} x̂`
    pub fn scaled_x_hat(&self) -> DVector<f64> {
        self.x_hat.component_mul(&self.hw.map(f64::sqrt))
    }

    /// `H^{-1/2} ŝ`
    pub fn scaled_s_hat(&self) -> DVector<f64> {
        self.s_hat.component_div(&self.hw.map(f64::sqrt))
    }

    /// Recomputes `H_ii`, the direction entry and the rows of `h, ĥ, h̃` from
    /// the current `(x̄_i, s̄_i)`.
    fn set_local(&mut self, i: usize) -> Result<()> {
        let (_, g, hess) = self.blocks[i].eval(i, self.x_bar[i])?;
        let w = self.w[i];
        let mu = self.s_bar[i] / self.t_bar + w * g;
        let gamma = mu.abs() / hess.sqrt();
        self.hw[i] = w * hess;
        self.set_alpha_term(i, alpha_bar_term(gamma, w, self.lambda));
        self.dbar[i] = -self.alpha * raw_direction(mu, gamma, w, self.lambda);
        let isq = 1.0 / self.hw[i].sqrt();
        self.h[i] = self.dbar[i] * isq;
        for j in 0..self.u.ncols() {
            self.h_hat[(i, j)] = self.u[(i, j)] * isq;
        }
        for j in 0..self.a.nrows() {
            self.h_tilde[(i, j)] = self.a[(j, i)] * isq;
        }
        Ok(())
    }

    /// Adds `sign` times coordinate `i`'s rank-one contribution to `u₁…u₆`.
    fn add_summaries(&mut self, i: usize, sign: f64) {
        let f = sign / self.hw[i];
        let (k, m) = (self.u.ncols(), self.a.nrows());
        let d = self.dbar[i];
        for p in 0..k {
            let ui = self.u[(i, p)] * f;
            let vi = self.v[(i, p)] * f;
            for q in 0..m {
                let aq = self.a[(q, i)];
                self.u1.add(p, q, ui * aq);
                self.u2.add(p, q, vi * aq);
            }
            self.u5.add(p, 0, vi * d);
            for q in 0..k {
                self.u6.add(p, q, vi * self.u[(i, q)]);
            }
        }
        for p in 0..m {
            let ap = self.a[(p, i)] * f;
            for q in 0..m {
                self.u3.add(p, q, ap * self.a[(q, i)]);
            }
            self.u4.add(p, 0, ap * d);
        }
    }

    fn row_x(&self, i: usize) -> f64 {
        let mut acc = self.h[i] * self.coef.beta_x;
        for j in 0..self.u.ncols() {
            acc += self.h_hat[(i, j)] * self.coef.beta_hat_x[j];
        }
        for j in 0..self.a.nrows() {
            acc += self.h_tilde[(i, j)] * self.coef.beta_tilde_x[j];
        }
        acc
    }

    fn row_s(&self, i: usize) -> f64 {
        let mut acc = self.h[i] * self.coef.beta_s;
        for j in 0..self.u.ncols() {
            acc += self.h_hat[(i, j)] * self.coef.beta_hat_s[j];
        }
        for j in 0..self.a.nrows() {
            acc += self.h_tilde[(i, j)] * self.coef.beta_tilde_s[j];
        }
        acc
    }

    /// Exact `(x_i, s_i)`, reading only row `i`.
    pub fn query(&self, i: usize) -> Result<(f64, f64)> {
        if i >= self.n() {
            return Err(Error::IndexOutOfRange { index: i, len: self.n() });
        }
        let sq = self.hw[i].sqrt();
        Ok((self.x_hat[i] + self.row_x(i) / sq, self.s_hat[i] + self.row_s(i) * sq))
    }

    pub fn output(&self) -> (DVector<f64>, DVector<f64>) {
        let sq = self.hw.map(f64::sqrt);
        let gx = &self.h * self.coef.beta_x + &self.h_hat * &self.coef.beta_hat_x + &self.h_tilde * &self.coef.beta_tilde_x;
        let gs = &self.h * self.coef.beta_s + &self.h_hat * &self.coef.beta_hat_s + &self.h_tilde * &self.coef.beta_tilde_s;
        (&self.x_hat + gx.component_div(&sq), &self.s_hat + gs.component_mul(&sq))
    }

    /// One central path step from the approximate pair, applied to the
    /// coefficients through the Woodbury identity. Returns the coefficients
    /// and the multiplier step `δ_y`.
    pub fn move_step(&mut self) -> Result<(Coefficients, DVector<f64>)> {
        self.move_scaled(1.0)
    }

    /// Same as [`ExactDs::move_step`] with the step multiplied by `frac`.
    pub fn move_scaled(&mut self, frac: f64) -> Result<(Coefficients, DVector<f64>)> {
        let t = self.t_bar;
        let k = self.u.ncols();
        let m = self.a.nrows();
        let scale = frac / self.alpha_bar.sqrt();
        let (u1, u2, u3) = (self.u1.value(), self.u2.value(), self.u3.value());
        let (u4, u5) = (self.u4.value().column(0).into_owned(), self.u5.value().column(0).into_owned());
        let v0 = DMatrix::identity(k, k) + self.u6.value() / t;
        // v₀⁻¹ [u₂ | u₅]
        let mut rhs = DMatrix::zeros(k, m + 1);
        rhs.columns_mut(0, m).copy_from(&u2);
        rhs.set_column(m, &u5);
        let sol = solve_small(&v0, &rhs, "I + t⁻¹ Vᵀ H⁻¹ U")?;
        let v0_u2 = sol.columns(0, m).into_owned();
        let v0_u5 = sol.column(m).into_owned();
        let g = if m == 0 {
            DVector::zeros(0)
        } else {
            let v1 = &u3 / t - u1.transpose() * &v0_u2 / (t * t);
            let v2 = &u4 / t - u1.transpose() * &v0_u5 / (t * t);
            solve_small_vec(&v1, &v2, "A B⁻¹ Aᵀ")?
        };
        // v₀⁻¹ (u₅ − u₂ g)
        let r = &v0_u5 - &v0_u2 * &g;
        let c = &mut self.coef;
        c.beta_x += scale;
        c.beta_hat_x -= &r * (scale / t);
        c.beta_tilde_x -= &g * scale;
        c.beta_hat_s += &r * scale;
        c.beta_tilde_s += &g * (scale * t);
        let dy = &g * (-t * scale);
        self.y += &dy;
        Ok((self.coef.clone(), dy))
    }

    /// Rolls the coefficients and multipliers back to a saved state.
    pub fn restore(&mut self, coef: Coefficients, y: DVector<f64>) {
        self.coef = coef;
        self.y = y;
    }

    /// Replaces entries of `(x̄, s̄)` while keeping the represented `(x, s)`
    /// fixed. Only the rows of the refreshed coordinates change.
    pub fn update(&mut self, refreshes: &[Refresh]) -> Result<Vec<RowDelta>> {
        let mut out = Vec::with_capacity(refreshes.len());
        for r in refreshes {
            let i = r.index;
            let (xi, si) = self.query(i)?;
            if let Some(v) = r.x_bar {
                if !self.blocks[i].contains(v) {
                    return Err(Error::Domain { block: i, value: v });
                }
            }
            let old_sq = self.hw[i].sqrt();
            let old_xs = self.x_hat[i] * old_sq;
            let old_ss = self.s_hat[i] / old_sq;
            let old_h = self.h[i];
            let old_hh = self.h_hat.row(i).transpose();
            let old_ht = self.h_tilde.row(i).transpose();

            self.add_summaries(i, -1.0);
            if let Some(v) = r.x_bar {
                self.x_bar[i] = v;
            }
            if let Some(v) = r.s_bar {
                self.s_bar[i] = v;
            }
            self.set_local(i)?;
            self.add_summaries(i, 1.0);

            let sq = self.hw[i].sqrt();
            self.x_hat[i] = xi - self.row_x(i) / sq;
            self.s_hat[i] = si - self.row_s(i) * sq;
            out.push(RowDelta {
                index: i,
                scaled_x_hat: self.x_hat[i] * sq - old_xs,
                scaled_s_hat: self.s_hat[i] / sq - old_ss,
                h: self.h[i] - old_h,
                h_hat: self.h_hat.row(i).transpose() - old_hh,
                h_tilde: self.h_tilde.row(i).transpose() - old_ht,
            });
        }
        Ok(out)
    }

    /// Recomputes everything densely from `(x̄, s̄, t̄)` and reports the largest
    /// relative deviation from the maintained values.
    pub fn check_invariants(&self) -> InvariantReport {
        let n = self.n();
        let (k, m) = (self.u.ncols(), self.a.nrows());
        let mut hinv = DVector::zeros(n);
        let mut dbar = DVector::zeros(n);
        let mut ab = 0.0;
        for i in 0..n {
            let (g, hess) = self.blocks[i].grad_hess(self.x_bar[i]);
            let mu = self.s_bar[i] / self.t_bar + self.w[i] * g;
            let gamma = mu.abs() / hess.sqrt();
            hinv[i] = 1.0 / (self.w[i] * hess);
            ab += alpha_bar_term(gamma, self.w[i], self.lambda);
            dbar[i] = -self.alpha * raw_direction(mu, gamma, self.w[i], self.lambda);
        }
        let isq = hinv.map(f64::sqrt);
        let scale_rows = |mat: &DMatrix<f64>, d: &DVector<f64>| {
            let mut r = mat.clone();
            for (i, mut row) in r.row_iter_mut().enumerate() {
                row *= d[i];
            }
            r
        };
        let hinv_at = scale_rows(&self.a.transpose(), &hinv);
        let hinv_u = scale_rows(&self.u, &hinv);
        let hinv_d = dbar.component_mul(&hinv);
        let checks: [(&'static str, f64, f64); 12] = [
            ("h", (&self.h - dbar.component_mul(&isq)).amax(), dbar.component_mul(&isq).amax()),
            ("h_hat", (&self.h_hat - scale_rows(&self.u, &isq)).amax(), scale_rows(&self.u, &isq).amax()),
            ("h_tilde", (&self.h_tilde - scale_rows(&self.a.transpose(), &isq)).amax(), self.h_tilde.amax()),
            ("u1", (self.u1.value() - self.u.transpose() * &hinv_at).amax(), (self.u.transpose() * &hinv_at).amax()),
            ("u2", (self.u2.value() - self.v.transpose() * &hinv_at).amax(), (self.v.transpose() * &hinv_at).amax()),
            ("u3", (self.u3.value() - &self.a * &hinv_at).amax(), (&self.a * &hinv_at).amax()),
            ("u4", (self.u4.value().column(0) - &self.a * &hinv_d).amax(), (&self.a * &hinv_d).amax()),
            ("u5", (self.u5.value().column(0) - self.v.transpose() * &hinv_d).amax(), (self.v.transpose() * &hinv_d).amax()),
            ("u6", (self.u6.value() - self.v.transpose() * &hinv_u).amax(), (self.v.transpose() * &hinv_u).amax()),
            ("alpha_bar", (self.alpha_bar - ab).abs(), ab),
            ("delta_mu_bar", (&self.dbar - &dbar).amax(), dbar.amax()),
            ("weighted_hess", (self.hw.map(|h| 1.0 / h) - &hinv).amax(), hinv.amax()),
        ];
        let _ = (k, m);
        let mut rep = InvariantReport::default();
        for (name, err, scale) in checks {
            let r = if scale == 0.0 && err == 0.0 { 0.0 } else { rel(err, scale) };
            if r > rep.max_relative {
                rep = InvariantReport { max_relative: r, worst: name };
            }
        }
        rep
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::BlockDomain;
    use crate::ipm::{dense_step, error_terms, step_direction};
    use crate::model::tests::random_instance;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn interior_point(inst: &QpInstance, rng: &mut ChaCha8Rng) -> DVector<f64> {
        DVector::from_fn(inst.n(), |i, _| {
            let b = inst.blocks()[i];
            b.lo() + (b.hi() - b.lo()) * rng.random_range(0.2..0.8)
        })
    }

    #[test]
    fn fresh_output_is_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inst = random_instance(&mut rng, 12, 3, 2);
        let x = interior_point(&inst, &mut rng);
        let s = DVector::from_fn(12, |_, _| rng.random_range(-1.0..1.0));
        let ds = ExactDs::initialize(&inst, &x, &s, &x, &s, 0.7, 20.0, 0.1).unwrap();
        let (xo, so) = ds.output();
        assert_eq!(xo, x);
        assert_eq!(so, s);
        for i in 0..12 {
            assert_eq!(ds.query(i).unwrap(), (x[i], s[i]));
        }
        assert!(ds.query(12).is_err());
        assert!(ds.check_invariants().max_relative <= 1e-12);
    }

    #[test]
    fn alpha_bar_counts_coordinates_at_center() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inst = random_instance(&mut rng, 7, 1, 0);
        let inst = QpInstance::builder(inst.objective().clone(), inst.c().clone())
            .blocks(inst.blocks().to_vec())
            .build()
            .unwrap();
        let x = inst.analytic_center().unwrap();
        let ds = ExactDs::initialize(&inst, &x, &DVector::zeros(7), &x, &DVector::zeros(7), 1.0, 5.0, 0.1).unwrap();
        assert_relative_eq!(ds.alpha_bar(), 7.0, epsilon = 1e-14);
    }

    #[test]
    fn move_matches_dense_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..30 {
            let n = rng.random_range(3..40);
            let inst = random_instance(&mut rng, n, trial % 5, trial % 3);
            let x = interior_point(&inst, &mut rng);
            let s = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let xb = interior_point(&inst, &mut rng);
            let sb = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let t = rng.random_range(0.05..2.0);
            let (lambda, alpha) = (30.0, 0.05);
            let mut ds = ExactDs::initialize(&inst, &x, &s, &xb, &sb, t, lambda, alpha).unwrap();
            let (_, dy) = ds.move_step().unwrap();
            let (xo, so) = ds.output();

            let (mu, gamma) = error_terms(inst.blocks(), inst.weights(), &xb, &sb, t).unwrap();
            let sv = step_direction(mu, gamma, lambda, alpha, inst.weights());
            let hw = inst.metric(&xb).unwrap().weighted_hess();
            let st = dense_step(&inst.objective().to_dense(), inst.a(), &hw, t, &sv.delta_mu).unwrap();
            assert!((&xo - &x - &st.dx).norm() <= 1e-8 * st.dx.norm() + 1e-12);
            assert!((&so - &s - &st.ds).norm() <= 1e-8 * st.ds.norm() + 1e-12, "{} {} {trial}", (&so - &s - &st.ds).norm(), st.ds.norm());
            assert!((&dy - &st.dy).norm() <= 1e-8 * st.dy.norm() + 1e-12);
        }
    }

    #[test]
    fn update_preserves_pair_and_touches_one_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let inst = random_instance(&mut rng, 30, 4, 2);
        let x = interior_point(&inst, &mut rng);
        let s = DVector::from_fn(30, |_, _| rng.random_range(-1.0..1.0));
        let mut ds = ExactDs::initialize(&inst, &x, &s, &x, &s, 0.5, 25.0, 0.05).unwrap();
        ds.move_step().unwrap();
        for _ in 0..100 {
            let (x0, s0) = ds.output();
            let i = rng.random_range(0..30);
            let b = inst.blocks()[i];
            let nx = b.lo() + (b.hi() - b.lo()) * rng.random_range(0.1..0.9);
            let h_before = ds.h().clone();
            let deltas = ds
                .update(&[Refresh { index: i, x_bar: Some(nx), s_bar: Some(rng.random_range(-1.0..1.0)) }])
                .unwrap();
            assert_eq!(deltas.len(), 1);
            assert_eq!(deltas[0].index, i);
            let (x1, s1) = ds.output();
            assert!((&x1 - &x0).amax() <= 1e-10 * (1.0 + x0.amax()));
            assert!((&s1 - &s0).amax() <= 1e-10 * (1.0 + s0.amax()));
            let changed: Vec<usize> = (0..30).filter(|&j| ds.h()[j] != h_before[j]).collect();
            assert!(changed.iter().all(|&j| j == i));
            if rng.random_bool(0.3) {
                ds.move_step().unwrap();
            }
        }
        assert!(ds.check_invariants().max_relative <= 1e-9, "{:?}", ds.check_invariants());
    }

    #[test]
    fn empty_refresh_changes_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let inst = random_instance(&mut rng, 10, 2, 1);
        let x = interior_point(&inst, &mut rng);
        let s = DVector::zeros(10);
        let mut ds = ExactDs::initialize(&inst, &x, &s, &x, &s, 1.0, 10.0, 0.1).unwrap();
        ds.move_step().unwrap();
        let d = ds.update(&[Refresh { index: 3, x_bar: None, s_bar: None }]).unwrap();
        assert_eq!(d[0].h, 0.0);
        assert!(d[0].scaled_x_hat.abs() < 1e-15 && d[0].scaled_s_hat.abs() < 1e-15);
        assert!(ds.update(&[]).unwrap().is_empty());
    }

    #[test]
    fn rejects_dense_objective_and_bad_refresh() {
        let inst = QpInstance::builder(Objective::Dense(DMatrix::identity(2, 2)), DVector::zeros(2))
            .blocks(vec![BlockDomain::interval(0.0, 1.0).unwrap(); 2])
            .build()
            .unwrap();
        let x = DVector::from_element(2, 0.5);
        assert!(ExactDs::initialize(&inst, &x, &x, &x, &x, 1.0, 1.0, 0.1).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let inst = random_instance(&mut rng, 5, 1, 1);
        let x = inst.analytic_center().unwrap();
        let mut ds = ExactDs::initialize(&inst, &x, &x, &x, &x, 1.0, 1.0, 0.1).unwrap();
        assert!(ds.update(&[Refresh { index: 0, x_bar: Some(100.0), s_bar: None }]).is_err());
    }
}
