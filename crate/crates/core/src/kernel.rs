//! Low-rank factorization of the Gaussian kernel `K_ij = exp(−‖x_i − x_j‖²)`.
//!
//! `e^{−z}` is replaced on `[0, B]` by a polynomial `p`, and `p(‖a − b‖²)` is
//! expanded over the features `‖a‖^{2k} a^α`. For each multi-index `α` the
//! coefficients form a small symmetric matrix; splitting its eigenvalues
//! into magnitude and sign gives factors with `UVᵀ` exactly symmetric.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid points used by the sup-error certificate.
pub const CERT_GRID: usize = 10_000;
/// Default largest rank a factorization may reach.
pub const DEFAULT_RANK_CAP: usize = 20_000;
/// Largest `n` the exact kernel is formed for.
pub const EXACT_KERNEL_CAP: usize = 5_000;

/// Polynomial approximation of `e^{−z}` on `[0, radius]`, in monomial form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyApprox {
    pub radius: f64,
    pub coeffs: Vec<f64>,
    /// Measured `sup |p(z) − e^{−z}|` over the grid and its refinements.
    pub sup_error: f64,
}

impl PolyApprox {
    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, z: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * z + c)
    }
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut best = f(a).max(f(b));
    for _ in 0..60 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        let (fc, fd) = (f(c), f(d));
        best = best.max(fc).max(fd);
        if fc > fd {
            b = d;
        } else {
            a = c;
        }
    }
    best
}

fn certify(coeffs: &[f64], radius: f64) -> f64 {
    let p = PolyApprox { radius, coeffs: coeffs.to_vec(), sup_error: 0.0 };
    let err = |z: f64| (p.eval(z) - (-z).exp()).abs();
    let step = radius / CERT_GRID as f64;
    let vals: Vec<f64> = (0..=CERT_GRID).map(|i| err(i as f64 * step)).collect();
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
    let mut sup = vals.iter().copied().fold(0.0, f64::max).max(err(0.0)).max(err(radius));
    for &i in order.iter().take(8) {
        let lo = i.saturating_sub(1) as f64 * step;
        let hi = ((i + 1).min(CERT_GRID)) as f64 * step;
        sup = sup.max(golden_max(err, lo, hi));
    }
    sup
}

/// Chebyshev interpolant of `e^{−z}` of degree `q` on `[0, radius]`.
pub fn chebyshev_exp_coeffs(radius: f64, q: usize) -> Result<PolyApprox> {
    if q < 1 {
        return Err(Error::InvalidParameter("polynomial degree must be at least 1".into()));
    }
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::InvalidParameter(format!("radius must be positive, got {radius}")));
    }
    let nodes = q + 1;
    let theta: Vec<f64> = (0..nodes).map(|j| std::f64::consts::PI * (j as f64 + 0.5) / nodes as f64).collect();
    let f: Vec<f64> = theta.iter().map(|t| (-(radius * 0.5 * (t.cos() + 1.0))).exp()).collect();
    let mut a: Vec<f64> = (0..nodes)
        .map(|k| 2.0 / nodes as f64 * (0..nodes).map(|j| f[j] * (k as f64 * theta[j]).cos()).sum::<f64>())
        .collect();
    a[0] *= 0.5;
    // T_k(2z/B − 1) expanded in powers of z.
    let u = [-1.0, 2.0 / radius];
    let mut prev = vec![0.0; nodes];
    prev[0] = 1.0;
    let mut cur = vec![0.0; nodes];
    cur[0] = u[0];
    cur[1] = u[1];
    let mut coeffs = vec![0.0; nodes];
    for (i, c) in prev.iter().enumerate() {
        coeffs[i] += a[0] * c;
    }
    for &ak in &a[1..nodes] {
        for (i, c) in cur.iter().enumerate() {
            coeffs[i] += ak * c;
        }
        let mut next = vec![0.0; nodes];
        for i in 0..nodes {
            next[i] = 2.0 * u[0] * cur[i] - prev[i];
            if i > 0 {
                next[i] += 2.0 * u[1] * cur[i - 1];
            }
        }
        prev = std::mem::replace(&mut cur, next);
    }
    let sup_error = certify(&coeffs, radius);
    Ok(PolyApprox { radius, coeffs, sup_error })
}

/// Smallest degree whose certified error on `[0, radius]` is at most `eps`,
/// found by doubling and then bisection.
pub fn poly_degree(radius: f64, eps: f64) -> Result<usize> {
    if !(radius >= 1.0) {
        return Err(Error::InvalidParameter(format!("radius must be at least 1, got {radius}")));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidParameter(format!("accuracy must be in (0, 1), got {eps}")));
    }
    let ok = |q: usize| -> Result<bool> { Ok(chebyshev_exp_coeffs(radius, q)?.sup_error <= eps) };
    let mut hi = 1usize;
    while !ok(hi)? {
        hi *= 2;
        if hi > 512 {
            return Err(Error::InvalidParameter(format!("no polynomial of degree ≤ 512 reaches {eps:e} on [0, {radius}]")));
        }
    }
    let mut lo = hi / 2;
    if lo == 0 {
        return Ok(hi);
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if ok(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Multi-indices `α ∈ ℕ^d` with `|α| ≤ q`, graded.
fn multi_indices(d: usize, q: usize) -> Vec<Vec<u32>> {
    let mut out = vec![vec![0u32; d]];
    let mut frontier = vec![(vec![0u32; d], 0usize)];
    for _ in 0..q {
        let mut next = Vec::new();
        for (alpha, first) in &frontier {
            for j in *first..d {
                let mut b = alpha.clone();
                b[j] += 1;
                out.push(b.clone());
                next.push((b, j));
            }
        }
        frontier = next;
    }
    out
}

fn factorial(k: u32) -> f64 {
    (1..=k).map(f64::from).product()
}

/// One eigen-feature: `√|λ| vᵀ [‖a‖^{2k} a^α]_k`.
#[derive(Clone, Debug, PartialEq)]
struct Feature {
    alpha: Vec<u32>,
    weights: Vec<f64>,
    sign: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelFactorization {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub degree: usize,
    pub rank: usize,
    /// Squared diameter of the data, at least 1.
    pub radius: f64,
    pub epsilon: f64,
    pub poly: PolyApprox,
    /// Per-entry bound on the contribution of pruned features.
    pub pruned_bound: f64,
    /// Data mean; features are taken about it.
    pub center: DVector<f64>,
    features: Vec<Feature>,
}

impl KernelFactorization {
    /// `‖K − UVᵀ‖_max` is guaranteed below this, up to rounding.
    pub fn entry_bound(&self) -> f64 {
        self.poly.sup_error + self.pruned_bound
    }

    fn feature_row(&self, x: &[f64]) -> DVector<f64> {
        let z: Vec<f64> = x.iter().zip(self.center.iter()).map(|(a, c)| a - c).collect();
        let sq: f64 = z.iter().map(|v| v * v).sum();
        DVector::from_iterator(
            self.features.len(),
            self.features.iter().map(|f| {
                let mono: f64 = f.alpha.iter().zip(&z).map(|(&e, v)| v.powi(e as i32)).product();
                let mut acc = 0.0;
                let mut pw = mono;
                for w in &f.weights {
                    acc += w * pw;
                    pw *= sq;
                }
                acc
            }),
        )
    }

    /// `(u, v)` rows for a new point, so that `p(‖x − x_j‖²) ≈ u · V_j`.
    pub fn rows_for(&self, x: &[f64]) -> Result<(DVector<f64>, DVector<f64>)> {
        if x.len() != self.center.len() {
            return Err(Error::Dimension { what: "query point", expected: self.center.len(), found: x.len() });
        }
        let g = self.feature_row(x);
        let signs = DVector::from_iterator(self.features.len(), self.features.iter().map(|f| f.sign));
        Ok((g.component_mul(&signs), g))
    }

    /// Text dump: a header line, the polynomial coefficients, then `U` and `V`
    /// row by row.
    pub fn write_text(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "# gaussian kernel factorization")?;
        writeln!(
            w,
            "n {} rank {} degree {} radius {:e} epsilon {:e} sup_error {:e} pruned {:e}",
            self.u.nrows(),
            self.rank,
            self.degree,
            self.radius,
            self.epsilon,
            self.poly.sup_error,
            self.pruned_bound
        )?;
        let line = |vals: &mut dyn Iterator<Item = f64>| vals.map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" ");
        writeln!(w, "coeffs {}", line(&mut self.poly.coeffs.iter().copied()))?;
        for (tag, m) in [("U", &self.u), ("V", &self.v)] {
            writeln!(w, "{tag}")?;
            for row in m.row_iter() {
                writeln!(w, "{}", line(&mut row.iter().copied()))?;
            }
        }
        Ok(())
    }
}

fn squared_diameter(x: &DMatrix<f64>) -> f64 {
    let n = x.nrows();
    let mut best = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            best = best.max((x.row(i) - x.row(j)).norm_squared());
        }
    }
    best
}

/// Factorizes the Gaussian kernel of the rows of `x` to entrywise accuracy
/// `eps`: half of it goes to the polynomial, half to pruning.
pub fn gaussian_lowrank_factor(x: &DMatrix<f64>, eps: f64, rank_cap: usize) -> Result<KernelFactorization> {
    let (n, d) = (x.nrows(), x.ncols());
    if n == 0 || d == 0 {
        return Err(Error::InvalidParameter("empty dataset".into()));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidParameter(format!("accuracy must be in (0, 1), got {eps}")));
    }
    let radius = squared_diameter(x).max(1.0);
    let q = poly_degree(radius, eps / 2.0)?;
    let poly = chebyshev_exp_coeffs(radius, q)?;
    let alphas = multi_indices(d, q);
    let full: usize = alphas.iter().map(|a| q + 1 - a.iter().sum::<u32>() as usize).sum();
    if full > rank_cap {
        return Err(Error::RankCap { rank: full, cap: rank_cap });
    }
    let center = DVector::from_fn(d, |j, _| x.column(j).mean());
    let mut features = Vec::with_capacity(full);
    for alpha in alphas {
        let j = alpha.iter().sum::<u32>();
        let size = q + 1 - j as usize;
        let inv_alpha: f64 = alpha.iter().map(|&e| 1.0 / factorial(e)).product();
        let block = DMatrix::from_fn(size, size, |k1, k2| {
            if k1 + k2 >= size {
                return 0.0;
            }
            let total = k1 as u32 + k2 as u32 + j;
            poly.coeffs[total as usize] * factorial(total) / (factorial(k1 as u32) * factorial(k2 as u32))
                * (-2f64).powi(j as i32)
                * inv_alpha
        });
        let eig = SymmetricEigen::new(block);
        for (r, &lam) in eig.eigenvalues.iter().enumerate() {
            if lam == 0.0 {
                continue;
            }
            let scale = lam.abs().sqrt();
            features.push(Feature {
                alpha: alpha.clone(),
                weights: eig.eigenvectors.column(r).iter().map(|v| v * scale).collect(),
                sign: lam.signum(),
            });
        }
    }
    let mut fac = KernelFactorization {
        u: DMatrix::zeros(0, 0),
        v: DMatrix::zeros(0, 0),
        degree: q,
        rank: 0,
        radius,
        epsilon: eps,
        poly,
        pruned_bound: 0.0,
        center,
        features,
    };
    let rows: Vec<DVector<f64>> = (0..n).map(|i| fac.feature_row(x.row(i).transpose().as_slice())).collect();
    let k = fac.features.len();
    let mag: Vec<f64> = (0..k).map(|f| rows.iter().map(|r| r[f] * r[f]).fold(0.0, f64::max)).collect();
    let top = mag.iter().copied().fold(0.0, f64::max);
    let mut keep = vec![true; k];
    let mut pruned = 0.0;
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| mag[a].total_cmp(&mag[b]));
    for f in order {
        if mag[f] >= 1e-14 * top || pruned + mag[f] > eps / 2.0 {
            break;
        }
        keep[f] = false;
        pruned += mag[f];
    }
    let kept: Vec<usize> = (0..k).filter(|&f| keep[f]).collect();
    let g = DMatrix::from_fn(n, kept.len(), |i, c| rows[i][kept[c]]);
    let mut u = g.clone();
    for (c, &f) in kept.iter().enumerate() {
        if fac.features[f].sign < 0.0 {
            u.column_mut(c).neg_mut();
        }
    }
    fac.features = kept.iter().map(|&f| fac.features[f].clone()).collect();
    fac.rank = kept.len();
    fac.u = u;
    fac.v = g;
    fac.pruned_bound = pruned;
    Ok(fac)
}

/// `(D_y U, D_y V)`, whose product is `(UVᵀ) ∘ yyᵀ`.
pub fn scale_by_labels(u: &DMatrix<f64>, v: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if y.len() != u.nrows() || y.len() != v.nrows() {
        return Err(Error::Dimension { what: "labels", expected: u.nrows(), found: y.len() });
    }
    if let Some(bad) = y.iter().find(|&&l| l != 1.0 && l != -1.0) {
        return Err(Error::InvalidParameter(format!("labels must be ±1, got {bad}")));
    }
    let mut su = u.clone();
    let mut sv = v.clone();
    for i in 0..y.len() {
        if y[i] < 0.0 {
            su.row_mut(i).neg_mut();
            sv.row_mut(i).neg_mut();
        }
    }
    Ok((su, sv))
}

/// An entrywise error `eps` on an `n × n` kernel moves `vᵀKv` by at most
/// `eps · n · ‖v‖₂²`.
pub fn linf_to_spectral(eps: f64, n: usize) -> f64 {
    eps * n as f64
}

pub fn exact_gaussian_kernel(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    if n > EXACT_KERNEL_CAP {
        return Err(Error::InvalidParameter(format!("exact kernel limited to {EXACT_KERNEL_CAP} points, got {n}")));
    }
    let mut k = DMatrix::identity(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v = (-(x.row(i) - x.row(j)).norm_squared()).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn binom(n: u64, k: u64) -> f64 {
        (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
    }

    #[test]
    fn loose_target_needs_low_degree() {
        assert!(poly_degree(1.0, 0.9).unwrap() <= 3);
        assert!(poly_degree(0.5, 0.1).is_err());
        assert!(chebyshev_exp_coeffs(1.0, 0).is_err());
    }

    #[test]
    fn degree_is_monotone_in_accuracy() {
        for b in [1.0, 2.5, 4.0, 9.0] {
            let mut last = 0;
            for e in [1e-1, 1e-2, 1e-3, 1e-4, 1e-6, 1e-8] {
                let q = poly_degree(b, e).unwrap();
                assert!(q >= last);
                last = q;
            }
        }
    }

    #[test]
    fn degree_tracks_scaling() {
        let q = poly_degree(4.0, 1e-6).unwrap() as f64;
        let s = (4.0 * 1e6f64.ln()).sqrt();
        assert!(q >= s / 4.0 && q <= 4.0 * s, "{q} vs {s}");
    }

    #[test]
    fn linear_fit_error_is_positive() {
        let p = chebyshev_exp_coeffs(1.0, 1).unwrap();
        assert!(p.sup_error > 0.0);
        assert!((p.eval(0.0) - 1.0).abs() <= p.sup_error);
    }

    #[test]
    fn error_decreases_with_degree() {
        for b in [1.0, 4.0] {
            let errs: Vec<f64> = (1..=20).map(|q| chebyshev_exp_coeffs(b, q).unwrap().sup_error).collect();
            for w in errs.windows(2) {
                assert!(w[1] <= w[0] || w[1] < 1e-14, "{errs:?}");
            }
        }
    }

    #[test]
    fn certificate_bounds_dense_check() {
        let p = chebyshev_exp_coeffs(3.0, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let z = rng.random_range(0.0..3.0);
            assert!((p.eval(z) - (-z).exp()).abs() <= p.sup_error * (1.0 + 1e-9));
        }
    }

    #[test]
    fn multi_index_count() {
        assert_eq!(multi_indices(3, 2).len(), 10);
        assert_eq!(multi_indices(1, 4).len(), 5);
        let m = multi_indices(4, 3);
        assert_eq!(m.len(), binom(7, 4) as usize);
        let mut sorted = m.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), m.len());
    }

    #[test]
    fn identical_points() {
        let x = DMatrix::from_row_slice(2, 2, &[0.3, -0.1, 0.3, -0.1]);
        let f = gaussian_lowrank_factor(&x, 1e-6, DEFAULT_RANK_CAP).unwrap();
        let k = &f.u * f.v.transpose();
        assert!(k.iter().all(|v| (v - 1.0).abs() <= 1e-6));
        assert_eq!(exact_gaussian_kernel(&x).unwrap(), DMatrix::from_element(2, 2, 1.0));
    }

    #[test]
    fn half_at_log_two() {
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 2f64.ln().sqrt()]);
        let f = gaussian_lowrank_factor(&x, 1e-6, DEFAULT_RANK_CAP).unwrap();
        let k = &f.u * f.v.transpose();
        assert_relative_eq!(k[(0, 1)], 0.5, epsilon = 1e-6);
    }

    #[test]
    fn factorization_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (n, d) = (60, 3);
        let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-0.5..0.5));
        let eps = 1e-6;
        let f = gaussian_lowrank_factor(&x, eps, DEFAULT_RANK_CAP).unwrap();
        let kt = &f.u * f.v.transpose();
        let k = exact_gaussian_kernel(&x).unwrap();
        let err = (&kt - &k).amax();
        assert!(err <= eps, "{err}");
        assert!(err <= f.entry_bound() + 1e-12, "{err} > {}", f.entry_bound());
        assert_eq!(kt, kt.transpose());
        assert!(f.rank as f64 <= binom(2 * d as u64 + 2 * f.degree as u64, 2 * f.degree as u64));
        for _ in 0..20 {
            let v = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            assert!(((&k - &kt) * &v).amax() <= eps * v.abs().sum());
            let spec = (v.dot(&(&k * &v)) - v.dot(&(&kt * &v))).abs();
            assert!(spec <= linf_to_spectral(eps, n) * v.norm_squared());
        }
        let (ur, vr) = f.rows_for(x.row(7).transpose().as_slice()).unwrap();
        assert!((ur - f.u.row(7).transpose()).amax() < 1e-12);
        assert!((vr - f.v.row(7).transpose()).amax() < 1e-12);
        assert!(f.rows_for(&[0.0]).is_err());
    }

    #[test]
    fn rank_cap_is_enforced() {
        let x = DMatrix::from_fn(10, 8, |i, j| ((i * 8 + j) as f64 * 0.37).sin());
        let r = gaussian_lowrank_factor(&x, 1e-4, 100);
        assert!(matches!(r, Err(Error::RankCap { cap: 100, .. })), "{r:?}");
    }

    #[test]
    fn label_scaling() {
        let one = DMatrix::from_element(2, 1, 1.0);
        let (u, v) = scale_by_labels(&one, &one, &DVector::from_vec(vec![1.0, -1.0])).unwrap();
        assert_eq!(&u * v.transpose(), DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
        let (u, v) = scale_by_labels(&one, &one, &DVector::from_element(2, 1.0)).unwrap();
        assert_eq!((u, v), (one.clone(), one.clone()));
        assert!(scale_by_labels(&one, &one, &DVector::from_vec(vec![1.0, 0.5])).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = DMatrix::from_fn(9, 3, |_, _| rng.random_range(-1.0..1.0));
        let v = DMatrix::from_fn(9, 3, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(9, |_, _| if rng.random_bool(0.5) { 1.0 } else { -1.0 });
        let (su, sv) = scale_by_labels(&u, &v, &y).unwrap();
        let want = (&u * v.transpose()).component_mul(&(&y * y.transpose()));
        assert!((su * sv.transpose() - want).amax() <= 1e-14);
    }

    #[test]
    fn spectral_conversion() {
        assert_relative_eq!(linf_to_spectral(1e-6, 100), 1e-4);
        assert_eq!(linf_to_spectral(0.0, 5), 0.0);
    }

    #[test]
    fn exact_kernel_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = DMatrix::from_fn(40, 3, |_, _| rng.random_range(-1.0..1.0));
        let k = exact_gaussian_kernel(&x).unwrap();
        assert!(k.diagonal().iter().all(|&v| v == 1.0));
        assert!(SymmetricEigen::new(k).eigenvalues.min() >= -1e-10);
    }

    #[test]
    fn dump_has_header_and_rows() {
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 0.5, 1.0]);
        let f = gaussian_lowrank_factor(&x, 1e-3, DEFAULT_RANK_CAP).unwrap();
        let mut buf = Vec::new();
        f.write_text(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().nth(1).unwrap().starts_with("n 3 rank"));
        assert_eq!(text.lines().count(), 3 + 2 + 6);
    }
}
