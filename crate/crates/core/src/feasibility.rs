//! Admissibility of stationary covariances and construction of smooth,
//! positive covariance paths between prescribed endpoints.
//!
//! The path construction works in the coordinates where the closed loop
//! `(A - BK₀, Bv)` is the `k`-dimensional shift pair
//!
//! ```text
//! A_k = [0 I; 0 0],   B_k = e_k
//! ```
//!
//! and recurses on `k`: the leading `(k-1)×(k-1)` block of `Σ` obeys the same
//! equation one size down with the column `σ₂` acting as the control, the
//! corner `σ₃` is free and gets inflated until `Σ(t) ≻ 0`, and the scalar base
//! case is `Σ(t) = exp(h(t))` with `h` a two-point Hermite polynomial. Every
//! level is kept in closed form so that `Σ`, `Σ̇` and `U` can be evaluated at any
//! time, not only on the output grid.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::matops::{self, ensure_pd, ensure_square, is_controllable, is_hurwitz, pseudo_inverse, rank, Mat, SymMat, XSolution};
use crate::schrodinger::{uniform_grid, FeedbackPolicy, GainSchedule};

/// Seed for the randomized direction search in [`heymann_reduction`].
pub const HEYMANN_SEED: u64 = 0x4865_796d_616e_6e00;

/// Controllable directions tried before settling on the best-conditioned one.
const HEYMANN_CANDIDATES: usize = 12;

/// Cap on bump doublings per recursion level.
pub const MAX_DOUBLINGS: u32 = 60;

/// Interior Schur complements must exceed this fraction of the linear
/// interpolant of their boundary values.
const SCHUR_MARGIN: f64 = 0.05;

/// Largest endpoint defect, relative to the boundary data, still treated as
/// roundoff of the similarity and blended away.
const MAX_ENDPOINT_DEFECT: f64 = 1e-6;

/// Largest number of segments tried. Boundary jets grow like `T^j` in
/// normalized time, so long horizons are split at interpolated waypoints.
const MAX_SEGMENTS: usize = 8;

/// Default number of grid intervals for sampled paths.
pub const DEFAULT_GRID: usize = 100;

/// Boundary-value steering data for `dx = Ax dt + Bu dt + B₁ dw`.
#[derive(Debug, Clone)]
pub struct SteeringProblem {
    pub a: Mat,
    pub b: Mat,
    pub b1: Mat,
    pub t: f64,
    pub sigma0: SymMat,
    pub sigma_t: SymMat,
}

impl SteeringProblem {
    pub fn new(a: Mat, b: Mat, b1: Mat, t: f64, sigma0: SymMat, sigma_t: SymMat) -> Result<Self> {
        ensure_square(&a)?;
        let n = a.nrows();
        if b.nrows() != n || b1.nrows() != n {
            return Err(Error::Dimension(format!("A is {n}x{n}, B has {} rows, B1 has {} rows", b.nrows(), b1.nrows())));
        }
        if sigma0.dim() != n || sigma_t.dim() != n {
            return Err(Error::Dimension(format!("boundary covariances must be {n}x{n}")));
        }
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {t}")));
        }
        ensure_pd(&sigma0, "Sigma0")?;
        ensure_pd(&sigma_t, "SigmaT")?;
        Ok(SteeringProblem { a, b, b1, t, sigma0, sigma_t })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// Noise intensity `B₁B₁'`.
    pub fn noise(&self) -> SymMat {
        SymMat::new(&self.b1 * self.b1.transpose())
    }
}

/// Orthogonal projector onto `R(B)^⊥`, `I - B B⁺`.
pub fn projector_perp(b: &Mat) -> Mat {
    let n = b.nrows();
    SymMat::new(Mat::identity(n, n) - b * pseudo_inverse(b)).into_inner()
}

/// `f_B(X) = B X' + X B'`.
pub fn fb_apply(x: &Mat, b: &Mat) -> Result<SymMat> {
    if x.shape() != b.shape() {
        return Err(Error::Dimension(format!("X is {:?} but B is {:?}", x.shape(), b.shape())));
    }
    Ok(SymMat::new(b * x.transpose() + x * b.transpose()))
}

/// `g_B(Y) = P Y P` with `P` the projector onto `R(B)^⊥`.
pub fn gb_apply(y: &SymMat, b: &Mat) -> Result<SymMat> {
    if y.dim() != b.nrows() {
        return Err(Error::Dimension(format!("Y is {0}x{0} but B has {1} rows", y.dim(), b.nrows())));
    }
    let p = projector_perp(b);
    Ok(SymMat::new(&p * y.as_mat() * &p))
}

/// `AΣ + ΣA' + B₁B₁'`.
pub fn lyapunov_residual(a: &Mat, b1: &Mat, sigma: &SymMat) -> SymMat {
    SymMat::new(a * sigma.as_mat() + sigma.as_mat() * a.transpose() + b1 * b1.transpose())
}

fn check_stationary_dims(a: &Mat, b: &Mat, b1: &Mat, sigma: &SymMat) -> Result<()> {
    ensure_square(a)?;
    let n = a.nrows();
    if b.nrows() != n || b1.nrows() != n || sigma.dim() != n {
        return Err(Error::Dimension(format!(
            "A is {n}x{n}; B, B1 and Sigma must have {n} rows (got {}, {}, {})",
            b.nrows(),
            b1.nrows(),
            sigma.dim()
        )));
    }
    Ok(())
}

/// `rank [[AΣ+ΣA'+B₁B₁', B], [B', 0]] == rank [[0, B], [B', 0]]`.
pub fn rank_condition(a: &Mat, b: &Mat, b1: &Mat, sigma: &SymMat) -> Result<bool> {
    check_stationary_dims(a, b, b1, sigma)?;
    ensure_pd(sigma, "Sigma")?;
    let (n, m) = b.shape();
    let r = lyapunov_residual(a, b1, sigma);
    let mut full = Mat::zeros(n + m, n + m);
    full.view_mut((0, n), (n, m)).copy_from(b);
    full.view_mut((n, 0), (m, n)).copy_from(&b.transpose());
    let reference = full.clone();
    full.view_mut((0, 0), (n, n)).copy_from(r.as_mat());
    Ok(rank(&full) == rank(&reference))
}

/// `R(B) ⊆ R(B₁)`.
pub fn range_inclusion(b: &Mat, b1: &Mat) -> bool {
    let mut stacked = Mat::zeros(b.nrows(), b.ncols() + b1.ncols());
    stacked.view_mut((0, 0), b1.shape()).copy_from(b1);
    stacked.view_mut((0, b1.ncols()), b.shape()).copy_from(b);
    rank(&stacked) == rank(b1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Admissible,
    AdmissibleUnverifiedStability,
    Inadmissible,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Admissible => "admissible",
            Verdict::AdmissibleUnverifiedStability => "admissible_unverified_stability",
            Verdict::Inadmissible => "inadmissible",
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdmissibilityReport {
    pub rank_ok: bool,
    pub x: Option<Mat>,
    pub k: Option<Mat>,
    pub hurwitz_ok: bool,
    pub range_inclusion_ok: bool,
    pub verdict: Verdict,
}

/// Decides whether `Σ` can be held stationary by a constant gain `u = -Kx`.
///
/// Candidate solutions of `AΣ + ΣA' + B₁B₁' + BX' + XB' = 0` are tried in
/// order (minimum-norm `X`, then the power-optimal `X`); the first whose gain
/// `K = -X'Σ⁻¹` makes `A - BK` Hurwitz settles the verdict.
pub fn stationary_admissible(a: &Mat, b: &Mat, b1: &Mat, sigma: &SymMat) -> Result<AdmissibilityReport> {
    check_stationary_dims(a, b, b1, sigma)?;
    ensure_pd(sigma, "Sigma")?;
    let rank_ok = rank_condition(a, b, b1, sigma)?;
    let range_inclusion_ok = range_inclusion(b, b1);
    let rhs = lyapunov_residual(a, b1, sigma);
    let sigma_inv = sigma.inverse()?;

    let (particular, null_basis) = match matops::solve_linear_for_x(b, &rhs)? {
        XSolution::Solvable { particular, null_basis } => (particular, null_basis),
        XSolution::Infeasible { .. } => {
            return Ok(AdmissibilityReport {
                rank_ok,
                x: None,
                k: None,
                hurwitz_ok: false,
                range_inclusion_ok,
                verdict: Verdict::Inadmissible,
            })
        }
    };

    let mut candidates = vec![particular.clone()];
    if !null_basis.is_empty() {
        candidates.push(crate::stationary::minimize_power_over_affine(&particular, &null_basis, &sigma_inv)?);
    }
    let mut first = None;
    for x in candidates {
        let k = -x.transpose() * sigma_inv.as_mat();
        if is_hurwitz(&(a - b * &k))? {
            return Ok(AdmissibilityReport {
                rank_ok,
                x: Some(x),
                k: Some(k),
                hurwitz_ok: true,
                range_inclusion_ok,
                verdict: Verdict::Admissible,
            });
        }
        first.get_or_insert((x, k));
    }
    let (x, k) = first.expect("at least one candidate");
    Ok(AdmissibilityReport {
        rank_ok,
        x: Some(x),
        k: Some(k),
        hurwitz_ok: false,
        range_inclusion_ok,
        verdict: Verdict::AdmissibleUnverifiedStability,
    })
}

/// Feedback `K₀`, input direction `v` and similarity `S` with
/// `S⁻¹(A - BK₀)S = A_n` (shift) and `S⁻¹Bv = e_n`.
#[derive(Debug, Clone)]
pub struct HeymannReduction {
    pub k0: Mat,
    pub v: DVector<f64>,
    pub s: Mat,
}

/// `k` with `A - b k` nilpotent (Ackermann's formula with all poles at 0).
fn deadbeat_row(a: &Mat, b: &Mat) -> Result<Mat> {
    let n = a.nrows();
    let c = matops::controllability_matrix(a, b)?;
    let c_inv = c.try_inverse().ok_or(Error::NotControllable)?;
    let mut a_pow = Mat::identity(n, n);
    for _ in 0..n {
        a_pow = &a_pow * a;
    }
    Ok(c_inv.rows(n - 1, 1) * a_pow)
}

pub fn heymann_reduction(a: &Mat, b: &Mat) -> Result<HeymannReduction> {
    Ok(heymann_candidates(a, b)?.swap_remove(0))
}

/// Distinct reductions ordered by the condition number of `S`, best first.
/// Single-input pairs have exactly one.
pub fn heymann_candidates(a: &Mat, b: &Mat) -> Result<Vec<HeymannReduction>> {
    ensure_square(a)?;
    let (n, m) = b.shape();
    if a.nrows() != n {
        return Err(Error::Dimension(format!("A is {0}x{0} but B has {n} rows", a.nrows())));
    }
    if m == 0 || !is_controllable(a, b)? {
        return Err(Error::NotControllable);
    }
    let scale = a.norm().max(1.0) / b.norm().max(f64::MIN_POSITIVE);
    let mut rng = ChaCha8Rng::seed_from_u64(HEYMANN_SEED);

    // Every controllable (v, K₁) gives a valid reduction, but the Krylov
    // similarity can be badly conditioned.
    let mut found: Vec<(f64, HeymannReduction)> = Vec::new();
    let mut consider = |v: DVector<f64>, k1: Mat| -> Result<()> {
        let red = reduction_for(a, b, v, k1)?;
        found.push((condition_number(&red.s), red));
        Ok(())
    };
    let mut candidates = 0;
    if m == 1 {
        let v = DVector::from_element(1, 1.0);
        if is_controllable(a, &as_column(b * &v))? {
            consider(v, Mat::zeros(1, n))?;
            candidates = HEYMANN_CANDIDATES;
        }
    }
    for attempt in 0..200 {
        if candidates >= HEYMANN_CANDIDATES {
            break;
        }
        let mut v = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let nv = v.norm();
        if nv == 0.0 {
            continue;
        }
        v /= nv;
        // Random feedback makes A - BK₁ cyclic; needed when no single
        // direction of B controls A itself (e.g. A = 0 with n > 1).
        let k1 = if attempt < 40 { Mat::zeros(m, n) } else { Mat::from_fn(m, n, |_, _| scale * rng.sample::<f64, _>(StandardNormal)) };
        if is_controllable(&(a - b * &k1), &as_column(b * &v))? {
            consider(v, k1)?;
            candidates += 1;
        }
    }
    if found.is_empty() {
        return Err(Error::NoConvergence("Heymann direction search"));
    }
    found.sort_by(|x, y| x.0.total_cmp(&y.0));
    Ok(found.into_iter().map(|(_, red)| red).collect())
}

fn condition_number(m: &Mat) -> f64 {
    let sv = matops::singular_values(m);
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if smin > 0.0 {
        smax / smin
    } else {
        f64::INFINITY
    }
}

fn reduction_for(a: &Mat, b: &Mat, mut v: DVector<f64>, k1: Mat) -> Result<HeymannReduction> {
    let n = a.nrows();
    let bv_norm = (b * &v).norm();
    v /= bv_norm;
    let bv = as_column(b * &v);
    let a1 = a - b * &k1;
    let k_row = deadbeat_row(&a1, &bv)?;
    let k0 = k1 + &v * k_row;
    let a0 = a - b * &k0;
    let mut s = Mat::zeros(n, n);
    let mut col = bv.clone();
    for j in (0..n).rev() {
        s.set_column(j, &col.column(0));
        col = &a0 * col;
    }
    Ok(HeymannReduction { k0, v, s })
}

fn as_column(v: DVector<f64>) -> Mat {
    Mat::from_column_slice(v.len(), 1, v.as_slice())
}

/// `A_k` (ones on the superdiagonal) and `B_k = e_k`.
pub fn shift_pair(k: usize) -> (Mat, Mat) {
    let a = Mat::from_fn(k, k, |i, j| if j == i + 1 { 1.0 } else { 0.0 });
    let mut b = Mat::zeros(k, 1);
    b[(k - 1, 0)] = 1.0;
    (a, b)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Taylor coefficients at `x` of the polynomial with monomial `coeffs`.
fn monomial_taylor(coeffs: &[f64], x: f64, order: usize) -> Vec<f64> {
    (0..=order).map(|j| coeffs.iter().enumerate().skip(j).map(|(i, &c)| c * binomial(i, j) * x.powi((i - j) as i32)).sum()).collect()
}

/// Taylor coefficients in `τ` of `y^p` where `y = x` at the expansion point
/// and `dy/dτ = sign`.
fn power_taylor(x: f64, p: usize, sign: f64, order: usize) -> Vec<f64> {
    (0..=order).map(|j| if j > p { 0.0 } else { binomial(p, j) * sign.powi(j as i32) * x.powi((p - j) as i32) }).collect()
}

fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    (0..a.len()).map(|j| (0..=j).map(|i| a[i] * b[j - i]).sum()).collect()
}

fn to_time(mut c: Vec<f64>, horizon: f64) -> Vec<f64> {
    for (j, v) in c.iter_mut().enumerate() {
        *v /= horizon.powi(j as i32);
    }
    c
}

/// Two-point Hermite interpolant on `τ = t / T ∈ [0, 1]`, stored as
/// `L(τ)(1 - τ)^{D+1} + R(1 - τ)τ^{D+1}`. Each end is reproduced without the
/// cancellation a monomial expansion suffers at `τ = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitePoly {
    left: Vec<f64>,
    right: Vec<f64>,
}

impl HermitePoly {
    pub fn degree(&self) -> usize {
        2 * self.left.len() - 1
    }

    pub fn eval(&self, tau: f64) -> f64 {
        self.taylor(tau, 0)[0]
    }

    /// Taylor coefficients `p^{(j)}(τ)/j!` for `j = 0..=order`.
    pub fn taylor(&self, tau: f64, order: usize) -> Vec<f64> {
        let p = self.left.len();
        let left = convolve(&monomial_taylor(&self.left, tau, order), &power_taylor(1.0 - tau, p, -1.0, order));
        let mut right = monomial_taylor(&self.right, 1.0 - tau, order);
        for (j, v) in right.iter_mut().enumerate() {
            if j % 2 == 1 {
                *v = -*v;
            }
        }
        let right = convolve(&right, &power_taylor(tau, p, 1.0, order));
        left.iter().zip(&right).map(|(a, b)| a + b).collect()
    }

    /// Taylor coefficients in physical time `t = T τ`.
    pub fn taylor_in_time(&self, t: f64, horizon: f64, order: usize) -> Vec<f64> {
        to_time(self.taylor(t / horizon, order), horizon)
    }
}

/// `τ^p (1 - τ)^p`, vanishing with its first `p - 1` derivatives at both
/// ends. Kept in product form since it is multiplied by large inflation
/// factors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bump {
    p: usize,
}

impl Bump {
    pub fn new(p: usize) -> Self {
        Bump { p }
    }

    pub fn eval(&self, tau: f64) -> f64 {
        (tau * (1.0 - tau)).powi(self.p as i32)
    }

    /// Taylor coefficients in physical time `t = T τ`, `0..=order`.
    pub fn taylor_in_time(&self, t: f64, horizon: f64, order: usize) -> Vec<f64> {
        let tau = t / horizon;
        let c = convolve(&power_taylor(tau, self.p, 1.0, order), &power_taylor(1.0 - tau, self.p, -1.0, order));
        to_time(c, horizon)
    }
}

/// Two-point Hermite interpolant matching the Taylor coefficients `at0[j]`
/// at `τ = 0` and `at1[j]` at `τ = 1`, `j = 0..=D`; degree `2D + 1`.
pub fn hermite_two_point(at0: &[f64], at1: &[f64]) -> Result<HermitePoly> {
    if at0.len() != at1.len() || at0.is_empty() {
        return Err(Error::InvalidArgument("Hermite data must have equal, non-zero length".into()));
    }
    let d = at0.len() - 1;
    // L ≡ P₀(τ)(1 - τ)^{-(D+1)} and R ≡ P₁(1 - s)(1 - s)^{-(D+1)} to order D.
    let side = |at: &[f64], sign: f64| -> Vec<f64> {
        (0..=d).map(|i| (0..=i).map(|j| at[j] * sign.powi(j as i32) * binomial(d + i - j, i - j)).sum()).collect()
    };
    Ok(HermitePoly { left: side(at0, 1.0), right: side(at1, -1.0) })
}

/// Taylor coefficients of `exp(h)` from those of `h`.
pub fn exp_series(h: &[f64]) -> Vec<f64> {
    let mut s = vec![0.0; h.len()];
    if h.is_empty() {
        return s;
    }
    s[0] = h[0].exp();
    for n in 1..h.len() {
        s[n] = (1..=n).map(|k| k as f64 * h[k] * s[n - k]).sum::<f64>() / n as f64;
    }
    s
}

/// Taylor coefficients of `log(s)` from those of `s` (`s[0] > 0`).
pub fn log_series(s: &[f64]) -> Vec<f64> {
    let mut h = vec![0.0; s.len()];
    if s.is_empty() {
        return h;
    }
    h[0] = s[0].ln();
    for n in 1..s.len() {
        let acc: f64 = (1..n).map(|k| k as f64 * h[k] * s[n - k]).sum();
        h[n] = (n as f64 * s[n] - acc) / (n as f64 * s[0]);
    }
    h
}

/// Scalar path `Σ(t) = exp(h(t))` with `h` the cubic Hermite interpolant of
/// `h(0) = log σ₀`, `h(T) = log σ_T`, `ḣ(0) = (2U₀ + Q)/σ₀`,
/// `ḣ(T) = (2U_T + Q)/σ_T`; the control is `U₁ = (Σ̇ - Q)/2`.
#[derive(Debug, Clone)]
pub struct ScalarLogPath {
    pub a0: f64,
    pub at: f64,
    pub b0: f64,
    pub bt: f64,
    pub t: f64,
    pub q: f64,
}

pub fn scalar_log_interpolation(sigma0: f64, sigma_t: f64, t: f64, u0: f64, ut: f64, q: f64) -> Result<ScalarLogPath> {
    if !(sigma0 > 0.0) || !(sigma_t > 0.0) {
        return Err(Error::NotPositiveDefinite("scalar boundary variance".into()));
    }
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {t}")));
    }
    Ok(ScalarLogPath { a0: sigma0.ln(), at: sigma_t.ln(), b0: (2.0 * u0 + q) / sigma0, bt: (2.0 * ut + q) / sigma_t, t, q })
}

impl ScalarLogPath {
    /// `(h(t), ḣ(t))`.
    pub fn h(&self, t: f64) -> (f64, f64) {
        let tt = self.t;
        let c2 = (self.at - self.a0 - tt * self.b0) / (tt * tt);
        let c3 = (tt * self.b0 + tt * self.bt - 2.0 * self.at + 2.0 * self.a0) / tt.powi(3);
        let h = self.a0 + self.b0 * t + c2 * t * t + c3 * t * t * (t - tt);
        let dh = self.b0 + 2.0 * c2 * t + c3 * (3.0 * t * t - 2.0 * tt * t);
        (h, dh)
    }

    pub fn sigma(&self, t: f64) -> f64 {
        self.h(t).0.exp()
    }

    pub fn sigma_dot(&self, t: f64) -> f64 {
        let (h, dh) = self.h(t);
        dh * h.exp()
    }

    pub fn control(&self, t: f64) -> f64 {
        (self.sigma_dot(t) - self.q) / 2.0
    }
}

/// One level of the shift-form recursion, in closed form.
#[derive(Debug, Clone)]
enum Level {
    Scalar { h: HermitePoly, q: f64, horizon: f64 },
    Block { sub: Box<Level>, sigma3: HermitePoly, bump: Bump, scale: f64, q_col: DVector<f64>, q_kk: f64, horizon: f64 },
}

/// Taylor jets at one time: `Σ` coefficients `0..=d+1` and control
/// coefficients `0..=d`.
type Jets = (Vec<Mat>, Vec<DVector<f64>>);

impl Level {
    fn jets(&self, t: f64, d: usize) -> Jets {
        match self {
            Level::Scalar { h, q, horizon } => {
                let s = exp_series(&h.taylor_in_time(t, *horizon, d + 1));
                let u = (0..=d)
                    .map(|j| {
                        let qj = if j == 0 { *q } else { 0.0 };
                        DVector::from_element(1, ((j + 1) as f64 * s[j + 1] - qj) / 2.0)
                    })
                    .collect();
                (s.into_iter().map(|v| Mat::from_element(1, 1, v)).collect(), u)
            }
            Level::Block { sub, sigma3, bump, scale, q_col, q_kk, horizon } => {
                let (sub_s, sub_u) = sub.jets(t, d + 1);
                let base = sigma3.taylor_in_time(t, *horizon, d + 1);
                let extra = bump.taylor_in_time(t, *horizon, d + 1);
                let s3: Vec<f64> = base.iter().zip(&extra).map(|(a, b)| a + scale * b).collect();
                let k = q_col.len() + 1;
                let sig = (0..=d + 1)
                    .map(|j| {
                        let mut m = Mat::zeros(k, k);
                        m.view_mut((0, 0), (k - 1, k - 1)).copy_from(&sub_s[j]);
                        m.view_mut((0, k - 1), (k - 1, 1)).copy_from(&sub_u[j]);
                        m.view_mut((k - 1, 0), (1, k - 1)).copy_from(&sub_u[j].transpose());
                        m[(k - 1, k - 1)] = s3[j];
                        m
                    })
                    .collect();
                let u = (0..=d)
                    .map(|j| {
                        let mut u = DVector::zeros(k);
                        let first = j == 0;
                        for i in 0..k - 1 {
                            let shifted = if i + 1 < k - 1 { sub_u[j][i + 1] } else { s3[j] };
                            let qi = if first { q_col[i] } else { 0.0 };
                            u[i] = (j + 1) as f64 * sub_u[j + 1][i] - shifted - qi;
                        }
                        let qk = if first { *q_kk } else { 0.0 };
                        u[k - 1] = ((j + 1) as f64 * s3[j + 1] - qk) / 2.0;
                        u
                    })
                    .collect();
                (sig, u)
            }
        }
    }

    fn doublings(&self, out: &mut Vec<u32>) {
        if let Level::Block { sub, scale, .. } = self {
            sub.doublings(out);
            out.push(scale.log2().round() as u32);
        }
    }
}

/// Boundary Taylor data for one endpoint of a level: `Σ` and control
/// coefficients `0..=r`.
struct EndData {
    sigma: Mat,
    control: Vec<DVector<f64>>,
}

fn build_level(k: usize, q: &Mat, start: &EndData, end: &EndData, horizon: f64, scan: &[f64]) -> Result<Level> {
    if k == 1 {
        let series = |e: &EndData| {
            let mut s = vec![e.sigma[(0, 0)]];
            for (j, u) in e.control.iter().enumerate() {
                let qj = if j == 0 { q[(0, 0)] } else { 0.0 };
                s.push((2.0 * u[0] + qj) / (j + 1) as f64);
            }
            let mut h = log_series(&s);
            for (j, v) in h.iter_mut().enumerate() {
                *v *= horizon.powi(j as i32);
            }
            h
        };
        let h = hermite_two_point(&series(start), &series(end))?;
        return Ok(Level::Scalar { h, q: q[(0, 0)], horizon });
    }

    let q_col = q.view((0, k - 1), (k - 1, 1)).column(0).clone_owned();
    let q_kk = q[(k - 1, k - 1)];
    let q_sub = q.view((0, 0), (k - 1, k - 1)).clone_owned();

    // Corner σ₃ and column σ₂ coefficients implied by the control data.
    let split = |e: &EndData| -> (Vec<f64>, EndData) {
        let r = e.control.len();
        let mut s3 = vec![e.sigma[(k - 1, k - 1)]];
        let mut s2 = vec![e.sigma.view((0, k - 1), (k - 1, 1)).column(0).clone_owned()];
        for j in 0..r {
            let first = j == 0;
            let u = &e.control[j];
            let qk = if first { q_kk } else { 0.0 };
            let mut next = DVector::zeros(k - 1);
            for i in 0..k - 1 {
                let shifted = if i + 1 < k - 1 { s2[j][i + 1] } else { s3[j] };
                let qi = if first { q_col[i] } else { 0.0 };
                next[i] = (u[i] + shifted + qi) / (j + 1) as f64;
            }
            s3.push((2.0 * u[k - 1] + qk) / (j + 1) as f64);
            s2.push(next);
        }
        let sub = EndData { sigma: e.sigma.view((0, 0), (k - 1, k - 1)).clone_owned(), control: s2 };
        for (j, v) in s3.iter_mut().enumerate() {
            *v *= horizon.powi(j as i32);
        }
        (s3, sub)
    };
    let (s3_start, sub_start) = split(start);
    let (s3_end, sub_end) = split(end);
    let sub = build_level(k - 1, &q_sub, &sub_start, &sub_end, horizon, scan)?;
    let sigma3 = hermite_two_point(&s3_start, &s3_end)?;
    let bump = Bump::new(s3_start.len().max(2));

    // Schur complement σ₃ - σ₂'Σ₁⁻¹σ₂ on the scan, without the bump.
    let mut deficits = Vec::with_capacity(scan.len());
    for &t in scan {
        let (s, u) = sub.jets(t, 0);
        let tau = t / horizon;
        let sigma1 = &s[0];
        let sigma2 = &u[0];
        let chol = sigma1.clone().cholesky().ok_or_else(|| Error::NotPositiveDefinite(format!("level {} block at t = {t}", k - 1)))?;
        let quad = sigma2.dot(&chol.solve(sigma2));
        deficits.push((sigma3.eval(tau) - quad, bump.eval(tau)));
    }
    // Keep the interior Schur complement above a fraction of its boundary
    // values so that positivity survives the back-transformation.
    let (d0, d1) = (deficits[0].0, deficits[deficits.len() - 1].0);
    let floor = |t: f64| SCHUR_MARGIN * (d0 + (d1 - d0) * t / horizon);
    let mut scale = 1.0;
    for _ in 0..=MAX_DOUBLINGS {
        if deficits.iter().zip(scan).all(|(&(d, b), &t)| d + scale * b > floor(t)) {
            return Ok(Level::Block { sub: Box::new(sub), sigma3, bump, scale, q_col, q_kk, horizon });
        }
        scale *= 2.0;
    }
    Err(Error::InflationLimit(MAX_DOUBLINGS))
}

/// Sampled covariance path with its auxiliary input `U(t)`.
#[derive(Debug, Clone)]
pub struct CovariancePath {
    pub grid: Vec<f64>,
    pub sigma: Vec<SymMat>,
    pub u: Vec<Mat>,
}

impl CovariancePath {
    pub fn min_eigenvalues(&self) -> Vec<f64> {
        self.sigma.iter().map(SymMat::min_eigenvalue).collect()
    }
}

/// One polynomial piece of a path, on `[start, start + horizon]`.
#[derive(Debug, Clone)]
struct Segment {
    start: f64,
    horizon: f64,
    level: Level,
    /// Back-transformation roundoff at each end, removed by a cubic blend
    /// with zero end slopes.
    defect: (Mat, Mat),
}

/// Closed-form path produced by [`construct_covariance_path`]: one or more
/// segments joined with continuous `Σ` and `U`.
#[derive(Debug, Clone)]
pub struct PathGenerator {
    segments: Vec<Segment>,
    reduction: HeymannReduction,
    horizon: f64,
}

impl PathGenerator {
    /// `(Σ(t), Σ̇(t), U(t))`.
    pub fn eval(&self, t: f64) -> (SymMat, Mat, Mat) {
        let seg = self.segments.iter().rev().find(|g| g.start <= t).unwrap_or(&self.segments[0]);
        self.eval_segment(seg, t - seg.start)
    }

    fn eval_segment(&self, seg: &Segment, t: f64) -> (SymMat, Mat, Mat) {
        let (s, u) = seg.level.jets(t, 0);
        let sm = &self.reduction.s;
        let tau = t / seg.horizon;
        let (w0, w1) = ((1.0 - tau).powi(2) * (1.0 + 2.0 * tau), tau * tau * (3.0 - 2.0 * tau));
        let dw = 6.0 * tau * (1.0 - tau) / seg.horizon;
        let (e0, e1) = &seg.defect;
        let sigma = SymMat::new(sm * &s[0] * sm.transpose() + e0 * w0 + e1 * w1);
        let sigma_dot = SymMat::new(sm * &s[1] * sm.transpose() + (e1 - e0) * dw).into_inner();
        let w = sm * &u[0];
        let uu = -(sigma.as_mat() * self.reduction.k0.transpose()) + &w * self.reduction.v.transpose();
        (sigma, sigma_dot, uu)
    }

    pub fn sigma(&self, t: f64) -> SymMat {
        self.eval(t).0
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn sample(&self, grid: &[f64]) -> CovariancePath {
        let (sigma, u) = grid
            .iter()
            .map(|&t| {
                let (s, _, u) = self.eval(t);
                (s, u)
            })
            .unzip();
        CovariancePath { grid: grid.to_vec(), sigma, u }
    }
}

/// `K(t) = -U(t)'Σ(t)⁻¹`, evaluated exactly from the closed form.
impl GainSchedule for PathGenerator {
    fn gain(&self, t: f64) -> Mat {
        let (sigma, _, u) = self.eval(t);
        let inv = sigma.inverse().expect("constructed paths are positive definite");
        -u.transpose() * inv.as_mat()
    }
}

#[derive(Debug, Clone)]
pub struct FeasiblePath {
    pub path: CovariancePath,
    pub generator: PathGenerator,
    /// Smallest eigenvalue of `Σ(t)` over a scan ten times finer than the grid.
    pub scan_min_eigenvalue: f64,
    /// Bump doublings used at each recursion level, innermost first
    /// (largest over segments).
    pub doublings: Vec<u32>,
    /// Number of polynomial segments.
    pub segments: usize,
}

/// Builds a smooth path `Σ(t) ≻ 0` from `Σ₀` to `Σ_T` with input `U(t)`
/// satisfying `Σ̇ = AΣ + ΣA' + BU' + UB' + Q`, sampled on `n_grid` intervals.
///
/// `u0`/`ut` prescribe `U(0)`/`U(T)`. They are honored exactly when
/// `U + ΣK₀'` is a multiple of `v'` (always for single-input systems);
/// otherwise their projection on that direction is used.
pub fn construct_covariance_path(problem: &SteeringProblem, q: &SymMat, u0: &Mat, ut: &Mat, n_grid: usize) -> Result<FeasiblePath> {
    let (n, m) = (problem.n(), problem.m());
    if q.dim() != n {
        return Err(Error::Dimension(format!("Q must be {n}x{n}")));
    }
    if u0.shape() != (n, m) || ut.shape() != (n, m) {
        return Err(Error::Dimension(format!("boundary inputs must be {n}x{m}")));
    }
    if n_grid < 1 {
        return Err(Error::InvalidArgument("grid needs at least one interval".into()));
    }
    if q.min_eigenvalue() < -1e-12 * (1.0 + q.norm()) {
        return Err(Error::InvalidArgument("Q must be positive semidefinite".into()));
    }
    // A path that does not survive floating point is retried with the next
    // reduction (multi-input pairs only), then with more segments.
    let candidates = heymann_candidates(&problem.a, &problem.b)?;
    let mut last = None;
    let mut pieces = 1;
    while pieces <= MAX_SEGMENTS {
        for red in &candidates {
            match build_path(problem, q, u0, ut, n_grid, red, pieces) {
                Err(e @ (Error::InflationLimit(_) | Error::NotPositiveDefinite(_) | Error::Singular(_))) => last = Some(e),
                other => return other,
            }
        }
        pieces += 1;
    }
    Err(last.expect("at least one reduction"))
}

fn build_path(
    problem: &SteeringProblem,
    q: &SymMat,
    u0: &Mat,
    ut: &Mat,
    n_grid: usize,
    red: &HeymannReduction,
    pieces: usize,
) -> Result<FeasiblePath> {
    let n = problem.n();
    let s_inv = red.s.clone().try_inverse().ok_or_else(|| Error::Singular("Heymann similarity".into()))?;
    let congruence = |m: &Mat| SymMat::new(&s_inv * m * s_inv.transpose()).into_inner();
    let vv = red.v.norm_squared();
    let end = |sigma: &SymMat, u: &Mat| EndData {
        sigma: congruence(sigma.as_mat()),
        control: vec![&s_inv * ((u + sigma.as_mat() * red.k0.transpose()) * &red.v / vv)],
    };
    // Interior waypoints lie on the segment from Σ₀ to Σ_T, with the input
    // whose Σ̇ is closest to the secant.
    let secant = (problem.sigma_t.as_mat() - problem.sigma0.as_mat()) / problem.t;
    let waypoint = |i: usize| {
        let w = i as f64 / pieces as f64;
        let sigma = SymMat::new(problem.sigma0.as_mat() * (1.0 - w) + problem.sigma_t.as_mat() * w);
        let u = match i {
            0 => u0.clone(),
            _ if i == pieces => ut.clone(),
            _ => {
                let drift = &problem.a * sigma.as_mat() + sigma.as_mat() * problem.a.transpose() + q.as_mat();
                matops::least_squares_x(&problem.b, &SymMat::new(drift - &secant))
            }
        };
        (sigma, u)
    };
    let q_red = congruence(q.as_mat());
    let scan = uniform_grid(problem.t, 10 * n_grid);
    let step = problem.t / pieces as f64;
    let mut generator = PathGenerator { segments: Vec::with_capacity(pieces), reduction: red.clone(), horizon: problem.t };
    for i in 0..pieces {
        let (start, end_t) = (i as f64 * step, (i + 1) as f64 * step);
        let ((s0, v0), (s1, v1)) = (waypoint(i), waypoint(i + 1));
        let mut local: Vec<f64> = scan.iter().filter(|&&t| t > start && t < end_t).map(|t| t - start).collect();
        local.insert(0, 0.0);
        local.push(step);
        let level = build_level(n, &q_red, &end(&s0, &v0), &end(&s1, &v1), step, &local)?;
        let mut seg = Segment { start, horizon: step, level, defect: (Mat::zeros(n, n), Mat::zeros(n, n)) };
        let e0 = s0.as_mat() - generator.eval_segment(&seg, 0.0).0.as_mat();
        let e1 = s1.as_mat() - generator.eval_segment(&seg, step).0.as_mat();
        let defect = e0.norm().max(e1.norm());
        if !(defect <= MAX_ENDPOINT_DEFECT * (1.0 + s0.norm().max(s1.norm()))) {
            return Err(Error::Singular(format!("endpoint mismatch {defect:e}; similarity too ill-conditioned")));
        }
        seg.defect = (e0, e1);
        generator.segments.push(seg);
    }

    let scan_min_eigenvalue = scan.iter().map(|&t| generator.sigma(t).min_eigenvalue()).fold(f64::INFINITY, f64::min);
    if !(scan_min_eigenvalue > 0.0) {
        return Err(Error::NotPositiveDefinite(format!(
            "constructed path (min eigenvalue {scan_min_eigenvalue:e} after back-transformation)"
        )));
    }
    let mut path = generator.sample(&uniform_grid(problem.t, n_grid));
    let last = path.sigma.len() - 1;
    path.sigma[0] = problem.sigma0.clone();
    path.sigma[last] = problem.sigma_t.clone();
    let mut doublings = Vec::new();
    for seg in &generator.segments {
        let mut d = Vec::new();
        seg.level.doublings(&mut d);
        doublings.resize(d.len(), 0);
        doublings.iter_mut().zip(d).for_each(|(a, b)| *a = (*a).max(b));
    }
    Ok(FeasiblePath { path, generator, scan_min_eigenvalue, doublings, segments: pieces })
}

/// Time-varying filter `dξ = (A - BK(t))ξ dt + B dw`, `dy = -K(t)ξ dt + dw`
/// whose state reproduces a covariance path.
///
/// `K(t)` is the cubic Hermite interpolant of the sampled gains with
/// second-order difference slopes; `policy` keeps the raw samples.
#[derive(Debug, Clone)]
pub struct FiniteFilter {
    pub a: Mat,
    pub b: Mat,
    pub policy: FeedbackPolicy,
}

impl FiniteFilter {
    pub fn state_matrix(&self, t: f64) -> Mat {
        &self.a - &self.b * self.gain(t)
    }

    pub fn input_matrix(&self) -> &Mat {
        &self.b
    }

    pub fn output_gain(&self, t: f64) -> Mat {
        -self.gain(t)
    }

    fn slope(&self, i: usize) -> Mat {
        let (g, k) = (&self.policy.grid, &self.policy.gains);
        let last = g.len() - 1;
        match i {
            _ if last == 1 => (&k[1] - &k[0]) / (g[1] - g[0]),
            0 => (&k[1] * 4.0 - &k[0] * 3.0 - &k[2]) / (g[2] - g[0]),
            _ if i == last => (&k[last] * 3.0 - &k[last - 1] * 4.0 + &k[last - 2]) / (g[last] - g[last - 2]),
            _ => (&k[i + 1] - &k[i - 1]) / (g[i + 1] - g[i - 1]),
        }
    }
}

impl GainSchedule for FiniteFilter {
    fn gain(&self, t: f64) -> Mat {
        let (g, k) = (&self.policy.grid, &self.policy.gains);
        let last = g.len() - 1;
        if last == 0 || t <= g[0] || t >= g[last] {
            return self.policy.gain(t);
        }
        let i = g.partition_point(|&x| x <= t) - 1;
        let h = g[i + 1] - g[i];
        let s = (t - g[i]) / h;
        let (s2, s3) = (s * s, s * s * s);
        &k[i] * (2.0 * s3 - 3.0 * s2 + 1.0)
            + self.slope(i) * (h * (s3 - 2.0 * s2 + s))
            + &k[i + 1] * (3.0 * s2 - 2.0 * s3)
            + self.slope(i + 1) * (h * (s3 - s2))
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.policy.grid.clone()
    }
}

/// `K(t_k) = -U(t_k)'Σ(t_k)⁻¹` on the path grid.
pub fn external_input_realization_finite(path: &CovariancePath, a: &Mat, b: &Mat) -> Result<FiniteFilter> {
    let gains = path
        .sigma
        .iter()
        .zip(&path.u)
        .zip(&path.grid)
        .map(|((s, u), t)| {
            let inv = s.inverse().map_err(|_| Error::Singular(format!("Sigma at t = {t}")))?;
            if u.shape() != b.shape() {
                return Err(Error::Dimension(format!("U is {:?} but B is {:?}", u.shape(), b.shape())));
            }
            Ok(-u.transpose() * inv.as_mat())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FiniteFilter { a: a.clone(), b: b.clone(), policy: FeedbackPolicy::sampled(path.grid.clone(), gains)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn m(r: usize, c: usize, d: &[f64]) -> Mat {
        Mat::from_row_slice(r, c, d)
    }

    fn inertial() -> (Mat, Mat, Mat, SymMat) {
        (m(2, 2, &[0.0, 1.0, 0.0, 0.0]), m(2, 1, &[0.0, 1.0]), m(2, 1, &[1.0, 0.0]), SymMat::from_row_slice(2, &[1.0, -0.5, -0.5, 0.5]))
    }

    #[test]
    fn projector_examples() {
        assert_relative_eq!(projector_perp(&m(2, 1, &[0.0, 1.0])), m(2, 2, &[1.0, 0.0, 0.0, 0.0]), epsilon = 1e-15);
        let y = SymMat::from_row_slice(2, &[1.0, 2.0, 2.0, 3.0]);
        assert!(gb_apply(&y, &Mat::identity(2, 2)).unwrap().norm() < 1e-15);
        assert_relative_eq!(*gb_apply(&y, &Mat::zeros(2, 1)).unwrap().as_mat(), *y.as_mat(), epsilon = 1e-15);
        let p = projector_perp(&m(3, 2, &[1.0, 0.0, 1.0, 1.0, 0.0, 2.0]));
        assert_relative_eq!(&p * &p, p, epsilon = 1e-12);
    }

    #[test]
    fn rank_condition_examples() {
        let (a, b, b1, s) = inertial();
        assert!(rank_condition(&a, &b, &b1, &s).unwrap());
        assert!(!rank_condition(&Mat::zeros(2, 2), &Mat::zeros(2, 1), &Mat::identity(2, 2), &SymMat::identity(2)).unwrap());
        let b_inv = m(2, 2, &[1.0, 2.0, -1.0, 0.5]);
        let s = SymMat::from_row_slice(2, &[3.0, 1.0, 1.0, 1.0]);
        assert!(rank_condition(&m(2, 2, &[1.0, 4.0, 2.0, 0.0]), &b_inv, &Mat::zeros(2, 1), &s).unwrap());
    }

    #[test]
    fn admissibility_inertial() {
        let (a, b, b1, s) = inertial();
        let rep = stationary_admissible(&a, &b, &b1, &s).unwrap();
        assert_eq!(rep.verdict, Verdict::Admissible);
        assert!(rep.rank_ok && rep.hurwitz_ok && !rep.range_inclusion_ok);
        assert_relative_eq!(rep.k.unwrap(), m(1, 2, &[1.0, 1.0]), epsilon = 1e-10);
    }

    #[test]
    fn admissibility_scalar() {
        let rep = stationary_admissible(&m(1, 1, &[0.0]), &m(1, 1, &[1.0]), &m(1, 1, &[1.0]), &SymMat::identity(1)).unwrap();
        assert_relative_eq!(rep.x.unwrap()[(0, 0)], -0.5, epsilon = 1e-14);
        assert_relative_eq!(rep.k.unwrap()[(0, 0)], 0.5, epsilon = 1e-14);
        assert_eq!(rep.verdict, Verdict::Admissible);
        assert!(rep.range_inclusion_ok);
    }

    #[test]
    fn admissibility_without_input() {
        let rep = stationary_admissible(&Mat::zeros(2, 2), &Mat::zeros(2, 1), &Mat::identity(2, 2), &SymMat::identity(2)).unwrap();
        assert_eq!(rep.verdict, Verdict::Inadmissible);
        assert!(rep.x.is_none() && rep.k.is_none());
    }

    #[test]
    fn admissibility_rejects_indefinite_sigma() {
        let (a, b, b1, _) = inertial();
        let bad = SymMat::from_row_slice(2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(stationary_admissible(&a, &b, &b1, &bad), Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn heymann_shift_is_identity() {
        let r = heymann_reduction(&m(2, 2, &[0.0, 1.0, 0.0, 0.0]), &m(2, 1, &[0.0, 1.0])).unwrap();
        assert_relative_eq!(r.k0, Mat::zeros(1, 2), epsilon = 1e-15);
        assert_relative_eq!(r.v[0], 1.0);
        assert_relative_eq!(r.s, Mat::identity(2, 2), epsilon = 1e-15);
    }

    #[test]
    fn heymann_scalar() {
        let r = heymann_reduction(&m(1, 1, &[3.0]), &m(1, 1, &[2.0])).unwrap();
        assert_relative_eq!(r.k0[(0, 0)], 1.5, epsilon = 1e-14);
        assert_relative_eq!(r.v[0], 0.5, epsilon = 1e-14);
        assert_relative_eq!(r.s[(0, 0)], 1.0, epsilon = 1e-14);
    }

    fn check_reduction(a: &Mat, b: &Mat, r: &HeymannReduction) {
        let n = a.nrows();
        let acl = a - b * &r.k0;
        let mut p = Mat::identity(n, n);
        for _ in 0..n {
            p = &p * &acl;
        }
        assert!(p.norm() < 1e-9 * (1.0 + acl.norm()).powi(n as i32), "(A-BK0)^n = {p}");
        let s_inv = r.s.clone().try_inverse().unwrap();
        let (an, bn) = shift_pair(n);
        assert_relative_eq!(&s_inv * &acl * &r.s, an, epsilon = 1e-9);
        assert_relative_eq!(as_column(&s_inv * b * &r.v), bn, epsilon = 1e-9);
    }

    #[test]
    fn heymann_diagonal_pair() {
        let (a, b) = (m(2, 2, &[1.0, 0.0, 0.0, 2.0]), m(2, 1, &[1.0, 1.0]));
        let r = heymann_reduction(&a, &b).unwrap();
        let acl = &a - &b * &r.k0;
        assert!((&acl * &acl).norm() < 1e-12);
        check_reduction(&a, &b, &r);
    }

    #[test]
    fn heymann_multi_input_needs_feedback() {
        // A = 0, B = I₂: no single direction controls A, a random K₁ is required.
        let (a, b) = (Mat::zeros(2, 2), Mat::identity(2, 2));
        let r = heymann_reduction(&a, &b).unwrap();
        check_reduction(&a, &b, &r);
    }

    #[test]
    fn heymann_rejects_uncontrollable() {
        assert!(matches!(heymann_reduction(&Mat::identity(2, 2), &m(2, 1, &[1.0, 1.0])), Err(Error::NotControllable)));
    }

    #[test]
    fn series_roundtrip() {
        let h = [0.3, -1.0, 0.25, 2.0, -0.5];
        let back = log_series(&exp_series(&h));
        for (x, y) in h.iter().zip(&back) {
            assert_relative_eq!(x, y, epsilon = 1e-13);
        }
    }

    #[test]
    fn hermite_matches_data() {
        let at0 = [1.0, -2.0, 0.5];
        let at1 = [0.2, 3.0, -1.0];
        let p = hermite_two_point(&at0, &at1).unwrap();
        assert_eq!(p.degree(), 5);
        for (x, y) in p.taylor(0.0, 2).iter().zip(&at0) {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
        for (x, y) in p.taylor(1.0, 2).iter().zip(&at1) {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn hermite_ends_survive_large_jets() {
        let at0 = [3.0, -250.0, 1.2e4, -4.0e5, 9.0e6];
        let at1 = [-1.0, 800.0, -3.0e4, 2.0e5, -7.5e6];
        let p = hermite_two_point(&at0, &at1).unwrap();
        for (x, y) in p.taylor(1.0, 4).iter().zip(&at1) {
            assert!((x - y).abs() <= 1e-15 * y.abs(), "{x} vs {y}");
        }
        for (x, y) in p.taylor(0.0, 4).iter().zip(&at0) {
            assert!((x - y).abs() <= 1e-15 * y.abs(), "{x} vs {y}");
        }
    }

    #[test]
    fn bump_taylor_matches_expansion() {
        let p = 3;
        // τ³(1 - τ)³ = τ³ - 3τ⁴ + 3τ⁵ - τ⁶.
        let coeffs = [0.0, 0.0, 0.0, 1.0, -3.0, 3.0, -1.0];
        let horizon = 2.0;
        for t in [0.0, 0.7, 1.3, 2.0] {
            let got = Bump::new(p).taylor_in_time(t, horizon, 4);
            let want = to_time(monomial_taylor(&coeffs, t / horizon, 4), horizon);
            for (x, y) in got.iter().zip(&want) {
                assert_relative_eq!(x, y, epsilon = 1e-14);
            }
        }
        assert_eq!(Bump::new(p).eval(1.0), 0.0);
    }

    #[test]
    fn scalar_log_constant() {
        let p = scalar_log_interpolation(1.0, 1.0, 2.0, 0.0, 0.0, 0.0).unwrap();
        for t in [0.0, 0.3, 1.7, 2.0] {
            assert_relative_eq!(p.sigma(t), 1.0, epsilon = 1e-15);
            assert_relative_eq!(p.control(t), 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn scalar_log_linear_exponent() {
        // b₀ = b_T = 1 with σ₀ = 1, σ_T = e needs U₀ = 1/2, U_T = e/2 (Q = 0).
        let e = 1f64.exp();
        let p = scalar_log_interpolation(1.0, e, 1.0, 0.5, e / 2.0, 0.0).unwrap();
        for t in [0.0, 0.25, 0.5, 0.9, 1.0] {
            assert_relative_eq!(p.h(t).0, t, epsilon = 1e-14);
            assert_relative_eq!(p.sigma(t), t.exp(), epsilon = 1e-14);
        }
    }

    #[test]
    fn scalar_log_boundary_slopes() {
        let p = scalar_log_interpolation(2.0, 0.5, 1.0, 0.0, 0.0, 1.0).unwrap();
        // h' = (2U + Q)/σ at each end.
        assert_relative_eq!(p.b0, 0.5);
        assert_relative_eq!(p.bt, 2.0);
        assert_relative_eq!(p.sigma(0.0), 2.0, epsilon = 1e-14);
        assert_relative_eq!(p.sigma(1.0), 0.5, epsilon = 1e-14);
        assert_relative_eq!(p.sigma_dot(0.0), 1.0, epsilon = 1e-14);
        assert_relative_eq!(p.control(0.0), 0.0, epsilon = 1e-14);
        assert!(scalar_log_interpolation(0.0, 1.0, 1.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn general_hermite_agrees_with_cubic_formula() {
        let p = scalar_log_interpolation(2.0, 0.5, 1.5, 0.3, -0.2, 0.7).unwrap();
        let horizon = 1.5;
        let h = hermite_two_point(&[p.a0, p.b0 * horizon], &[p.at, p.bt * horizon]).unwrap();
        for t in [0.0, 0.4, 1.1, 1.5] {
            assert_relative_eq!(h.eval(t / horizon), p.h(t).0, epsilon = 1e-13);
        }
    }

    #[test]
    fn one_dimensional_path_is_log_interpolation() {
        let prob = SteeringProblem::new(
            m(1, 1, &[0.0]),
            m(1, 1, &[1.0]),
            m(1, 1, &[1.0]),
            1.0,
            SymMat::from_row_slice(1, &[2.0]),
            SymMat::from_row_slice(1, &[0.5]),
        )
        .unwrap();
        let q = SymMat::from_row_slice(1, &[1.0]);
        let fp = construct_covariance_path(&prob, &q, &Mat::zeros(1, 1), &Mat::zeros(1, 1), 20).unwrap();
        let reference = scalar_log_interpolation(2.0, 0.5, 1.0, 0.0, 0.0, 1.0).unwrap();
        for (t, s) in fp.path.grid.iter().zip(&fp.path.sigma) {
            assert_relative_eq!(s[(0, 0)], reference.sigma(*t), epsilon = 1e-12);
        }
    }

    #[test]
    fn path_satisfies_dynamics_pointwise() {
        let prob = SteeringProblem::new(
            m(3, 3, &[0.2, 1.0, 0.0, -0.5, 0.1, 1.0, 0.3, 0.0, -0.4]),
            m(3, 1, &[0.0, 0.5, 1.0]),
            m(3, 1, &[1.0, 0.0, 0.2]),
            1.3,
            SymMat::from_row_slice(3, &[2.0, 0.1, 0.0, 0.1, 1.0, 0.2, 0.0, 0.2, 1.5]),
            SymMat::from_row_slice(3, &[0.5, 0.0, 0.1, 0.0, 0.8, 0.0, 0.1, 0.0, 0.3]),
        )
        .unwrap();
        let q = prob.noise();
        let u0 = m(3, 1, &[0.1, -0.2, 0.3]);
        let fp = construct_covariance_path(&prob, &q, &u0, &Mat::zeros(3, 1), 50).unwrap();
        for t in [0.0, 0.2, 0.77, 1.3] {
            let (s, sdot, u) = fp.generator.eval(t);
            let rhs =
                &prob.a * s.as_mat() + s.as_mat() * prob.a.transpose() + &prob.b * u.transpose() + &u * prob.b.transpose() + q.as_mat();
            assert!((sdot - rhs).norm() < 1e-9, "dynamics violated at t = {t}");
        }
        assert_relative_eq!(fp.generator.eval(0.0).2, u0, epsilon = 1e-10);
        assert!(fp.scan_min_eigenvalue > 0.0);
    }

    #[test]
    fn uncontrollable_path_is_rejected() {
        let prob = SteeringProblem::new(
            Mat::identity(2, 2),
            m(2, 1, &[1.0, 1.0]),
            Mat::zeros(2, 1),
            1.0,
            SymMat::identity(2),
            SymMat::identity(2),
        )
        .unwrap();
        let r = construct_covariance_path(&prob, &SymMat::zeros(2), &Mat::zeros(2, 1), &Mat::zeros(2, 1), 10);
        assert!(matches!(r, Err(Error::NotControllable)));
    }

    #[test]
    fn realization_of_zero_input_path() {
        let path =
            CovariancePath { grid: vec![0.0, 1.0], sigma: vec![SymMat::identity(2), SymMat::identity(2)], u: vec![Mat::zeros(2, 1); 2] };
        let (a, b, _, _) = inertial();
        let f = external_input_realization_finite(&path, &a, &b).unwrap();
        assert_eq!(f.policy.gain(0.5), Mat::zeros(1, 2));
        assert_eq!(f.state_matrix(0.5), a);
    }

    #[test]
    fn realization_of_scalar_path() {
        let p = scalar_log_interpolation(2.0, 0.5, 1.0, 0.0, 0.0, 1.0).unwrap();
        let grid = uniform_grid(1.0, 10);
        let path = CovariancePath {
            grid: grid.clone(),
            sigma: grid.iter().map(|&t| SymMat::from_row_slice(1, &[p.sigma(t)])).collect(),
            u: grid.iter().map(|&t| m(1, 1, &[p.control(t)])).collect(),
        };
        let f = external_input_realization_finite(&path, &m(1, 1, &[0.0]), &m(1, 1, &[1.0])).unwrap();
        for &t in &grid {
            assert_relative_eq!(f.policy.gain(t)[(0, 0)], -p.control(t) / p.sigma(t), epsilon = 1e-13);
        }
    }
}
