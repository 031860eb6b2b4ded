//! Dense matrix primitives shared by every other module.
//!
//! Matrices are `nalgebra::DMatrix<f64>`. Symmetric quantities (covariances,
//! Riccati solutions) are wrapped in [`SymMat`], which symmetrizes on
//! construction.

use std::ops::Deref;

use nalgebra::linalg::Schur;
use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;

/// Closed-loop eigenvalues must satisfy `Re(λ) < -HURWITZ_TOL`.
pub const HURWITZ_TOL: f64 = 1e-9;

/// Relative singular-value threshold used for every rank decision.
pub const RANK_RTOL: f64 = 1e-12;

/// Square symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMat(Mat);

impl SymMat {
    /// Symmetrizes `m` as `(m + m')/2`. Panics if `m` is not square.
    pub fn new(m: Mat) -> Self {
        assert!(m.is_square(), "SymMat requires a square matrix");
        let t = m.transpose();
        SymMat((m + t) * 0.5)
    }

    pub fn try_new(m: Mat) -> Result<Self> {
        ensure_square(&m)?;
        Ok(Self::new(m))
    }

    pub fn identity(n: usize) -> Self {
        SymMat(Mat::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        SymMat(Mat::zeros(n, n))
    }

    pub fn from_row_slice(n: usize, data: &[f64]) -> Self {
        Self::new(Mat::from_row_slice(n, n, data))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_mat(&self) -> &Mat {
        &self.0
    }

    pub fn into_inner(self) -> Mat {
        self.0
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.0.clone().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(f64::INFINITY)
    }

    pub fn is_positive_definite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite()) && self.0.clone().cholesky().is_some() && self.min_eigenvalue() > 0.0
    }

    pub fn inverse(&self) -> Result<SymMat> {
        self.0.clone().try_inverse().map(SymMat::new).ok_or_else(|| Error::Singular("symmetric matrix is not invertible".into()))
    }
}

impl Deref for SymMat {
    type Target = Mat;

    fn deref(&self) -> &Mat {
        &self.0
    }
}

impl From<SymMat> for Mat {
    fn from(s: SymMat) -> Mat {
        s.0
    }
}

pub fn ensure_square(m: &Mat) -> Result<()> {
    if m.is_square() {
        Ok(())
    } else {
        Err(Error::NotSquare { rows: m.nrows(), cols: m.ncols() })
    }
}

pub fn ensure_pd(m: &SymMat, what: &str) -> Result<()> {
    if m.is_positive_definite() {
        Ok(())
    } else {
        Err(Error::NotPositiveDefinite(what.to_string()))
    }
}

fn one_norm(m: &Mat) -> f64 {
    m.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const PADE9: [f64; 10] = [17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0, 2162160.0, 110880.0, 3960.0, 90.0, 1.0];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA: [(usize, f64); 4] =
    [(3, 1.495585217958292e-2), (5, 2.539_398_330_063_23e-1), (7, 9.504178996162932e-1), (9, 2.097847961257068e0)];
const THETA13: f64 = 5.371920351148152e0;

/// Matrix exponential by scaling and squaring with a diagonal Padé
/// approximant (degrees 3, 5, 7, 9 or 13, chosen from the 1-norm).
pub fn matrix_exponential(m: &Mat) -> Result<Mat> {
    ensure_square(m)?;
    let n = m.nrows();
    if n == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("matrix exponential of a non-finite matrix".into()));
    }
    let eye = Mat::identity(n, n);
    let norm = one_norm(m);

    for &(deg, theta) in THETA.iter() {
        if norm <= theta {
            let coeffs: &[f64] = match deg {
                3 => &PADE3,
                5 => &PADE5,
                7 => &PADE7,
                _ => &PADE9,
            };
            return pade_low(m, coeffs, &eye);
        }
    }

    let s = if norm > THETA13 { (norm / THETA13).log2().ceil().max(0.0) as i32 } else { 0 };
    let a = m * 2f64.powi(-s);
    let b = &PADE13;
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]) + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &eye * b[1];
    let u = &a * inner_u;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]) + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &eye * b[0];
    let mut r = pade_solve(&u, &v)?;
    for _ in 0..s {
        r = &r * &r;
    }
    Ok(r)
}

fn pade_low(a: &Mat, coeffs: &[f64], eye: &Mat) -> Result<Mat> {
    let a2 = a * a;
    let mut power = eye.clone();
    let mut u_inner = Mat::zeros(a.nrows(), a.ncols());
    let mut v = Mat::zeros(a.nrows(), a.ncols());
    for pair in coeffs.chunks(2) {
        v += &power * pair[0];
        u_inner += &power * pair[1];
        power = &power * &a2;
    }
    let u = a * u_inner;
    pade_solve(&u, &v)
}

fn pade_solve(u: &Mat, v: &Mat) -> Result<Mat> {
    let p = v + u;
    let q = v - u;
    q.lu().solve(&p).ok_or_else(|| Error::Singular("Padé denominator".into()))
}

/// Eigenvalues of a general real square matrix (Hessenberg reduction followed
/// by shifted QR iteration).
pub fn eigenvalues(m: &Mat) -> Result<Vec<Complex<f64>>> {
    ensure_square(m)?;
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur = Schur::try_new(m.clone(), f64::EPSILON, 10_000).ok_or(Error::NoConvergence("Schur iteration"))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Largest real part over the spectrum of `m`.
pub fn spectral_abscissa(m: &Mat) -> Result<f64> {
    Ok(eigenvalues(m)?.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max))
}

/// True iff every eigenvalue has real part below `-HURWITZ_TOL`. Marginal
/// eigenvalues on the imaginary axis are classified as not Hurwitz.
pub fn is_hurwitz(m: &Mat) -> Result<bool> {
    Ok(eigenvalues(m)?.iter().all(|z| z.re < -HURWITZ_TOL))
}

/// Numerical rank with threshold `max(rows, cols) * σ_max * 1e-12`.
pub fn rank(m: &Mat) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = Svd::new(m).s;
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    let thr = m.nrows().max(m.ncols()) as f64 * smax * RANK_RTOL;
    sv.iter().filter(|&&s| s > thr).count()
}

/// `[B, AB, ..., A^{n-1}B]`.
pub fn controllability_matrix(a: &Mat, b: &Mat) -> Result<Mat> {
    ensure_square(a)?;
    let n = a.nrows();
    if b.nrows() != n {
        return Err(Error::Dimension(format!("A is {n}x{n} but B has {} rows", b.nrows())));
    }
    let m = b.ncols();
    let mut c = Mat::zeros(n, n * m);
    let mut block = b.clone();
    for k in 0..n {
        c.view_mut((0, k * m), (n, m)).copy_from(&block);
        block = a * block;
    }
    Ok(c)
}

pub fn is_controllable(a: &Mat, b: &Mat) -> Result<bool> {
    let c = controllability_matrix(a, b)?;
    Ok(rank(&c) == a.nrows())
}

/// Solution of `Acl Σ + Σ Acl' + Q = 0` for Hurwitz `Acl`.
pub fn solve_lyapunov(acl: &Mat, q: &SymMat) -> Result<SymMat> {
    ensure_square(acl)?;
    let n = acl.nrows();
    if q.dim() != n {
        return Err(Error::Dimension(format!("Acl is {n}x{n} but Q is {0}x{0}", q.dim())));
    }
    if !is_hurwitz(acl)? {
        return Err(Error::NotHurwitz);
    }
    solve_sylvester_kron(acl, q)
}

/// Kronecker-vectorized solve of `A X + X A' = -Q`; no stability check.
pub(crate) fn solve_sylvester_kron(a: &Mat, q: &SymMat) -> Result<SymMat> {
    let n = a.nrows();
    let eye = Mat::identity(n, n);
    let op = eye.kronecker(a) + a.kronecker(&eye);
    let rhs = DVector::from_iterator(n * n, q.iter().map(|v| -v));
    let x = op.lu().solve(&rhs).ok_or_else(|| Error::Singular("Lyapunov operator".into()))?;
    Ok(SymMat::new(Mat::from_column_slice(n, n, x.as_slice())))
}

/// Controllability Gramian over `[0, T]`.
#[derive(Debug, Clone)]
pub struct Gramian {
    pub g: SymMat,
    pub singular: bool,
}

/// `G(T) = ∫₀ᵀ e^{-Aτ} B B' e^{-A'τ} dτ` via Van Loan's block exponential of
/// `[[A, BB'], [0, -A']]·T`: with `E = exp(·)`, `G = E₂₂' E₁₂`.
pub fn controllability_gramian(a: &Mat, b: &Mat, t: f64) -> Result<Gramian> {
    ensure_square(a)?;
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {t}")));
    }
    let n = a.nrows();
    if b.nrows() != n {
        return Err(Error::Dimension(format!("A is {n}x{n} but B has {} rows", b.nrows())));
    }
    let mut big = Mat::zeros(2 * n, 2 * n);
    big.view_mut((0, 0), (n, n)).copy_from(a);
    big.view_mut((0, n), (n, n)).copy_from(&(b * b.transpose()));
    big.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));
    let e = matrix_exponential(&(big * t))?;
    let e12 = e.view((0, n), (n, n)).clone_owned();
    let e22 = e.view((n, n), (n, n)).clone_owned();
    let g = SymMat::new(e22.transpose() * e12);
    let singular = rank(&g) < n;
    Ok(Gramian { g, singular })
}

/// Outcome of solving `B X' + X B' = -RHS` for `X ∈ ℝ^{n×m}`.
#[derive(Debug, Clone)]
pub enum XSolution {
    Solvable {
        /// Minimum-Frobenius-norm solution.
        particular: Mat,
        /// Orthonormal (Frobenius) basis of `{X : B X' + X B' = 0}`.
        null_basis: Vec<Mat>,
    },
    Infeasible {
        /// Frobenius norm of `B X' + X B' + RHS` at the least-squares solution.
        residual: f64,
    },
}

impl XSolution {
    pub fn particular(&self) -> Option<&Mat> {
        match self {
            XSolution::Solvable { particular, .. } => Some(particular),
            XSolution::Infeasible { .. } => None,
        }
    }

    pub fn is_solvable(&self) -> bool {
        matches!(self, XSolution::Solvable { .. })
    }
}

/// Indices `(i, j)` with `i <= j`, in row-major order.
pub(crate) fn upper_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect()
}

/// Matrix of the linear map `X ↦ B X' + X B'`, columns indexed by the
/// column-major entries of `X`, rows by the upper triangle with off-diagonal
/// rows weighted by √2 so the Euclidean norm matches the Frobenius norm.
fn fb_operator(b: &Mat) -> Mat {
    let (n, m) = b.shape();
    let pairs = upper_pairs(n);
    let mut op = Mat::zeros(pairs.len(), n * m);
    for (row, &(i, j)) in pairs.iter().enumerate() {
        let w = if i == j { 1.0 } else { std::f64::consts::SQRT_2 };
        // (B X')_{ij} = Σ_k B_{ik} X_{jk};  (X B')_{ij} = Σ_k X_{ik} B_{jk}
        for k in 0..m {
            op[(row, k * n + j)] += w * b[(i, k)];
            op[(row, k * n + i)] += w * b[(j, k)];
        }
    }
    op
}

fn svec_weighted(s: &Mat) -> DVector<f64> {
    let n = s.nrows();
    let pairs = upper_pairs(n);
    DVector::from_iterator(pairs.len(), pairs.iter().map(|&(i, j)| if i == j { s[(i, j)] } else { std::f64::consts::SQRT_2 * s[(i, j)] }))
}

/// Minimum-norm least-squares solution of `op · x = rhs` plus an orthonormal
/// basis of the null space of `op`.
pub(crate) struct MinNormSolution {
    pub x: DVector<f64>,
    pub null_basis: Vec<DVector<f64>>,
}

pub(crate) fn min_norm_solve(op: &Mat, rhs: &DVector<f64>) -> MinNormSolution {
    let cols = op.ncols();
    let svd = Svd::new(op);
    let smax = svd.s.iter().copied().fold(0.0, f64::max);
    let thr = op.nrows().max(cols) as f64 * smax * RANK_RTOL;
    let mut x = DVector::zeros(cols);
    let mut null_basis = Vec::new();
    for (k, &s) in svd.s.iter().enumerate() {
        let vk = svd.v.column(k).into_owned();
        if s > thr && smax > 0.0 {
            x += &vk * (svd.u.column(k).rows(0, op.nrows()).dot(rhs) / s);
        } else {
            null_basis.push(vk);
        }
    }
    MinNormSolution { x, null_basis }
}

/// Minimum-norm least-squares solution of `B X' + X B' = -RHS`.
pub(crate) fn least_squares_x(b: &Mat, rhs: &SymMat) -> Mat {
    let sol = min_norm_solve(&fb_operator(b), &(-svec_weighted(rhs)));
    Mat::from_column_slice(b.nrows(), b.ncols(), sol.x.as_slice())
}

/// Solves `B X' + X B' = -RHS`; the tolerance for declaring the system
/// solvable is `1e-9 (1 + ‖RHS‖_F)`.
pub fn solve_linear_for_x(b: &Mat, rhs: &SymMat) -> Result<XSolution> {
    let (n, m) = b.shape();
    if rhs.dim() != n {
        return Err(Error::Dimension(format!("B has {n} rows but RHS is {0}x{0}", rhs.dim())));
    }
    let sol = min_norm_solve(&fb_operator(b), &(-svec_weighted(rhs)));
    let particular = Mat::from_column_slice(n, m, sol.x.as_slice());
    let residual = (b * particular.transpose() + &particular * b.transpose() + rhs.as_mat()).norm();
    if residual <= 1e-9 * (1.0 + rhs.norm()) {
        let null_basis = sol.null_basis.iter().map(|v| Mat::from_column_slice(n, m, v.as_slice())).collect();
        Ok(XSolution::Solvable { particular, null_basis })
    } else {
        Ok(XSolution::Infeasible { residual })
    }
}

/// Singular values (unordered), accurate to working precision.
pub fn singular_values(m: &Mat) -> Vec<f64> {
    Svd::new(m).s
}

/// Moore–Penrose pseudoinverse with the crate-wide rank threshold.
pub fn pseudo_inverse(m: &Mat) -> Mat {
    let (rows, cols) = m.shape();
    let svd = Svd::new(m);
    let smax = svd.s.iter().copied().fold(0.0, f64::max);
    let thr = rows.max(cols) as f64 * smax * RANK_RTOL;
    let mut pinv = Mat::zeros(cols, rows);
    for (k, &s) in svd.s.iter().enumerate() {
        if s > thr && smax > 0.0 {
            pinv += svd.v.column(k) * svd.u.column(k).rows(0, rows).transpose() / s;
        }
    }
    pinv
}

/// One-sided Jacobi SVD `A V = U diag(s)` with a full orthogonal `V`.
///
/// nalgebra's bidiagonal SVD loses accuracy on operators with clustered
/// singular values (it can misreconstruct them at the 1e-3 level), which is
/// fatal for the rank and null-space decisions made here. Jacobi rotations
/// are slower but accurate to working precision on the small matrices this
/// crate factors. When `A` has fewer rows than columns it is padded with
/// zero rows, so `U` then has `cols` rows of which only the first `rows`
/// are meaningful.
pub(crate) struct Svd {
    pub u: Mat,
    pub s: Vec<f64>,
    pub v: Mat,
}

impl Svd {
    const MAX_SWEEPS: usize = 80;

    pub fn new(a: &Mat) -> Svd {
        let (rows, cols) = a.shape();
        let mut w = Mat::zeros(rows.max(cols), cols);
        w.view_mut((0, 0), (rows, cols)).copy_from(a);
        let mut v = Mat::identity(cols, cols);
        for _ in 0..Self::MAX_SWEEPS {
            let mut rotated = false;
            for p in 0..cols {
                for q in p + 1..cols {
                    let alpha = w.column(p).norm_squared();
                    let beta = w.column(q).norm_squared();
                    let gamma = w.column(p).dot(&w.column(q));
                    if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                        continue;
                    }
                    rotated = true;
                    let zeta = (beta - alpha) / (2.0 * gamma);
                    let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let sn = c * t;
                    rotate(&mut w, p, q, c, sn);
                    rotate(&mut v, p, q, c, sn);
                }
            }
            if !rotated {
                break;
            }
        }
        let s: Vec<f64> = (0..cols).map(|k| w.column(k).norm()).collect();
        for (k, &sk) in s.iter().enumerate() {
            if sk > 0.0 {
                w.column_mut(k).unscale_mut(sk);
            }
        }
        Svd { u: w, s, v }
    }
}

fn rotate(m: &mut Mat, p: usize, q: usize, c: f64, s: f64) {
    for i in 0..m.nrows() {
        let (x, y) = (m[(i, p)], m[(i, q)]);
        m[(i, p)] = c * x - s * y;
        m[(i, q)] = s * x + c * y;
    }
}
