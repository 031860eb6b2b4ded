//! Minimum-power constant gains that hold a prescribed stationary covariance.
//!
//! The feasible set `{X : AΣ + ΣA' + B₁B₁' + BX' + XB' = 0}` is affine, and the
//! input power `trace(KΣK') = trace(X'Σ⁻¹X)` with `K = -X'Σ⁻¹` is a strictly
//! convex quadratic on it, so the optimum is found in closed form from the
//! normal equations over a null-space parameterization.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::feasibility::{lyapunov_residual, range_inclusion};
use crate::matops::{self, ensure_pd, ensure_square, is_controllable, is_hurwitz, solve_lyapunov, upper_pairs, Mat, SymMat, XSolution};

/// Regularization used for the fallback gain when the optimum is not Hurwitz.
pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct StationaryProblem {
    pub a: Mat,
    pub b: Mat,
    pub b1: Mat,
    pub sigma: SymMat,
}

impl StationaryProblem {
    pub fn new(a: Mat, b: Mat, b1: Mat, sigma: SymMat) -> Result<Self> {
        ensure_square(&a)?;
        let n = a.nrows();
        if b.nrows() != n || b1.nrows() != n || sigma.dim() != n {
            return Err(Error::Dimension(format!("A is {n}x{n}; B, B1 and Sigma must have {n} rows")));
        }
        ensure_pd(&sigma, "Sigma")?;
        if !is_controllable(&a, &b)? {
            return Err(Error::NotControllable);
        }
        Ok(StationaryProblem { a, b, b1, sigma })
    }

    /// `(A - BK)Σ + Σ(A - BK)' + B₁B₁'`.
    pub fn closed_loop_residual(&self, k: &Mat) -> SymMat {
        let acl = &self.a - &self.b * k;
        lyapunov_residual(&acl, &self.b1, &self.sigma)
    }
}

/// Affine family `particular + span(null_basis)` of symmetric matrices.
#[derive(Debug, Clone)]
pub struct PiFamily {
    pub particular: SymMat,
    pub null_basis: Vec<SymMat>,
}

#[derive(Debug, Clone)]
pub struct EpsilonRegularized {
    pub epsilon: f64,
    pub k_eps: Mat,
    pub sigma_eps: SymMat,
    /// `‖Σ - Σ_ε‖_F`.
    pub gap: f64,
}

#[derive(Debug, Clone)]
pub struct StationarySolution {
    pub k: Mat,
    pub x: Mat,
    /// Expected input power `trace(KΣK')`.
    pub power: f64,
    pub hurwitz_ok: bool,
    pub pi_family: Option<PiFamily>,
    /// Present when the optimum is not Hurwitz and `R(B) ⊄ R(B₁)`.
    pub epsilon_fallback: Option<EpsilonRegularized>,
}

/// Minimizes `trace(X'Σ⁻¹X)` over `X = X_p + Σ cᵢNᵢ`.
pub fn minimize_power_over_affine(particular: &Mat, null_basis: &[Mat], sigma_inv: &SymMat) -> Result<Mat> {
    if null_basis.is_empty() {
        return Ok(particular.clone());
    }
    let s = sigma_inv.as_mat();
    let q = null_basis.len();
    let weighted: Vec<Mat> = null_basis.iter().map(|n| s * n).collect();
    let gram = Mat::from_fn(q, q, |i, j| null_basis[i].dot(&weighted[j]));
    let lin = DVector::from_fn(q, |i, _| weighted[i].dot(particular));
    let coef = gram.cholesky().ok_or_else(|| Error::Singular("power Gram matrix".into()))?.solve(&(-lin));
    Ok(null_basis.iter().zip(coef.iter()).fold(particular.clone(), |acc, (n, c)| acc + n * *c))
}

pub fn optimal_stationary_gain(problem: &StationaryProblem) -> Result<StationarySolution> {
    optimal_stationary_gain_with_epsilon(problem, DEFAULT_EPSILON)
}

pub fn optimal_stationary_gain_with_epsilon(problem: &StationaryProblem, epsilon: f64) -> Result<StationarySolution> {
    let rhs = lyapunov_residual(&problem.a, &problem.b1, &problem.sigma);
    let (particular, null_basis) = match matops::solve_linear_for_x(&problem.b, &rhs)? {
        XSolution::Solvable { particular, null_basis } => (particular, null_basis),
        XSolution::Infeasible { residual } => {
            return Err(Error::Infeasible(format!("AΣ + ΣA' + B1B1' is not in the range of X ↦ BX' + XB' (residual {residual:e})")))
        }
    };
    let sigma_inv = problem.sigma.inverse()?;
    let x = minimize_power_over_affine(&particular, &null_basis, &sigma_inv)?;
    let k = -x.transpose() * sigma_inv.as_mat();
    let power = (&k * problem.sigma.as_mat() * k.transpose()).trace();
    let hurwitz_ok = is_hurwitz(&(&problem.a - &problem.b * &k))?;
    let pi_family = pi_family_from_gain(&k, &problem.b).ok();
    let epsilon_fallback =
        if !hurwitz_ok && !range_inclusion(&problem.b, &problem.b1) { Some(epsilon_regularized_gain(problem, &k, epsilon)?) } else { None };
    Ok(StationarySolution { k, x, power, hurwitz_ok, pi_family, epsilon_fallback })
}

#[derive(Debug, Clone)]
pub struct DualValue {
    pub value: f64,
    pub gradient: SymMat,
}

/// `G(Π) = trace((A'Π + ΠA - ΠBB'Π)Σ + ΠB₁B₁')` and its gradient
/// `(A - BB'Π)Σ + Σ(A - BB'Π)' + B₁B₁'` over symmetric `Π`.
pub fn dual_functional(pi: &SymMat, problem: &StationaryProblem) -> Result<DualValue> {
    let n = problem.a.nrows();
    if pi.dim() != n {
        return Err(Error::Dimension(format!("Pi must be {n}x{n}")));
    }
    let (a, b, b1, s) = (&problem.a, &problem.b, &problem.b1, problem.sigma.as_mat());
    let p = pi.as_mat();
    let bbt = b * b.transpose();
    let inner = a.transpose() * p + p * a - p * &bbt * p;
    let value = (inner * s).trace() + (p * b1 * b1.transpose()).trace();
    let acl = a - &bbt * p;
    let gradient = SymMat::new(&acl * s + s * acl.transpose() + b1 * b1.transpose());
    Ok(DualValue { value, gradient })
}

/// Symmetric solutions of `B'Π = K`: minimum-norm member plus a Frobenius
/// orthonormal basis of the homogeneous solutions.
pub fn pi_family_from_gain(k: &Mat, b: &Mat) -> Result<PiFamily> {
    let (n, m) = b.shape();
    if k.shape() != (m, n) {
        return Err(Error::Dimension(format!("K must be {m}x{n}")));
    }
    let pairs = upper_pairs(n);
    let r2 = std::f64::consts::SQRT_2;
    // Unknowns: Π_ii, and √2·Π_ij for i < j, so the coordinate norm is ‖Π‖_F.
    let unpack = |v: &DVector<f64>| {
        let mut p = Mat::zeros(n, n);
        for (idx, &(i, j)) in pairs.iter().enumerate() {
            if i == j {
                p[(i, i)] = v[idx];
            } else {
                p[(i, j)] = v[idx] / r2;
                p[(j, i)] = v[idx] / r2;
            }
        }
        p
    };
    let mut op = Mat::zeros(m * n, pairs.len());
    for idx in 0..pairs.len() {
        let mut e = DVector::zeros(pairs.len());
        e[idx] = 1.0;
        let col = b.transpose() * unpack(&e);
        op.set_column(idx, &DVector::from_column_slice(col.as_slice()));
    }
    let target = DVector::from_column_slice(k.as_slice());
    let sol = matops::min_norm_solve(&op, &target);
    let particular = SymMat::new(unpack(&sol.x));
    let residual = (b.transpose() * particular.as_mat() - k).norm();
    if residual > 1e-9 * (1.0 + k.norm()) {
        return Err(Error::Infeasible(format!("gain is not of the form B'Π (residual {residual:e})")));
    }
    let null_basis = sol.null_basis.iter().map(|v| SymMat::new(unpack(v))).collect();
    Ok(PiFamily { particular, null_basis })
}

/// `Q = -A'Π - ΠA + ΠBB'Π`, so that `A'Π + ΠA - ΠBB'Π + Q = 0`.
pub fn willems_q(pi: &SymMat, a: &Mat, b: &Mat) -> SymMat {
    let p = pi.as_mat();
    SymMat::new(-a.transpose() * p - p * a + p * b * b.transpose() * p)
}

/// `K_ε = K + ½ε B'Σ⁻¹`, which is Hurwitz for every `ε > 0` and holds a
/// covariance `Σ_ε` within `O(ε)` of `Σ`.
pub fn epsilon_regularized_gain(problem: &StationaryProblem, k: &Mat, epsilon: f64) -> Result<EpsilonRegularized> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidArgument(format!("epsilon must be nonnegative, got {epsilon}")));
    }
    let res = problem.closed_loop_residual(k).norm();
    let scale = 1.0 + problem.sigma.norm() * (problem.a.norm() + (&problem.b * k).norm()) + problem.b1.norm_squared();
    if res > 1e-8 * scale {
        return Err(Error::InvalidArgument(format!("K does not hold Sigma stationary (residual {res:e})")));
    }
    if epsilon == 0.0 {
        return Ok(EpsilonRegularized { epsilon, k_eps: k.clone(), sigma_eps: problem.sigma.clone(), gap: 0.0 });
    }
    let sigma_inv = problem.sigma.inverse()?;
    let k_eps = k + problem.b.transpose() * sigma_inv.as_mat() * (0.5 * epsilon);
    let acl = &problem.a - &problem.b * &k_eps;
    let sigma_eps = solve_lyapunov(&acl, &SymMat::new(&problem.b1 * problem.b1.transpose()))?;
    let gap = (problem.sigma.as_mat() - sigma_eps.as_mat()).norm();
    Ok(EpsilonRegularized { epsilon, k_eps, sigma_eps, gap })
}

/// Filter `dξ = (A - BK_f)ξ dt + B dw`, `dy = -K_f ξ dt + dw` generating an
/// input `y` under which `dx = Ax dt + B dy` has stationary covariance `Σ`.
#[derive(Debug, Clone)]
pub struct StationaryFilter {
    pub k_f: Mat,
    pub x: Mat,
    pub state_matrix: Mat,
}

pub fn stationary_external_realization(a: &Mat, b: &Mat, sigma: &SymMat) -> Result<StationaryFilter> {
    ensure_square(a)?;
    let n = a.nrows();
    if b.nrows() != n || sigma.dim() != n {
        return Err(Error::Dimension(format!("B and Sigma must have {n} rows")));
    }
    ensure_pd(sigma, "Sigma")?;
    if !is_hurwitz(a)? {
        return Err(Error::NotHurwitz);
    }
    let rhs = SymMat::new(a * sigma.as_mat() + sigma.as_mat() * a.transpose());
    let x = match matops::solve_linear_for_x(b, &rhs)? {
        XSolution::Solvable { particular, .. } => particular,
        XSolution::Infeasible { residual } => {
            return Err(Error::Infeasible(format!("AΣ + ΣA' is not in the range of f_B (residual {residual:e})")))
        }
    };
    let sigma_inv = sigma.inverse()?;
    let k_f = (b.transpose() * 0.5 - x.transpose()) * sigma_inv.as_mat();
    let state_matrix = a - b * &k_f;
    let check = &state_matrix * sigma.as_mat() + sigma.as_mat() * state_matrix.transpose() + b * b.transpose();
    if check.norm() > 1e-9 * (1.0 + sigma.norm() * state_matrix.norm()) {
        return Err(Error::Infeasible(format!("filter Lyapunov identity fails (residual {:e})", check.norm())));
    }
    Ok(StationaryFilter { k_f, x, state_matrix })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn m(r: usize, c: usize, d: &[f64]) -> Mat {
        Mat::from_row_slice(r, c, d)
    }

    fn inertial() -> StationaryProblem {
        StationaryProblem::new(
            m(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            m(2, 1, &[0.0, 1.0]),
            m(2, 1, &[1.0, 0.0]),
            SymMat::from_row_slice(2, &[1.0, -0.5, -0.5, 0.5]),
        )
        .unwrap()
    }

    #[test]
    fn inertial_gain_and_power() {
        let sol = optimal_stationary_gain(&inertial()).unwrap();
        assert_relative_eq!(sol.k, m(1, 2, &[1.0, 1.0]), epsilon = 1e-12);
        assert_relative_eq!(sol.power, 0.5, epsilon = 1e-12);
        assert!(sol.hurwitz_ok);
        assert!(sol.epsilon_fallback.is_none());
        let fam = sol.pi_family.unwrap();
        assert_eq!(fam.null_basis.len(), 1);
    }

    #[test]
    fn scalar_gain_formula() {
        for sigma in [0.5, 1.0, 3.0] {
            let p = StationaryProblem::new(m(1, 1, &[0.0]), m(1, 1, &[1.0]), m(1, 1, &[1.0]), SymMat::from_row_slice(1, &[sigma])).unwrap();
            let sol = optimal_stationary_gain(&p).unwrap();
            assert_relative_eq!(sol.x[(0, 0)], -0.5, epsilon = 1e-14);
            assert_relative_eq!(sol.k[(0, 0)], 1.0 / (2.0 * sigma), epsilon = 1e-14);
            assert_relative_eq!(sol.power, 1.0 / (4.0 * sigma), epsilon = 1e-14);
        }
    }

    #[test]
    fn no_noise_needs_no_control() {
        // A Hurwitz, B₁ = 0 and Σ with AΣ + ΣA' = 0 is impossible for Σ ≻ 0,
        // so take Σ that the uncontrolled system already holds with noise B.
        let a = m(2, 2, &[-1.0, 0.0, 0.0, -2.0]);
        let b = m(2, 1, &[1.0, 1.0]);
        let b1 = b.clone();
        let sigma = solve_lyapunov(&a, &SymMat::new(&b1 * b1.transpose())).unwrap();
        let sol = optimal_stationary_gain(&StationaryProblem::new(a, b, b1, sigma).unwrap()).unwrap();
        assert!(sol.k.norm() < 1e-12);
        assert!(sol.power.abs() < 1e-20);
    }

    #[test]
    fn infeasible_target_is_an_error() {
        let p = StationaryProblem::new(m(2, 2, &[0.0, 1.0, 0.0, 0.0]), m(2, 1, &[0.0, 1.0]), m(2, 1, &[1.0, 0.0]), SymMat::identity(2))
            .unwrap();
        assert!(matches!(optimal_stationary_gain(&p), Err(Error::Infeasible(_))));
    }

    #[test]
    fn dual_at_zero() {
        let p = inertial();
        let d = dual_functional(&SymMat::zeros(2), &p).unwrap();
        assert_eq!(d.value, 0.0);
        let expect = lyapunov_residual(&p.a, &p.b1, &p.sigma);
        assert_relative_eq!(*d.gradient.as_mat(), *expect.as_mat());
    }

    #[test]
    fn dual_gradient_vanishes_on_family() {
        let p = inertial();
        for c in [-3.0, 0.0, 0.7, 10.0] {
            let pi = SymMat::from_row_slice(2, &[c, 1.0, 1.0, 1.0]);
            let d = dual_functional(&pi, &p).unwrap();
            assert!(d.gradient.norm() < 1e-12);
        }
    }

    #[test]
    fn pi_family_examples() {
        let fam = pi_family_from_gain(&m(1, 2, &[1.0, 1.0]), &m(2, 1, &[0.0, 1.0])).unwrap();
        assert_relative_eq!(*fam.particular.as_mat(), m(2, 2, &[0.0, 1.0, 1.0, 1.0]), epsilon = 1e-14);
        assert_eq!(fam.null_basis.len(), 1);
        assert_relative_eq!(fam.null_basis[0][(0, 0)].abs(), 1.0, epsilon = 1e-14);

        let fam = pi_family_from_gain(&m(2, 2, &[1.0, 2.0, 2.0, 5.0]), &Mat::identity(2, 2)).unwrap();
        assert_relative_eq!(*fam.particular.as_mat(), m(2, 2, &[1.0, 2.0, 2.0, 5.0]), epsilon = 1e-14);
        assert!(fam.null_basis.is_empty());
        assert!(pi_family_from_gain(&m(2, 2, &[1.0, 2.0, 3.0, 5.0]), &Mat::identity(2, 2)).is_err());

        let fam = pi_family_from_gain(&Mat::zeros(1, 2), &m(2, 1, &[0.0, 1.0])).unwrap();
        assert_eq!(fam.particular.norm(), 0.0);
    }

    #[test]
    fn willems_examples() {
        let (a, b) = (m(2, 2, &[0.0, 1.0, 0.0, 0.0]), m(2, 1, &[0.0, 1.0]));
        assert_eq!(willems_q(&SymMat::zeros(2), &a, &b).norm(), 0.0);
        let pi = SymMat::from_row_slice(2, &[1.0, 1.0, 1.0, 1.0]);
        let q = willems_q(&pi, &a, &b);
        let are = a.transpose() * pi.as_mat() + pi.as_mat() * &a - pi.as_mat() * &b * b.transpose() * pi.as_mat() + q.as_mat();
        assert!(are.norm() <= 1e-12);
        // Scalar: q = -2aπ + b²π².
        let q = willems_q(&SymMat::from_row_slice(1, &[0.5]), &m(1, 1, &[3.0]), &m(1, 1, &[2.0]));
        assert_relative_eq!(q[(0, 0)], -3.0 + 1.0);
    }

    #[test]
    fn epsilon_gain_examples() {
        let p = inertial();
        let k = m(1, 2, &[1.0, 1.0]);
        let r = epsilon_regularized_gain(&p, &k, 0.01).unwrap();
        assert_relative_eq!(r.k_eps, m(1, 2, &[1.01, 1.02]), epsilon = 1e-12);
        assert!(is_hurwitz(&(&p.a - &p.b * &r.k_eps)).unwrap());
        let zero = epsilon_regularized_gain(&p, &k, 0.0).unwrap();
        assert_eq!(zero.k_eps, k);
        assert_eq!(zero.gap, 0.0);
        assert!(epsilon_regularized_gain(&p, &m(1, 2, &[2.0, 1.0]), 0.1).is_err());
    }

    #[test]
    fn external_realization_scalar() {
        let f = stationary_external_realization(&m(1, 1, &[-1.0]), &m(1, 1, &[1.0]), &SymMat::identity(1)).unwrap();
        assert_relative_eq!(f.x[(0, 0)], 1.0, epsilon = 1e-14);
        assert_relative_eq!(f.k_f[(0, 0)], -0.5, epsilon = 1e-14);
        assert_relative_eq!(f.state_matrix[(0, 0)], -0.5, epsilon = 1e-14);
    }

    #[test]
    fn external_realization_of_white_noise_covariance() {
        let a = m(2, 2, &[0.0, 1.0, -2.0, -3.0]);
        let b = m(2, 1, &[0.0, 1.0]);
        let sigma = solve_lyapunov(&a, &SymMat::new(&b * b.transpose())).unwrap();
        let f = stationary_external_realization(&a, &b, &sigma).unwrap();
        assert_relative_eq!(f.x, &b * 0.5, epsilon = 1e-12);
        assert!(f.k_f.norm() < 1e-12);
    }

    #[test]
    fn external_realization_errors() {
        assert!(matches!(
            stationary_external_realization(&m(1, 1, &[1.0]), &m(1, 1, &[1.0]), &SymMat::identity(1)),
            Err(Error::NotHurwitz)
        ));
        assert!(matches!(
            stationary_external_realization(&(-Mat::identity(2, 2)), &Mat::zeros(2, 1), &SymMat::identity(2)),
            Err(Error::Infeasible(_))
        ));
    }
}
