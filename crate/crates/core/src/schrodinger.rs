//! Coupled Riccati (Schrödinger) system, feedback policies and closed-loop
//! covariance propagation.
//!
//! All integrators are classical fixed-step RK4 on the caller's grid. Matrix
//! iterates are re-symmetrized after every step.

use crate::error::{Error, Result};
use crate::feasibility::SteeringProblem;
use crate::matops::{Mat, SymMat};

/// Frobenius norm above which a Riccati iterate is declared to have escaped.
pub const BLOW_UP_NORM: f64 = 1e12;

/// Successive terminal values closer than this stop the fixed-point iteration.
pub const FIXED_POINT_TOL: f64 = 1e-8;

/// Number of consecutive residual increases that count as divergence.
pub const DIVERGENCE_WINDOW: usize = 10;

/// Default number of RK4 steps on `[0, T]`.
pub const DEFAULT_STEPS: usize = 400;

/// `n + 1` equally spaced nodes on `[0, t]`.
pub fn uniform_grid(t: f64, n: usize) -> Vec<f64> {
    let h = t / n as f64;
    (0..=n).map(|k| if k == n { t } else { k as f64 * h }).collect()
}

/// A state-feedback gain `K(t)` with the convention `u = -K(t) x`.
pub trait GainSchedule: Sync {
    fn gain(&self, t: f64) -> Mat;

    /// Nodes the schedule was sampled on, if it is not constant.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// Time-indexed gain, piecewise linear between nodes and clamped outside the
/// grid, or a single constant gain.
#[derive(Debug, Clone)]
pub struct FeedbackPolicy {
    pub grid: Vec<f64>,
    pub gains: Vec<Mat>,
    pub constant: bool,
}

impl FeedbackPolicy {
    pub fn constant(k: Mat) -> Self {
        FeedbackPolicy { grid: Vec::new(), gains: vec![k], constant: true }
    }

    pub fn sampled(grid: Vec<f64>, gains: Vec<Mat>) -> Result<Self> {
        if grid.is_empty() || grid.len() != gains.len() {
            return Err(Error::Dimension(format!("{} grid nodes but {} gains", grid.len(), gains.len())));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("policy grid must be strictly increasing".into()));
        }
        let shape = gains[0].shape();
        if gains.iter().any(|k| k.shape() != shape) {
            return Err(Error::Dimension("gains have inconsistent shapes".into()));
        }
        Ok(FeedbackPolicy { grid, gains, constant: false })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.gains[0].shape()
    }

    /// Switches to `next` for `t >= switch_time`.
    pub fn followed_by(self, switch_time: f64, next: FeedbackPolicy) -> SwitchedPolicy {
        SwitchedPolicy { first: self, switch_time, then: next }
    }
}

impl GainSchedule for FeedbackPolicy {
    fn gain(&self, t: f64) -> Mat {
        if self.constant || self.gains.len() == 1 {
            return self.gains[0].clone();
        }
        let g = &self.grid;
        if t <= g[0] {
            return self.gains[0].clone();
        }
        let last = g.len() - 1;
        if t >= g[last] {
            return self.gains[last].clone();
        }
        let idx = g.partition_point(|&x| x <= t) - 1;
        let w = (t - g[idx]) / (g[idx + 1] - g[idx]);
        &self.gains[idx] * (1.0 - w) + &self.gains[idx + 1] * w
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.grid.clone()
    }
}

/// One policy up to `switch_time`, another from then on.
#[derive(Debug, Clone)]
pub struct SwitchedPolicy {
    pub first: FeedbackPolicy,
    pub switch_time: f64,
    pub then: FeedbackPolicy,
}

impl GainSchedule for SwitchedPolicy {
    fn gain(&self, t: f64) -> Mat {
        if t < self.switch_time {
            self.first.gain(t)
        } else {
            self.then.gain(t)
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        let mut b = self.first.breakpoints();
        b.retain(|&x| x <= self.switch_time);
        if b.last().is_none_or(|&x| x < self.switch_time) {
            b.push(self.switch_time);
        }
        b.extend(self.then.breakpoints().into_iter().filter(|&x| x > self.switch_time));
        b
    }
}

pub(crate) fn rk4_step<F>(f: &F, t: f64, y: &Mat, h: f64) -> Mat
where
    F: Fn(f64, &Mat) -> Mat,
{
    let k1 = f(t, y);
    let k2 = f(t + 0.5 * h, &(y + &k1 * (0.5 * h)));
    let k3 = f(t + 0.5 * h, &(y + &k2 * (0.5 * h)));
    let k4 = f(t + h, &(y + &k3 * h));
    y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

fn symmetrize(m: Mat) -> Mat {
    SymMat::new(m).into_inner()
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::InvalidArgument("grid needs at least two nodes".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Right-hand side of the control Riccati equation
/// `Π̇ = -A'Π - ΠA + ΠBB'Π`.
pub fn pi_rhs(pi: &Mat, a: &Mat, bbt: &Mat) -> Mat {
    -a.transpose() * pi - pi * a + pi * bbt * pi
}

/// Coupling term `(Π + H)(BB' - B₁B₁')(Π + H)` of the `H` equation.
pub fn coupling_term(pi: &Mat, h: &Mat, b: &Mat, b1: &Mat) -> Mat {
    let s = pi + h;
    let d = b * b.transpose() - b1 * b1.transpose();
    &s * d * &s
}

/// `Ḣ = -A'H - HA - HBB'H + (Π + H)(BB' - B₁B₁')(Π + H)`.
pub fn h_rhs(h: &Mat, pi: &Mat, a: &Mat, b: &Mat, b1: &Mat) -> Mat {
    let bbt = b * b.transpose();
    -a.transpose() * h - h * a - h * bbt * h + coupling_term(pi, h, b, b1)
}

/// Integrates the Riccati equation backward from `Π(T) = pi_t`, returning
/// values aligned with `grid`.
pub fn integrate_pi(pi_t: &SymMat, a: &Mat, b: &Mat, grid: &[f64]) -> Result<Vec<SymMat>> {
    check_grid(grid)?;
    let bbt = b * b.transpose();
    let f = |_t: f64, p: &Mat| pi_rhs(p, a, &bbt);
    let n = grid.len();
    let mut out = vec![SymMat::zeros(0); n];
    let mut y = pi_t.as_mat().clone();
    out[n - 1] = pi_t.clone();
    for k in (0..n - 1).rev() {
        let h = grid[k] - grid[k + 1];
        y = symmetrize(rk4_step(&f, grid[k + 1], &y, h));
        if !y.iter().all(|v| v.is_finite()) || y.norm() > BLOW_UP_NORM {
            return Err(Error::FiniteEscape { time: grid[k] });
        }
        out[k] = SymMat::new(y.clone());
    }
    Ok(out)
}

/// Integrates the `H` equation forward from `H(0) = h0`, with `Π` linearly
/// interpolated between grid nodes.
pub fn integrate_h(h0: &SymMat, pi: &[SymMat], a: &Mat, b: &Mat, b1: &Mat, grid: &[f64]) -> Result<Vec<SymMat>> {
    check_grid(grid)?;
    if pi.len() != grid.len() {
        return Err(Error::Dimension(format!("{} Π values for {} grid nodes", pi.len(), grid.len())));
    }
    let mut out = Vec::with_capacity(grid.len());
    out.push(h0.clone());
    let mut y = h0.as_mat().clone();
    for k in 0..grid.len() - 1 {
        let (t0, t1) = (grid[k], grid[k + 1]);
        let (p0, p1) = (pi[k].as_mat(), pi[k + 1].as_mat());
        let f = |t: f64, hm: &Mat| {
            let w = (t - t0) / (t1 - t0);
            let p = p0 * (1.0 - w) + p1 * w;
            h_rhs(hm, &p, a, b, b1)
        };
        y = symmetrize(rk4_step(&f, t0, &y, t1 - t0));
        if !y.iter().all(|v| v.is_finite()) || y.norm() > BLOW_UP_NORM {
            return Err(Error::FiniteEscape { time: t1 });
        }
        out.push(SymMat::new(y.clone()));
    }
    Ok(out)
}

/// Sampled solution candidate `(Π(t), H(t))`.
#[derive(Debug, Clone)]
pub struct SchrodingerPair {
    pub grid: Vec<f64>,
    pub pi: Vec<SymMat>,
    pub h: Vec<SymMat>,
}

impl SchrodingerPair {
    /// `Σ(t_k) = (Π(t_k) + H(t_k))⁻¹`.
    pub fn covariance(&self) -> Result<Vec<SymMat>> {
        self.pi.iter().zip(&self.h).map(|(p, h)| SymMat::new(p.as_mat() + h.as_mat()).inverse()).collect()
    }
}

/// Max-over-grid Frobenius residuals of both ODEs (central differences at
/// interior nodes) and of both boundary couplings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchrodingerResidual {
    pub ode_res_pi: f64,
    pub ode_res_h: f64,
    pub bc0_res: f64,
    pub bct_res: f64,
}

pub fn schrodinger_residual(pair: &SchrodingerPair, problem: &SteeringProblem) -> Result<SchrodingerResidual> {
    let g = &pair.grid;
    check_grid(g)?;
    let (a, b, b1) = (&problem.a, &problem.b, &problem.b1);
    let bbt = b * b.transpose();
    let mut ode_res_pi: f64 = 0.0;
    let mut ode_res_h: f64 = 0.0;
    for k in 1..g.len() - 1 {
        let dt = g[k + 1] - g[k - 1];
        let dpi = (pair.pi[k + 1].as_mat() - pair.pi[k - 1].as_mat()) / dt;
        let dh = (pair.h[k + 1].as_mat() - pair.h[k - 1].as_mat()) / dt;
        ode_res_pi = ode_res_pi.max((dpi - pi_rhs(&pair.pi[k], a, &bbt)).norm());
        ode_res_h = ode_res_h.max((dh - h_rhs(&pair.h[k], &pair.pi[k], a, b, b1)).norm());
    }
    let last = g.len() - 1;
    let bc0 = problem.sigma0.inverse()?.as_mat() - pair.pi[0].as_mat() - pair.h[0].as_mat();
    let bct = problem.sigma_t.inverse()?.as_mat() - pair.pi[last].as_mat() - pair.h[last].as_mat();
    Ok(SchrodingerResidual { ode_res_pi, ode_res_h, bc0_res: bc0.norm(), bct_res: bct.norm() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixedPointStatus {
    Converged,
    Diverged,
    MaxIters,
}

impl FixedPointStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            FixedPointStatus::Converged => "converged",
            FixedPointStatus::Diverged => "diverged",
            FixedPointStatus::MaxIters => "max_iters",
        }
    }
}

/// Outcome of the successive-approximation scheme. `history[i]` is the
/// Frobenius size of the `i`-th terminal update `‖Π_{i+1}(T) - Π_i(T)‖`.
#[derive(Debug, Clone)]
pub struct FixedPointReport {
    pub status: FixedPointStatus,
    pub iterations: usize,
    pub pair: Option<SchrodingerPair>,
    pub history: Vec<f64>,
    pub pi_t: SymMat,
    /// Escape time when an iterate blew up.
    pub escape_time: Option<f64>,
}

fn build_pair(problem: &SteeringProblem, pi_t: &SymMat, grid: &[f64], sigma0_inv: &SymMat) -> Result<SchrodingerPair> {
    let pi = integrate_pi(pi_t, &problem.a, &problem.b, grid)?;
    let h0 = SymMat::new(sigma0_inv.as_mat() - pi[0].as_mat());
    let h = integrate_h(&h0, &pi, &problem.a, &problem.b, &problem.b1, grid)?;
    Ok(SchrodingerPair { grid: grid.to_vec(), pi, h })
}

/// Experimental successive approximation: integrate `Π` backward from the
/// current `Π(T)`, set `H(0) = Σ₀⁻¹ - Π(0)`, integrate `H` forward and update
/// `Π(T) = Σ_T⁻¹ - H(T)`. Non-convergence is a normal outcome.
pub fn fixed_point_iteration(problem: &SteeringProblem, pi_t_init: &SymMat, max_iters: usize, steps: usize) -> Result<FixedPointReport> {
    let grid = uniform_grid(problem.t, steps.max(1));
    let sigma0_inv = problem.sigma0.inverse()?;
    let sigma_t_inv = problem.sigma_t.inverse()?;
    let mut pi_t = pi_t_init.clone();
    let mut history = Vec::new();
    let mut rising = 0usize;

    let diverged = |history: Vec<f64>, pi_t: SymMat, iterations, pair, time| FixedPointReport {
        status: FixedPointStatus::Diverged,
        iterations,
        pair,
        history,
        pi_t,
        escape_time: time,
    };

    let mut pair = match build_pair(problem, &pi_t, &grid, &sigma0_inv) {
        Ok(p) => p,
        Err(Error::FiniteEscape { time }) => return Ok(diverged(history, pi_t, 0, None, Some(time))),
        Err(e) => return Err(e),
    };

    for it in 0..max_iters {
        let h_t = pair.h.last().expect("non-empty grid");
        let next = SymMat::new(sigma_t_inv.as_mat() - h_t.as_mat());
        let step = (next.as_mat() - pi_t.as_mat()).norm();
        if !step.is_finite() {
            return Ok(diverged(history, pi_t, it + 1, Some(pair), None));
        }
        if let Some(&prev) = history.last() {
            rising = if step > prev { rising + 1 } else { 0 };
        }
        history.push(step);
        if step < FIXED_POINT_TOL {
            return Ok(FixedPointReport {
                status: FixedPointStatus::Converged,
                iterations: it + 1,
                pair: Some(pair),
                history,
                pi_t,
                escape_time: None,
            });
        }
        if rising >= DIVERGENCE_WINDOW {
            return Ok(diverged(history, pi_t, it + 1, Some(pair), None));
        }
        pi_t = next;
        pair = match build_pair(problem, &pi_t, &grid, &sigma0_inv) {
            Ok(p) => p,
            Err(Error::FiniteEscape { time }) => return Ok(diverged(history, pi_t, it + 1, None, Some(time))),
            Err(e) => return Err(e),
        };
    }
    Ok(FixedPointReport { status: FixedPointStatus::MaxIters, iterations: max_iters, pair: Some(pair), history, pi_t, escape_time: None })
}

/// Propagates `Σ̇ = (A - BK)Σ + Σ(A - BK)' + B₁B₁'` on `grid`.
pub fn propagate_covariance(sigma0: &SymMat, a: &Mat, b: &Mat, b1: &Mat, policy: &dyn GainSchedule, grid: &[f64]) -> Result<Vec<SymMat>> {
    check_grid(grid)?;
    let n = a.nrows();
    if sigma0.dim() != n || b.nrows() != n || b1.nrows() != n {
        return Err(Error::Dimension("propagate_covariance: inconsistent system dimensions".into()));
    }
    let noise = b1 * b1.transpose();
    let f = |t: f64, s: &Mat| {
        let acl = a - b * policy.gain(t);
        &acl * s + s * acl.transpose() + &noise
    };
    let mut out = Vec::with_capacity(grid.len());
    out.push(sigma0.clone());
    let mut y = sigma0.as_mat().clone();
    for k in 0..grid.len() - 1 {
        y = monitor_psd(symmetrize(rk4_step(&f, grid[k], &y, grid[k + 1] - grid[k])));
        out.push(SymMat::new(y.clone()));
    }
    Ok(out)
}

/// Clips eigenvalues in `[-1e-8, 0)` to zero; leaves everything else alone.
fn monitor_psd(s: Mat) -> Mat {
    if s.nrows() == 0 || s.clone().cholesky().is_some() {
        return s;
    }
    let eig = s.clone().symmetric_eigen();
    let lmin = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if (-1e-8..0.0).contains(&lmin) {
        let d = eig.eigenvalues.map(|l| l.max(0.0));
        symmetrize(&eig.eigenvectors * Mat::from_diagonal(&d) * eig.eigenvectors.transpose())
    } else {
        s
    }
}

/// `K(t_k) = B'Π(t_k)`.
pub fn control_from_pi(pi: &[SymMat], b: &Mat, grid: &[f64]) -> Result<FeedbackPolicy> {
    if pi.len() != grid.len() {
        return Err(Error::Dimension(format!("{} Π values for {} grid nodes", pi.len(), grid.len())));
    }
    let gains = pi.iter().map(|p| b.transpose() * p.as_mat()).collect();
    if grid.len() == 1 {
        return Ok(FeedbackPolicy { grid: grid.to_vec(), gains, constant: false });
    }
    FeedbackPolicy::sampled(grid.to_vec(), gains)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matops::matrix_exponential;
    use approx::assert_relative_eq;

    fn m(r: usize, c: usize, d: &[f64]) -> Mat {
        Mat::from_row_slice(r, c, d)
    }

    #[test]
    fn zero_terminal_riccati_stays_zero() {
        let grid = uniform_grid(1.0, 50);
        let pi = integrate_pi(&SymMat::zeros(2), &m(2, 2, &[0.0, 1.0, 0.0, 0.0]), &m(2, 1, &[0.0, 1.0]), &grid).unwrap();
        assert!(pi.iter().all(|p| p.norm() == 0.0));
    }

    #[test]
    fn scalar_riccati_closed_form() {
        // a = 0, b = 1: Π(t) = π_T / (1 + π_T (T - t)).
        let (t_end, pit) = (2.0, 0.7);
        let grid = uniform_grid(t_end, 200);
        let pi = integrate_pi(&SymMat::from_row_slice(1, &[pit]), &m(1, 1, &[0.0]), &m(1, 1, &[1.0]), &grid).unwrap();
        for (t, p) in grid.iter().zip(&pi) {
            assert_relative_eq!(p[(0, 0)], pit / (1.0 + pit * (t_end - t)), epsilon = 1e-10);
        }
    }

    #[test]
    fn riccati_escape_is_reported() {
        // a = 0, b = 1, π_T = -1 escapes backward at t = T - 1.
        let grid = uniform_grid(3.0, 600);
        let r = integrate_pi(&SymMat::from_row_slice(1, &[-1.0]), &m(1, 1, &[0.0]), &m(1, 1, &[1.0]), &grid);
        match r {
            Err(Error::FiniteEscape { time }) => assert!((time - 2.0).abs() < 0.05, "escape at {time}"),
            other => panic!("expected escape, got {other:?}"),
        }
    }

    #[test]
    fn h_without_control_and_noise_is_congruence() {
        let a = m(2, 2, &[0.0, 1.0, -2.0, -0.3]);
        let h0 = SymMat::from_row_slice(2, &[2.0, 0.3, 0.3, 1.0]);
        let grid = uniform_grid(1.0, 200);
        let pis = vec![SymMat::zeros(2); grid.len()];
        let b = Mat::zeros(2, 1);
        let h = integrate_h(&h0, &pis, &a, &b, &b, &grid).unwrap();
        let e = matrix_exponential(&(-a.clone())).unwrap();
        let expect = e.transpose() * h0.as_mat() * &e;
        assert_relative_eq!(*h[grid.len() - 1].as_mat(), expect, epsilon = 1e-9);
    }

    #[test]
    fn zero_h_stays_zero() {
        let grid = uniform_grid(1.0, 20);
        let pis = vec![SymMat::zeros(2); grid.len()];
        let h = integrate_h(&SymMat::zeros(2), &pis, &Mat::identity(2, 2), &Mat::zeros(2, 1), &Mat::zeros(2, 1), &grid).unwrap();
        assert!(h.iter().all(|x| x.norm() == 0.0));
    }

    #[test]
    fn coupling_vanishes_when_b_equals_b1() {
        let b = m(3, 2, &[1.0, 0.2, -0.4, 2.0, 0.3, 0.7]);
        let pi = m(3, 3, &[1.0, 2.0, 3.0, 2.0, -1.0, 0.5, 3.0, 0.5, 4.0]);
        let h = m(3, 3, &[0.1, 0.0, 0.2, 0.0, 5.0, -1.0, 0.2, -1.0, 2.0]);
        assert_eq!(coupling_term(&pi, &h, &b, &b), Mat::zeros(3, 3));
    }

    #[test]
    fn policy_interpolation_and_clamping() {
        let p = FeedbackPolicy::sampled(vec![0.0, 1.0], vec![m(1, 1, &[0.0]), m(1, 1, &[2.0])]).unwrap();
        assert_relative_eq!(p.gain(0.25)[(0, 0)], 0.5);
        assert_relative_eq!(p.gain(-1.0)[(0, 0)], 0.0);
        assert_relative_eq!(p.gain(3.0)[(0, 0)], 2.0);
        let s = p.followed_by(1.0, FeedbackPolicy::constant(m(1, 1, &[7.0])));
        assert_relative_eq!(s.gain(0.5)[(0, 0)], 1.0);
        assert_relative_eq!(s.gain(1.0)[(0, 0)], 7.0);
        assert_eq!(s.breakpoints(), vec![0.0, 1.0]);
        assert!(FeedbackPolicy::sampled(vec![0.0, 0.0], vec![m(1, 1, &[0.0]); 2]).is_err());
    }

    #[test]
    fn propagate_pure_diffusion() {
        let grid = uniform_grid(1.0, 10);
        let s = propagate_covariance(
            &SymMat::identity(2),
            &Mat::zeros(2, 2),
            &Mat::zeros(2, 1),
            &Mat::identity(2, 2),
            &FeedbackPolicy::constant(Mat::zeros(1, 2)),
            &grid,
        )
        .unwrap();
        assert_relative_eq!(*s[10].as_mat(), Mat::identity(2, 2) * 2.0, epsilon = 1e-14);
    }

    #[test]
    fn propagate_noiseless_is_congruence() {
        let a = m(2, 2, &[0.3, 1.0, -1.0, -0.2]);
        let s0 = SymMat::from_row_slice(2, &[1.0, 0.2, 0.2, 2.0]);
        let grid = uniform_grid(1.5, 300);
        let s = propagate_covariance(&s0, &a, &Mat::zeros(2, 1), &Mat::zeros(2, 1), &FeedbackPolicy::constant(Mat::zeros(1, 2)), &grid)
            .unwrap();
        let e = matrix_exponential(&(&a * 1.5)).unwrap();
        assert_relative_eq!(*s[300].as_mat(), &e * s0.as_mat() * e.transpose(), epsilon = 1e-8);
    }

    #[test]
    fn control_from_pi_examples() {
        let b = m(2, 1, &[0.0, 1.0]);
        let grid = vec![0.0, 1.0];
        let pis = vec![SymMat::from_row_slice(2, &[3.0, 1.0, 1.0, 1.0]); 2];
        let pol = control_from_pi(&pis, &b, &grid).unwrap();
        assert_relative_eq!(pol.gain(0.5), m(1, 2, &[1.0, 1.0]));
        let zero = control_from_pi(&vec![SymMat::zeros(2); 2], &b, &grid).unwrap();
        assert_eq!(zero.gain(0.3), Mat::zeros(1, 2));
        let scalar =
            control_from_pi(&[SymMat::from_row_slice(1, &[2.0]), SymMat::from_row_slice(1, &[4.0])], &m(1, 1, &[3.0]), &grid).unwrap();
        assert_relative_eq!(scalar.gain(1.0)[(0, 0)], 12.0);
    }
}
