//! Finite-horizon minimum-energy steering as a semidefinite program.
//!
//! The covariance dynamics are collocated with the trapezoidal rule on a
//! uniform grid, and the energy rate `trace(U'Σ⁻¹U)` is replaced by `trace(Y)`
//! with the epigraph LMI `[[Y, U'], [U, Σ]] ⪰ 0` at every node.

pub mod admm;

use nalgebra::DVector;

pub use admm::{AdmmOptions, ConicProgram, ConicSolution, SolveStatus, SparseMatrix};

use crate::error::{Error, Result};
use crate::feasibility::SteeringProblem;
use crate::matops::{Mat, SymMat};
use crate::schrodinger::{propagate_covariance, uniform_grid, FeedbackPolicy, GainSchedule};
use admm::{smat, svec_index, svec_len};

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Default number of collocation intervals.
pub const DEFAULT_INTERVALS: usize = 100;

#[derive(Debug, Clone)]
pub struct DiscretizedProblem {
    pub problem: SteeringProblem,
    pub grid: Vec<f64>,
    /// Lower bound `Σ_k ⪰ ε I`, folded into each cone block.
    pub eps_psd: f64,
}

/// Variables at one collocation node.
#[derive(Debug, Clone)]
pub struct NodeValues {
    pub sigma: SymMat,
    pub u: Mat,
    pub y: SymMat,
}

impl DiscretizedProblem {
    pub fn intervals(&self) -> usize {
        self.grid.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.problem.t / self.intervals() as f64
    }

    pub fn block_dim(&self) -> usize {
        self.problem.n() + self.problem.m()
    }

    pub fn n_blocks(&self) -> usize {
        self.grid.len()
    }

    fn offset(&self, k: usize) -> usize {
        k * svec_len(self.block_dim())
    }

    /// Splits the block `[[Y, U'], [U, Σ - εI]]` of node `k`.
    pub fn node(&self, x: &DVector<f64>, k: usize) -> NodeValues {
        let (n, m, d) = (self.problem.n(), self.problem.m(), self.block_dim());
        let len = svec_len(d);
        let z = smat(&x.as_slice()[self.offset(k)..self.offset(k) + len], d);
        let sigma = SymMat::new(z.view((m, m), (n, n)).into_owned() + Mat::identity(n, n) * self.eps_psd);
        NodeValues { sigma, u: z.view((m, 0), (n, m)).into_owned(), y: SymMat::new(z.view((0, 0), (m, m)).into_owned()) }
    }

    pub fn nodes(&self, x: &DVector<f64>) -> Vec<NodeValues> {
        (0..self.n_blocks()).map(|k| self.node(x, k)).collect()
    }
}

pub fn discretize(problem: &SteeringProblem, intervals: usize) -> Result<DiscretizedProblem> {
    if intervals < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 intervals, got {intervals}")));
    }
    let n = problem.n();
    let eps_psd = 1e-6 * problem.sigma0.trace() / n as f64;
    Ok(DiscretizedProblem { problem: problem.clone(), grid: uniform_grid(problem.t, intervals), eps_psd })
}

/// Symmetric-matrix valued linear map of one cone block, as sparse columns.
fn block_columns<F>(d: usize, offset: usize, f: F) -> Vec<(usize, SymMat)>
where
    F: Fn(&Mat) -> Mat,
{
    let len = svec_len(d);
    let mut cols = Vec::with_capacity(len);
    for v in 0..len {
        let mut e = vec![0.0; len];
        e[v] = 1.0;
        let image = f(&smat(&e, d));
        if image.iter().any(|&x| x != 0.0) {
            cols.push((offset + v, SymMat::new(image)));
        }
    }
    cols
}

/// Scaled upper-triangle coordinates of a symmetric `n × n` matrix.
fn sym_coords(n: usize) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::with_capacity(svec_len(n));
    for j in 0..n {
        for i in 0..=j {
            out.push((i, j, if i == j { 1.0 } else { SQRT2 }));
        }
    }
    out
}

pub fn assemble_sdp(dp: &DiscretizedProblem) -> ConicProgram {
    let p = &dp.problem;
    let (n, m, d) = (p.n(), p.m(), dp.block_dim());
    let nb = dp.n_blocks();
    let len = svec_len(d);
    let dt = dp.dt();
    let coords = sym_coords(n);
    let sigma_of = |z: &Mat| z.view((m, m), (n, n)).into_owned();
    let u_of = |z: &Mat| z.view((m, 0), (n, m)).into_owned();
    let drift = |z: &Mat| {
        let (s, u) = (sigma_of(z), u_of(z));
        &p.a * &s + &s * p.a.transpose() + &p.b * u.transpose() + &u * p.b.transpose()
    };

    let mut a = SparseMatrix::new(nb * len);
    let mut b = Vec::new();
    let pin = |a: &mut SparseMatrix, b: &mut Vec<f64>, k: usize, target: &SymMat| {
        let shifted = target.as_mat() - Mat::identity(n, n) * dp.eps_psd;
        for &(i, j, w) in &coords {
            a.push_row(vec![(dp.offset(k) + svec_index(m + i, m + j), 1.0)]);
            b.push(w * shifted[(i, j)]);
        }
    };

    pin(&mut a, &mut b, 0, &p.sigma0);
    // (Σ₊ - Σ) - Δt/2 (F + F₊) = 0 with F = AΣ + ΣA' + BU' + UB' + B₁B₁'.
    let cur = block_columns(d, 0, |z| -sigma_of(z) - drift(z) * (0.5 * dt));
    let next = block_columns(d, 0, |z| sigma_of(z) - drift(z) * (0.5 * dt));
    let eps_i = Mat::identity(n, n) * dp.eps_psd;
    let constant = (&p.a * &eps_i + &eps_i * p.a.transpose() + p.noise().as_mat()) * (-dt);
    for k in 0..nb - 1 {
        for &(i, j, w) in &coords {
            let mut row: Vec<(usize, f64)> = cur.iter().map(|(v, img)| (dp.offset(k) + v, w * img[(i, j)])).collect();
            row.extend(next.iter().map(|(v, img)| (dp.offset(k + 1) + v, w * img[(i, j)])));
            a.push_row(row);
            b.push(-w * constant[(i, j)]);
        }
    }
    pin(&mut a, &mut b, nb - 1, &p.sigma_t);

    let mut c = DVector::zeros(nb * len);
    for k in 0..nb {
        let weight = if k == 0 || k == nb - 1 { 0.5 * dt } else { dt };
        for r in 0..m {
            c[dp.offset(k) + svec_index(r, r)] = weight;
        }
    }
    ConicProgram { c, a, b: DVector::from_vec(b), block_dims: vec![d; nb] }
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub nodes: Vec<NodeValues>,
    /// Trapezoidal `∫ trace(Y) dt`.
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    pub raw: ConicSolution,
}

pub fn solve_sdp(dp: &DiscretizedProblem, cp: &ConicProgram, opts: &AdmmOptions) -> Result<SdpSolution> {
    let raw = admm::solve_conic(cp, opts)?;
    let mut nodes = dp.nodes(&raw.x);
    let last = nodes.len() - 1;
    nodes[0].sigma = dp.problem.sigma0.clone();
    nodes[last].sigma = dp.problem.sigma_t.clone();
    Ok(SdpSolution {
        nodes,
        objective: raw.objective,
        primal_residual: raw.primal_residual,
        dual_residual: raw.dual_residual,
        iterations: raw.iterations,
        status: raw.status,
        raw,
    })
}

/// Discretize, assemble and solve in one call.
pub fn steer(problem: &SteeringProblem, intervals: usize, opts: &AdmmOptions) -> Result<(DiscretizedProblem, SdpSolution)> {
    let dp = discretize(problem, intervals)?;
    let cp = assemble_sdp(&dp);
    let sol = solve_sdp(&dp, &cp, opts)?;
    Ok((dp, sol))
}

/// `K_k = -U_k'Σ_k⁻¹`, piecewise linear between nodes.
pub fn recover_gains(sol: &SdpSolution, dp: &DiscretizedProblem) -> Result<FeedbackPolicy> {
    let gains = sol
        .nodes
        .iter()
        .enumerate()
        .map(|(k, node)| {
            let chol =
                node.sigma.as_mat().clone().cholesky().ok_or_else(|| Error::Singular(format!("Sigma at node {k} (t = {})", dp.grid[k])))?;
            Ok(-chol.solve(&node.u).transpose())
        })
        .collect::<Result<Vec<Mat>>>()?;
    FeedbackPolicy::sampled(dp.grid.clone(), gains)
}

#[derive(Debug, Clone)]
pub struct SteeringReport {
    pub grid: Vec<f64>,
    pub sigma: Vec<SymMat>,
    /// `‖Σ(T) - Σ_T‖_F`.
    pub terminal_error: f64,
    /// `∫ trace(KΣK') dt` by composite Simpson.
    pub cost: f64,
}

/// Integrates the closed-loop covariance on `steps` RK4 steps and reports the
/// terminal miss and realized energy.
pub fn verify_steering(policy: &dyn GainSchedule, problem: &SteeringProblem, steps: usize) -> Result<SteeringReport> {
    let steps = steps.max(2) + steps % 2;
    let grid = uniform_grid(problem.t, steps);
    let sigma = propagate_covariance(&problem.sigma0, &problem.a, &problem.b, &problem.b1, policy, &grid)?;
    let terminal_error = (sigma[steps].as_mat() - problem.sigma_t.as_mat()).norm();
    let rate: Vec<f64> = grid
        .iter()
        .zip(&sigma)
        .map(|(&t, s)| {
            let k = policy.gain(t);
            (&k * s.as_mat() * k.transpose()).trace()
        })
        .collect();
    let h = problem.t / steps as f64;
    let cost = h / 3.0
        * rate
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let w = if i == 0 || i == steps {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                w * r
            })
            .sum::<f64>();
    Ok(SteeringReport { grid, sigma, terminal_error, cost })
}

/// `verify_steering` on four times the policy's own grid resolution.
pub fn verify_sampled_policy(policy: &FeedbackPolicy, problem: &SteeringProblem) -> Result<SteeringReport> {
    let intervals = if policy.constant { DEFAULT_INTERVALS } else { policy.grid.len().saturating_sub(1).max(1) };
    verify_steering(policy, problem, 4 * intervals)
}
