//! Douglas–Rachford splitting for `min c'x  s.t.  Ax = b,  x ∈ S₊ × … × S₊`.
//!
//! Cone variables are stored in scaled `svec` form (upper triangle, column by
//! column, off-diagonals times √2), so the Euclidean inner product of two
//! `svec`s equals the trace inner product of the matrices.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Length of `svec` for a `d × d` symmetric matrix.
pub fn svec_len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Position of entry `(i, j)` in `svec`.
pub fn svec_index(i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    j * (j + 1) / 2 + i
}

pub fn svec(m: &DMatrix<f64>) -> DVector<f64> {
    let d = m.nrows();
    let mut out = DVector::zeros(svec_len(d));
    pack(m, out.as_mut_slice());
    out
}

pub fn smat(v: &[f64], d: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(d, d);
    for j in 0..d {
        for i in 0..=j {
            let x = v[svec_index(i, j)];
            if i == j {
                m[(i, i)] = x;
            } else {
                m[(i, j)] = x / SQRT2;
                m[(j, i)] = x / SQRT2;
            }
        }
    }
    m
}

fn pack(m: &DMatrix<f64>, out: &mut [f64]) {
    let d = m.nrows();
    for j in 0..d {
        for i in 0..=j {
            out[svec_index(i, j)] = if i == j { m[(i, i)] } else { SQRT2 * 0.5 * (m[(i, j)] + m[(j, i)]) };
        }
    }
}

/// Row-compressed sparse matrix.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    ncols: usize,
    ptr: Vec<usize>,
    idx: Vec<usize>,
    val: Vec<f64>,
}

impl SparseMatrix {
    pub fn new(ncols: usize) -> Self {
        SparseMatrix { ncols, ptr: vec![0], idx: Vec::new(), val: Vec::new() }
    }

    /// Appends a row given as `(column, value)` pairs with distinct columns.
    pub fn push_row(&mut self, mut entries: Vec<(usize, f64)>) {
        entries.sort_by_key(|e| e.0);
        for (c, v) in entries {
            debug_assert!(c < self.ncols);
            if v != 0.0 {
                self.idx.push(c);
                self.val.push(v);
            }
        }
        self.ptr.push(self.idx.len());
    }

    pub fn nrows(&self) -> usize {
        self.ptr.len() - 1
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.val.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.ptr[r]..self.ptr[r + 1];
        self.idx[span.clone()].iter().copied().zip(self.val[span].iter().copied())
    }

    pub fn mul(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.nrows(), |r, _| self.row(r).map(|(c, v)| v * x[c]).sum())
    }

    pub fn mul_transpose(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.ncols);
        for r in 0..self.nrows() {
            for (c, v) in self.row(r) {
                out[c] += v * y[r];
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows(), self.ncols);
        for r in 0..self.nrows() {
            for (c, v) in self.row(r) {
                m[(r, c)] = v;
            }
        }
        m
    }

    fn row_dot(&self, r: usize, s: usize) -> f64 {
        let (mut p, mut q) = (self.ptr[r], self.ptr[s]);
        let mut acc = 0.0;
        while p < self.ptr[r + 1] && q < self.ptr[s + 1] {
            match self.idx[p].cmp(&self.idx[q]) {
                std::cmp::Ordering::Less => p += 1,
                std::cmp::Ordering::Greater => q += 1,
                std::cmp::Ordering::Equal => {
                    acc += self.val[p] * self.val[q];
                    p += 1;
                    q += 1;
                }
            }
        }
        acc
    }

    fn col_range(&self, r: usize) -> Option<(usize, usize)> {
        let span = &self.idx[self.ptr[r]..self.ptr[r + 1]];
        Some((*span.first()?, *span.last()?))
    }
}

/// Cholesky factor of `AA'` in band storage.
#[derive(Debug, Clone)]
struct BandCholesky {
    n: usize,
    bw: usize,
    // Row i holds L[i, i - bw ..= i], left-padded with zeros.
    l: Vec<f64>,
}

impl BandCholesky {
    fn of_gram(a: &SparseMatrix) -> Result<Self> {
        let n = a.nrows();
        let ranges: Vec<Option<(usize, usize)>> = (0..n).map(|r| a.col_range(r)).collect();
        if ranges.iter().any(Option::is_none) {
            return Err(Error::Singular("equality constraint with no variables".into()));
        }
        let ranges: Vec<(usize, usize)> = ranges.into_iter().flatten().collect();
        let mut bw = 0;
        for i in 0..n {
            for j in (0..i).rev() {
                let (lo_i, hi_i) = ranges[i];
                let (lo_j, hi_j) = ranges[j];
                if lo_i <= hi_j && lo_j <= hi_i {
                    bw = bw.max(i - j);
                }
            }
        }
        let w = bw + 1;
        let at = |i: usize, j: usize| i * w + (j + bw - i);
        let mut l = vec![0.0; n * w];
        for i in 0..n {
            for j in i.saturating_sub(bw)..=i {
                let mut s = a.row_dot(i, j);
                for k in i.saturating_sub(bw).max(j.saturating_sub(bw))..j {
                    s -= l[at(i, k)] * l[at(j, k)];
                }
                if i == j {
                    if !(s > 1e-12 * a.row_dot(i, i)) {
                        return Err(Error::Singular(format!("equality constraints are linearly dependent (row {i})")));
                    }
                    l[at(i, i)] = s.sqrt();
                } else {
                    l[at(i, j)] = s / l[at(j, j)];
                }
            }
        }
        Ok(BandCholesky { n, bw, l })
    }

    fn solve(&self, rhs: &mut DVector<f64>) {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        let at = |i: usize, j: usize| i * w + (j + bw - i);
        for i in 0..n {
            let mut s = rhs[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.l[at(i, k)] * rhs[k];
            }
            rhs[i] = s / self.l[at(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = rhs[i];
            for k in i + 1..(i + bw + 1).min(n) {
                s -= self.l[at(k, i)] * rhs[k];
            }
            rhs[i] = s / self.l[at(i, i)];
        }
    }
}

/// `min c'x  s.t.  Ax = b`, `x` split into consecutive PSD blocks.
#[derive(Debug, Clone)]
pub struct ConicProgram {
    pub c: DVector<f64>,
    pub a: SparseMatrix,
    pub b: DVector<f64>,
    /// Side length of each PSD block, in variable order.
    pub block_dims: Vec<usize>,
}

impl ConicProgram {
    pub fn n_vars(&self) -> usize {
        self.c.len()
    }

    fn validate(&self) -> Result<()> {
        let nv: usize = self.block_dims.iter().map(|&d| svec_len(d)).sum();
        if nv != self.c.len() || self.a.ncols() != nv || self.a.nrows() != self.b.len() {
            return Err(Error::Dimension(format!(
                "conic program: {} cone entries, {} costs, A is {}x{}, {} right-hand sides",
                nv,
                self.c.len(),
                self.a.nrows(),
                self.a.ncols(),
                self.b.len()
            )));
        }
        if self.c.iter().chain(self.b.iter()).chain(self.a.val.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("conic program has non-finite data".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AdmmOptions {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iters: usize,
    /// Initial penalty; adapted by residual balancing.
    pub rho: f64,
    /// Over-relaxation factor in `(0, 2)`.
    pub alpha: f64,
    pub check_every: usize,
}

impl Default for AdmmOptions {
    fn default() -> Self {
        AdmmOptions { eps_abs: 1e-6, eps_rel: 1e-6, max_iters: 50_000, rho: 1.0, alpha: 1.6, check_every: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    MaxIters,
    InfeasibleSuspected,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::MaxIters => "max_iters",
            SolveStatus::InfeasibleSuspected => "infeasible_suspected",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    /// Satisfies `Ax = b` to rounding.
    pub x: DVector<f64>,
    /// Lies in the cone.
    pub z: DVector<f64>,
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    pub rho: f64,
    pub status: SolveStatus,
}

fn project_cone(v: &mut DVector<f64>, dims: &[usize], offsets: &[usize]) {
    let project = |chunk: &mut [f64], d: usize| {
        let m = smat(chunk, d);
        let eig = m.symmetric_eigen();
        if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
            return;
        }
        let lam = eig.eigenvalues.map(|l| l.max(0.0));
        let p = &eig.eigenvectors * DMatrix::from_diagonal(&lam) * eig.eigenvectors.transpose();
        pack(&p, chunk);
    };
    let slice = v.as_mut_slice();
    let mut chunks = Vec::with_capacity(dims.len());
    let mut rest = slice;
    for (k, &d) in dims.iter().enumerate() {
        let len = offsets[k + 1] - offsets[k];
        let (head, tail) = rest.split_at_mut(len);
        chunks.push((head, d));
        rest = tail;
    }
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        chunks.into_par_iter().with_min_len(16).for_each(|(c, d)| project(c, d));
    }
    #[cfg(not(feature = "parallel"))]
    for (c, d) in chunks {
        project(c, d);
    }
}

pub fn solve_conic(cp: &ConicProgram, opts: &AdmmOptions) -> Result<ConicSolution> {
    cp.validate()?;
    if !(opts.alpha > 0.0 && opts.alpha < 2.0) || !(opts.rho > 0.0) || opts.check_every == 0 {
        return Err(Error::InvalidArgument("ADMM needs 0 < alpha < 2, rho > 0, check_every > 0".into()));
    }
    let nv = cp.n_vars();
    let mut offsets = vec![0];
    for &d in &cp.block_dims {
        offsets.push(offsets.last().unwrap() + svec_len(d));
    }
    let chol = BandCholesky::of_gram(&cp.a)?;
    let project_affine = |v: &DVector<f64>| {
        let mut y = cp.a.mul(v) - &cp.b;
        chol.solve(&mut y);
        v - cp.a.mul_transpose(&y)
    };

    // The minimizer is invariant to positive cost scaling; keep |c| near 1.
    let c_scale = cp.c.amax().max(f64::MIN_POSITIVE);
    let c = &cp.c / c_scale;
    let sqrt_n = (nv as f64).sqrt();
    let alpha = opts.alpha;
    let mut rho = opts.rho;
    let mut z = DVector::zeros(nv);
    let mut u = DVector::zeros(nv);
    let mut x = project_affine(&z);
    let (mut r_norm, mut s_norm) = (f64::INFINITY, f64::INFINITY);
    let mut best_r = f64::INFINITY;
    let mut stalled = 0usize;
    let mut status = SolveStatus::MaxIters;
    let mut iterations = opts.max_iters;

    for it in 1..=opts.max_iters {
        x = project_affine(&(&z - &u - &c / rho));
        let xh = &x * alpha + &z * (1.0 - alpha);
        let z_old = std::mem::replace(&mut z, &xh + &u);
        project_cone(&mut z, &cp.block_dims, &offsets);
        u += &xh - &z;

        if it % opts.check_every != 0 && it != opts.max_iters {
            continue;
        }
        r_norm = (&x - &z).norm();
        s_norm = rho * (&z - &z_old).norm();
        let eps_pri = opts.eps_abs * sqrt_n + opts.eps_rel * x.norm().max(z.norm());
        let eps_dual = opts.eps_abs * sqrt_n + opts.eps_rel * rho * u.norm();
        if r_norm <= eps_pri && s_norm <= eps_dual {
            status = SolveStatus::Optimal;
            iterations = it;
            break;
        }
        if r_norm < 0.5 * best_r {
            best_r = r_norm;
            stalled = 0;
        } else {
            stalled += opts.check_every;
        }
        // Residual balancing; the affine projection does not depend on rho.
        let rel_r = r_norm / x.norm().max(z.norm()).max(1e-12);
        let rel_s = s_norm / (rho * u.norm()).max(1e-12);
        let ratio = (rel_r / rel_s.max(1e-300)).sqrt();
        if it % (10 * opts.check_every) == 0 && !(0.2..=5.0).contains(&ratio) {
            let new_rho = (rho * ratio).clamp(1e-6, 1e6);
            u *= rho / new_rho;
            rho = new_rho;
        }
    }
    if status != SolveStatus::Optimal && stalled >= opts.max_iters / 2 && r_norm > 1e3 * opts.eps_abs * sqrt_n {
        status = SolveStatus::InfeasibleSuspected;
    }
    let objective = cp.c.dot(&x);
    Ok(ConicSolution { x, z, objective, primal_residual: r_norm, dual_residual: s_norm * c_scale, iterations, rho, status })
}
