//! Monte Carlo ensembles of the closed-loop SDE `dx = (A - BK(t))x dt + B₁ dw`.
//!
//! Every path draws from its own ChaCha stream keyed on `(seed, path index)`,
//! and per-chunk sums are reduced in chunk order, so the statistics are
//! bitwise identical however the chunks are scheduled.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::matops::{Mat, SymMat};
use crate::schrodinger::GainSchedule;

/// Paths per work unit.
const CHUNK: usize = 256;

/// Entrywise `|z|` bound for [`compare_covariance`].
pub const Z_PASS: f64 = 3.5;

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Keep the trajectories of the first `max_stored_paths` paths.
    pub store_paths: bool,
    pub max_stored_paths: usize,
    /// Record statistics every this many steps.
    pub record_every: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { dt: 1e-3, n_paths: 20_000, seed: 0, store_paths: false, max_stored_paths: 100, record_every: 1 }
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleStats {
    pub grid: Vec<f64>,
    pub mean: Vec<DVector<f64>>,
    /// Raw second moments `E[xx']`.
    pub cov: Vec<SymMat>,
    pub n_paths: usize,
}

#[derive(Debug, Clone)]
pub struct PathRecord {
    pub id: usize,
    pub states: Vec<DVector<f64>>,
    /// `u = -K(t)x` at the same times.
    pub controls: Vec<DVector<f64>>,
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    pub stats: EnsembleStats,
    pub paths: Option<Vec<PathRecord>>,
}

/// A square root `L` with `LL' = Σ`, Cholesky first, eigendecomposition if
/// `Σ` is only semidefinite.
fn psd_sqrt(sigma: &SymMat) -> Result<Mat> {
    if let Some(ch) = sigma.as_mat().clone().cholesky() {
        return Ok(ch.l());
    }
    let eig = sigma.as_mat().clone().symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(1.0);
    if eig.eigenvalues.iter().any(|&l| l < -1e-12 * scale) {
        return Err(Error::NotPositiveDefinite("Sigma0 is not positive semidefinite".into()));
    }
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * Mat::from_diagonal(&root))
}

fn is_multiple(t: f64, dt: f64) -> bool {
    let q = t / dt;
    (q - q.round()).abs() <= 1e-6
}

struct ChunkSums {
    sum: Vec<DVector<f64>>,
    outer: Vec<Mat>,
    paths: Vec<PathRecord>,
}

pub fn euler_maruyama_ensemble(
    a: &Mat,
    b: &Mat,
    b1: &Mat,
    policy: &dyn GainSchedule,
    sigma0: &SymMat,
    horizon: f64,
    config: &SimConfig,
) -> Result<Ensemble> {
    let n = a.nrows();
    if !a.is_square() || b.nrows() != n || b1.nrows() != n || sigma0.dim() != n {
        return Err(Error::Dimension("simulation: inconsistent system dimensions".into()));
    }
    if !(config.dt > 0.0) || !(horizon > 0.0) {
        return Err(Error::InvalidArgument("dt and horizon must be positive".into()));
    }
    if config.n_paths < 2 || config.record_every == 0 {
        return Err(Error::InvalidArgument("need at least 2 paths and record_every >= 1".into()));
    }
    if !is_multiple(horizon, config.dt) {
        return Err(Error::InvalidArgument(format!("dt = {} does not divide the horizon {horizon}", config.dt)));
    }
    if let Some(t) = policy.breakpoints().into_iter().find(|&t| !is_multiple(t, config.dt)) {
        return Err(Error::InvalidArgument(format!("dt = {} does not divide the policy grid (node t = {t})", config.dt)));
    }
    let steps = (horizon / config.dt).round() as usize;
    let gains: Vec<Mat> = (0..=steps).map(|k| policy.gain(k as f64 * config.dt)).collect();
    if gains[0].shape() != (b.ncols(), n) {
        return Err(Error::Dimension(format!("gain must be {}x{n}", b.ncols())));
    }
    let transition: Vec<Mat> = gains.iter().map(|k| Mat::identity(n, n) + (a - b * k) * config.dt).collect();
    let noise = b1 * config.dt.sqrt();
    let root0 = psd_sqrt(sigma0)?;
    let recorded: Vec<usize> = (0..=steps).filter(|k| k % config.record_every == 0 || *k == steps).collect();
    let stored = if config.store_paths { config.max_stored_paths.min(config.n_paths) } else { 0 };

    let run_chunk = |c: usize| {
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(config.n_paths);
        let mut acc =
            ChunkSums { sum: vec![DVector::zeros(n); recorded.len()], outer: vec![Mat::zeros(n, n); recorded.len()], paths: Vec::new() };
        let p = b1.ncols();
        for path in lo..hi {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(path as u64);
            let xi0 = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            let mut x = &root0 * xi0;
            let mut record = (path < stored).then(|| PathRecord { id: path, states: Vec::new(), controls: Vec::new() });
            let mut slot = 0;
            let mut next = DVector::zeros(n);
            let mut xi = DVector::zeros(p);
            for k in 0..=steps {
                if recorded[slot] == k {
                    acc.sum[slot] += &x;
                    acc.outer[slot].ger(1.0, &x, &x, 1.0);
                    if let Some(r) = record.as_mut() {
                        r.controls.push(-&gains[k] * &x);
                        r.states.push(x.clone());
                    }
                    slot += 1;
                }
                if k == steps {
                    break;
                }
                xi.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
                next.gemv(1.0, &transition[k], &x, 0.0);
                next.gemv(1.0, &noise, &xi, 1.0);
                std::mem::swap(&mut x, &mut next);
            }
            acc.paths.extend(record);
        }
        acc
    };

    let n_chunks = config.n_paths.div_ceil(CHUNK);
    #[cfg(feature = "parallel")]
    let chunks: Vec<ChunkSums> = {
        use rayon::prelude::*;
        (0..n_chunks).into_par_iter().map(run_chunk).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let chunks: Vec<ChunkSums> = (0..n_chunks).map(run_chunk).collect();

    let mut sum = vec![DVector::zeros(n); recorded.len()];
    let mut outer = vec![Mat::zeros(n, n); recorded.len()];
    let mut paths = Vec::new();
    for chunk in chunks {
        for (i, (s, o)) in chunk.sum.iter().zip(&chunk.outer).enumerate() {
            sum[i] += s;
            outer[i] += o;
        }
        paths.extend(chunk.paths);
    }
    let np = config.n_paths as f64;
    let stats = EnsembleStats {
        grid: recorded.iter().map(|&k| if k == steps { horizon } else { k as f64 * config.dt }).collect(),
        mean: sum.into_iter().map(|s| s / np).collect(),
        cov: outer.into_iter().map(|o| SymMat::new(o / np)).collect(),
        n_paths: config.n_paths,
    };
    Ok(Ensemble { stats, paths: config.store_paths.then_some(paths) })
}

#[derive(Debug, Clone)]
pub struct CovarianceEstimate {
    pub sigma: SymMat,
    /// `sqrt((Σᵢᵢ Σⱼⱼ + Σᵢⱼ²) / n)`, the Gaussian standard error of each entry.
    pub std_err: Mat,
    pub n_samples: usize,
}

fn gaussian_std_err(sigma: &Mat, n_samples: usize) -> Mat {
    let n = sigma.nrows();
    Mat::from_fn(n, n, |i, j| ((sigma[(i, i)] * sigma[(j, j)] + sigma[(i, j)].powi(2)) / n_samples as f64).sqrt())
}

/// Second-moment estimate at grid time `t`.
pub fn empirical_covariance(stats: &EnsembleStats, t: f64) -> Result<CovarianceEstimate> {
    let scale = stats.grid.last().copied().unwrap_or(1.0).abs().max(1.0);
    let idx = stats
        .grid
        .iter()
        .position(|&g| (g - t).abs() <= 1e-9 * scale)
        .ok_or_else(|| Error::InvalidArgument(format!("t = {t} is not a recorded time")))?;
    let sigma = stats.cov[idx].clone();
    Ok(CovarianceEstimate { std_err: gaussian_std_err(&sigma, stats.n_paths), sigma, n_samples: stats.n_paths })
}

/// Second-moment estimate from raw samples.
pub fn sample_covariance(samples: &[DVector<f64>]) -> Result<CovarianceEstimate> {
    let first = samples.first().ok_or_else(|| Error::InvalidArgument("no samples".into()))?;
    let n = first.len();
    if samples.iter().any(|s| s.len() != n) {
        return Err(Error::Dimension("samples have different lengths".into()));
    }
    let mut acc = Mat::zeros(n, n);
    for s in samples {
        acc.ger(1.0, s, s, 1.0);
    }
    let sigma = SymMat::new(acc / samples.len() as f64);
    Ok(CovarianceEstimate { std_err: gaussian_std_err(&sigma, samples.len()), sigma, n_samples: samples.len() })
}

#[derive(Debug, Clone)]
pub struct CovarianceComparison {
    pub frobenius_gap: f64,
    pub z: Mat,
    pub max_abs_z: f64,
    pub pass: bool,
}

/// Entrywise z-scores of `Σ̂ - Σ` with standard errors taken from the target.
pub fn compare_covariance(sigma_hat: &SymMat, target: &SymMat, n_paths: usize) -> Result<CovarianceComparison> {
    if sigma_hat.dim() != target.dim() {
        return Err(Error::Dimension(format!("{}x{0} estimate vs {}x{1} target", sigma_hat.dim(), target.dim())));
    }
    if n_paths == 0 {
        return Err(Error::InvalidArgument("n_paths must be positive".into()));
    }
    let diff = sigma_hat.as_mat() - target.as_mat();
    let se = gaussian_std_err(target.as_mat(), n_paths);
    let z = diff.zip_map(&se, |d, s| {
        if s > 0.0 {
            d / s
        } else if d == 0.0 {
            0.0
        } else {
            f64::INFINITY.copysign(d)
        }
    });
    let max_abs_z = z.amax();
    Ok(CovarianceComparison { frobenius_gap: diff.norm(), z, max_abs_z, pass: max_abs_z <= Z_PASS })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schrodinger::FeedbackPolicy;
    use approx::assert_relative_eq;

    fn m(r: usize, c: usize, d: &[f64]) -> Mat {
        Mat::from_row_slice(r, c, d)
    }

    #[test]
    fn noiseless_drift_free_paths_are_constant() {
        let cfg = SimConfig { dt: 0.1, n_paths: 10, seed: 3, store_paths: true, ..SimConfig::default() };
        let ens = euler_maruyama_ensemble(
            &Mat::zeros(2, 2),
            &m(2, 1, &[0.0, 1.0]),
            &Mat::zeros(2, 1),
            &FeedbackPolicy::constant(Mat::zeros(1, 2)),
            &SymMat::identity(2),
            1.0,
            &cfg,
        )
        .unwrap();
        for path in ens.paths.unwrap() {
            assert!(path.states.iter().all(|x| x == &path.states[0]));
            assert!(path.controls.iter().all(|u| u[0] == 0.0));
        }
        assert_eq!(ens.stats.grid.len(), 11);
    }

    #[test]
    fn same_seed_same_statistics() {
        let run = |seed| {
            let cfg = SimConfig { dt: 0.01, n_paths: 600, seed, ..SimConfig::default() };
            euler_maruyama_ensemble(
                &m(1, 1, &[-1.0]),
                &m(1, 1, &[1.0]),
                &m(1, 1, &[1.0]),
                &FeedbackPolicy::constant(m(1, 1, &[0.5])),
                &SymMat::identity(1),
                0.5,
                &cfg,
            )
            .unwrap()
            .stats
        };
        let (s1, s2, s3) = (run(7), run(7), run(8));
        assert_eq!(s1.cov.last().unwrap().as_mat(), s2.cov.last().unwrap().as_mat());
        assert_ne!(s1.cov.last().unwrap().as_mat(), s3.cov.last().unwrap().as_mat());
    }

    #[test]
    fn ornstein_uhlenbeck_variance() {
        let cfg = SimConfig { dt: 0.002, n_paths: 100_000, seed: 11, record_every: 500, ..SimConfig::default() };
        let ens = euler_maruyama_ensemble(
            &m(1, 1, &[-1.0]),
            &m(1, 1, &[1.0]),
            &m(1, 1, &[1.0]),
            &FeedbackPolicy::constant(m(1, 1, &[0.0])),
            &SymMat::from_row_slice(1, &[0.5]),
            3.0,
            &cfg,
        )
        .unwrap();
        // The scheme's own stationary variance is 1/(2 - dt), a bias of
        // about 0.2 standard errors here.
        let est = empirical_covariance(&ens.stats, 3.0).unwrap();
        let z = (est.sigma[(0, 0)] - 0.5) / est.std_err[(0, 0)];
        assert!(z.abs() <= 3.0, "z = {z}");
        for mean in &ens.stats.mean {
            assert!(mean[0].abs() <= 3.0 * (0.5 / cfg.n_paths as f64).sqrt());
        }
    }

    #[test]
    fn dt_must_divide_policy_grid() {
        let policy = FeedbackPolicy::sampled(vec![0.0, 0.25, 0.5], vec![Mat::zeros(1, 1); 3]).unwrap();
        let cfg = SimConfig { dt: 0.1, n_paths: 4, ..SimConfig::default() };
        let r = euler_maruyama_ensemble(&m(1, 1, &[0.0]), &m(1, 1, &[1.0]), &m(1, 1, &[1.0]), &policy, &SymMat::identity(1), 0.5, &cfg);
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn semidefinite_initial_covariance() {
        let cfg = SimConfig { dt: 0.5, n_paths: 50, ..SimConfig::default() };
        let ens = euler_maruyama_ensemble(
            &Mat::zeros(2, 2),
            &m(2, 1, &[0.0, 1.0]),
            &Mat::zeros(2, 1),
            &FeedbackPolicy::constant(Mat::zeros(1, 2)),
            &SymMat::from_row_slice(2, &[1.0, 0.0, 0.0, 0.0]),
            1.0,
            &cfg,
        )
        .unwrap();
        assert!(ens.stats.cov[0][(1, 1)] == 0.0);
    }

    #[test]
    fn second_moment_examples() {
        let same = vec![DVector::from_vec(vec![0.0]); 5];
        assert_eq!(sample_covariance(&same).unwrap().sigma[(0, 0)], 0.0);
        let pm = vec![DVector::from_vec(vec![1.5]), DVector::from_vec(vec![-1.5])];
        assert_relative_eq!(sample_covariance(&pm).unwrap().sigma[(0, 0)], 2.25);
    }

    #[test]
    fn off_grid_time_is_rejected() {
        let stats = EnsembleStats { grid: vec![0.0, 1.0], mean: vec![], cov: vec![SymMat::identity(1); 2], n_paths: 2 };
        assert!(empirical_covariance(&stats, 0.5).is_err());
        assert!(empirical_covariance(&stats, 1.0).is_ok());
    }

    #[test]
    fn comparison_examples() {
        let t = SymMat::from_row_slice(2, &[1.0, -0.5, -0.5, 0.5]);
        let same = compare_covariance(&t, &t, 100).unwrap();
        assert!(same.pass);
        assert_eq!(same.frobenius_gap, 0.0);

        let far = SymMat::new(t.as_mat() + Mat::identity(2, 2) * 10.0);
        assert!(!compare_covariance(&far, &t, 1_000_000).unwrap().pass);

        let n = 10_000;
        let se11 = (2.0 * 1.0f64 / n as f64).sqrt();
        let mut bumped = t.as_mat().clone();
        bumped[(0, 0)] += 3.0 * se11;
        let cmp = compare_covariance(&SymMat::new(bumped), &t, n).unwrap();
        assert_relative_eq!(cmp.z[(0, 0)], 3.0, epsilon = 1e-9);
        assert!(cmp.pass);
    }
}
