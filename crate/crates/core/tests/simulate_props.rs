mod common;

use common::{pd, rng};
use covsteer::matops::{Mat, SymMat};
use covsteer::schrodinger::{propagate_covariance, uniform_grid, FeedbackPolicy};
use covsteer::simulate::{compare_covariance, empirical_covariance, euler_maruyama_ensemble, Ensemble, SimConfig};

fn scalar(v: f64) -> Mat {
    Mat::from_element(1, 1, v)
}

fn run(a: &Mat, b1: &Mat, k: Mat, sigma0: &SymMat, horizon: f64, config: &SimConfig) -> Ensemble {
    let b = Mat::identity(a.nrows(), k.nrows());
    euler_maruyama_ensemble(a, &b, b1, &FeedbackPolicy::constant(k), sigma0, horizon, config).unwrap()
}

#[test]
fn initial_samples_follow_sigma0() {
    let mut r = rng(3);
    for seed in 0..5 {
        let sigma0 = pd(&mut r, 3);
        let config = SimConfig { dt: 0.1, n_paths: 20_000, seed, ..SimConfig::default() };
        let ens = run(&Mat::zeros(3, 3), &Mat::zeros(3, 1), Mat::zeros(3, 3), &sigma0, 0.1, &config);
        let est = empirical_covariance(&ens.stats, 0.0).unwrap();
        let cmp = compare_covariance(&est.sigma, &sigma0, est.n_samples).unwrap();
        assert!(cmp.max_abs_z <= 3.0, "seed {seed}: max |z| {}", cmp.max_abs_z);
    }
}

#[test]
fn means_stay_within_three_standard_errors() {
    let a = Mat::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.4]);
    let b1 = Mat::from_row_slice(2, 1, &[0.0, 1.0]);
    let sigma0 = SymMat::new(Mat::identity(2, 2));
    let config = SimConfig { dt: 0.01, n_paths: 8_000, seed: 9, record_every: 10, ..SimConfig::default() };
    let ens = run(&a, &b1, Mat::zeros(2, 2), &sigma0, 2.0, &config);
    let n = ens.stats.n_paths as f64;
    let mut worst: f64 = 0.0;
    for (mean, second) in ens.stats.mean.iter().zip(&ens.stats.cov) {
        for i in 0..2 {
            let se = (second[(i, i)] / n).sqrt();
            worst = worst.max(mean[i].abs() / se);
        }
    }
    assert!(worst <= 3.0, "max |mean| / se = {worst}");
}

#[test]
fn statistics_depend_only_on_seed_and_config() {
    let a = Mat::from_row_slice(2, 2, &[-0.5, 1.0, 0.0, -1.0]);
    let b1 = Mat::identity(2, 2);
    let sigma0 = SymMat::new(Mat::identity(2, 2) * 0.5);
    let config = SimConfig { dt: 0.01, n_paths: 3_000, seed: 77, ..SimConfig::default() };
    let first = run(&a, &b1, Mat::zeros(2, 2), &sigma0, 0.5, &config);
    #[cfg(feature = "parallel")]
    let second =
        rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| run(&a, &b1, Mat::zeros(2, 2), &sigma0, 0.5, &config));
    #[cfg(not(feature = "parallel"))]
    let second = run(&a, &b1, Mat::zeros(2, 2), &sigma0, 0.5, &config);
    for (x, y) in first.stats.cov.iter().zip(&second.stats.cov) {
        assert!(x.as_mat().iter().zip(y.as_mat().iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
    let other = run(&a, &b1, Mat::zeros(2, 2), &sigma0, 0.5, &SimConfig { seed: 78, ..config });
    assert_ne!(first.stats.cov.last().unwrap().as_mat(), other.stats.cov.last().unwrap().as_mat());
}

#[test]
fn covariance_bias_is_first_order_in_dt() {
    // dx = -2x dt + dw from x₀ = 0: Euler-Maruyama settles at 1/(4(1 - dt))
    // against the exact 1/4, so the bias halves with dt.
    let (a, b1, sigma0, horizon) = (scalar(-2.0), scalar(1.0), SymMat::zeros(1), 2.0);
    let exact = propagate_covariance(&sigma0, &a, &scalar(1.0), &b1, &FeedbackPolicy::constant(scalar(0.0)), &uniform_grid(horizon, 2000))
        .unwrap()
        .last()
        .unwrap()[(0, 0)];
    let bias: Vec<f64> = [0.2, 0.1, 0.05]
        .iter()
        .map(|&dt| {
            let config = SimConfig { dt, n_paths: 400_000, seed: 1, record_every: 1, ..SimConfig::default() };
            let ens = run(&a, &b1, scalar(0.0), &sigma0, horizon, &config);
            empirical_covariance(&ens.stats, horizon).unwrap().sigma[(0, 0)] - exact
        })
        .collect();
    let slope = (bias[0] / bias[2]).log2() / 2.0;
    assert!((slope - 1.0).abs() <= 0.25, "bias {bias:?}, slope {slope}");
}

#[test]
fn ensemble_matches_the_covariance_equation() {
    // Closed loop A - BK with K = [1, 1] on the double integrator.
    let a = Mat::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
    let b = Mat::from_row_slice(2, 1, &[0.0, 1.0]);
    let b1 = Mat::from_row_slice(2, 1, &[1.0, 0.0]);
    let k = Mat::from_row_slice(1, 2, &[1.0, 1.0]);
    let sigma0 = SymMat::new(Mat::identity(2, 2) * 2.0);
    let policy = FeedbackPolicy::constant(k);
    let config = SimConfig { dt: 0.002, n_paths: 20_000, seed: 4, record_every: 500, ..SimConfig::default() };
    let ens = euler_maruyama_ensemble(&a, &b, &b1, &policy, &sigma0, 1.0, &config).unwrap();
    let exact = propagate_covariance(&sigma0, &a, &b, &b1, &policy, &uniform_grid(1.0, 1000)).unwrap();
    let est = empirical_covariance(&ens.stats, 1.0).unwrap();
    let cmp = compare_covariance(&est.sigma, exact.last().unwrap(), est.n_samples).unwrap();
    assert!(cmp.pass, "max |z| {}", cmp.max_abs_z);
}
