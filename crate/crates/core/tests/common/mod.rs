#![allow(dead_code)]

use covsteer::matops::{spectral_abscissa, Mat, SymMat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn mat(r: usize, c: usize, d: &[f64]) -> Mat {
    Mat::from_row_slice(r, c, d)
}

pub fn uniform(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

pub fn pd(rng: &mut ChaCha8Rng, n: usize) -> SymMat {
    let l = uniform(rng, n, n);
    SymMat::new(&l * l.transpose() + Mat::identity(n, n) * 0.3)
}

/// Shifts `a` left so its spectral abscissa is at most `-margin`.
pub fn hurwitz(mut a: Mat, margin: f64) -> Mat {
    let alpha = spectral_abscissa(&a).unwrap();
    if alpha > -margin {
        let n = a.nrows();
        a -= Mat::identity(n, n) * (alpha + margin);
    }
    a
}

pub fn inertial() -> (Mat, Mat, Mat, SymMat) {
    (mat(2, 2, &[0.0, 1.0, 0.0, 0.0]), mat(2, 1, &[0.0, 1.0]), mat(2, 1, &[1.0, 0.0]), SymMat::from_row_slice(2, &[1.0, -0.5, -0.5, 0.5]))
}
