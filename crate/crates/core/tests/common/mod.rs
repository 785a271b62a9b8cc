#![allow(dead_code)]

use matsure::linops::{LinearOperator, MaskOperator, Matrix, ObsVector};
use matsure::rng::{gaussian_matrix, gaussian_vector, sample_entries, stream_rng};
use matsure::spectral::{singular_values, SpectralMap};
use rand::Rng;

pub fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// Gaussian matrix whose singular values are at least `gap` apart and at
/// least `gap` above zero.
pub fn gapped_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, gap: f64) -> Matrix {
    for _ in 0..10_000 {
        let x = gaussian_matrix(rng, rows, cols, 1.0);
        let s = singular_values(&x).unwrap();
        let ok = s.iter().all(|&v| v >= gap) && s.as_slice().windows(2).all(|w| w[0] - w[1] >= gap);
        if ok {
            return x;
        }
    }
    panic!("no {rows}x{cols} matrix with gap {gap}");
}

/// A threshold in `(0, Lambda_1)` at distance at least `margin` from every
/// singular value of `x`.
pub fn separated_threshold<R: Rng>(rng: &mut R, x: &Matrix, margin: f64) -> f64 {
    let s = singular_values(x).unwrap();
    for _ in 0..10_000 {
        let g = rng.random_range(margin..s[0]);
        if s.iter().all(|&v| (v - g).abs() >= margin) {
            return g;
        }
    }
    panic!("no separated threshold");
}

pub fn central_difference<F: Fn(&Matrix) -> Matrix>(
    f: F,
    x: &Matrix,
    dir: &Matrix,
    h: f64,
) -> Matrix {
    (f(&(x + dir * h)) - f(&(x - dir * h))) / (2.0 * h)
}

/// `Phi_i(Lambda) = Lambda_i ||Lambda||^2`: smooth, symmetric, not separable.
pub struct ScaledByEnergy;

impl SpectralMap for ScaledByEnergy {
    fn phi(&self, lambda: &[f64]) -> Vec<f64> {
        let e: f64 = lambda.iter().map(|l| l * l).sum();
        lambda.iter().map(|l| l * e).collect()
    }

    fn dphi(&self, lambda: &[f64], d: &[f64]) -> Vec<f64> {
        let e: f64 = lambda.iter().map(|l| l * l).sum();
        let de: f64 = 2.0 * lambda.iter().zip(d).map(|(l, di)| l * di).sum::<f64>();
        lambda
            .iter()
            .zip(d)
            .map(|(l, di)| di * e + l * de)
            .collect()
    }
}

/// Rank-`r` truth with a random mask of `p` entries and noisy observations.
pub struct SmallProblem {
    pub x0: Matrix,
    pub op: MaskOperator,
    pub y: ObsVector,
}

pub fn small_problem(
    seed: u64,
    rows: usize,
    cols: usize,
    rank: usize,
    p: usize,
    sigma: f64,
) -> SmallProblem {
    let mut rng = stream_rng(seed, 7);
    let x0 =
        gaussian_matrix(&mut rng, rows, rank, 1.0) * gaussian_matrix(&mut rng, rank, cols, 1.0);
    let op = MaskOperator::new(rows, cols, sample_entries(&mut rng, rows, cols, p)).unwrap();
    let y = op.apply(&x0).unwrap() + gaussian_vector(&mut rng, p, sigma);
    SmallProblem { x0, op, y }
}
