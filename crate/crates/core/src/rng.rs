//! Seeded random streams.
//!
//! Every random quantity is drawn from a ChaCha8 generator keyed by the
//! user seed and a stream number, so each one can be regenerated on its own:
//!
//! | stream             | use                                  |
//! |--------------------|--------------------------------------|
//! | 0                  | observation noise `w`                |
//! | 1                  | divergence probes `delta_i`          |
//! | 2 + t              | Monte-Carlo trial `t`                |
//! | `STREAM_INSTANCE`  | ground truth factors and the mask    |

use nalgebra::linalg::QR;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linops::{Matrix, ObsVector};

pub const STREAM_NOISE: u64 = 0;
pub const STREAM_PROBES: u64 = 1;
pub const STREAM_MC_BASE: u64 = 2;
pub const STREAM_INSTANCE: u64 = u64::MAX;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    stream_rng(seed, STREAM_MC_BASE + trial)
}

pub fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, len: usize, sd: f64) -> ObsVector {
    ObsVector::from_fn(len, |_, _| sd * rng.sample::<f64, _>(StandardNormal))
}

/// Column-major fill, so the draw order is fixed by the shape.
pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, sd: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| sd * rng.sample::<f64, _>(StandardNormal))
}

/// `count` standard Gaussian vectors of length `len`.
pub fn gaussian_probes<R: Rng + ?Sized>(rng: &mut R, len: usize, count: usize) -> Vec<ObsVector> {
    (0..count).map(|_| gaussian_vector(rng, len, 1.0)).collect()
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// signs of `R`'s diagonal pushed into `Q`.
pub fn haar_orthogonal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Matrix {
    let g = gaussian_matrix(rng, n, n, 1.0);
    let qr = QR::new(g);
    let mut q = qr.q();
    let r = qr.r();
    for k in 0..n {
        if r[(k, k)] < 0.0 {
            q.column_mut(k).neg_mut();
        }
    }
    q
}

/// `count` distinct entries of an `rows x cols` grid, uniformly without
/// replacement, in draw order.
pub fn sample_entries<R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    count: usize,
) -> Vec<(usize, usize)> {
    sample(rng, rows * cols, count)
        .into_iter()
        .map(|flat| (flat / cols, flat % cols))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a = gaussian_vector(&mut stream_rng(3, 0), 5, 1.0);
        let b = gaussian_vector(&mut stream_rng(3, 0), 5, 1.0);
        let c = gaussian_vector(&mut stream_rng(3, 1), 5, 1.0);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn haar_is_orthogonal() {
        let q = haar_orthogonal(&mut stream_rng(1, STREAM_INSTANCE), 7);
        let err = (q.transpose() * &q - Matrix::identity(7, 7)).norm();
        assert!(err < 1e-13, "{err}");
    }

    #[test]
    fn sampled_entries_are_distinct_and_in_range() {
        let entries = sample_entries(&mut stream_rng(5, STREAM_INSTANCE), 6, 4, 10);
        assert_eq!(entries.len(), 10);
        let unique: std::collections::HashSet<_> = entries.iter().collect();
        assert_eq!(unique.len(), 10);
        assert!(entries.iter().all(|&(i, j)| i < 6 && j < 4));
    }
}
