#![allow(dead_code)]

use consensus_core::operator::InteractionMatrix;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Dense matrix with off-diagonal entries uniform on (0, 1).
pub fn dense_random(n: usize, rng: &mut ChaCha8Rng) -> InteractionMatrix {
    InteractionMatrix::new(DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            rng.random_range(0.0..1.0)
        }
    }))
    .unwrap()
}

/// Directed ring `i -> i+1` plus random chords with probability `p`.
pub fn sparse_strongly_connected(n: usize, p: f64, rng: &mut ChaCha8Rng) -> InteractionMatrix {
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, (i + 1) % n)] = rng.random_range(0.05..1.0);
        for j in 0..n {
            if j != i && m[(i, j)] == 0.0 && rng.random_bool(p) {
                m[(i, j)] = rng.random_range(0.0..1.0);
            }
        }
    }
    InteractionMatrix::new(m).unwrap()
}

pub fn random_state(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(0.0..1.0))
}

/// Brute-force null vector of a square matrix with one-dimensional kernel:
/// cofactors along the row whose deletion leaves the best-conditioned minor.
pub fn null_vector_by_cofactors(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows();
    let mut best = DVector::zeros(n);
    let mut best_norm = 0.0;
    for drop in 0..n {
        let v = DVector::from_fn(n, |j, _| {
            let minor = m.clone().remove_row(drop).remove_column(j);
            let sign = if (drop + j) % 2 == 0 { 1.0 } else { -1.0 };
            sign * minor.determinant()
        });
        if v.norm() > best_norm {
            best_norm = v.norm();
            best = v;
        }
    }
    let total = best.sum();
    best / total
}
