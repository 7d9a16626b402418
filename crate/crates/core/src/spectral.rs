// SPDX-License-Identifier: Apache-2.0

//! Lanczos estimates of extreme eigenvalues of weighted self-adjoint
//! operators.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::operators::LinearOperator;

/// Ritz values from a Lanczos run, ascending.
#[derive(Debug, Clone)]
pub struct RitzValues {
    pub values: Vec<f64>,
    pub iterations: usize,
}

impl RitzValues {
    pub fn min(&self) -> f64 {
        self.values.first().copied().unwrap_or(f64::NAN)
    }

    pub fn max(&self) -> f64 {
        self.values.last().copied().unwrap_or(f64::NAN)
    }
}

fn winner(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    crate::grid::compensated_sum(a.iter().zip(b).zip(w).map(|((x, y), w)| x * y * w))
}

/// Runs `iterations` Lanczos steps in the operator's weighted inner product
/// with full reorthogonalization, starting from a seeded random vector.
pub fn lanczos(op: &dyn LinearOperator, iterations: usize, seed: u64) -> RitzValues {
    let n = op.dim();
    let w = op.weights();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = winner(w, &q, &q).sqrt();
    q.iter_mut().for_each(|v| *v /= norm);

    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut z = vec![0.0; n];
    for _ in 0..iterations.min(n) {
        op.apply(&q, &mut z);
        let a = winner(w, &q, &z);
        alpha.push(a);
        basis.push(q.clone());
        // two passes of Gram-Schmidt against the whole basis
        for _ in 0..2 {
            for b in &basis {
                let c = winner(w, b, &z);
                z.iter_mut().zip(b).for_each(|(zi, bi)| *zi -= c * bi);
            }
        }
        let bnorm = winner(w, &z, &z).sqrt();
        if bnorm <= 1e-12 * a.abs().max(1.0) {
            break;
        }
        beta.push(bnorm);
        q = z.iter().map(|v| v / bnorm).collect();
    }

    let k = alpha.len();
    let mut t = DMatrix::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alpha[i];
        if i + 1 < k {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let mut values: Vec<f64> = SymmetricEigen::new(t).eigenvalues.iter().copied().collect();
    values.sort_by(|a, b| a.total_cmp(b));
    RitzValues {
        values,
        iterations: k,
    }
}
