#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tvsync::linalg::{make_stochastic, Matrix, StochasticMatrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random stochastic matrix; each off-diagonal entry is present with
/// probability `density` and the diagonal is at least `diag`.
pub fn random_stochastic(r: &mut impl Rng, m: usize, density: f64, diag: f64) -> StochasticMatrix {
    let raw = Matrix::from_fn(m, m, |i, j| {
        if i == j {
            diag + r.random::<f64>()
        } else if r.random::<f64>() < density {
            r.random::<f64>().powi(2)
        } else {
            0.0
        }
    })
    .unwrap();
    make_stochastic(&raw).unwrap()
}

/// Random stochastic matrix without any structural guarantee.
pub fn random_stochastic_any(r: &mut impl Rng, m: usize) -> StochasticMatrix {
    let density = r.random_range(0.1..1.0);
    let mut raw = Matrix::from_fn(m, m, |_, _| {
        if r.random::<f64>() < density {
            r.random::<f64>()
        } else {
            0.0
        }
    })
    .unwrap()
    .into_data();
    for row in raw.chunks_mut(m) {
        if row.iter().all(|&x| x == 0.0) {
            row[r.random_range(0..m)] = 1.0;
        }
    }
    make_stochastic(&Matrix::new(m, m, raw).unwrap()).unwrap()
}

pub fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
}

/// Moduli of all eigenvalues, descending.
pub fn eig_moduli(m: &Matrix) -> Vec<f64> {
    let mut v: Vec<f64> = to_na(m).complex_eigenvalues().iter().map(|z| z.norm()).collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Second largest eigenvalue modulus of a stochastic matrix.
pub fn second_eig(g: &StochasticMatrix) -> f64 {
    eig_moduli(g.as_matrix())[1]
}
