use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use super::matrix::{dot, norm2, Matrix};
use crate::error::{Error, Result};

/// Distribution used to fill a random matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Uniform on `(-a, a)` with `a = sqrt(6 / (rows + cols))`.
    UniformScaled,
    /// Standard normal scaled by `1 / sqrt(cols)`.
    Gaussian,
}

/// Mixes a stream index into a seed so that one user seed can drive several
/// independent generators.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Deterministic random matrix for a given `(rows, cols, seed, scheme)`.
pub fn random_matrix(rows: usize, cols: usize, seed: u64, scheme: InitScheme) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::DimensionMismatch(format!(
            "random matrix dimensions must be positive, got {rows}x{cols}"
        )));
    }
    let mut rng = rng(seed);
    let data: Vec<f64> = match scheme {
        InitScheme::UniformScaled => {
            let a = (6.0 / (rows + cols) as f64).sqrt();
            let dist = Uniform::new(-a, a).expect("bound is positive and finite");
            (0..rows * cols).map(|_| dist.sample(&mut rng)).collect()
        }
        InitScheme::Gaussian => {
            let scale = 1.0 / (cols as f64).sqrt();
            (0..rows * cols)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    scale * z
                })
                .collect::<Vec<f64>>()
        }
    };
    Matrix::from_vec(rows, cols, data)
}

/// Unscaled standard normal vector.
pub fn standard_normal_vec(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng(seed);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Uniform vector on `[lo, hi)`.
pub fn uniform_vec(len: usize, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
    let mut rng = rng(seed);
    (0..len).map(|_| rng.random_range(lo..hi)).collect()
}

/// Random `n×n` orthogonal matrix (modified Gram-Schmidt on a Gaussian draw).
pub fn random_orthogonal(n: usize, seed: u64) -> Result<Matrix> {
    let g = random_matrix(n, n, seed, InitScheme::Gaussian)?;
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    for j in 0..n {
        let mut v = g.col(j);
        // two passes keep the columns orthogonal to machine precision
        for _ in 0..2 {
            for q in &cols {
                let p = dot(q, &v);
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= p * b);
            }
        }
        let nv = norm2(&v);
        v.iter_mut().for_each(|a| *a /= nv);
        cols.push(v);
    }
    Ok(Matrix::from_fn(n, n, |i, j| cols[j][i]))
}
