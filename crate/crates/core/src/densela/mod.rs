//! Dense linear algebra: matrices, Jacobi SVD, norms, seeded random matrices.

mod matrix;
mod random;
mod svd;
pub mod text;

pub use matrix::{column_norms, diag_of_product, dot, norm2, row_norms, Matrix};
pub use random::{
    derive_seed, random_matrix, random_orthogonal, rng, standard_normal_vec, uniform_vec,
    InitScheme,
};
pub use svd::{low_rank_product, svd, svd_truncated, Svd, SvdFactors};
