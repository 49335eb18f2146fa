use nalgebra::DMatrix;
use osora_core::densela::{
    column_norms, random_matrix, random_orthogonal, svd, svd_truncated, InitScheme, Matrix,
};
use proptest::prelude::*;

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn gram_residual(m: &Matrix) -> f64 {
    m.transpose()
        .matmul(m)
        .unwrap()
        .max_abs_diff(&Matrix::identity(m.cols()))
        .unwrap()
}

#[test]
fn singular_values_agree_with_nalgebra() {
    for (i, (d, k)) in [(9, 7), (7, 9), (20, 20), (33, 5)].into_iter().enumerate() {
        let w = random_matrix(d, k, 100 + i as u64, InitScheme::Gaussian).unwrap();
        let ours = svd(&w).unwrap().s;
        let mut theirs: Vec<f64> = to_na(&w).singular_values().iter().copied().collect();
        theirs.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in ours.iter().zip(&theirs) {
            assert!((a - b).abs() <= 1e-12 * theirs[0], "{a} vs {b}");
        }
    }
}

#[test]
fn known_spectrum_is_recovered() {
    let n = 24;
    let sigma: Vec<f64> = (0..n).map(|j| 5.0 * 0.6f64.powi(j as i32)).collect();
    let q1 = random_orthogonal(n, 1).unwrap();
    let q2 = random_orthogonal(n, 2).unwrap();
    let w = q1.scale_cols(&sigma).unwrap().matmul(&q2.transpose()).unwrap();
    let f = svd(&w).unwrap();
    for (a, b) in f.s.iter().zip(&sigma) {
        assert!((a - b).abs() / b <= 1e-8, "{a} vs {b}");
    }
}

#[test]
fn svd_is_bytewise_deterministic() {
    let w = random_matrix(30, 20, 3, InitScheme::Gaussian).unwrap();
    let a = svd_truncated(&w, 5).unwrap();
    let b = svd_truncated(&w.clone(), 5).unwrap();
    assert_eq!(a.u_r.to_le_bytes(), b.u_r.to_le_bytes());
    assert_eq!(a.v_r.to_le_bytes(), b.v_r.to_le_bytes());
    assert_eq!(a.residual.to_le_bytes(), b.residual.to_le_bytes());
}

#[test]
fn truncation_error_is_the_spectral_tail() {
    let w = random_matrix(64, 48, 8, InitScheme::Gaussian).unwrap();
    let full = svd(&w).unwrap();
    let f = svd_truncated(&w, 8).unwrap();
    let tail = full.s[8..].iter().map(|s| s * s).sum::<f64>().sqrt();
    let err = f.residual.frobenius_norm();
    assert!((err - tail).abs() <= 1e-10 * tail);
}

#[test]
fn tied_spectrum_reconstructs() {
    // degenerate singular values: only reconstruction and subspace properties are asserted
    let q1 = random_orthogonal(6, 4).unwrap();
    let q2 = random_orthogonal(6, 5).unwrap();
    let sigma = [2.0, 2.0, 2.0, 1.0, 1.0, 0.0];
    let w = q1.scale_cols(&sigma).unwrap().matmul(&q2.transpose()).unwrap();
    let f = svd(&w).unwrap();
    assert!(f.reconstruct().max_abs_diff(&w).unwrap() < 1e-13);
    assert!(gram_residual(&f.u) < 1e-12);
    let top = svd_truncated(&w, 3).unwrap();
    assert!((top.residual.frobenius_norm() - 2f64.sqrt()).abs() < 1e-12);
}

#[test]
fn column_norms_match_brute_force() {
    let w = random_matrix(5, 4, 21, InitScheme::Gaussian).unwrap();
    let got = column_norms(&w).unwrap();
    for j in 0..4 {
        let mut acc = 0.0;
        for i in 0..5 {
            acc += w[(i, j)] * w[(i, j)];
        }
        assert!((got[j] - acc.sqrt()).abs() < 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn factors_are_orthonormal_and_reconstruct(
        d in 1usize..24, k in 1usize..24, seed in any::<u64>(), frac in 0.0f64..1.0,
    ) {
        let w = random_matrix(d, k, seed, InitScheme::Gaussian).unwrap();
        let p = d.min(k);
        let r = 1 + ((p - 1) as f64 * frac) as usize;
        let f = svd_truncated(&w, r).unwrap();
        prop_assert!(gram_residual(&f.u_r) <= 1e-10);
        prop_assert!(gram_residual(&f.v_r) <= 1e-10);
        prop_assert!(f.s_r.windows(2).all(|s| s[0] >= s[1]));
        prop_assert!(f.s_r.iter().all(|s| *s >= 0.0));
        let back = f.top_part().add(&f.residual).unwrap();
        prop_assert!(back.sub(&w).unwrap().frobenius_norm() <= 1e-12 * (1.0 + w.frobenius_norm()));
        let full = svd_truncated(&w, p).unwrap();
        prop_assert!(full.residual.max_abs() <= 1e-10);
    }

    #[test]
    fn rank_deficient_products_stay_orthonormal(
        d in 2usize..12, k in 2usize..12, rank in 1usize..3, seed in any::<u64>(),
    ) {
        let rank = rank.min(d.min(k));
        let a = random_matrix(d, rank, seed, InitScheme::Gaussian).unwrap();
        let b = random_matrix(rank, k, seed ^ 1, InitScheme::Gaussian).unwrap();
        let w = a.matmul(&b).unwrap();
        let f = svd(&w).unwrap();
        prop_assert!(gram_residual(&f.u) <= 1e-10);
        prop_assert!(gram_residual(&f.v) <= 1e-10);
        prop_assert!(f.s[rank..].iter().all(|s| *s <= 1e-10 * (1.0 + f.s[0])));
        prop_assert!(f.reconstruct().max_abs_diff(&w).unwrap() <= 1e-12 * (1.0 + f.s[0]));
    }
}
