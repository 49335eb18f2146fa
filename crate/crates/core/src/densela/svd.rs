//! One-sided (Hestenes) Jacobi SVD.
//!
//! Columns of a working copy are rotated pairwise until every pair is
//! numerically orthogonal; the column norms are then the singular values and
//! the accumulated rotations form the right singular vectors. Wide matrices
//! are handled through their transpose.

use super::matrix::{dot, norm2, Matrix};
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 60;

/// Singular values below `RANK_FLOOR * s_max` get a completed (rather than
/// normalized) left singular vector.
const RANK_FLOOR: f64 = 1e-13;

/// Thin SVD `w = u · diag(s) · vᵀ` with `p = min(d, k)` triplets.
#[derive(Debug, Clone, PartialEq)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
    pub sweeps: usize,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        low_rank_product(&self.u, &self.s, &self.v, self.s.len())
    }
}

/// Truncated rank-`r` factors plus the residual `w − u_r·diag(s_r)·v_rᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    pub u_r: Matrix,
    pub s_r: Vec<f64>,
    pub v_r: Matrix,
    pub residual: Matrix,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.s_r.len()
    }

    /// `u_r · diag(s_r) · v_rᵀ`.
    pub fn top_part(&self) -> Matrix {
        low_rank_product(&self.u_r, &self.s_r, &self.v_r, self.rank())
    }
}

/// `Σ_{l<r} s_l · u_l · v_lᵀ`.
pub fn low_rank_product(u: &Matrix, s: &[f64], v: &Matrix, r: usize) -> Matrix {
    let (d, k) = (u.rows(), v.rows());
    let mut out = Matrix::zeros(d, k);
    for i in 0..d {
        let row = out.row_mut(i);
        for l in 0..r {
            let a = u[(i, l)] * s[l];
            if a == 0.0 {
                continue;
            }
            for (j, o) in row.iter_mut().enumerate() {
                *o += a * v[(j, l)];
            }
        }
    }
    out
}

/// Full thin SVD.
pub fn svd(w: &Matrix) -> Result<Svd> {
    w.ensure_finite("svd input")?;
    if w.rows() >= w.cols() {
        let (u, s, v, sweeps) = jacobi_tall(w);
        Ok(finish(u, s, v, sweeps))
    } else {
        let (u_t, s, v_t, sweeps) = jacobi_tall(&w.transpose());
        let tall = finish(u_t, s, v_t, sweeps);
        let (mut u, mut v) = (tall.v, tall.u);
        fix_signs(&mut u, &mut v);
        Ok(Svd {
            u,
            s: tall.s,
            v,
            sweeps,
        })
    }
}

/// Rank-`r` truncation of the SVD together with the residual.
pub fn svd_truncated(w: &Matrix, r: usize) -> Result<SvdFactors> {
    let p = w.rows().min(w.cols());
    if r == 0 || r > p {
        return Err(Error::RankOutOfRange {
            rank: r,
            rows: w.rows(),
            cols: w.cols(),
        });
    }
    let full = svd(w)?;
    let u_r = leading_cols(&full.u, r);
    let v_r = leading_cols(&full.v, r);
    let s_r = full.s[..r].to_vec();
    let top = low_rank_product(&u_r, &s_r, &v_r, r);
    let residual = w.sub(&top)?;
    Ok(SvdFactors {
        u_r,
        s_r,
        v_r,
        residual,
    })
}

fn leading_cols(m: &Matrix, r: usize) -> Matrix {
    Matrix::from_fn(m.rows(), r, |i, j| m[(i, j)])
}

/// Left vectors (one per column), singular values, right vectors, sweeps.
type RawSvd = (Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>, usize);

/// Jacobi on a tall (`m ≥ n`) matrix; output is unsorted.
fn jacobi_tall(a: &Matrix) -> RawSvd {
    let (m, n) = a.shape();
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.col(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    let fro2 = a.frobenius_norm().powi(2);
    let tol = (m as f64).sqrt() * f64::EPSILON;
    let floor = 1e-30 * fro2;

    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS {
        sweeps += 1;
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma.abs() <= tol * (alpha * beta).sqrt() || gamma.abs() <= floor {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let sigma: Vec<f64> = cols.iter().map(|c| norm2(c)).collect();
    (cols, sigma, v, sweeps)
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Sorts, normalizes, completes null directions, and fixes signs.
fn finish(raw_u: Vec<Vec<f64>>, sigma: Vec<f64>, raw_v: Vec<Vec<f64>>, sweeps: usize) -> Svd {
    let p = sigma.len();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));

    let s_max = order.first().map_or(0.0, |&i| sigma[i]);
    let cutoff = RANK_FLOOR * s_max;
    let d = raw_u.first().map_or(0, Vec::len);

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(p);
    let mut s = Vec::with_capacity(p);
    let mut v_cols: Vec<Vec<f64>> = Vec::with_capacity(p);
    let mut deficient = Vec::new();
    for (slot, &idx) in order.iter().enumerate() {
        let sv = sigma[idx];
        s.push(sv);
        v_cols.push(raw_v[idx].clone());
        if sv > cutoff && sv > 0.0 {
            u_cols.push(raw_u[idx].iter().map(|x| x / sv).collect());
        } else {
            u_cols.push(vec![0.0; d]);
            deficient.push(slot);
        }
    }

    for slot in deficient {
        let basis: Vec<&Vec<f64>> = u_cols
            .iter()
            .enumerate()
            .filter(|(j, c)| *j != slot && c.iter().any(|x| *x != 0.0))
            .map(|(_, c)| c)
            .collect();
        let fill = complete_direction(&basis, d);
        u_cols[slot] = fill;
    }

    let mut u = Matrix::from_fn(d, p, |i, j| u_cols[j][i]);
    let k = v_cols.first().map_or(0, Vec::len);
    let mut v = Matrix::from_fn(k, p, |i, j| v_cols[j][i]);
    fix_signs(&mut u, &mut v);
    Svd { u, s, v, sweeps }
}

/// Makes the largest-magnitude entry of every `u` column positive (first one
/// on ties), flipping the matching `v` column.
fn fix_signs(u: &mut Matrix, v: &mut Matrix) {
    for j in 0..u.cols() {
        let mut lead = 0;
        for i in 1..u.rows() {
            if u[(i, j)].abs() > u[(lead, j)].abs() {
                lead = i;
            }
        }
        if u[(lead, j)] < 0.0 {
            for i in 0..u.rows() {
                u[(i, j)] = -u[(i, j)];
            }
            for i in 0..v.rows() {
                v[(i, j)] = -v[(i, j)];
            }
        }
    }
}

/// First standard basis vector with a substantial component outside
/// `span(basis)`, orthogonalized and normalized.
fn complete_direction(basis: &[&Vec<f64>], d: usize) -> Vec<f64> {
    let mut best: Option<Vec<f64>> = None;
    for e in 0..d {
        let mut x = vec![0.0; d];
        x[e] = 1.0;
        for _ in 0..2 {
            for b in basis {
                let p = dot(b, &x);
                x.iter_mut().zip(b.iter()).for_each(|(xi, bi)| *xi -= p * bi);
            }
        }
        let nx = norm2(&x);
        if nx > 0.5 {
            x.iter_mut().for_each(|xi| *xi /= nx);
            return x;
        }
        if best.as_ref().is_none_or(|b| norm2(b) < nx) {
            best = Some(x);
        }
    }
    let mut x = best.unwrap_or_else(|| vec![0.0; d]);
    let nx = norm2(&x);
    if nx > 0.0 {
        x.iter_mut().for_each(|xi| *xi /= nx);
    }
    x
}
