//! Invariant suites run by `osora verify`: SVD quality, gradient agreement with
//! finite differences, merge equivalence and checkpoint round-trips.

use std::fmt;
use std::str::FromStr;

use crate::accounting::{count_for, param_ratio};
use crate::adapters::{build_adapter, AdapterMethod, AdapterState, MethodKind};
use crate::densela::{
    derive_seed, random_matrix, random_orthogonal, standard_normal_vec, svd, InitScheme, Matrix,
};
use crate::error::{Error, Result};
use crate::exec::par_map;
use crate::gradients::{finite_diff, gradient, max_rel_error, FD_STEP};
use crate::persist;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Svd,
    Grad,
    Merge,
    Persist,
    All,
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "svd" => Ok(Scope::Svd),
            "grad" => Ok(Scope::Grad),
            "merge" => Ok(Scope::Merge),
            "persist" => Ok(Scope::Persist),
            "all" => Ok(Scope::All),
            _ => Err(Error::Parse(format!("unknown verify scope `{s}`"))),
        }
    }
}

/// Deliberate corruption for negative controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Perturb `U_r` after merging, before evaluating the adapter.
    PerturbU,
}

impl FromStr for Fault {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "perturb-u" | "perturb_u" => Ok(Fault::PerturbU),
            _ => Err(Error::Parse(format!("unknown fault `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<24} cases={:<4} max_error={:.3e} tol={:.0e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.max_error,
            self.tolerance
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn failed(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed())
    }
}

fn max_of(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, f64::max)
}

/// Adapter over `w0` whose trainable vector is moved off its initial value by
/// seeded Gaussian noise of size `0.2`.
pub fn perturbed_state(w0: &Matrix, method: AdapterMethod, seed: u64) -> Result<AdapterState> {
    let mut st = build_adapter(w0, method, seed)?;
    let mut theta = st.trainable_vector();
    let noise = standard_normal_vec(theta.len(), derive_seed(seed, 99));
    theta.iter_mut().zip(noise).for_each(|(t, z)| *t += 0.2 * z);
    st.load_trainable(&theta)?;
    Ok(st)
}

/// Largest `‖W·x − forward(x)‖∞ / (1 + ‖forward(x)‖∞)` over seeded probes.
pub fn merge_deviation(state: &AdapterState, merged: &Matrix, probes: usize, seed: u64) -> Result<f64> {
    let (_, k) = state.dims();
    let x = random_matrix(k, probes, seed, InitScheme::Gaussian)?;
    let mut worst = 0.0f64;
    for j in 0..probes {
        let col = x.col(j);
        let fwd = state.forward(&col)?;
        let wx = merged.matvec(&col)?;
        let scale = 1.0 + max_of(fwd.iter().map(|v| v.abs()));
        worst = worst.max(max_of(fwd.iter().zip(&wx).map(|(a, b)| (a - b).abs())) / scale);
    }
    Ok(worst)
}

/// Largest `‖forward(x) − W0·x‖∞ / (1 + ‖W0·x‖∞)` over seeded probes.
pub fn init_deviation(state: &AdapterState, w0: &Matrix, probes: usize, seed: u64) -> Result<f64> {
    let (_, k) = state.dims();
    let x = random_matrix(k, probes, seed, InitScheme::Gaussian)?;
    let mut worst = 0.0f64;
    for j in 0..probes {
        let col = x.col(j);
        let fwd = state.forward(&col)?;
        let base = w0.matvec(&col)?;
        let scale = 1.0 + max_of(base.iter().map(|v| v.abs()));
        worst = worst.max(max_of(fwd.iter().zip(&base).map(|(a, b)| (a - b).abs())) / scale);
    }
    Ok(worst)
}

fn svd_checks() -> Result<Vec<Check>> {
    let shapes: Vec<(usize, usize)> = (0..20)
        .map(|i| [(8, 6), (16, 16), (32, 24), (24, 40), (64, 48), (128, 96), (96, 128)][i % 7])
        .collect();
    let results = par_map(shapes.len(), |i| -> Result<(f64, f64)> {
        let (d, k) = shapes[i];
        let w = random_matrix(d, k, 1000 + i as u64, InitScheme::Gaussian)?;
        let f = svd(&w)?;
        let recon = f.reconstruct().sub(&w)?.frobenius_norm() / w.frobenius_norm();
        let p = d.min(k);
        let ortho = |m: &Matrix| -> Result<f64> {
            m.transpose().matmul(m)?.max_abs_diff(&Matrix::identity(p))
        };
        Ok((recon, ortho(&f.u)?.max(ortho(&f.v)?)))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let spectrum = par_map(5, |i| -> Result<f64> {
        let n = 12 + 4 * i;
        let sigma: Vec<f64> = (0..n).map(|j| 10f64.powf(-(j as f64) * 6.0 / n as f64)).collect();
        let q1 = random_orthogonal(n, 2000 + i as u64)?;
        let q2 = random_orthogonal(n, 3000 + i as u64)?;
        let w = q1.scale_cols(&sigma)?.matmul(&q2.transpose())?;
        let f = svd(&w)?;
        Ok(max_of(f.s.iter().zip(&sigma).map(|(a, b)| (a - b).abs() / b)))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    Ok(vec![
        Check {
            name: "svd-reconstruction",
            cases: results.len(),
            max_error: max_of(results.iter().map(|r| r.0)),
            tolerance: 1e-12,
        },
        Check {
            name: "svd-orthonormality",
            cases: results.len(),
            max_error: max_of(results.iter().map(|r| r.1)),
            tolerance: 1e-10,
        },
        Check {
            name: "svd-known-spectrum",
            cases: spectrum.len(),
            max_error: max_of(spectrum),
            tolerance: 1e-8,
        },
    ])
}

/// Every `(method, d, k, r)` in the gradient test matrix.
pub fn gradient_cases() -> Vec<(MethodKind, usize, usize, usize)> {
    let dims = [6, 10, 16];
    let mut cases = Vec::new();
    for kind in MethodKind::ALL {
        for d in dims {
            for k in dims {
                for r in [1, 2, 4] {
                    cases.push((kind, d, k, r));
                }
            }
        }
    }
    cases
}

/// Analytic-vs-finite-difference relative error for one seeded instance.
pub fn gradient_case_error(kind: MethodKind, d: usize, k: usize, r: usize, seed: u64) -> Result<f64> {
    let w0 = random_matrix(d, k, derive_seed(seed, 1), InitScheme::Gaussian)?;
    let st = perturbed_state(&w0, AdapterMethod::new(kind, r), seed)?;
    let n = d.max(k) + 2;
    let x = random_matrix(k, n, derive_seed(seed, 2), InitScheme::Gaussian)?;
    let y = random_matrix(d, n, derive_seed(seed, 3), InitScheme::Gaussian)?;
    let analytic = gradient(&st, &x, &y)?.flat();
    let numeric = finite_diff(&st, &x, &y, FD_STEP)?.flat();
    Ok(max_rel_error(&analytic, &numeric))
}

fn grad_checks() -> Result<Vec<Check>> {
    let cases = gradient_cases();
    let errors = par_map(cases.len(), |i| {
        let (kind, d, k, r) = cases[i];
        gradient_case_error(kind, d, k, r, 500 + i as u64)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(vec![Check {
        name: "gradient-fd",
        cases: errors.len(),
        max_error: max_of(errors),
        tolerance: 1e-6,
    }])
}

fn merge_checks(fault: Option<Fault>) -> Result<Vec<Check>> {
    let kinds = MethodKind::ALL;
    let rows = par_map(kinds.len(), |i| -> Result<(f64, f64)> {
        let kind = kinds[i];
        let seed = 700 + i as u64;
        let w0 = random_matrix(16, 12, seed, InitScheme::Gaussian)?;
        let method = AdapterMethod::new(kind, 3);
        let init = build_adapter(&w0, method, seed)?;
        let init_err = init_deviation(&init, &w0, 100, derive_seed(seed, 5))?;
        let mut st = perturbed_state(&w0, method, seed)?;
        let merged = st.merge();
        if fault == Some(Fault::PerturbU) && kind.is_osora_family() {
            st.perturb_frozen_u(1e-3)?;
        }
        let merge_err = merge_deviation(&st, &merged, 50, derive_seed(seed, 6))?;
        Ok((init_err, merge_err))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(vec![
        Check {
            name: "init-identity",
            cases: rows.len(),
            max_error: max_of(rows.iter().map(|r| r.0)),
            tolerance: 1e-12,
        },
        Check {
            name: "merge-equivalence",
            cases: rows.len(),
            max_error: max_of(rows.iter().map(|r| r.1)),
            tolerance: 1e-10,
        },
    ])
}

fn persist_checks() -> Result<Vec<Check>> {
    let kinds = MethodKind::ALL;
    let errs = par_map(kinds.len(), |i| -> Result<f64> {
        let seed = 900 + i as u64;
        let w0 = random_matrix(10, 8, seed, InitScheme::Gaussian)?;
        let st = perturbed_state(&w0, AdapterMethod::new(kinds[i], 2), seed)?;
        let back = persist::decode(&persist::encode_checkpoint(&st), &w0)?;
        let x = random_matrix(8, 20, derive_seed(seed, 7), InitScheme::Gaussian)?;
        // any bit difference counts as an error
        let a = st.forward_batch(&x)?;
        let b = back.forward_batch(&x)?;
        let identical = a.to_le_bytes() == b.to_le_bytes() && st.frozen_bytes() == back.frozen_bytes();
        Ok(if identical { 0.0 } else { a.max_abs_diff(&b)?.max(f64::MIN_POSITIVE) })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let (d, k, r) = (64usize, 48usize, 8usize);
    let w0 = random_matrix(d, k, 1, InitScheme::Gaussian)?;
    let osora = build_adapter(&w0, AdapterMethod::new(MethodKind::Osora, r), 0)?;
    let lora = build_adapter(&w0, AdapterMethod::new(MethodKind::Lora, r), 0)?;
    let payload = |s: &AdapterState| (persist::encode_checkpoint(s).len() - persist::HEADER_LEN) as f64;
    let ratio = payload(&osora) / payload(&lora);
    let expected = param_ratio(d as u64, k as u64, r as u64);
    let size_ok = payload(&osora) as u64 == 8 * count_for(osora.method(), d as u64, k as u64)?;

    Ok(vec![
        Check {
            name: "checkpoint-round-trip",
            cases: errs.len(),
            max_error: max_of(errs),
            tolerance: 0.0,
        },
        Check {
            name: "checkpoint-storage-ratio",
            cases: 1,
            max_error: if size_ok { (ratio - expected).abs() } else { f64::INFINITY },
            tolerance: 0.0,
        },
    ])
}

pub fn run(scope: Scope, fault: Option<Fault>) -> Result<Report> {
    let mut checks = Vec::new();
    if matches!(scope, Scope::Svd | Scope::All) {
        checks.extend(svd_checks()?);
    }
    if matches!(scope, Scope::Grad | Scope::All) {
        checks.extend(grad_checks()?);
    }
    if matches!(scope, Scope::Merge | Scope::All) {
        checks.extend(merge_checks(fault)?);
    }
    if matches!(scope, Scope::Persist | Scope::All) {
        checks.extend(persist_checks()?);
    }
    Ok(Report { checks })
}
