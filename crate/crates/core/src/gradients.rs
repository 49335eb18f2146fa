//! Analytic gradients of the squared-error loss
//! `L = 1/(2n) Σ_i ‖forward(x_i) − y_i‖²` for every adapter method, and a
//! central finite-difference oracle over the flat trainable vector.
//!
//! All methods share one chain: `G = ∂L/∂W_eff = (1/n)(pred − Y)Xᵀ`, pulled
//! back through the DoRA row normalization when present, then through the
//! factored update `ΔW`.

use crate::adapters::{AdapterState, MethodKind, Update};
use crate::densela::{diag_of_product, dot, norm2, Matrix};
use crate::error::{Error, Result};
use crate::exec::par_map;

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradSlice {
    pub name: &'static str,
    pub values: Vec<f64>,
}

/// Loss value and gradient slices laid out like
/// [`AdapterState::trainable_vector`].
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub slices: Vec<GradSlice>,
}

impl LossGrad {
    pub fn flat(&self) -> Vec<f64> {
        self.slices.iter().flat_map(|s| s.values.iter().copied()).collect()
    }

    pub fn slice(&self, name: &str) -> Option<&[f64]> {
        self.slices
            .iter()
            .find(|s| s.name == name)
            .map(|s| s.values.as_slice())
    }

    pub fn max_abs(&self) -> f64 {
        self.slices
            .iter()
            .flat_map(|s| s.values.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `max_i |a_i − b_i| / (1 + ‖a‖∞)`.
pub fn max_rel_error(analytic: &[f64], reference: &[f64]) -> f64 {
    let scale = 1.0 + analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    analytic
        .iter()
        .zip(reference)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        / scale
}

fn check_probes(state: &AdapterState, x: &Matrix, y: &Matrix) -> Result<()> {
    let (d, k) = state.dims();
    if x.rows() != k || y.rows() != d || x.cols() != y.cols() {
        return Err(Error::DimensionMismatch(format!(
            "probes {}x{} and targets {}x{} for a {d}x{k} adapter",
            x.rows(),
            x.cols(),
            y.rows(),
            y.cols()
        )));
    }
    Ok(())
}

/// `(1/(2n)) Σ ‖forward(x_i) − y_i‖²` over the columns of `x` (`k×n`) and
/// `y` (`d×n`).
pub fn loss_mse(state: &AdapterState, x: &Matrix, y: &Matrix) -> Result<f64> {
    check_probes(state, x, y)?;
    let pred = state.forward_batch(x)?;
    let err = pred.sub(y)?;
    Ok(sq_sum(&err) / (2.0 * x.cols() as f64))
}

fn sq_sum(m: &Matrix) -> f64 {
    m.as_slice().iter().map(|v| v * v).sum()
}

/// Loss and `G = ∂L/∂W_eff = (1/n)(pred − Y)Xᵀ`.
pub fn weight_gradient(state: &AdapterState, x: &Matrix, y: &Matrix) -> Result<(f64, Matrix)> {
    check_probes(state, x, y)?;
    let n = x.cols() as f64;
    let err = state.forward_batch(x)?.sub(y)?;
    let loss = sq_sum(&err) / (2.0 * n);
    let g = err.matmul(&x.transpose())?.scale(1.0 / n);
    Ok((loss, g))
}

/// Pulls `G` back through `W_eff_i = m_i · dir_i / ‖dir_i‖`.
/// Returns `(∂L/∂dir, ∂L/∂m)`.
fn through_magnitude(state: &AdapterState, g: &Matrix, m: &[f64]) -> (Matrix, Vec<f64>) {
    let dir = state.direction();
    let mut g_dir = Matrix::zeros(g.rows(), g.cols());
    let mut g_m = vec![0.0; m.len()];
    for i in 0..g.rows() {
        let row = dir.row(i);
        let norm = norm2(row);
        if norm == 0.0 {
            continue;
        }
        let gi = g.row(i);
        let proj = dot(gi, row) / norm;
        g_m[i] = proj;
        let c = m[i] / norm;
        for (j, out) in g_dir.row_mut(i).iter_mut().enumerate() {
            *out = c * (gi[j] - proj * row[j] / norm);
        }
    }
    (g_dir, g_m)
}

/// Splits off the magnitude gradient for DoRA variants; returns `∂L/∂ΔW`.
fn delta_gradient(state: &AdapterState, g: Matrix) -> (Matrix, Option<Vec<f64>>) {
    match state.magnitude() {
        Some(m) => {
            let (g_dir, g_m) = through_magnitude(state, &g, m);
            (g_dir, Some(g_m))
        }
        None => (g, None),
    }
}

/// `∂L/∂S_r = diag(U_rᵀ · diag(O) · G · V_r)`.
pub fn singular_value_gradient(u: &Matrix, o: &[f64], g: &Matrix, v: &Matrix) -> Result<Vec<f64>> {
    let left = u.scale_rows(o)?.transpose();
    diag_of_product(&left, &g.matmul(v)?)
}

/// `∂L/∂O = diag(G · V_r · diag(S_r) · U_rᵀ)`, the output-side scaling
/// gradient with the factor order that typechecks for `d ≠ k`.
pub fn output_scale_gradient(u: &Matrix, s: &[f64], g: &Matrix, v: &Matrix) -> Result<Vec<f64>> {
    let left = g.matmul(v)?.scale_cols(s)?;
    diag_of_product(&left, &u.transpose())
}

/// Gradients for OSoRA, OSoRA_k and OSoRA+DoRA.
pub fn grad_osora(state: &AdapterState, x: &Matrix, y: &Matrix) -> Result<LossGrad> {
    let Update::Singular {
        u,
        v,
        s,
        o,
        input_side,
    } = &state.update
    else {
        return Err(Error::MethodMismatch {
            op: "grad_osora",
            method: state.method().kind.name(),
        });
    };
    let (loss, g) = weight_gradient(state, x, y)?;
    let (g_delta, g_m) = delta_gradient(state, g);
    let set = state.method().trainable;

    let mut slices = Vec::new();
    if *input_side {
        // ΔW = U diag(S) Vᵀ diag(O)
        if set.trains_s() {
            let gs = diag_of_product(&u.transpose(), &g_delta.scale_cols(o)?.matmul(v)?)?;
            slices.push(GradSlice { name: "S", values: gs });
        }
        if set.trains_o() {
            let left = g_delta.transpose().matmul(u)?.scale_cols(s)?;
            let go = diag_of_product(&left, &v.transpose())?;
            slices.push(GradSlice { name: "O", values: go });
        }
    } else {
        if set.trains_s() {
            let gs = singular_value_gradient(u, o, &g_delta, v)?;
            slices.push(GradSlice { name: "S", values: gs });
        }
        if set.trains_o() {
            let go = output_scale_gradient(u, s, &g_delta, v)?;
            slices.push(GradSlice { name: "O", values: go });
        }
    }
    if let Some(gm) = g_m {
        slices.push(GradSlice { name: "m", values: gm });
    }
    Ok(LossGrad { loss, slices })
}

/// Gradients for LoRA, VeRA, PiSSA and DoRA.
pub fn grad_generic(state: &AdapterState, x: &Matrix, y: &Matrix) -> Result<LossGrad> {
    if state.method().kind.is_osora_family() {
        return Err(Error::MethodMismatch {
            op: "grad_generic",
            method: state.method().kind.name(),
        });
    }
    let (loss, g) = weight_gradient(state, x, y)?;
    let (g_delta, g_m) = delta_gradient(state, g);

    let mut slices = match &state.update {
        Update::LowRank { a, b } => vec![
            GradSlice {
                name: "A",
                values: b.transpose().matmul(&g_delta)?.into_vec(),
            },
            GradSlice {
                name: "B",
                values: g_delta.matmul(&a.transpose())?.into_vec(),
            },
        ],
        Update::Vera {
            a,
            b,
            scale_out,
            scale_rank,
        } => {
            // ∂b = diag(G (B Λ_d A)ᵀ), ∂d = diag(Bᵀ Λ_b G Aᵀ)
            let bda_t = a.transpose().scale_cols(scale_rank)?.matmul(&b.transpose())?;
            let gb = diag_of_product(&g_delta, &bda_t)?;
            let gd = diag_of_product(
                &b.scale_rows(scale_out)?.transpose(),
                &g_delta.matmul(&a.transpose())?,
            )?;
            vec![
                GradSlice { name: "b", values: gb },
                GradSlice { name: "d", values: gd },
            ]
        }
        Update::Singular { .. } => unreachable!("OSoRA family handled above"),
    };
    if let Some(gm) = g_m {
        slices.push(GradSlice { name: "m", values: gm });
    }
    Ok(LossGrad { loss, slices })
}

/// Dispatches to [`grad_osora`] or [`grad_generic`].
pub fn gradient(state: &AdapterState, x: &Matrix, y: &Matrix) -> Result<LossGrad> {
    match state.method().kind {
        MethodKind::Osora | MethodKind::OsoraK | MethodKind::OsoraDora => grad_osora(state, x, y),
        _ => grad_generic(state, x, y),
    }
}

/// Central differences `(L(θ + h e_i) − L(θ − h e_i)) / 2h` over the flat
/// trainable vector. Coordinates are evaluated in parallel when enabled.
pub fn finite_diff(state: &AdapterState, x: &Matrix, y: &Matrix, h: f64) -> Result<LossGrad> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidConfig(format!("finite-difference step {h}")));
    }
    let loss = loss_mse(state, x, y)?;
    let theta = state.trainable_vector();
    let eval = |coord: usize, step: f64| -> Result<f64> {
        let mut probe = state.clone();
        let mut t = theta.clone();
        t[coord] += step;
        probe.load_trainable(&t)?;
        loss_mse(&probe, x, y)
    };
    let flat = par_map(theta.len(), |i| -> Result<f64> {
        Ok((eval(i, h)? - eval(i, -h)?) / (2.0 * h))
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;

    let mut slices = Vec::new();
    let mut offset = 0;
    for (name, len) in state.trainable_layout() {
        slices.push(GradSlice {
            name,
            values: flat[offset..offset + len].to_vec(),
        });
        offset += len;
    }
    Ok(LossGrad { loss, slices })
}
