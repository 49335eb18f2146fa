//! Toy teacher/student adaptation tasks and a full-batch optimizer loop.

use serde::{Deserialize, Serialize};

use crate::adapters::AdapterState;
use crate::densela::{
    derive_seed, random_matrix, svd_truncated, uniform_vec, InitScheme, Matrix,
};
use crate::error::{Error, Result};
use crate::gradients::{gradient, loss_mse};

mod streams {
    pub const W0: u64 = 10;
    pub const PROBES: u64 = 11;
    pub const O_STAR: u64 = 12;
    pub const S_STAR: u64 = 13;
}

/// Teacher weight, probes and targets for one toy task.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyTask {
    pub w0: Matrix,
    pub w_target: Matrix,
    pub probes: Matrix,
    pub targets: Matrix,
    pub seed: u64,
}

/// Builds a task whose gap `w_target − w0` lives in the top-`r_gap` singular
/// subspace of `w0`:
///
/// `w_target = w0 − U_g diag(σ_g) V_gᵀ + diag(o*) U_g diag(s*) V_gᵀ`
///
/// with `o* ∈ [0.5, 1.5)^d` and `s*_l = σ_l · [0.5, 1.5)`. OSoRA at rank
/// `r_gap` reaches it exactly with `O = o*`, `S_r = s*`. Uses `n = 2·max(d, k)`
/// probes.
pub fn make_task(d: usize, k: usize, r_gap: usize, seed: u64) -> Result<ToyTask> {
    make_task_with_probes(d, k, r_gap, 2 * d.max(k), seed)
}

pub fn make_task_with_probes(
    d: usize,
    k: usize,
    r_gap: usize,
    n: usize,
    seed: u64,
) -> Result<ToyTask> {
    if r_gap == 0 || r_gap > d.min(k) {
        return Err(Error::RankOutOfRange {
            rank: r_gap,
            rows: d,
            cols: k,
        });
    }
    if n < d {
        return Err(Error::InvalidConfig(format!("need at least d = {d} probes, got {n}")));
    }
    let w0 = random_matrix(d, k, derive_seed(seed, streams::W0), InitScheme::Gaussian)?;
    let f = svd_truncated(&w0, r_gap)?;
    let o_star = uniform_vec(d, 0.5, 1.5, derive_seed(seed, streams::O_STAR));
    let s_star: Vec<f64> = uniform_vec(r_gap, 0.5, 1.5, derive_seed(seed, streams::S_STAR))
        .into_iter()
        .zip(&f.s_r)
        .map(|(c, s)| c * s)
        .collect();
    let update = crate::densela::low_rank_product(&f.u_r, &s_star, &f.v_r, r_gap)
        .scale_rows(&o_star)?;
    let w_target = f.residual.add(&update)?;
    let probes = random_matrix(k, n, derive_seed(seed, streams::PROBES), InitScheme::Gaussian)?
        .scale((n as f64).sqrt());
    let targets = w_target.matmul(&probes)?;
    Ok(ToyTask {
        w0,
        w_target,
        probes,
        targets,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam,
}

impl std::str::FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            _ => Err(Error::Parse(format!("unknown optimizer `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 500,
            lr: 1e-2,
            optimizer: Optimizer::Adam,
        }
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t);
        let bc2 = 1.0 - BETA2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * grad[i];
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            theta[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// Result of one training run.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub config: TrainConfig,
    /// Loss before the first step followed by the loss after every step.
    pub loss_trace: Vec<f64>,
    pub final_state: AdapterState,
}

impl TrainRun {
    pub fn initial_loss(&self) -> f64 {
        self.loss_trace[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.loss_trace.last().expect("trace holds the initial loss")
    }
}

/// Full-batch training of `state` on `task`.
pub fn train(mut state: AdapterState, task: &ToyTask, config: TrainConfig) -> Result<TrainRun> {
    if state.dims() != task.w0.shape() {
        return Err(Error::DimensionMismatch(format!(
            "adapter {:?} for task {:?}",
            state.dims(),
            task.w0.shape()
        )));
    }
    let (x, y) = (&task.probes, &task.targets);
    let mut trace = Vec::with_capacity(config.steps + 1);
    let mut theta = state.trainable_vector();
    let mut adam = Adam::new(theta.len());

    let mut grad = gradient(&state, x, y)?;
    for step in 0..=config.steps {
        if !grad.loss.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        trace.push(grad.loss);
        if step == config.steps {
            break;
        }
        let g = grad.flat();
        match config.optimizer {
            Optimizer::Sgd => theta.iter_mut().zip(&g).for_each(|(t, gi)| *t -= config.lr * gi),
            Optimizer::Adam => adam.step(&mut theta, &g, config.lr),
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss { step: step + 1 });
        }
        state.load_trainable(&theta)?;
        grad = gradient(&state, x, y)?;
    }
    Ok(TrainRun {
        config,
        loss_trace: trace,
        final_state: state,
    })
}

/// Loss of `state` on `task` without training.
pub fn task_loss(state: &AdapterState, task: &ToyTask) -> Result<f64> {
    loss_mse(state, &task.probes, &task.targets)
}
