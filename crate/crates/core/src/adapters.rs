//! Adapter construction, evaluation, merging, and the flat trainable-vector
//! boundary used by optimizers and checkpoints.
//!
//! Every adapter keeps a frozen base matrix (the pretrained weight `W0`, or the
//! residual `W0'` for SVD-initialized methods) and a weight update. The DoRA
//! variants additionally rescale each output row of `base + ΔW` to a trainable
//! magnitude.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::densela::{
    derive_seed, low_rank_product, random_matrix, row_norms, standard_normal_vec, svd_truncated,
    InitScheme, Matrix,
};
use crate::error::{Error, Result};

/// RNG stream ids derived from the adapter seed.
pub(crate) mod stream {
    pub const LORA_A: u64 = 1;
    pub const VERA_A: u64 = 2;
    pub const VERA_B: u64 = 3;
    pub const GAUSSIAN_O: u64 = 4;
}

const VERA_D_INIT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Lora,
    Vera,
    Pissa,
    Osora,
    OsoraK,
    OsoraDora,
    Dora,
}

impl MethodKind {
    pub const ALL: [MethodKind; 7] = [
        MethodKind::Lora,
        MethodKind::Vera,
        MethodKind::Pissa,
        MethodKind::Osora,
        MethodKind::OsoraK,
        MethodKind::OsoraDora,
        MethodKind::Dora,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Lora => "lora",
            MethodKind::Vera => "vera",
            MethodKind::Pissa => "pissa",
            MethodKind::Osora => "osora",
            MethodKind::OsoraK => "osora_k",
            MethodKind::OsoraDora => "osora_dora",
            MethodKind::Dora => "dora",
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            MethodKind::Lora => 0,
            MethodKind::Vera => 1,
            MethodKind::Pissa => 2,
            MethodKind::Osora => 3,
            MethodKind::OsoraK => 4,
            MethodKind::OsoraDora => 5,
            MethodKind::Dora => 6,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.tag() == tag)
    }

    /// OSoRA, OSoRA_k and the OSoRA+DoRA fusion.
    pub fn is_osora_family(self) -> bool {
        matches!(
            self,
            MethodKind::Osora | MethodKind::OsoraK | MethodKind::OsoraDora
        )
    }

    /// Methods that take their subspace from an SVD of `W0`.
    pub fn uses_svd(self) -> bool {
        self.is_osora_family() || self == MethodKind::Pissa
    }

    pub fn has_magnitude(self) -> bool {
        matches!(self, MethodKind::Dora | MethodKind::OsoraDora)
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', '+'], "_");
        match norm.as_str() {
            "lora" => Ok(MethodKind::Lora),
            "vera" => Ok(MethodKind::Vera),
            "pissa" => Ok(MethodKind::Pissa),
            "osora" => Ok(MethodKind::Osora),
            "osora_k" | "osorak" => Ok(MethodKind::OsoraK),
            "osora_dora" | "osoradora" => Ok(MethodKind::OsoraDora),
            "dora" => Ok(MethodKind::Dora),
            _ => Err(Error::Parse(format!("unknown method `{s}`"))),
        }
    }
}

/// Initialization of the OSoRA scaling vector `O`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OInit {
    #[default]
    Ones,
    Gaussian,
}

impl OInit {
    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(OInit::Ones),
            1 => Some(OInit::Gaussian),
            _ => None,
        }
    }
}

impl FromStr for OInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ones" => Ok(OInit::Ones),
            "gaussian" => Ok(OInit::Gaussian),
            _ => Err(Error::Parse(format!("unknown o-init `{s}`"))),
        }
    }
}

/// Which of `S_r` and `O` are trained (OSoRA family only).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainableSet {
    #[default]
    Both,
    OnlyS,
    OnlyO,
}

impl TrainableSet {
    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(TrainableSet::Both),
            1 => Some(TrainableSet::OnlyS),
            2 => Some(TrainableSet::OnlyO),
            _ => None,
        }
    }

    pub fn trains_s(self) -> bool {
        self != TrainableSet::OnlyO
    }

    pub fn trains_o(self) -> bool {
        self != TrainableSet::OnlyS
    }
}

impl FromStr for TrainableSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "both" => Ok(TrainableSet::Both),
            "only_s" => Ok(TrainableSet::OnlyS),
            "only_o" => Ok(TrainableSet::OnlyO),
            _ => Err(Error::Parse(format!("unknown trainable set `{s}`"))),
        }
    }
}

/// Adapter method plus its settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterMethod {
    pub kind: MethodKind,
    pub rank: usize,
    #[serde(default)]
    pub o_init: OInit,
    #[serde(default)]
    pub trainable: TrainableSet,
}

impl AdapterMethod {
    pub fn new(kind: MethodKind, rank: usize) -> Self {
        AdapterMethod {
            kind,
            rank,
            o_init: OInit::Ones,
            trainable: TrainableSet::Both,
        }
    }

    pub fn with_o_init(mut self, o_init: OInit) -> Self {
        self.o_init = o_init;
        self
    }

    pub fn with_trainable(mut self, trainable: TrainableSet) -> Self {
        self.trainable = trainable;
        self
    }

    /// Checks the settings against a `d×k` base weight.
    pub fn validate(&self, d: usize, k: usize) -> Result<()> {
        if self.rank == 0 || (self.kind.uses_svd() && self.rank > d.min(k)) {
            return Err(Error::RankOutOfRange {
                rank: self.rank,
                rows: d,
                cols: k,
            });
        }
        if !self.kind.is_osora_family() {
            if self.o_init != OInit::Ones {
                return Err(Error::InvalidConfig(format!(
                    "o_init applies to the OSoRA family, not {}",
                    self.kind
                )));
            }
            if self.trainable != TrainableSet::Both {
                return Err(Error::InvalidConfig(format!(
                    "trainable-set ablation applies to the OSoRA family, not {}",
                    self.kind
                )));
            }
        }
        Ok(())
    }
}

/// Weight update `ΔW` in factored form.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Update {
    /// `ΔW = B·A` with both factors trainable (LoRA, PiSSA, DoRA).
    LowRank { a: Matrix, b: Matrix },
    /// `ΔW = diag(b)·B·diag(d)·A` with frozen random `A`, `B`.
    Vera {
        a: Matrix,
        b: Matrix,
        scale_out: Vec<f64>,
        scale_rank: Vec<f64>,
    },
    /// `ΔW = diag(O)·U·diag(S)·Vᵀ`, or `U·diag(S)·Vᵀ·diag(O)` when
    /// `input_side` is set.
    Singular {
        u: Matrix,
        v: Matrix,
        s: Vec<f64>,
        o: Vec<f64>,
        input_side: bool,
    },
}

/// Trainable and frozen tensors of one adapter over a `d×k` weight.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterState {
    pub(crate) method: AdapterMethod,
    pub(crate) d: usize,
    pub(crate) k: usize,
    pub(crate) seed: u64,
    /// SHA-256 of the pretrained weight's row-major little-endian bytes.
    pub(crate) base_digest: [u8; 32],
    /// `W0` or the frozen residual `W0'`.
    pub(crate) base: Matrix,
    pub(crate) update: Update,
    /// Per-output-row magnitude for the DoRA variants.
    pub(crate) magnitude: Option<Vec<f64>>,
}

/// Builds an adapter over `w0` in its initial state.
pub fn build_adapter(w0: &Matrix, method: AdapterMethod, seed: u64) -> Result<AdapterState> {
    w0.ensure_finite("pretrained weight")?;
    let (d, k) = w0.shape();
    method.validate(d, k)?;
    let r = method.rank;

    let (base, update) = match method.kind {
        MethodKind::Lora | MethodKind::Dora => {
            let a = random_matrix(r, k, derive_seed(seed, stream::LORA_A), InitScheme::UniformScaled)?;
            (w0.clone(), Update::LowRank { a, b: Matrix::zeros(d, r) })
        }
        MethodKind::Vera => {
            let a = random_matrix(r, k, derive_seed(seed, stream::VERA_A), InitScheme::UniformScaled)?;
            let b = random_matrix(d, r, derive_seed(seed, stream::VERA_B), InitScheme::UniformScaled)?;
            let update = Update::Vera {
                a,
                b,
                scale_out: vec![0.0; d],
                scale_rank: vec![VERA_D_INIT; r],
            };
            (w0.clone(), update)
        }
        MethodKind::Pissa => {
            let f = svd_truncated(w0, r)?;
            let root: Vec<f64> = f.s_r.iter().map(|s| s.sqrt()).collect();
            let b = f.u_r.scale_cols(&root)?;
            let a = f.v_r.scale_cols(&root)?.transpose();
            (f.residual, Update::LowRank { a, b })
        }
        MethodKind::Osora | MethodKind::OsoraK | MethodKind::OsoraDora => {
            let f = svd_truncated(w0, r)?;
            let input_side = method.kind == MethodKind::OsoraK;
            let o_len = if input_side { k } else { d };
            let o = match method.o_init {
                OInit::Ones => vec![1.0; o_len],
                OInit::Gaussian => standard_normal_vec(o_len, derive_seed(seed, stream::GAUSSIAN_O)),
            };
            let update = Update::Singular {
                u: f.u_r,
                v: f.v_r,
                s: f.s_r,
                o,
                input_side,
            };
            // W0' = W0 − ΔW(initial O, S_r)
            let base = w0.sub(&update.delta(d, k))?;
            (base, update)
        }
    };

    let mut state = AdapterState {
        method,
        d,
        k,
        seed,
        base_digest: crate::persist::weight_digest(w0),
        base,
        update,
        magnitude: None,
    };
    if method.kind.has_magnitude() {
        state.magnitude = Some(row_norms(&state.direction())?);
    }
    Ok(state)
}

impl Update {
    pub(crate) fn delta(&self, d: usize, k: usize) -> Matrix {
        match self {
            Update::LowRank { a, b } => b.matmul(a).expect("factor shapes fixed at build"),
            Update::Vera {
                a,
                b,
                scale_out,
                scale_rank,
            } => {
                let mid = b
                    .scale_rows(scale_out)
                    .and_then(|m| m.scale_cols(scale_rank))
                    .expect("vector lengths fixed at build");
                mid.matmul(a).expect("factor shapes fixed at build")
            }
            Update::Singular {
                u,
                v,
                s,
                o,
                input_side,
            } => {
                let core = low_rank_product(u, s, v, s.len());
                let out = if *input_side {
                    core.scale_cols(o)
                } else {
                    core.scale_rows(o)
                };
                debug_assert_eq!(core.shape(), (d, k));
                out.expect("vector lengths fixed at build")
            }
        }
    }

    /// `ΔW·x` without forming `ΔW`.
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Update::LowRank { a, b } => {
                let ax = a.matvec(x).expect("checked by caller");
                b.matvec(&ax).expect("factor shapes fixed at build")
            }
            Update::Vera {
                a,
                b,
                scale_out,
                scale_rank,
            } => {
                let mut ax = a.matvec(x).expect("checked by caller");
                ax.iter_mut().zip(scale_rank).for_each(|(v, s)| *v *= s);
                let mut y = b.matvec(&ax).expect("factor shapes fixed at build");
                y.iter_mut().zip(scale_out).for_each(|(v, s)| *v *= s);
                y
            }
            Update::Singular {
                u,
                v,
                s,
                o,
                input_side,
            } => {
                let mut proj = if *input_side {
                    let ox: Vec<f64> = x.iter().zip(o).map(|(a, b)| a * b).collect();
                    v.matvec_t(&ox)
                } else {
                    v.matvec_t(x)
                }
                .expect("checked by caller");
                proj.iter_mut().zip(s).for_each(|(p, sv)| *p *= sv);
                let mut y = u.matvec(&proj).expect("factor shapes fixed at build");
                if !*input_side {
                    y.iter_mut().zip(o).for_each(|(v, ov)| *v *= ov);
                }
                y
            }
        }
    }
}

impl AdapterState {
    pub fn method(&self) -> &AdapterMethod {
        &self.method
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.d, self.k)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn base_digest(&self) -> &[u8; 32] {
        &self.base_digest
    }

    /// Frozen base: `W0` for LoRA/VeRA/DoRA, the residual `W0'` otherwise.
    pub fn base(&self) -> &Matrix {
        &self.base
    }

    pub fn magnitude(&self) -> Option<&[f64]> {
        self.magnitude.as_deref()
    }

    /// `(U_r, V_r)` for the OSoRA family.
    pub fn singular_vectors(&self) -> Option<(&Matrix, &Matrix)> {
        match &self.update {
            Update::Singular { u, v, .. } => Some((u, v)),
            _ => None,
        }
    }

    /// `(S_r, O)` for the OSoRA family.
    pub fn singular_scales(&self) -> Option<(&[f64], &[f64])> {
        match &self.update {
            Update::Singular { s, o, .. } => Some((s, o)),
            _ => None,
        }
    }

    /// `(A, B)` for LoRA, PiSSA and DoRA (trainable) or VeRA (frozen bases).
    pub fn low_rank_factors(&self) -> Option<(&Matrix, &Matrix)> {
        match &self.update {
            Update::LowRank { a, b } | Update::Vera { a, b, .. } => Some((a, b)),
            _ => None,
        }
    }

    /// VeRA scaling vectors `(b, d)`.
    pub fn vera_scales(&self) -> Option<(&[f64], &[f64])> {
        match &self.update {
            Update::Vera {
                scale_out,
                scale_rank,
                ..
            } => Some((scale_out, scale_rank)),
            _ => None,
        }
    }

    /// The weight update `ΔW`.
    pub fn delta(&self) -> Matrix {
        self.update.delta(self.d, self.k)
    }

    /// `base + ΔW`; the full effective weight for non-DoRA methods.
    pub fn direction(&self) -> Matrix {
        self.base.add(&self.delta()).expect("shapes fixed at build")
    }

    /// Per-row factors `m_i / ‖direction_i‖` for the DoRA variants.
    pub(crate) fn row_scales(&self, direction: &Matrix) -> Option<Vec<f64>> {
        self.magnitude.as_ref().map(|m| {
            let norms = row_norms(direction).expect("finite state");
            m.iter()
                .zip(norms)
                .map(|(mi, n)| if n > 0.0 { mi / n } else { 0.0 })
                .collect()
        })
    }

    /// Adapted output `y = W_eff · x` evaluated through the factored update.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.k {
            return Err(Error::DimensionMismatch(format!(
                "input of length {} for k = {}",
                x.len(),
                self.k
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("forward input"));
        }
        let mut y = self.base.matvec(x)?;
        y.iter_mut()
            .zip(self.update.apply(x))
            .for_each(|(a, b)| *a += b);
        if let Some(scales) = self.row_scales(&self.direction()) {
            y.iter_mut().zip(scales).for_each(|(v, s)| *v *= s);
        }
        Ok(y)
    }

    /// Applies [`forward`](Self::forward) to every column of `x` (`k×n`),
    /// returning the `d×n` outputs.
    pub fn forward_batch(&self, x: &Matrix) -> Result<Matrix> {
        if x.rows() != self.k {
            return Err(Error::DimensionMismatch(format!(
                "probe matrix has {} rows for k = {}",
                x.rows(),
                self.k
            )));
        }
        x.ensure_finite("forward input")?;
        let n = x.cols();
        let scales = self.row_scales(&self.direction());
        let mut out = Matrix::zeros(self.d, n);
        for j in 0..n {
            let col = x.col(j);
            let mut y = self.base.matvec(&col)?;
            y.iter_mut()
                .zip(self.update.apply(&col))
                .for_each(|(a, b)| *a += b);
            if let Some(s) = &scales {
                y.iter_mut().zip(s).for_each(|(v, si)| *v *= si);
            }
            out.set_col(j, &y);
        }
        Ok(out)
    }

    /// Folds the adapter into one dense `d×k` weight.
    pub fn merge(&self) -> Matrix {
        let dir = self.direction();
        match self.row_scales(&dir) {
            Some(scales) => dir.scale_rows(&scales).expect("length d"),
            None => dir,
        }
    }

    /// Names and lengths of the trainable slices, in flat-vector order.
    pub fn trainable_layout(&self) -> Vec<(&'static str, usize)> {
        let (d, k, r) = (self.d, self.k, self.method.rank);
        let mut layout = match &self.update {
            Update::LowRank { .. } => vec![("A", r * k), ("B", d * r)],
            Update::Vera { .. } => vec![("b", d), ("d", r)],
            Update::Singular { o, .. } => {
                let set = self.method.trainable;
                let mut l = Vec::new();
                if set.trains_s() {
                    l.push(("S", r));
                }
                if set.trains_o() {
                    l.push(("O", o.len()));
                }
                l
            }
        };
        if self.magnitude.is_some() {
            layout.push(("m", d));
        }
        layout
    }

    pub fn trainable_len(&self) -> usize {
        self.trainable_layout().iter().map(|(_, n)| n).sum()
    }

    /// Concatenation of the trainable tensors (matrices row-major).
    pub fn trainable_vector(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.trainable_len());
        match &self.update {
            Update::LowRank { a, b } => {
                flat.extend_from_slice(a.as_slice());
                flat.extend_from_slice(b.as_slice());
            }
            Update::Vera {
                scale_out,
                scale_rank,
                ..
            } => {
                flat.extend_from_slice(scale_out);
                flat.extend_from_slice(scale_rank);
            }
            Update::Singular { s, o, .. } => {
                if self.method.trainable.trains_s() {
                    flat.extend_from_slice(s);
                }
                if self.method.trainable.trains_o() {
                    flat.extend_from_slice(o);
                }
            }
        }
        if let Some(m) = &self.magnitude {
            flat.extend_from_slice(m);
        }
        flat
    }

    /// Installs a flat trainable vector produced by
    /// [`trainable_vector`](Self::trainable_vector).
    pub fn load_trainable(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.trainable_len();
        if flat.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                got: flat.len(),
            });
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("trainable vector"));
        }
        let mut rest = flat;
        let mut take = |dst: &mut [f64]| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        let set = self.method.trainable;
        match &mut self.update {
            Update::LowRank { a, b } => {
                take(a.as_mut_slice());
                take(b.as_mut_slice());
            }
            Update::Vera {
                scale_out,
                scale_rank,
                ..
            } => {
                take(scale_out);
                take(scale_rank);
            }
            Update::Singular { s, o, .. } => {
                if set.trains_s() {
                    take(s);
                }
                if set.trains_o() {
                    take(o);
                }
            }
        }
        if let Some(m) = &mut self.magnitude {
            take(m);
        }
        Ok(())
    }

    /// Little-endian bytes of every frozen tensor, for immutability checks.
    pub fn frozen_bytes(&self) -> Vec<u8> {
        let mut out = self.base.to_le_bytes();
        let set = self.method.trainable;
        match &self.update {
            Update::LowRank { .. } => {}
            Update::Vera { a, b, .. } => {
                out.extend(a.to_le_bytes());
                out.extend(b.to_le_bytes());
            }
            Update::Singular { u, v, s, o, .. } => {
                out.extend(u.to_le_bytes());
                out.extend(v.to_le_bytes());
                if !set.trains_s() {
                    out.extend(s.iter().flat_map(|x| x.to_le_bytes()));
                }
                if !set.trains_o() {
                    out.extend(o.iter().flat_map(|x| x.to_le_bytes()));
                }
            }
        }
        out
    }

    /// Adds `delta` to entry `(0, 0)` of the frozen `U_r` (fault injection for
    /// negative controls).
    pub fn perturb_frozen_u(&mut self, delta: f64) -> Result<()> {
        match &mut self.update {
            Update::Singular { u, .. } => {
                u[(0, 0)] += delta;
                Ok(())
            }
            _ => Err(Error::MethodMismatch {
                op: "perturb_frozen_u",
                method: self.method.kind.name(),
            }),
        }
    }
}
