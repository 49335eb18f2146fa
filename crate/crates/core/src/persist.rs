//! Compact checkpoints holding only the trainable vector.
//!
//! Frozen tensors (`U_r`, `V_r`, `W0'`, random bases) are rebuilt at load time
//! from the pretrained weight and the stored seed. Layout, version 1, all
//! integers little-endian:
//!
//! ```text
//! offset  size  field
//!      0     4  magic "OSRA"
//!      4     4  version (u32) = 1
//!      8     1  kind: 0 = checkpoint, 1 = full snapshot
//!      9     1  method tag
//!     10     1  o_init tag
//!     11     1  trainable-set tag
//!     12     8  d (u64)
//!     20     8  k (u64)
//!     28     8  rank (u64)
//!     36     8  seed (u64)
//!     44    32  SHA-256 of W0 (row-major f64 LE bytes)
//!     76     8  payload length n (u64)
//!     84   8n  payload: trainable vector, f64 LE
//! ```
//!
//! A snapshot appends `u32` section count, then per section: `u16` name
//! length, UTF-8 name, `u64` rows, `u64` cols, `rows·cols` f64 LE.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::adapters::{build_adapter, AdapterMethod, AdapterState, MethodKind, OInit, TrainableSet, Update};
use crate::densela::Matrix;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"OSRA";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 84;

const KIND_CHECKPOINT: u8 = 0;
const KIND_SNAPSHOT: u8 = 1;

/// SHA-256 of the row-major little-endian bytes of `w`.
pub fn weight_digest(w: &Matrix) -> [u8; 32] {
    let mut h = Sha256::new();
    for v in w.as_slice() {
        h.update(v.to_le_bytes());
    }
    h.finalize().into()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub version: u32,
    pub snapshot: bool,
    pub method: AdapterMethod,
    pub d: u64,
    pub k: u64,
    pub seed: u64,
    pub digest: [u8; 32],
    pub payload_len: u64,
}

fn header_bytes(state: &AdapterState, kind: u8) -> Vec<u8> {
    let m = state.method();
    let (d, k) = state.dims();
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&[kind, m.kind.tag(), m.o_init.tag(), m.trainable.tag()]);
    for v in [d as u64, k as u64, m.rank as u64, state.seed()] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(state.base_digest());
    out.extend_from_slice(&(state.trainable_len() as u64).to_le_bytes());
    debug_assert_eq!(out.len(), HEADER_LEN);
    out
}

fn push_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Checkpoint bytes: header followed by the trainable vector.
pub fn encode_checkpoint(state: &AdapterState) -> Vec<u8> {
    let mut out = header_bytes(state, KIND_CHECKPOINT);
    push_f64s(&mut out, &state.trainable_vector());
    out
}

pub fn save(state: &AdapterState, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(state)).map_err(|e| Error::io(path, e))
}

fn u64_at(bytes: &[u8], off: usize) -> u64 {
    u64::from_le_bytes(bytes[off..off + 8].try_into().expect("8 bytes"))
}

pub fn decode_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 8 {
        return Err(Error::CorruptPayload("file shorter than header".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::CorruptPayload("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::CorruptPayload("file shorter than header".into()));
    }
    let snapshot = match bytes[8] {
        KIND_CHECKPOINT => false,
        KIND_SNAPSHOT => true,
        other => return Err(Error::CorruptPayload(format!("unknown kind {other}"))),
    };
    let kind = MethodKind::from_tag(bytes[9])
        .ok_or_else(|| Error::CorruptPayload(format!("unknown method tag {}", bytes[9])))?;
    let o_init = OInit::from_tag(bytes[10])
        .ok_or_else(|| Error::CorruptPayload(format!("unknown o_init tag {}", bytes[10])))?;
    let trainable = TrainableSet::from_tag(bytes[11])
        .ok_or_else(|| Error::CorruptPayload(format!("unknown trainable tag {}", bytes[11])))?;
    let rank = u64_at(bytes, 28);
    let method = AdapterMethod {
        kind,
        rank: rank as usize,
        o_init,
        trainable,
    };
    Ok(Header {
        version,
        snapshot,
        method,
        d: u64_at(bytes, 12),
        k: u64_at(bytes, 20),
        seed: u64_at(bytes, 36),
        digest: bytes[44..76].try_into().expect("32 bytes"),
        payload_len: u64_at(bytes, 76),
    })
}

fn read_payload(bytes: &[u8], header: &Header) -> Result<(Vec<f64>, usize)> {
    let n = usize::try_from(header.payload_len)
        .map_err(|_| Error::CorruptPayload("payload length overflow".into()))?;
    let end = n
        .checked_mul(8)
        .and_then(|b| b.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::CorruptPayload("payload length overflow".into()))?;
    if bytes.len() < end {
        return Err(Error::CorruptPayload(format!(
            "payload truncated: {} of {} bytes",
            bytes.len().saturating_sub(HEADER_LEN),
            8 * n
        )));
    }
    let payload = bytes[HEADER_LEN..end]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((payload, end))
}

/// Rebuilds an adapter from checkpoint (or snapshot) bytes and the pretrained
/// weight it was built on.
pub fn decode(bytes: &[u8], w0: &Matrix) -> Result<AdapterState> {
    let header = decode_header(bytes)?;
    let (payload, end) = read_payload(bytes, &header)?;
    if !header.snapshot && bytes.len() != end {
        return Err(Error::CorruptPayload(format!(
            "{} trailing bytes after payload",
            bytes.len() - end
        )));
    }
    if weight_digest(w0) != header.digest {
        return Err(Error::DigestMismatch);
    }
    if (w0.rows() as u64, w0.cols() as u64) != (header.d, header.k) {
        return Err(Error::CorruptPayload("dims disagree with base weight".into()));
    }
    let mut state = build_adapter(w0, header.method, header.seed)?;
    if payload.len() != state.trainable_len() {
        return Err(Error::CorruptPayload(format!(
            "payload has {} values, method needs {}",
            payload.len(),
            state.trainable_len()
        )));
    }
    state.load_trainable(&payload)?;
    Ok(state)
}

pub fn load(path: &Path, w0: &Matrix) -> Result<AdapterState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, w0)
}

/// Every tensor of the state as named matrices (vectors as `1×n`).
pub fn tensor_sections(state: &AdapterState) -> Vec<(String, Matrix)> {
    let row = |v: &[f64]| Matrix::from_vec(1, v.len(), v.to_vec()).expect("non-empty vector");
    let mut out = vec![("base".to_string(), state.base().clone())];
    match &state.update {
        Update::LowRank { a, b } => {
            out.push(("A".into(), a.clone()));
            out.push(("B".into(), b.clone()));
        }
        Update::Vera {
            a,
            b,
            scale_out,
            scale_rank,
        } => {
            out.push(("A".into(), a.clone()));
            out.push(("B".into(), b.clone()));
            out.push(("b".into(), row(scale_out)));
            out.push(("d".into(), row(scale_rank)));
        }
        Update::Singular { u, v, s, o, .. } => {
            out.push(("U_r".into(), u.clone()));
            out.push(("V_r".into(), v.clone()));
            out.push(("S_r".into(), row(s)));
            out.push(("O".into(), row(o)));
        }
    }
    if let Some(m) = state.magnitude() {
        out.push(("m".into(), row(m)));
    }
    out
}

/// Full snapshot: checkpoint header and payload plus every tensor.
pub fn encode_snapshot(state: &AdapterState) -> Vec<u8> {
    let mut out = header_bytes(state, KIND_SNAPSHOT);
    push_f64s(&mut out, &state.trainable_vector());
    let sections = tensor_sections(state);
    out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
    for (name, m) in &sections {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
        push_f64s(&mut out, m.as_slice());
    }
    out
}

pub fn save_snapshot(state: &AdapterState, path: &Path) -> Result<()> {
    std::fs::write(path, encode_snapshot(state)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub header: Header,
    pub payload: Vec<f64>,
    pub sections: Vec<(String, Matrix)>,
}

impl Snapshot {
    pub fn section(&self, name: &str) -> Option<&Matrix> {
        self.sections.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<Snapshot> {
    let header = decode_header(bytes)?;
    if !header.snapshot {
        return Err(Error::CorruptPayload("not a snapshot".into()));
    }
    let (payload, mut off) = read_payload(bytes, &header)?;
    let short = || Error::CorruptPayload("snapshot sections truncated".into());
    let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
        let s = bytes.get(*off..*off + n).ok_or_else(short)?;
        *off += n;
        Ok(s)
    };
    let count = u32::from_le_bytes(take(&mut off, 4)?.try_into().expect("4 bytes"));
    let mut sections = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(&mut off, 2)?.try_into().expect("2 bytes")) as usize;
        let name = String::from_utf8(take(&mut off, name_len)?.to_vec())
            .map_err(|_| Error::CorruptPayload("section name is not UTF-8".into()))?;
        let rows = u64::from_le_bytes(take(&mut off, 8)?.try_into().expect("8 bytes")) as usize;
        let cols = u64::from_le_bytes(take(&mut off, 8)?.try_into().expect("8 bytes")) as usize;
        let len = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(short)?;
        let data = take(&mut off, len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        sections.push((name, Matrix::from_vec(rows, cols, data)?));
    }
    if off != bytes.len() {
        return Err(Error::CorruptPayload("trailing bytes after sections".into()));
    }
    Ok(Snapshot {
        header,
        payload,
        sections,
    })
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_snapshot(&bytes)
}
