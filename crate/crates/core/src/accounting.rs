//! Closed-form trainable-parameter and memory accounting.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapters::{AdapterMethod, MethodKind};
use crate::error::{Error, Result};

const BUILTIN_PRESETS: &str = include_str!("../data/presets.toml");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Target {
    pub name: String,
    pub d: u64,
    pub k: u64,
}

/// Adapted projection shapes of one model, repeated over `layers`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapePreset {
    pub name: String,
    pub layers: u64,
    pub targets: Vec<Target>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PresetFile {
    preset: Vec<ShapePreset>,
}

/// Parses a preset file (TOML, one `[[preset]]` table per model).
pub fn parse_presets(text: &str) -> Result<Vec<ShapePreset>> {
    let file: PresetFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    for p in &file.preset {
        if p.layers == 0 || p.targets.is_empty() || p.targets.iter().any(|t| t.d == 0 || t.k == 0) {
            return Err(Error::Parse(format!("preset `{}` has a zero dimension", p.name)));
        }
    }
    Ok(file.preset)
}

pub fn builtin_presets() -> Vec<ShapePreset> {
    parse_presets(BUILTIN_PRESETS).expect("bundled presets are valid")
}

pub fn load_presets(path: &Path) -> Result<Vec<ShapePreset>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_presets(&text)
}

pub fn find_preset<'a>(presets: &'a [ShapePreset], name: &str) -> Result<&'a ShapePreset> {
    presets
        .iter()
        .find(|p| p.name == name)
        .ok_or_else(|| Error::UnknownPreset(name.to_string()))
}

fn check_rank(kind: MethodKind, d: u64, k: u64, r: u64) -> Result<()> {
    if d == 0 || k == 0 {
        return Err(Error::DimensionMismatch(format!("dims must be positive, got {d}x{k}")));
    }
    if r == 0 || (kind.uses_svd() && r > d.min(k)) {
        return Err(Error::RankOutOfRange {
            rank: r as usize,
            rows: d as usize,
            cols: k as usize,
        });
    }
    Ok(())
}

/// Trainable parameters of one `d×k` target with both `S_r` and `O` trained.
///
/// | method      | count        |
/// |-------------|--------------|
/// | OSoRA, VeRA | `r + d`      |
/// | OSoRA_k     | `r + k`      |
/// | LoRA, PiSSA | `r(d + k)`   |
/// | DoRA        | `r(d + k) + d` |
/// | OSoRA+DoRA  | `r + 2d`     |
///
/// The DoRA magnitude has one entry per output unit.
pub fn count_trainable(kind: MethodKind, d: u64, k: u64, r: u64) -> Result<u64> {
    check_rank(kind, d, k, r)?;
    Ok(match kind {
        MethodKind::Osora | MethodKind::Vera => r + d,
        MethodKind::OsoraK => r + k,
        MethodKind::Lora | MethodKind::Pissa => r * (d + k),
        MethodKind::Dora => r * (d + k) + d,
        MethodKind::OsoraDora => r + 2 * d,
    })
}

/// Like [`count_trainable`] but honoring the `only_s` / `only_o` ablations.
pub fn count_for(method: &AdapterMethod, d: u64, k: u64) -> Result<u64> {
    let full = count_trainable(method.kind, d, k, method.rank as u64)?;
    if !method.kind.is_osora_family() {
        return Ok(full);
    }
    let r = method.rank as u64;
    let o_len = if method.kind == MethodKind::OsoraK { k } else { d };
    let mut n = full;
    if !method.trainable.trains_s() {
        n -= r;
    }
    if !method.trainable.trains_o() {
        n -= o_len;
    }
    Ok(n)
}

/// Trainable parameters plus the frozen adapter-side factors held in memory
/// during training. For OSoRA this is `(r + d) + (dr + kr)`. The pretrained
/// weight (or residual) is excluded for every method.
pub fn memory_footprint(kind: MethodKind, d: u64, k: u64, r: u64) -> Result<u64> {
    let trainable = count_trainable(kind, d, k, r)?;
    let frozen = match kind {
        MethodKind::Osora | MethodKind::OsoraK | MethodKind::OsoraDora | MethodKind::Vera => {
            d * r + k * r
        }
        MethodKind::Lora | MethodKind::Pissa | MethodKind::Dora => 0,
    };
    Ok(trainable + frozen)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetCount {
    pub name: String,
    pub d: u64,
    pub k: u64,
    /// Per layer.
    pub trainable: u64,
    /// Per layer.
    pub memory: u64,
}

/// Trainable and memory totals of one method on a preset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamReport {
    pub preset: String,
    pub method: MethodKind,
    pub rank: u64,
    pub layers: u64,
    pub targets: Vec<TargetCount>,
    pub total_trainable: u64,
    pub memory_footprint: u64,
}

pub fn report(preset: &ShapePreset, method: MethodKind, r: u64) -> Result<ParamReport> {
    let targets = preset
        .targets
        .iter()
        .map(|t| {
            Ok(TargetCount {
                name: t.name.clone(),
                d: t.d,
                k: t.k,
                trainable: count_trainable(method, t.d, t.k, r)?,
                memory: memory_footprint(method, t.d, t.k, r)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let total_trainable = preset.layers * targets.iter().map(|t| t.trainable).sum::<u64>();
    let memory_footprint = preset.layers * targets.iter().map(|t| t.memory).sum::<u64>();
    Ok(ParamReport {
        preset: preset.name.clone(),
        method,
        rank: r,
        layers: preset.layers,
        targets,
        total_trainable,
        memory_footprint,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepRow {
    pub method: MethodKind,
    pub rank: u64,
    pub trainable: u64,
    pub memory_footprint: u64,
}

/// One row per `(method, rank)`, sorted by method name then rank.
pub fn scaling_sweep(preset: &ShapePreset, methods: &[MethodKind], ranks: &[u64]) -> Result<Vec<SweepRow>> {
    if ranks.is_empty() {
        return Err(Error::InvalidConfig("empty rank list".into()));
    }
    let mut rows = Vec::with_capacity(methods.len() * ranks.len());
    for &method in methods {
        for &rank in ranks {
            let rep = report(preset, method, rank)?;
            rows.push(SweepRow {
                method,
                rank,
                trainable: rep.total_trainable,
                memory_footprint: rep.memory_footprint,
            });
        }
    }
    rows.sort_by(|a, b| a.method.name().cmp(b.method.name()).then(a.rank.cmp(&b.rank)));
    rows.dedup();
    Ok(rows)
}

/// OSoRA-to-LoRA trainable ratio `(r + d) / (r (d + k))`.
pub fn param_ratio(d: u64, k: u64, r: u64) -> f64 {
    (r + d) as f64 / (r * (d + k)) as f64
}

/// The same ratio as `1/(d + k) + d/(r (d + k))`.
pub fn param_ratio_split(d: u64, k: u64, r: u64) -> f64 {
    let (d, k, r) = (d as f64, k as f64, r as f64);
    1.0 / (d + k) + d / (r * (d + k))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_counts() {
        assert_eq!(count_trainable(MethodKind::Lora, 4, 4, 2).unwrap(), 16);
        assert_eq!(count_trainable(MethodKind::Osora, 4096, 4096, 512).unwrap(), 4608);
        assert_eq!(count_trainable(MethodKind::Vera, 4, 4, 100).unwrap(), 104);
    }

    #[test]
    fn osora_rank_bound() {
        assert!(matches!(
            count_trainable(MethodKind::Osora, 4, 8, 5),
            Err(Error::RankOutOfRange { .. })
        ));
        assert!(count_trainable(MethodKind::Lora, 4, 8, 5).is_ok());
    }

    #[test]
    fn osora_memory_footprint_formula() {
        let (d, k, r) = (4096, 1024, 64);
        assert_eq!(memory_footprint(MethodKind::Osora, d, k, r).unwrap(), (r + d) + (d * r + k * r));
    }

    #[test]
    fn ratio_forms() {
        assert!((param_ratio(8, 8, 8) - 1.0 / 8.0).abs() < 1e-16);
        let r = param_ratio(4096, 4096, 512);
        assert_eq!(r, 4608.0 / 4_194_304.0);
        assert!((r - 1.0986e-3).abs() < 1e-7);
    }

    #[test]
    fn unknown_preset() {
        let p = builtin_presets();
        assert!(matches!(find_preset(&p, "gpt5"), Err(Error::UnknownPreset(_))));
    }

    #[test]
    fn preset_file_rejects_unknown_keys_and_zero_dims() {
        let bad = "[[preset]]\nname='x'\nlayers=1\nheads=3\ntargets=[{name='q',d=1,k=1}]";
        assert!(parse_presets(bad).is_err());
        let zero = "[[preset]]\nname='x'\nlayers=1\ntargets=[{name='q',d=0,k=1}]";
        assert!(parse_presets(zero).is_err());
    }
}
