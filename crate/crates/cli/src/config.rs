//! Optional TOML run file. One table per command; command-line flags win.
//!
//! ```toml
//! seed = 7
//!
//! [train]
//! method = "osora"
//! rank = 4
//! steps = 500
//!
//! [count]
//! preset = "mistral7b_v03"
//! methods = ["osora", "lora"]
//! ranks = [8, 16]
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use osora_core::Error;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub decompose: DecomposeSection,
    pub train: TrainSection,
    pub count: CountSection,
    pub verify: VerifySection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecomposeSection {
    pub rank: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub d: Option<usize>,
    pub k: Option<usize>,
    pub r_gap: Option<usize>,
    pub rank: Option<usize>,
    pub method: Option<String>,
    pub steps: Option<usize>,
    pub lr: Option<f64>,
    pub optimizer: Option<String>,
    pub o_init: Option<String>,
    pub trainable: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CountSection {
    pub preset: Option<String>,
    pub presets_file: Option<PathBuf>,
    pub methods: Option<Vec<String>>,
    pub ranks: Option<Vec<u64>>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub scope: Option<String>,
    pub inject_fault: Option<String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Error> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|source| Error::IoFailure {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, Error> {
        toml::from_str(text).map_err(|e| Error::Parse(format!("config: {}", e.message())))
    }
}
