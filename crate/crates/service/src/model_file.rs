//! Versioned, self-describing JSON documents for calibrated maps, fitted models and
//! solved Q-functions.
//!
//! ```json
//! {
//!   "format": "skillnudge-model",
//!   "version": 1,
//!   "kind": "iohmm",
//!   "dimensions": { "input": 7, "observation": 2, "states": 7 },
//!   "payload": { ... },
//!   "provenance": { "tool": "skillnudge 0.1.0", "command": "fit", ... }
//! }
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use skillnudge_core::bomi::{BomiMap, NUM_JOINTS};
use skillnudge_core::iohmm::{IohmmModel, INPUT_DIM, OBS_DIM};
use skillnudge_core::policy::{QFunction, RewardWeights};

pub const FORMAT: &str = "skillnudge-model";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ModelFileError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed model file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("not a {FORMAT} document (format = {0:?})")]
    WrongFormat(String),
    #[error("unsupported model-file version {found} (this build reads version {VERSION})")]
    VersionMismatch { found: u32 },
    #[error("expected a {expected} artifact, found {found}")]
    WrongKind { expected: ArtifactKind, found: ArtifactKind },
    #[error("dimension {name} is {found}, payload implies {expected}")]
    Dimension { name: String, expected: usize, found: usize },
    #[error("invalid payload: {0}")]
    InvalidPayload(String),
}

pub type Result<T> = std::result::Result<T, ModelFileError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ArtifactKind {
    BomiMap,
    Iohmm,
    Qfunction,
}

impl std::fmt::Display for ArtifactKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ArtifactKind::BomiMap => "bomiMap",
            ArtifactKind::Iohmm => "iohmm",
            ArtifactKind::Qfunction => "qfunction",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub command: String,
    /// Configuration the artifact was produced with.
    #[serde(default)]
    pub config: Value,
    #[serde(default)]
    pub seeds: BTreeMap<String, u64>,
    /// SHA-256 of the input data (calibration table, trial logs or model payload).
    #[serde(default)]
    pub data_hash: Option<String>,
}

impl Provenance {
    pub fn new(command: &str) -> Self {
        Provenance {
            tool: format!("skillnudge {}", env!("CARGO_PKG_VERSION")),
            command: command.to_string(),
            config: Value::Null,
            seeds: BTreeMap::new(),
            data_hash: None,
        }
    }

    pub fn with_config<T: Serialize>(mut self, config: &T) -> Self {
        self.config = serde_json::to_value(config).expect("configuration serialises");
        self
    }

    pub fn with_seed(mut self, name: &str, seed: u64) -> Self {
        self.seeds.insert(name.to_string(), seed);
        self
    }

    pub fn with_data_hash(mut self, hash: String) -> Self {
        self.data_hash = Some(hash);
        self
    }
}

/// Payload of a `qfunction` artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QFunctionPayload {
    pub q: QFunction,
    pub weights: RewardWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub kind: ArtifactKind,
    pub dimensions: BTreeMap<String, usize>,
    pub payload: Value,
    pub provenance: Provenance,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn dims(pairs: &[(&str, usize)]) -> BTreeMap<String, usize> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

impl ModelFile {
    fn build<T: Serialize>(kind: ArtifactKind, dimensions: BTreeMap<String, usize>, payload: &T, provenance: Provenance) -> Self {
        ModelFile {
            format: FORMAT.to_string(),
            version: VERSION,
            kind,
            dimensions,
            payload: serde_json::to_value(payload).expect("payload serialises"),
            provenance,
        }
    }

    pub fn from_bomi_map(map: &BomiMap, provenance: Provenance) -> Self {
        Self::build(ArtifactKind::BomiMap, dims(&[("joints", NUM_JOINTS), ("task", 2)]), map, provenance)
    }

    pub fn from_iohmm(model: &IohmmModel, provenance: Provenance) -> Self {
        let d = dims(&[("input", INPUT_DIM), ("observation", OBS_DIM), ("states", model.n_states())]);
        Self::build(ArtifactKind::Iohmm, d, model, provenance)
    }

    pub fn from_qfunction(payload: &QFunctionPayload, skill_states: usize, provenance: Provenance) -> Self {
        let d = dims(&[("actions", payload.q.n_actions), ("skillStates", skill_states), ("states", payload.q.n_states)]);
        Self::build(ArtifactKind::Qfunction, d, payload, provenance)
    }

    /// Canonical text: pretty-printed JSON with a trailing newline.
    pub fn to_text(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model file serialises");
        s.push('\n');
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let raw: Value = serde_json::from_str(text)?;
        let format = raw.get("format").and_then(Value::as_str).unwrap_or_default();
        if format != FORMAT {
            return Err(ModelFileError::WrongFormat(format.to_string()));
        }
        let version = raw.get("version").and_then(Value::as_u64).unwrap_or(0);
        if version != VERSION as u64 {
            return Err(ModelFileError::VersionMismatch { found: version as u32 });
        }
        Ok(serde_json::from_value(raw)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ModelFileError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    /// Writes via a temporary sibling and a rename so readers never see a partial file.
    pub fn write(&self, path: &Path) -> Result<()> {
        let io = |source| ModelFileError::Io { path: path.display().to_string(), source };
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_text()).map_err(io)?;
        std::fs::rename(&tmp, path).map_err(io)
    }

    /// SHA-256 of the compact payload text.
    pub fn payload_hash(&self) -> String {
        sha256_hex(serde_json::to_string(&self.payload).expect("payload serialises").as_bytes())
    }

    fn expect_kind(&self, expected: ArtifactKind) -> Result<()> {
        if self.kind != expected {
            return Err(ModelFileError::WrongKind { expected, found: self.kind });
        }
        Ok(())
    }

    fn check_dim(&self, name: &str, expected: usize) -> Result<()> {
        match self.dimensions.get(name) {
            Some(&found) if found == expected => Ok(()),
            Some(&found) => Err(ModelFileError::Dimension { name: name.to_string(), expected, found }),
            None => Err(ModelFileError::InvalidPayload(format!("missing dimension {name}"))),
        }
    }

    fn payload_as<T: serde::de::DeserializeOwned>(&self) -> Result<T> {
        serde_json::from_value(self.payload.clone()).map_err(|e| ModelFileError::InvalidPayload(e.to_string()))
    }

    pub fn bomi_map(&self) -> Result<BomiMap> {
        self.expect_kind(ArtifactKind::BomiMap)?;
        self.check_dim("joints", NUM_JOINTS)?;
        self.check_dim("task", 2)?;
        let map: BomiMap = self.payload_as()?;
        let finite = map.c.iter().flatten().chain(map.center.0.iter()).chain(map.unit.iter()).all(|v| v.is_finite());
        if !finite || !(map.window_size > 0.0) {
            return Err(ModelFileError::InvalidPayload("map has non-finite coefficients".into()));
        }
        Ok(map)
    }

    pub fn iohmm(&self) -> Result<IohmmModel> {
        self.expect_kind(ArtifactKind::Iohmm)?;
        let model: IohmmModel = self.payload_as()?;
        model.validate().map_err(|e| ModelFileError::InvalidPayload(e.to_string()))?;
        self.check_dim("input", INPUT_DIM)?;
        self.check_dim("observation", OBS_DIM)?;
        self.check_dim("states", model.n_states())?;
        Ok(model)
    }

    pub fn qfunction(&self) -> Result<QFunctionPayload> {
        self.expect_kind(ArtifactKind::Qfunction)?;
        let p: QFunctionPayload = self.payload_as()?;
        p.q.validate().map_err(|e| ModelFileError::InvalidPayload(e.to_string()))?;
        self.check_dim("states", p.q.n_states)?;
        self.check_dim("actions", p.q.n_actions)?;
        Ok(p)
    }
}
