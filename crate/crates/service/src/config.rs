//! TOML service configuration with `SKILLNUDGE_*` environment overrides.
//!
//! ```toml
//! [server]
//! host = "127.0.0.1"
//! port = 8765
//!
//! [artifacts]
//! map = "artifacts/map.json"
//! model = "artifacts/model.json"
//! qfunction = "artifacts/qfunction.json"
//! log_dir = "logs"
//! checkpoint_dir = "checkpoints"
//!
//! [session]
//! policy = "qmdp"
//! seed = 1
//!
//! [thresholds]
//! re = 0.3
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use skillnudge_core::metrics::{TrialEndRule, DEFAULT_CONVERGENCE_WINDOW};
use skillnudge_core::policy::{BeliefOrdering, HeuristicConfig};
use skillnudge_core::simulator::{PolicyKind, MASTERY_THRESHOLD};

pub const ENV_MAP: &str = "SKILLNUDGE_MAP";
pub const ENV_MODEL: &str = "SKILLNUDGE_MODEL";
pub const ENV_QFUNCTION: &str = "SKILLNUDGE_QFUNCTION";
pub const ENV_LOG_DIR: &str = "SKILLNUDGE_LOG_DIR";
pub const ENV_CHECKPOINT_DIR: &str = "SKILLNUDGE_CHECKPOINT_DIR";
pub const ENV_SEED: &str = "SKILLNUDGE_SEED";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{var}: {msg}")]
    Env { var: &'static str, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub host: String,
    pub port: u16,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig { host: "127.0.0.1".into(), port: 8765 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArtifactPaths {
    /// Fallback map when a session's own calibration is too short.
    pub map: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub qfunction: Option<PathBuf>,
    pub log_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
}

impl Default for ArtifactPaths {
    fn default() -> Self {
        ArtifactPaths {
            map: None,
            model: None,
            qfunction: None,
            log_dir: "logs".into(),
            checkpoint_dir: "checkpoints".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub policy: PolicyKind,
    pub seed: u64,
    pub blocks: usize,
    pub trials_per_block: usize,
    pub familiarization_ms: f64,
    pub sample_rate_hz: f64,
    /// Relative deviation of the measured sample rate that triggers a warning.
    pub drift_tolerance: f64,
    /// Delay between trial onset and the first nudge burst.
    pub nudge_delay_ms: f64,
    /// A trial with no movement and no capture ends after this long.
    pub max_trial_ms: f64,
    /// Calibration samples needed to calibrate per session instead of using the loaded map.
    pub min_calibration_samples: usize,
    pub belief_ordering: BeliefOrdering,
    pub heuristic: HeuristicConfig,
    pub trial_end: TrialEndRule,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            policy: PolicyKind::Qmdp,
            seed: 0,
            blocks: 8,
            trials_per_block: 60,
            familiarization_ms: 6000.0,
            sample_rate_hz: 100.0,
            drift_tolerance: 0.2,
            nudge_delay_ms: 0.0,
            max_trial_ms: 10_000.0,
            min_calibration_samples: 40,
            belief_ordering: BeliefOrdering::default(),
            heuristic: HeuristicConfig::default(),
            trial_end: TrialEndRule::default(),
        }
    }
}

impl SessionConfig {
    pub fn n_trials(&self) -> usize {
        self.blocks * self.trials_per_block
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub re: f64,
    pub sot: f64,
    pub mastery: f64,
    pub window: usize,
    /// Cumulative variance fraction for the synergy count.
    pub vaf: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { re: 0.3, sot: 0.2, mastery: MASTERY_THRESHOLD, window: DEFAULT_CONVERGENCE_WINDOW, vaf: 0.9 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub server: ServerConfig,
    pub artifacts: ArtifactPaths,
    pub session: SessionConfig,
    pub thresholds: Thresholds,
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ServiceConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (defaults when `None`) and applies process environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io { path: p.display().to_string(), source })?;
                Self::from_toml(&text)?
            }
            None => ServiceConfig::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        let a = &mut self.artifacts;
        for (var, slot) in [(ENV_MAP, &mut a.map), (ENV_MODEL, &mut a.model), (ENV_QFUNCTION, &mut a.qfunction)] {
            if let Some(v) = lookup(var) {
                *slot = Some(v.into());
            }
        }
        if let Some(v) = lookup(ENV_LOG_DIR) {
            a.log_dir = v.into();
        }
        if let Some(v) = lookup(ENV_CHECKPOINT_DIR) {
            a.checkpoint_dir = v.into();
        }
        if let Some(v) = lookup(ENV_SEED) {
            self.session.seed = v.trim().parse().map_err(|e| ConfigError::Env { var: ENV_SEED, msg: format!("{e}") })?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.session;
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if s.blocks == 0 || s.trials_per_block == 0 {
            return bad("blocks and trials_per_block must be positive");
        }
        if !(s.sample_rate_hz > 0.0) || !(s.drift_tolerance > 0.0) {
            return bad("sample_rate_hz and drift_tolerance must be positive");
        }
        if !(s.familiarization_ms >= 0.0) || !(s.nudge_delay_ms >= 0.0) || !(s.max_trial_ms > 0.0) {
            return bad("durations must be non-negative");
        }
        if !(s.heuristic.tau > 0.0) {
            return bad("heuristic.tau must be positive");
        }
        if self.thresholds.window == 0 || !(self.thresholds.vaf > 0.0 && self.thresholds.vaf <= 1.0) {
            return bad("thresholds.window must be positive and thresholds.vaf in (0, 1]");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn defaults_match_protocol() {
        let c = ServiceConfig::default();
        assert_eq!(c.session.n_trials(), 480);
        assert_eq!(c.session.familiarization_ms, 6000.0);
        assert_eq!(c.session.trial_end, TrialEndRule::default());
        assert_eq!(ServiceConfig::from_toml("").unwrap(), c);
    }

    #[test]
    fn parses_sections() {
        let c = ServiceConfig::from_toml(
            r#"
            [server]
            port = 9000
            [artifacts]
            model = "m.json"
            [session]
            policy = "heuristic"
            nudge_delay_ms = 250.0
            [session.heuristic]
            tau = 0.5
            distance_floor = 1e-9
            [thresholds]
            re = 0.4
            "#,
        )
        .unwrap();
        assert_eq!(c.server.port, 9000);
        assert_eq!(c.artifacts.model, Some(PathBuf::from("m.json")));
        assert_eq!(c.session.policy, PolicyKind::Heuristic);
        assert_eq!(c.session.heuristic.tau, 0.5);
        assert_eq!(c.thresholds.re, 0.4);
        assert_eq!(c.thresholds.sot, 0.2);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(ServiceConfig::from_toml("[server]\nprot = 1").is_err());
        assert!(ServiceConfig::from_toml("[session]\nblocks = 0").is_err());
        assert!(ServiceConfig::from_toml("[session]\npolicy = \"magic\"").is_err());
    }

    #[test]
    fn environment_overrides_paths_and_seed() {
        let env: HashMap<&str, &str> =
            [(ENV_MODEL, "/x/model.json"), (ENV_SEED, "42"), (ENV_LOG_DIR, "/x/logs")].into_iter().collect();
        let mut c = ServiceConfig::from_toml("[artifacts]\nmodel = \"a.json\"\nqfunction = \"q.json\"").unwrap();
        c.apply_env(|k| env.get(k).map(|v| v.to_string())).unwrap();
        assert_eq!(c.artifacts.model, Some(PathBuf::from("/x/model.json")));
        assert_eq!(c.artifacts.qfunction, Some(PathBuf::from("q.json")));
        assert_eq!(c.artifacts.log_dir, PathBuf::from("/x/logs"));
        assert_eq!(c.session.seed, 42);
        let err = c.apply_env(|k| (k == ENV_SEED).then(|| "nope".to_string()));
        assert!(matches!(err, Err(ConfigError::Env { var: ENV_SEED, .. })));
    }
}
