//! TOML experiment configuration.
//!
//! ```toml
//! [protocol]
//! clients = 100
//! gamma = 0.1
//! rounds = 50
//! clip = 0.2
//! k = 64
//! noise_multiplier = 1.24
//! delta = 1e-5
//! seed = 7
//!
//! [task]
//! kind = "logistic-regression"
//!
//! [local]
//! epochs = 1
//! batch_size = 10
//! lr = 1.0
//! ```
//!
//! Unknown keys are rejected. See the README for every key and its default.

use std::path::Path;

use dgfed_core::fed_sim::{
    AggregationPath, LocalTrainerSpec, NoiseLevel, Partition, RoundConfig, TaskKind, TaskSpec,
    DEFAULT_ROTATION_DELTA,
};
use dgfed_core::metrics::TailReading;
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub protocol: ProtocolSection,
    #[serde(default)]
    pub task: TaskSection,
    #[serde(default)]
    pub local: LocalSection,
    #[serde(default)]
    pub mse_bench: Option<MseBenchSection>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    pub clients: usize,
    pub gamma: f64,
    pub rounds: u64,
    #[serde(default = "default_clip")]
    pub clip: f64,
    #[serde(default = "default_k")]
    pub k: u32,
    pub q: Option<u64>,
    /// Noise standard deviation in update units.
    pub sigma: Option<f64>,
    /// Noise standard deviation as a multiple of the sensitivity.
    pub noise_multiplier: Option<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub g_max: Option<f64>,
    #[serde(default = "default_rotation_delta")]
    pub rotation_delta: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub path: PathChoice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathChoice {
    #[default]
    Masked,
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskChoice {
    LinearRegression,
    LogisticRegression,
    TinyMlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionChoice {
    #[default]
    Iid,
    LabelSorted,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    pub kind: TaskChoice,
    #[serde(default = "default_samples")]
    pub samples_per_client: usize,
    #[serde(default = "default_test_samples")]
    pub test_samples: usize,
    #[serde(default = "default_features")]
    pub features: usize,
    #[serde(default)]
    pub partition: PartitionChoice,
    #[serde(default = "default_separation")]
    pub separation: f64,
}

impl Default for TaskSection {
    fn default() -> Self {
        Self {
            kind: TaskChoice::LogisticRegression,
            samples_per_client: default_samples(),
            test_samples: default_test_samples(),
            features: default_features(),
            partition: PartitionChoice::Iid,
            separation: default_separation(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalSection {
    #[serde(default = "default_epochs")]
    pub epochs: u32,
    /// `0` for full batch.
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
}

impl Default for LocalSection {
    fn default() -> Self {
        let d = LocalTrainerSpec::default();
        Self {
            epochs: d.epochs,
            batch_size: d.batch_size,
            lr: d.lr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailChoice {
    Literal,
    NoiseScaled,
    #[default]
    Conservative,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MseBenchSection {
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub tail_reading: TailChoice,
    #[serde(default)]
    pub point: Vec<MsePoint>,
}

/// One cell of the MSE sweep. `sigma` is in lattice units.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MsePoint {
    pub participants: u32,
    pub dim: usize,
    pub k: u32,
    pub q: u64,
    pub sigma: f64,
    pub gamma: f64,
    pub g_max: f64,
    #[serde(default = "default_clip_unit")]
    pub clip: f64,
}

fn default_clip() -> f64 {
    1.0
}
fn default_clip_unit() -> f64 {
    1.0
}
fn default_k() -> u32 {
    16
}
fn default_delta() -> f64 {
    1e-5
}
fn default_rotation_delta() -> f64 {
    DEFAULT_ROTATION_DELTA
}
fn default_samples() -> usize {
    50
}
fn default_test_samples() -> usize {
    2000
}
fn default_features() -> usize {
    19
}
fn default_separation() -> f64 {
    3.0
}
fn default_epochs() -> u32 {
    1
}
fn default_batch() -> usize {
    10
}
fn default_lr() -> f64 {
    0.1
}
fn default_trials() -> usize {
    1000
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn round_config(&self) -> Result<RoundConfig, String> {
        let p = &self.protocol;
        let noise = match (p.sigma, p.noise_multiplier) {
            (Some(_), Some(_)) => return Err("set at most one of protocol.sigma and protocol.noise_multiplier".into()),
            (Some(s), None) => NoiseLevel::Sigma(s),
            (None, Some(z)) => NoiseLevel::Multiplier(z),
            (None, None) => NoiseLevel::Sigma(0.0),
        };
        Ok(RoundConfig {
            clients: p.clients,
            gamma: p.gamma,
            rounds: p.rounds,
            clip: p.clip,
            k: p.k,
            q: p.q,
            noise,
            delta: p.delta,
            g_max: p.g_max,
            rotation_delta: p.rotation_delta,
            seed: p.seed,
            local: LocalTrainerSpec {
                epochs: self.local.epochs,
                batch_size: self.local.batch_size,
                lr: self.local.lr,
            },
            path: match p.path {
                PathChoice::Masked => AggregationPath::Masked,
                PathChoice::Plain => AggregationPath::Plain,
            },
            allow_overflow_risk: false,
        })
    }

    pub fn task_spec(&self) -> TaskSpec {
        let t = &self.task;
        let kind = match t.kind {
            TaskChoice::LinearRegression => TaskKind::LinearRegression,
            TaskChoice::LogisticRegression => TaskKind::LogisticRegression,
            TaskChoice::TinyMlp => TaskKind::TinyMlp,
        };
        TaskSpec {
            kind,
            clients: self.protocol.clients,
            samples_per_client: t.samples_per_client,
            test_samples: t.test_samples,
            features: t.features,
            partition: match t.partition {
                PartitionChoice::Iid => Partition::Iid,
                PartitionChoice::LabelSorted => Partition::LabelSorted,
            },
            separation: t.separation,
        }
    }
}

impl TailChoice {
    pub fn reading(self) -> TailReading {
        match self {
            TailChoice::Literal => TailReading::Literal,
            TailChoice::NoiseScaled => TailReading::NoiseScaled,
            TailChoice::Conservative => TailReading::Conservative,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[protocol]\nclients = 10\ngamma = 0.5\nrounds = 3\n";

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        let rc = cfg.round_config().unwrap();
        assert_eq!(rc.k, 16);
        assert_eq!(rc.noise, NoiseLevel::Sigma(0.0));
        assert_eq!(cfg.task_spec().kind, TaskKind::LogisticRegression);
        assert!(cfg.mse_bench.is_none());
    }

    #[test]
    fn unknown_keys_and_conflicts_are_rejected() {
        assert!(ExperimentConfig::parse(&format!("{MINIMAL}colour = 1\n")).is_err());
        assert!(ExperimentConfig::parse("[protocol]\nclients = 10\n").is_err());
        let both = ExperimentConfig::parse(&format!("{MINIMAL}sigma = 1.0\nnoise_multiplier = 1.0\n")).unwrap();
        assert!(both.round_config().is_err());
    }

    #[test]
    fn full_config() {
        let text = r#"
[protocol]
clients = 20
gamma = 0.25
rounds = 2
clip = 0.5
k = 33
q = 1001
noise_multiplier = 0.7
seed = 9
path = "plain"

[task]
kind = "tiny-mlp"
partition = "label-sorted"

[local]
epochs = 2
batch_size = 0
lr = 0.5

[mse_bench]
trials = 10
tail_reading = "noise-scaled"

[[mse_bench.point]]
participants = 4
dim = 8
k = 5
q = 101
sigma = 1.0
gamma = 0.5
g_max = 0.5
"#;
        let cfg = ExperimentConfig::parse(text).unwrap();
        let rc = cfg.round_config().unwrap();
        assert_eq!(rc.path, AggregationPath::Plain);
        assert_eq!(rc.noise, NoiseLevel::Multiplier(0.7));
        assert_eq!(rc.local.batch_size, 0);
        assert_eq!(cfg.task_spec().partition, Partition::LabelSorted);
        let bench = cfg.mse_bench.unwrap();
        assert_eq!(bench.point.len(), 1);
        assert_eq!(bench.tail_reading.reading(), TailReading::NoiseScaled);
    }
}
