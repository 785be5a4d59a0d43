use std::path::Path;

use serde::{Deserialize, Serialize};
use trajkit::classify::ClassifyConfig;
use trajkit::synth::{Augmentations, SynthConfig};
use trajkit::tcr::TrackerConfig;
use trajkit::train::TrainConfig;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub iou_threshold: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { iou_threshold: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub n_pairs: usize,
    pub n_clip: usize,
    pub augment: Augmentations,
    pub optimizer: TrainConfig,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            n_pairs: 64,
            n_clip: 5,
            augment: Augmentations::default(),
            optimizer: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSettings {
    pub scenes: usize,
    /// MLP hidden width of generated weights; 0 means `4 * d`.
    pub hidden: usize,
    /// Base scene; scene `i` uses seed `seed + i`.
    pub scene: SynthConfig,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            scenes: 4,
            hidden: 0,
            scene: SynthConfig {
                embed_dim: 32,
                noise_sigma: 0.1,
                identity_spread: 2.0,
                label_flip_prob: 0.5,
                ..SynthConfig::default()
            },
        }
    }
}

/// Everything a run depends on besides its input files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides the seeds of `synth` and `train.optimizer`.
    pub seed: u64,
    /// Worker threads; 0 lets the pool decide.
    pub threads: usize,
    /// Multiplier applied to raw detector confidences.
    pub score_scale: f64,
    pub tracker: TrackerConfig,
    pub classify: ClassifyConfig,
    pub eval: EvalSettings,
    pub synth: SynthConfig,
    pub train: TrainSettings,
    pub bench: BenchSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 0,
            score_scale: 1.0,
            tracker: TrackerConfig::default(),
            classify: ClassifyConfig::default(),
            eval: EvalSettings::default(),
            synth: SynthConfig::default(),
            train: TrainSettings::default(),
            bench: BenchSettings::default(),
        }
    }
}

impl RunConfig {
    /// Reads a config file. An echoed manifest is accepted too, in which
    /// case its `config` member is used.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::new("Io", format!("{}: {e}", path.display())))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CliError::new("Config", format!("{}: {e}", path.display())))?;
        let value = match value {
            serde_json::Value::Object(mut map) if map.contains_key("subcommand") && map.contains_key("config") => {
                map.remove("config").expect("checked")
            }
            other => other,
        };
        serde_json::from_value(value).map_err(|e| CliError::new("Config", format!("{}: {e}", path.display())))
    }

    pub fn propagate_seed(&mut self) {
        self.synth.seed = self.seed;
        self.bench.scene.seed = self.seed;
        self.train.optimizer.seed = self.seed;
    }
}
