//! Run configuration file.
//!
//! The file is TOML. Every table and key is optional; missing keys take the
//! library defaults and unknown keys are rejected.
//!
//! ```toml
//! [synth]        # SynthSpec
//! [estimate]     # EstimateConfig
//! [pretrain]     # TrainConfig, with [pretrain.loss] and [pretrain.encoder]
//! [finetune]     # FinetuneConfig
//! [evaluate]
//! tasks = ["bp", "cc", "rel", "hazard", "subtype"]
//! undersample_seeds = 10
//! [sweep]
//! learning_rates = [1e-4, 1e-3]
//! batch_sizes = [4]
//! taus = [0.25, 0.5, 0.75, 1.0]
//! task = "bp"
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use supgcl::downstream::{FinetuneConfig, Task};
use supgcl::estimate::EstimateConfig;
use supgcl::pretrain::TrainConfig;
use supgcl::synth::SynthSpec;

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthSpec,
    pub estimate: EstimateConfig,
    pub pretrain: TrainConfig,
    pub finetune: FinetuneConfig,
    pub evaluate: EvaluateConfig,
    pub sweep: SweepConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub tasks: Vec<Task>,
    /// Number of balanced holdout splits for the binary gene task.
    pub undersample_seeds: u64,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            tasks: vec![Task::Bp, Task::Cc, Task::Rel, Task::Hazard, Task::Subtype],
            undersample_seeds: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub learning_rates: Vec<f64>,
    pub batch_sizes: Vec<usize>,
    /// Used for both the node and the augmentation temperature.
    pub taus: Vec<f64>,
    /// Downstream task that ranks the grid points.
    pub task: Task,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            learning_rates: vec![1e-4, 2.37e-4, 1e-3],
            batch_sizes: vec![4],
            taus: vec![0.25, 0.5, 0.75, 1.0],
            task: Task::Bp,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| CliError::from_io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Applies `--seed` to every seeded section.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.synth.seed = s;
            self.estimate.seed = s;
            self.pretrain.seed = s;
            self.pretrain.encoder.seed = s;
            self.finetune.seed = s;
        }
        self
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.synth.validate()?;
        self.estimate.validate()?;
        self.pretrain.validate()?;
        self.finetune.validate()?;
        let s = &self.sweep;
        if s.learning_rates.is_empty() || s.batch_sizes.is_empty() || s.taus.is_empty() {
            return Err(CliError::Config("sweep grid axes must be non-empty".into()));
        }
        if self.evaluate.undersample_seeds == 0 {
            return Err(CliError::Config("undersample_seeds must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c: RunConfig = toml::from_str("").unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn nested_sections_parse() {
        let c: RunConfig = toml::from_str(
            "[pretrain]\nepochs = 3\n[pretrain.loss]\ntau_aug = 2.0\n[pretrain.encoder]\nlayers = 1\n\
             [evaluate]\ntasks = [\"bp\", \"hazard\"]\n",
        )
        .unwrap();
        assert_eq!(c.pretrain.epochs, 3);
        assert_eq!(c.pretrain.loss.tau_aug, 2.0);
        assert_eq!(c.pretrain.encoder.layers, 1);
        assert_eq!(c.evaluate.tasks, vec![Task::Bp, Task::Hazard]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[pretrain]\nepoch = 3\n").is_err());
    }

    #[test]
    fn seed_reaches_every_section() {
        let c = RunConfig::default().with_seed(Some(9));
        assert_eq!(
            (c.synth.seed, c.estimate.seed, c.pretrain.seed, c.pretrain.encoder.seed, c.finetune.seed),
            (9, 9, 9, 9, 9)
        );
    }
}
