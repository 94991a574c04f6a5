//! Run configuration as a TOML document.
//!
//! Every section and key is optional; missing keys take their defaults and
//! unknown keys are rejected.
//!
//! ```toml
//! [data]
//! task = "auto"            # auto | classification | regression
//!
//! [encoder]
//! hidden = 64
//! layers = 3
//! pretrain_epochs = 100
//! pretrain_batch_size = 32
//! pretrain_lr = 1e-3
//! pretrain_temperature = 0.5
//! drop_ratio = 0.2
//! seed = 0
//!
//! [knowledge]
//! channels = ["bond_type", "geometry"]   # also "atom_energy"
//! n_rbf = 16
//! cutoff = 8.0
//!
//! [align]
//! temperature = 0.1
//! symmetric = false
//!
//! [adapt]
//! cond_hidden = 32
//! token_activation = "sigmoid2"
//!
//! [train]
//! lr = 1e-3
//! epochs = 100
//! batch_size = 32
//! seed = 0
//!
//! [gradnorm]
//! alpha = 1.5
//! lr = 0.025
//!
//! [eval]
//! m = 5
//! n_tasks = 100
//! seeds = [0, 1, 2, 3, 4]
//! n_train = 100
//! n_val = 100
//! variants = ["variant1", "variant2", "variant3", "variant4", "variant5", "full"]
//! execution = "parallel"   # parallel | sequential
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapt::AdaptConfig;
use crate::align::AlignConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::knowledge::KnowledgeConfig;
use crate::mol::{Dataset, TaskKind};
use crate::trainer::{AdaptSpec, GradNormConfig, TrainConfig, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskSelect {
    /// Inferred from the labels of the data file.
    #[default]
    Auto,
    Classification,
    Regression,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub task: TaskSelect,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub encoder: EncoderConfig,
    pub knowledge: KnowledgeConfig,
    pub align: AlignConfig,
    pub adapt: AdaptConfig,
    pub train: TrainConfig,
    pub gradnorm: GradNormConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// The fully resolved document, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.adapt_spec(Variant::FULL).validate()?;
        self.eval.validate()?;
        if self.encoder.hidden == 0 || self.encoder.layers == 0 {
            return Err(Error::Config("encoder.hidden and encoder.layers must be positive".into()));
        }
        Ok(())
    }

    /// Replace every seed with `seed`.
    pub fn override_seed(&mut self, seed: u64) {
        self.encoder.seed = seed;
        self.train.seed = seed;
    }

    pub fn adapt_spec(&self, variant: Variant) -> AdaptSpec {
        AdaptSpec {
            knowledge: self.knowledge.clone(),
            align: self.align.clone(),
            adapt: self.adapt.clone(),
            train: self.train.clone(),
            gradnorm: self.gradnorm.clone(),
            variant,
        }
    }

    /// Check the data file against `data.task`.
    pub fn check_task(&self, dataset: &Dataset) -> Result<TaskKind> {
        let want = match self.data.task {
            TaskSelect::Auto => return Ok(dataset.task_kind),
            TaskSelect::Classification => TaskKind::Classification,
            TaskSelect::Regression => TaskKind::Regression,
        };
        if dataset.graphs.iter().any(|g| g.label.is_some()) && dataset.task_kind != want {
            return Err(Error::Config(format!(
                "data.task is {want:?} but the data file holds {:?} labels",
                dataset.task_kind
            )));
        }
        Ok(want)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge::ChannelKind;

    #[test]
    fn empty_document_is_default() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn partial_sections_and_round_trip() {
        let cfg = RunConfig::from_toml("[train]\nepochs = 7\n[knowledge]\nchannels = [\"atom_energy\"]\n").unwrap();
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.train.lr, 1e-3);
        assert_eq!(cfg.knowledge.channels, vec![ChannelKind::AtomEnergy]);
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("[train]\nepoch = 7\n").is_err());
        assert!(RunConfig::from_toml("[trainer]\n").is_err());
        assert!(RunConfig::from_toml("[knowledge]\nchannels = [\"charge\"]\n").is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_toml("[align]\ntemperature = 0.0\n").is_err());
        assert!(RunConfig::from_toml("[knowledge]\nchannels = []\n").is_err());
        assert!(RunConfig::from_toml("[eval]\nvariants = [\"variant7\"]\n").is_err());
    }
}
