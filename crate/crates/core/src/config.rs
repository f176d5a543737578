//! Run configuration: one JSON document naming the task, data, model,
//! schedule, optimizer, decoding and seeds.

use std::collections::HashSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::FeatureMode;
use crate::decode::{DecodeMode, DecodeOptions, DEFAULT_SIGMOID_THRESHOLD, DEFAULT_TAU};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::synth::SynthConfig;
use crate::train::{AdamWConfig, LossWeights, Selection, TrainOptions, TrainSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Semantic graphs over entity spans.
    #[default]
    Semdp,
    /// Word-level syntactic trees.
    Syndp,
    /// Labelled graphs from non-linguistic sources.
    Lgi,
}

impl Task {
    pub fn selection(self) -> Selection {
        match self {
            Task::Syndp => Selection::Las,
            Task::Semdp | Task::Lgi => Selection::F1Labeled,
        }
    }

    pub fn single_root(self) -> bool {
        self == Task::Syndp
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Files {
        train: PathBuf,
        dev: PathBuf,
        #[serde(default)]
        test: Option<PathBuf>,
    },
    Synthetic(SynthConfig),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SynthConfig::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub mode: DecodeMode,
    pub tau: f64,
    pub threshold: f64,
    /// Defaults to the task's convention (single root for syntax only).
    pub single_root: Option<bool>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            mode: DecodeMode::Mst,
            tau: DEFAULT_TAU,
            threshold: DEFAULT_SIGMOID_THRESHOLD,
            single_root: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub data: DataSource,
    /// Word vector file for frozen features.
    pub features: Option<PathBuf>,
    /// Training words seen fewer times map to the unknown word.
    pub min_word_count: usize,
    pub model: ModelConfig,
    pub schedule: TrainSchedule,
    pub loss: LossWeights,
    pub optimizer: AdamWConfig,
    pub decode: DecodeConfig,
    pub seeds: Vec<u64>,
    /// Score the training split at every evaluation.
    pub eval_train: bool,
    /// Report sample rather than population standard deviations.
    pub sample_std: bool,
    /// Write a checkpoint at every evaluation, not only the best one.
    pub save_checkpoints: bool,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: Task::default(),
            data: DataSource::default(),
            features: None,
            min_word_count: 2,
            model: ModelConfig::default(),
            schedule: TrainSchedule::default(),
            loss: LossWeights::default(),
            optimizer: AdamWConfig::default(),
            decode: DecodeConfig::default(),
            seeds: vec![1, 2, 3, 4, 5],
            eval_train: true,
            sample_std: false,
            save_checkpoints: false,
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid run config: {e}")))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("run config serializes")
    }

    /// Checks every section plus the paths it references.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.schedule.validate()?;
        self.loss.validate()?;
        self.optimizer.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let distinct: HashSet<u64> = self.seeds.iter().copied().collect();
        if distinct.len() != self.seeds.len() {
            return Err(Error::Config(format!("seeds must be distinct: {:?}", self.seeds)));
        }
        if !(self.decode.tau > 0.0) || !(0.0..1.0).contains(&self.decode.threshold) {
            return Err(Error::Config("decode.tau must be > 0 and decode.threshold in [0, 1)".into()));
        }
        if let DataSource::Files { train, dev, test } = &self.data {
            for p in [Some(train), Some(dev), test.as_ref()].into_iter().flatten() {
                if !p.is_file() {
                    return Err(Error::Config(format!("data file {} does not exist", p.display())));
                }
            }
        }
        match (self.model.feature_mode, &self.features) {
            (FeatureMode::Frozen, None) => {
                return Err(Error::Config("frozen features need a `features` file".into()));
            }
            (FeatureMode::Frozen, Some(p)) if !p.is_file() => {
                return Err(Error::Config(format!("feature file {} does not exist", p.display())));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn decode_options(&self) -> DecodeOptions {
        DecodeOptions {
            mode: self.decode.mode,
            tau: self.decode.tau,
            single_root: self.decode.single_root.unwrap_or(self.task.single_root()),
            threshold: self.decode.threshold,
        }
    }

    /// Loss weights in effect: oracle tags switch the tag term off.
    pub fn effective_weights(&self) -> LossWeights {
        if self.model.oracle_tags {
            LossWeights {
                lambda1: 0.0,
                ..self.loss
            }
        } else {
            self.loss
        }
    }

    pub fn train_options(&self, none_relation: Option<usize>) -> TrainOptions {
        TrainOptions {
            schedule: self.schedule,
            weights: self.effective_weights(),
            optimizer: self.optimizer,
            decode: self.decode_options(),
            selection: self.task.selection(),
            eval_train: self.eval_train,
            none_relation,
        }
    }

    /// Applies `key=value` overrides (dotted paths, values parsed as JSON
    /// and falling back to plain strings) and re-reads the result.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self> {
        let mut v = self.to_value();
        for (k, raw) in overrides {
            set_path(&mut v, k, raw)?;
        }
        serde_json::from_value(v).map_err(|e| Error::Config(format!("invalid override: {e}")))
    }
}

/// Sets `key` (dotted) inside `root`, creating objects along the way.
pub fn set_path(root: &mut Value, key: &str, raw: &str) -> Result<()> {
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if cur.is_null() {
            *cur = Value::Object(Default::default());
        }
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("{key}: {part} is not inside an object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("loop returns on the last part")
}

/// Parses `K=V`.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.to_string())),
        _ => Err(Error::Config(format!("override {s:?} is not KEY=VALUE"))),
    }
}
