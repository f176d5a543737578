use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, Sizes};
use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::numerics::params::StoredParam;
use crate::numerics::ParameterStore;

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT: &str = "biaffine-lab-checkpoint";

/// Self-describing JSON container: run configuration echo, model
/// configuration, vocabulary and every named tensor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub step: usize,
    pub run_config: serde_json::Value,
    pub model: ModelConfig,
    pub vocab: Vocabulary,
    pub params: Vec<StoredParam>,
}

impl Checkpoint {
    pub fn new(model: &Model, vocab: &Vocabulary, run_config: serde_json::Value, step: usize) -> Self {
        Checkpoint {
            format: FORMAT.into(),
            version: CHECKPOINT_VERSION,
            step,
            run_config,
            model: model.config().clone(),
            vocab: vocab.clone(),
            params: model.params().to_stored(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)?;
        if c.format != FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported checkpoint {} v{} (expected {FORMAT} v{CHECKPOINT_VERSION})",
                c.format, c.version
            )));
        }
        Ok(c)
    }

    pub fn sizes(&self) -> Sizes {
        Sizes {
            words: self.vocab.num_words(),
            tags: self.vocab.num_tags(),
            relations: self.vocab.num_relations(),
        }
    }

    pub fn to_model(&self) -> Result<Model> {
        let store = ParameterStore::from_stored(self.params.clone())?;
        Model::from_params(self.model.clone(), self.sizes(), store)
    }
}
