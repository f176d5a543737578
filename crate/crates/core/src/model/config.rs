use serde::{Deserialize, Serialize};

use crate::data::FeatureMode;
use crate::error::{Error, Result};
use crate::numerics::InitMode;

/// Factor applied to every biaffine score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// `a = 1`.
    #[default]
    Unit,
    /// `a = 1/sqrt(d)` with `d` the biaffine input width.
    InvSqrtD,
}

impl Scaling {
    pub fn factor(self, d: usize) -> f64 {
        match self {
            Scaling::Unit => 1.0,
            Scaling::InvSqrtD => 1.0 / (d as f64).sqrt(),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Scaling::Unit => "unit",
            Scaling::InvSqrtD => "inv_sqrt_d",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Width of the word features.
    pub feature_dim: usize,
    pub feature_mode: FeatureMode,
    /// Run a BiLSTM before the tag classifier.
    pub tagger: bool,
    pub tagger_hidden: usize,
    /// Feed embedded tag predictions to the parser.
    pub tag_embed: bool,
    pub tag_dim: usize,
    /// Parser BiLSTM layers; 0 lets the heads read the features directly.
    pub layers: usize,
    pub hidden: usize,
    pub layer_norm: bool,
    /// Output width of the edge heads.
    pub mlp_dim: usize,
    /// Output width of the relation heads.
    pub rel_dim: usize,
    pub init: InitMode,
    pub scaling: Scaling,
    /// Biaffine + GAT refinement pairs before the final scorer.
    pub gat_pairs: usize,
    /// Use gold tags instead of the tagger's predictions.
    pub oracle_tags: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_dim: 100,
            feature_mode: FeatureMode::Trainable,
            tagger: true,
            tagger_hidden: 100,
            tag_embed: true,
            tag_dim: 50,
            layers: 0,
            hidden: 200,
            layer_norm: false,
            mlp_dim: 300,
            rel_dim: 100,
            init: InitMode::Uniform,
            scaling: Scaling::InvSqrtD,
            gat_pairs: 0,
            oracle_tags: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("feature_dim", self.feature_dim),
            ("tagger_hidden", self.tagger_hidden),
            ("tag_dim", self.tag_dim),
            ("hidden", self.hidden),
            ("mlp_dim", self.mlp_dim),
            ("rel_dim", self.rel_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be at least 1")));
            }
        }
        Ok(())
    }

    /// Width of the parser input: features, plus tag embeddings if enabled.
    pub fn parser_input_dim(&self) -> usize {
        self.feature_dim + if self.tag_embed { self.tag_dim } else { 0 }
    }

    /// Width of the representations the heads read.
    pub fn parser_output_dim(&self) -> usize {
        if self.layers > 0 {
            2 * self.hidden
        } else {
            self.parser_input_dim()
        }
    }

    pub fn edge_scale(&self) -> f64 {
        self.scaling.factor(self.mlp_dim)
    }

    pub fn rel_scale(&self) -> f64 {
        self.scaling.factor(self.rel_dim)
    }
}
