//! Loading data for a run configuration and training one seed.

use std::fs;

use serde::{Deserialize, Serialize};

use crate::config::{DataSource, RunConfig};
use crate::data::{parse_any, AnnotatedGraphSample, EncodedSample, FeatureMode, FrozenTable, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::MetricsReport;
use crate::model::{Model, Sizes};
use crate::numerics::{SeededRng, Tensor};
use crate::synth;
use crate::train::{train_loop_with, EvalEvent, TrainOutcome};

#[derive(Debug, Clone)]
pub struct Corpus {
    pub train: Vec<AnnotatedGraphSample>,
    pub dev: Vec<AnnotatedGraphSample>,
    pub test: Option<Vec<AnnotatedGraphSample>>,
}

fn read_samples(path: &std::path::Path) -> Result<Vec<AnnotatedGraphSample>> {
    let text = fs::read_to_string(path)?;
    let samples = parse_any(&text)?;
    if samples.is_empty() {
        return Err(Error::Empty(format!("{} holds no samples", path.display())));
    }
    Ok(samples)
}

pub fn load_corpus(cfg: &RunConfig) -> Result<Corpus> {
    match &cfg.data {
        DataSource::Files { train, dev, test } => Ok(Corpus {
            train: read_samples(train)?,
            dev: read_samples(dev)?,
            test: test.as_deref().map(read_samples).transpose()?,
        }),
        DataSource::Synthetic(s) => {
            let tb = synth::generate(s)?;
            Ok(Corpus {
                train: tb.train,
                dev: tb.dev,
                test: (!tb.test.is_empty()).then_some(tb.test),
            })
        }
    }
}

/// Vocabulary and index-encoded splits shared by every seed of a run.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub vocab: Vocabulary,
    pub train: Vec<EncodedSample>,
    pub dev: Vec<EncodedSample>,
    pub test: Option<Vec<EncodedSample>>,
    pub frozen: Option<Tensor>,
}

impl Prepared {
    pub fn sizes(&self) -> Sizes {
        Sizes {
            words: self.vocab.num_words(),
            tags: self.vocab.num_tags(),
            relations: self.vocab.num_relations(),
        }
    }
}

pub fn prepare(cfg: &RunConfig, corpus: &Corpus) -> Result<Prepared> {
    let vocab = Vocabulary::build(&corpus.train, cfg.min_word_count)?;
    let frozen = match (cfg.model.feature_mode, &cfg.features) {
        (FeatureMode::Frozen, Some(path)) => {
            let table = FrozenTable::parse(&fs::read_to_string(path)?)?;
            if table.dim() != cfg.model.feature_dim {
                return Err(Error::Config(format!(
                    "feature file has dimension {}, model.feature_dim is {}",
                    table.dim(),
                    cfg.model.feature_dim
                )));
            }
            Some(table.embedding_matrix(&vocab)?)
        }
        (FeatureMode::Frozen, None) => return Err(Error::Config("frozen features need a `features` file".into())),
        (FeatureMode::Trainable, _) => None,
    };
    Ok(Prepared {
        train: vocab.encode_all(&corpus.train)?,
        dev: vocab.encode_all(&corpus.dev)?,
        test: corpus.test.as_deref().map(|t| vocab.encode_all(t)).transpose()?,
        frozen,
        vocab,
    })
}

pub struct SeedRun {
    pub seed: u64,
    pub model: Model,
    pub outcome: TrainOutcome,
}

/// Freshly initialised model for `seed`, exactly as [`run_seed`] starts.
pub fn init_model(cfg: &RunConfig, prep: &Prepared, seed: u64) -> Result<Model> {
    Model::new(cfg.model.clone(), prep.sizes(), prep.frozen.clone(), &mut SeededRng::new(seed).fork(1))
}

/// Trains one seed. Initialisation and batch order draw from separate
/// streams of the seed.
pub fn run_seed(
    cfg: &RunConfig,
    prep: &Prepared,
    seed: u64,
    observer: &mut dyn FnMut(&EvalEvent<'_>) -> Result<()>,
) -> Result<SeedRun> {
    let mut model = init_model(cfg, prep, seed)?;
    let opts = cfg.train_options(prep.vocab.none_relation());
    let outcome = train_loop_with(
        &mut model,
        &prep.train,
        &prep.dev,
        prep.test.as_deref(),
        &opts,
        &mut SeededRng::new(seed).fork(2),
        observer,
    )?;
    Ok(SeedRun { seed, model, outcome })
}

/// JSON summary of one seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: serde_json::Value,
    pub seed: u64,
    pub best_step: usize,
    pub steps_run: usize,
    pub stopped_early: bool,
    pub metrics: SplitMetrics,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub dev: Option<MetricsReport>,
    pub test: Option<MetricsReport>,
}

impl RunSummary {
    pub fn new(cfg: &RunConfig, run: &SeedRun) -> Self {
        let best = run.outcome.best_record();
        let metrics = |split: &str| best.and_then(|r| r.split(split)).and_then(|s| s.metrics.clone());
        RunSummary {
            config: cfg.to_value(),
            seed: run.seed,
            best_step: run.outcome.best_step,
            steps_run: run.outcome.steps_run,
            stopped_early: run.outcome.stopped_early,
            metrics: SplitMetrics {
                dev: metrics("dev"),
                test: metrics("test"),
            },
        }
    }
}
