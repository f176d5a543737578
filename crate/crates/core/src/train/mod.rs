//! Joint training: per-sentence losses averaged over batches, AdamW, interval
//! evaluation with best-checkpoint selection and early stopping.

mod loss;
mod optim;

use std::fmt::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use loss::{edge_loss, relation_loss, sample_loss, tag_loss, tape_loss, total_loss, LossParts, LossWeights};
pub use optim::{cosine_warmup_lr, grad_clip, AdamW, AdamWConfig};

use crate::analysis::{mean_and_variance, RankTrace, VarianceEntry, VarianceTrace};
use crate::data::{make_batches, EncodedSample};
use crate::decode::{decode, DecodeOptions, DecodedGraph};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricsReport};
use crate::model::Model;
use crate::numerics::{Gradients, ParameterStore, SeededRng, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    pub total_steps: usize,
    pub eval_interval: usize,
    /// Stop after this fraction of `total_steps` without a dev improvement.
    pub early_stop_fraction: f64,
    pub warmup_fraction: Option<f64>,
    pub clip_norm: Option<f64>,
    pub batch_size: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            total_steps: 2000,
            eval_interval: 100,
            early_stop_fraction: 0.3,
            warmup_fraction: None,
            clip_norm: None,
            batch_size: 8,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 || self.eval_interval == 0 || self.batch_size == 0 {
            return Err(Error::Config("steps, eval interval and batch size must be positive".into()));
        }
        if self.total_steps % self.eval_interval != 0 {
            return Err(Error::Config(format!(
                "eval interval {} does not divide total steps {}",
                self.eval_interval, self.total_steps
            )));
        }
        let frac_ok = |f: f64| f > 0.0 && f <= 1.0;
        if !frac_ok(self.early_stop_fraction) || self.warmup_fraction.is_some_and(|f| !frac_ok(f)) {
            return Err(Error::Config("fractions must lie in (0, 1]".into()));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::Config("clip norm must be positive".into()));
        }
        Ok(())
    }

    /// Early-stopping patience in evaluation intervals, rounded up.
    pub fn patience(&self) -> usize {
        let steps = self.early_stop_fraction * self.total_steps as f64;
        ((steps / self.eval_interval as f64).ceil() as usize).max(1)
    }

    pub fn lr_at(&self, step: usize, lr: f64) -> f64 {
        match self.warmup_fraction {
            Some(f) => cosine_warmup_lr(step, self.total_steps, f, lr),
            None => lr,
        }
    }
}

/// Dev metric that picks the best checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    Las,
    F1Labeled,
}

impl Selection {
    pub fn pick(self, m: &MetricsReport) -> f64 {
        match self {
            Selection::Las => m.las,
            Selection::F1Labeled => m.f1_labeled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub schedule: TrainSchedule,
    pub weights: LossWeights,
    pub optimizer: AdamWConfig,
    pub decode: DecodeOptions,
    pub selection: Selection,
    /// Decode and score the whole training set at every evaluation.
    pub eval_train: bool,
    /// Relation id meaning "no edge", excluded from edge F1.
    pub none_relation: Option<usize>,
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.weights.validate()?;
        self.optimizer.validate()
    }
}

/// Loss and metrics of one split at one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub split: String,
    pub loss: LossParts,
    pub loss_total: f64,
    pub metrics: Option<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    /// Passes over the training set so far.
    pub epoch: f64,
    pub lr: f64,
    pub splits: Vec<SplitRecord>,
}

impl EvalRecord {
    pub fn split(&self, name: &str) -> Option<&SplitRecord> {
        self.splits.iter().find(|s| s.split == name)
    }
}

pub const HISTORY_HEADER: &str =
    "step,split,loss_total,loss_tag,loss_edge,loss_rel,uas,las,f1_labeled,f1_unlabeled,f1_tags,lr";

/// One row per split per evaluation. Metrics that were not computed are
/// left empty.
pub fn history_csv(history: &[EvalRecord]) -> String {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for rec in history {
        for s in &rec.splits {
            let metrics = match &s.metrics {
                Some(m) => format!("{},{},{},{},{}", m.uas, m.las, m.f1_labeled, m.f1_unlabeled, m.f1_tags),
                None => ",,,,".to_string(),
            };
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                rec.step, s.split, s.loss_total, s.loss.tag, s.loss.edge, s.loss.rel, metrics, rec.lr
            )
            .expect("write to String");
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EvalRecord>,
    pub best_step: usize,
    pub best_score: f64,
    pub best_params: ParameterStore,
    pub steps_run: usize,
    pub stopped_early: bool,
    pub ranks: RankTrace,
    pub variance: VarianceTrace,
}

impl TrainOutcome {
    pub fn best_record(&self) -> Option<&EvalRecord> {
        self.history.iter().find(|r| r.step == self.best_step)
    }
}

/// Everything an evaluation produced, handed to the caller's observer.
pub struct EvalEvent<'a> {
    pub step: usize,
    pub model: &'a Model,
    pub record: &'a EvalRecord,
    pub improved: bool,
}

/// Scores, decodes and evaluates `samples`, returning the decoded graphs,
/// the metrics, mean per-sentence losses and the pooled edge scores.
pub fn evaluate_split(
    model: &Model,
    samples: &[EncodedSample],
    opts: &DecodeOptions,
    weights: LossWeights,
    none_relation: Option<usize>,
) -> Result<SplitEvaluation> {
    if samples.is_empty() {
        return Err(Error::Empty("cannot evaluate an empty split".into()));
    }
    let per: Vec<Result<(DecodedGraph, LossParts, Vec<f64>)>> = samples
        .par_iter()
        .map(|s| {
            let scores = model.score(&s.words, &s.tags);
            let loss = sample_loss(scores.tag_logits.as_ref(), &scores.s_edge, &scores.s_rel, s)?;
            let n1 = s.len() + 1;
            let edges = scores.s_edge.data()[n1..].to_vec();
            Ok((decode(&scores, opts), loss, edges))
        })
        .collect();
    let mut graphs = Vec::with_capacity(samples.len());
    let mut loss = LossParts::default();
    let mut edge_scores = Vec::new();
    for r in per {
        let (g, l, e) = r?;
        graphs.push(g);
        loss.add(l);
        edge_scores.extend(e);
    }
    let loss = loss.scaled(1.0 / samples.len() as f64);
    let metrics = evaluate(samples, &graphs, none_relation)?;
    Ok(SplitEvaluation {
        graphs,
        metrics,
        loss_total: total_loss(loss, weights),
        loss,
        edge_scores,
    })
}

#[derive(Debug, Clone)]
pub struct SplitEvaluation {
    pub graphs: Vec<DecodedGraph>,
    pub metrics: MetricsReport,
    pub loss: LossParts,
    pub loss_total: f64,
    /// Every word-row edge score, sentence by sentence.
    pub edge_scores: Vec<f64>,
}

/// Accumulates the batch-mean gradient of the weighted loss into the
/// model's gradient slots (cleared first) and returns the mean loss parts.
pub fn accumulate_batch_gradient(model: &mut Model, batch: &[&EncodedSample], weights: LossWeights) -> LossParts {
    let per: Vec<(Gradients, LossParts)> = {
        let m: &Model = model;
        batch
            .par_iter()
            .map(|s| {
                let mut tape = Tape::new(m.params());
                let f = m.forward(&mut tape, &s.words, &s.tags);
                let (root, parts) = tape_loss(&mut tape, &f, s, weights);
                (tape.backward(root), parts)
            })
            .collect()
    };
    let k = 1.0 / batch.len() as f64;
    let store = model.params_mut();
    store.zero_grads();
    let mut parts = LossParts::default();
    for (g, p) in &per {
        store.accumulate(g, k);
        parts.add(*p);
    }
    parts.scaled(k)
}

pub fn train_loop(
    model: &mut Model,
    train: &[EncodedSample],
    dev: &[EncodedSample],
    test: Option<&[EncodedSample]>,
    opts: &TrainOptions,
    rng: &mut SeededRng,
) -> Result<TrainOutcome> {
    train_loop_with(model, train, dev, test, opts, rng, &mut |_| Ok(()))
}

/// [`train_loop`] with a callback after every evaluation (used to write
/// checkpoints).
pub fn train_loop_with(
    model: &mut Model,
    train: &[EncodedSample],
    dev: &[EncodedSample],
    test: Option<&[EncodedSample]>,
    opts: &TrainOptions,
    rng: &mut SeededRng,
    observer: &mut dyn FnMut(&EvalEvent<'_>) -> Result<()>,
) -> Result<TrainOutcome> {
    opts.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set is empty".into()));
    }
    if dev.is_empty() {
        return Err(Error::Empty("dev set is empty".into()));
    }
    let sched = opts.schedule;
    let mut optimizer = AdamW::new(opts.optimizer, model.params());
    let mut ranks = RankTrace::new(model.config().layers, model.config().hidden);
    if model.config().layers > 0 {
        ranks.record(model, 0)?;
    }
    let mut variance = VarianceTrace::default();
    let mut history = Vec::new();
    let mut best_score = f64::NEG_INFINITY;
    let mut best_step = 0;
    let mut best_params = model.params().clone();
    let mut since_best = 0;
    let patience = sched.patience();
    let mut stopped_early = false;

    let mut epoch = 0u64;
    let mut batches = make_batches(train, sched.batch_size, &mut rng.fork(epoch));
    let mut cursor = 0;
    let mut running = LossParts::default();
    let mut running_steps = 0usize;
    let mut sentences_seen = 0usize;
    let mut steps_run = 0;

    for step in 1..=sched.total_steps {
        if cursor == batches.len() {
            epoch += 1;
            batches = make_batches(train, sched.batch_size, &mut rng.fork(epoch));
            cursor = 0;
        }
        let ids = &batches[cursor].sample_ids;
        cursor += 1;
        let batch: Vec<&EncodedSample> = ids.iter().map(|&i| &train[i]).collect();
        sentences_seen += batch.len();

        let parts = accumulate_batch_gradient(model, &batch, opts.weights);
        let total = total_loss(parts, opts.weights);
        if !total.is_finite() {
            return Err(Error::Divergence { step, loss: total });
        }
        let grad_norm = model.params().global_grad_norm();
        if !grad_norm.is_finite() {
            return Err(Error::Divergence { step, loss: grad_norm });
        }
        if let Some(c) = sched.clip_norm {
            grad_clip(model.params_mut(), c);
        }
        let lr = sched.lr_at(step, opts.optimizer.lr);
        optimizer.step(model.params_mut(), lr);
        running.add(parts);
        running_steps += 1;
        steps_run = step;

        if step % sched.eval_interval != 0 {
            continue;
        }

        let mut splits = Vec::new();
        let train_loss = running.scaled(1.0 / running_steps as f64);
        running = LossParts::default();
        running_steps = 0;
        let train_metrics = if opts.eval_train {
            Some(evaluate_split(model, train, &opts.decode, opts.weights, opts.none_relation)?.metrics)
        } else {
            None
        };
        splits.push(SplitRecord {
            split: "train".into(),
            loss_total: total_loss(train_loss, opts.weights),
            loss: train_loss,
            metrics: train_metrics,
        });
        let dev_eval = evaluate_split(model, dev, &opts.decode, opts.weights, opts.none_relation)?;
        if !dev_eval.loss_total.is_finite() {
            return Err(Error::Divergence {
                step,
                loss: dev_eval.loss_total,
            });
        }
        let (score_mean, score_variance) = mean_and_variance(&dev_eval.edge_scores)?;
        variance.entries.push(VarianceEntry {
            step,
            scaling: model.config().scaling.label().to_string(),
            score_mean,
            score_variance,
        });
        let dev_score = opts.selection.pick(&dev_eval.metrics);
        splits.push(SplitRecord {
            split: "dev".into(),
            loss: dev_eval.loss,
            loss_total: dev_eval.loss_total,
            metrics: Some(dev_eval.metrics),
        });
        if let Some(test) = test {
            let t = evaluate_split(model, test, &opts.decode, opts.weights, opts.none_relation)?;
            splits.push(SplitRecord {
                split: "test".into(),
                loss: t.loss,
                loss_total: t.loss_total,
                metrics: Some(t.metrics),
            });
        }
        if model.config().layers > 0 {
            ranks.record(model, step)?;
        }

        let improved = dev_score > best_score;
        if improved {
            best_score = dev_score;
            best_step = step;
            best_params = model.params().clone();
            since_best = 0;
        } else {
            since_best += 1;
        }
        history.push(EvalRecord {
            step,
            epoch: sentences_seen as f64 / train.len() as f64,
            lr,
            splits,
        });
        observer(&EvalEvent {
            step,
            model,
            record: history.last().expect("just pushed"),
            improved,
        })?;
        if since_best >= patience && step < sched.total_steps {
            stopped_early = true;
            break;
        }
    }

    Ok(TrainOutcome {
        history,
        best_step,
        best_score,
        best_params,
        steps_run,
        stopped_early,
        ranks,
        variance,
    })
}
