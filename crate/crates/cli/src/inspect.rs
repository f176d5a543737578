//! `eval`, `verify` and `analyze`: commands that read existing artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use biaffine_lab::analysis::{mean_and_variance, RankTrace, VarianceEntry, VarianceTrace};
use biaffine_lab::config::RunConfig;
use biaffine_lab::data::{parse_any, write_conllu, write_semgraph_json, AnnotatedGraphSample, Edge, Vocabulary, NONE_RELATION};
use biaffine_lab::decode::{DecodeMode, DecodedGraph};
use biaffine_lab::experiment::{load_corpus, Corpus};
use biaffine_lab::model::Checkpoint;
use biaffine_lab::train::evaluate_split;
use biaffine_lab::verify::{run_suite, Suite};
use serde::Serialize;

fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Checkpoint::from_json(&text).with_context(|| format!("loading {}", path.display()))?)
}

fn run_config(c: &Checkpoint) -> Result<RunConfig> {
    serde_json::from_value(c.run_config.clone()).context("checkpoint carries an unreadable run configuration")
}

/// Turns a decoded graph back into words, tag names and labelled edges.
fn to_sample(words: &[String], g: &DecodedGraph, vocab: &Vocabulary) -> AnnotatedGraphSample {
    let edges = g
        .edges
        .iter()
        .filter(|e| vocab.relation(e.2) != NONE_RELATION)
        .map(|&(dep, head, rel)| Edge {
            head,
            dep,
            label: vocab.relation(rel).to_string(),
        })
        .collect();
    AnnotatedGraphSample {
        words: words.to_vec(),
        tags: g.tags.iter().map(|&t| vocab.tag(t).to_string()).collect(),
        edges,
    }
}

#[derive(Serialize)]
struct EvalReport {
    checkpoint: PathBuf,
    step: usize,
    data: PathBuf,
    decode: DecodeMode,
    valid_tree_rate: f64,
    metrics: biaffine_lab::eval::MetricsReport,
}

pub fn eval(checkpoint: &Path, data: &Path, mode: Option<DecodeMode>, out: Option<&Path>) -> Result<()> {
    let ckpt = read_checkpoint(checkpoint)?;
    let cfg = run_config(&ckpt)?;
    let model = ckpt.to_model()?;
    let text = fs::read_to_string(data).with_context(|| format!("reading {}", data.display()))?;
    let samples = parse_any(&text)?;
    if samples.is_empty() {
        bail!("{} holds no samples", data.display());
    }
    let encoded = ckpt
        .vocab
        .encode_all(&samples)
        .with_context(|| format!("{} does not fit the checkpoint vocabulary", data.display()))?;
    let mut opts = cfg.decode_options();
    if let Some(m) = mode {
        opts.mode = m;
    }
    let ev = evaluate_split(&model, &encoded, &opts, cfg.effective_weights(), ckpt.vocab.none_relation())?;
    let valid = ev.graphs.iter().filter(|g| g.validity.is_valid()).count();
    let report = EvalReport {
        checkpoint: checkpoint.to_path_buf(),
        step: ckpt.step,
        data: data.to_path_buf(),
        decode: opts.mode,
        valid_tree_rate: valid as f64 / ev.graphs.len() as f64,
        metrics: ev.metrics,
    };
    let json = serde_json::to_string_pretty(&report)?;
    println!("{json}");
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("metrics.json"), json + "\n")?;
        let pred: Vec<AnnotatedGraphSample> = samples
            .iter()
            .zip(&ev.graphs)
            .map(|(s, g)| to_sample(&s.words, g, &ckpt.vocab))
            .collect();
        // predictions go out in the format they came in
        if text.trim_start().starts_with('[') {
            fs::write(dir.join("predictions.json"), write_semgraph_json(&pred)?)?;
        } else {
            fs::write(dir.join("predictions.conllu"), write_conllu(&pred))?;
        }
    }
    Ok(())
}

pub fn verify(suite: Suite) -> Result<bool> {
    let checks = run_suite(suite)?;
    let mut ok = true;
    for c in &checks {
        println!(
            "{} {}/{}: observed {} (tolerance {})",
            if c.passed { "PASS" } else { "FAIL" },
            c.suite,
            c.name,
            c.observed,
            c.tolerance
        );
        ok &= c.passed;
    }
    println!("{} of {} checks passed", checks.iter().filter(|c| c.passed).count(), checks.len());
    Ok(ok)
}

/// Checkpoint files (`step-*.json`) in `dir`, ordered by step.
fn checkpoints_in(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("step-") && n.ends_with(".json"))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Directories holding a `checkpoints/` folder: the run itself or its seeds.
fn checkpoint_dirs(run: &Path) -> Result<Vec<PathBuf>> {
    if !run.is_dir() {
        bail!("{} is not a directory", run.display());
    }
    let mut dirs = Vec::new();
    if run.join("checkpoints").is_dir() {
        dirs.push(run.to_path_buf());
    }
    let mut seeds: Vec<PathBuf> = fs::read_dir(run)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("checkpoints").is_dir())
        .filter(|p| p != run)
        .collect();
    seeds.sort();
    dirs.extend(seeds);
    Ok(dirs)
}

/// Recomputes rank and dev score-variance traces from saved checkpoints.
pub fn analyze(run: &Path) -> Result<()> {
    let dirs = checkpoint_dirs(run)?;
    let mut found = 0;
    let mut corpus: Option<(serde_json::Value, Corpus)> = None;
    for dir in dirs {
        let files = checkpoints_in(&dir.join("checkpoints"))?;
        if files.is_empty() {
            continue;
        }
        found += files.len();
        let mut ranks: Option<RankTrace> = None;
        let mut variance = VarianceTrace::default();
        for f in &files {
            let ckpt = read_checkpoint(f)?;
            let cfg = run_config(&ckpt)?;
            let data = serde_json::to_value(&cfg.data)?;
            if corpus.as_ref().is_none_or(|(d, _)| *d != data) {
                corpus = Some((data, load_corpus(&cfg)?));
            }
            let (_, c) = corpus.as_ref().expect("loaded above");
            let model = ckpt.to_model()?;
            let trace = ranks.get_or_insert_with(|| RankTrace::new(model.config().layers, model.config().hidden));
            if model.config().layers > 0 {
                trace.record(&model, ckpt.step)?;
            }
            let dev = ckpt.vocab.encode_all(&c.dev)?;
            let ev = evaluate_split(&model, &dev, &cfg.decode_options(), cfg.effective_weights(), ckpt.vocab.none_relation())?;
            let (score_mean, score_variance) = mean_and_variance(&ev.edge_scores)?;
            variance.entries.push(VarianceEntry {
                step: ckpt.step,
                scaling: model.config().scaling.label().to_string(),
                score_mean,
                score_variance,
            });
        }
        let ranks = ranks.expect("at least one checkpoint");
        fs::write(dir.join("ranks.csv"), ranks.to_csv())?;
        fs::write(dir.join("variance.csv"), variance.to_csv())?;
        println!("{}: {} checkpoints analysed", dir.display(), files.len());
    }
    if found == 0 {
        bail!("no checkpoints under {}; train with save_checkpoints = true", run.display());
    }
    Ok(())
}
