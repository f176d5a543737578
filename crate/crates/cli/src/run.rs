//! `train`, `grid` and `synth`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use biaffine_lab::config::{set_path, RunConfig};
use biaffine_lab::data::write_conllu;
use biaffine_lab::eval::{aggregate_seeds, wilcoxon_one_tailed, MetricsReport};
use biaffine_lab::experiment::{init_model, load_corpus, prepare, run_seed, Prepared, RunSummary, SeedRun};
use biaffine_lab::model::Checkpoint;
use biaffine_lab::synth::{self, SynthConfig};
use biaffine_lab::train::{history_csv, EvalRecord, Selection};
use rayon::prelude::*;
use serde::Serialize;

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs"))
}

fn checkpoint_name(step: usize) -> String {
    format!("step-{step:06}.json")
}

/// Trains one seed into `dir`: history, summary, best checkpoint, traces and
/// (optionally) a checkpoint per evaluation.
fn train_seed(cfg: &RunConfig, prep: &Prepared, seed: u64, dir: &Path) -> Result<(SeedRun, RunSummary)> {
    let echo = cfg.to_value();
    let ckpt_dir = dir.join("checkpoints");
    if cfg.save_checkpoints {
        let initial = init_model(cfg, prep, seed)?;
        let c = Checkpoint::new(&initial, &prep.vocab, echo.clone(), 0);
        write(&ckpt_dir.join(checkpoint_name(0)), &c.to_json()?)?;
    }
    let mut observer = |ev: &biaffine_lab::train::EvalEvent<'_>| -> biaffine_lab::Result<()> {
        if cfg.save_checkpoints {
            let c = Checkpoint::new(ev.model, &prep.vocab, echo.clone(), ev.step);
            let path = ckpt_dir.join(checkpoint_name(ev.step));
            fs::create_dir_all(&ckpt_dir)?;
            fs::write(path, c.to_json()?)?;
        }
        Ok(())
    };
    let run = run_seed(cfg, prep, seed, &mut observer)?;
    write(&dir.join("history.csv"), &history_csv(&run.outcome.history))?;
    write_json(&dir.join("history.json"), &run.outcome.history)?;
    write(&dir.join("ranks.csv"), &run.outcome.ranks.to_csv())?;
    write(&dir.join("variance.csv"), &run.outcome.variance.to_csv())?;
    let mut best = run.model.clone();
    *best.params_mut() = run.outcome.best_params.clone();
    let c = Checkpoint::new(&best, &prep.vocab, echo, run.outcome.best_step);
    write(&dir.join("best.json"), &c.to_json()?)?;
    let summary = RunSummary::new(cfg, &run);
    write_json(&dir.join("summary.json"), &summary)?;
    Ok((run, summary))
}

/// Best-checkpoint metrics of the reporting split (test when present).
fn report_metrics(s: &RunSummary) -> Option<&MetricsReport> {
    s.metrics.test.as_ref().or(s.metrics.dev.as_ref())
}

const METRICS: [&str; 5] = ["uas", "las", "f1_labeled", "f1_unlabeled", "f1_tags"];

fn metric(m: &MetricsReport, name: &str) -> f64 {
    match name {
        "uas" => m.uas,
        "las" => m.las,
        "f1_labeled" => m.f1_labeled,
        "f1_unlabeled" => m.f1_unlabeled,
        "f1_tags" => m.f1_tags,
        _ => unreachable!("unknown metric {name}"),
    }
}

#[derive(Serialize)]
struct Aggregate {
    split: &'static str,
    seeds: Vec<u64>,
    metrics: BTreeMap<String, MeanStd>,
}

#[derive(Serialize)]
struct MeanStd {
    values: Vec<f64>,
    mean: f64,
    /// None with a single seed.
    std: Option<f64>,
}

fn aggregate(cfg: &RunConfig, summaries: &[RunSummary]) -> Result<Aggregate> {
    let split = if summaries.iter().all(|s| s.metrics.test.is_some()) { "test" } else { "dev" };
    let seeds: Vec<u64> = summaries.iter().map(|s| s.seed).collect();
    let mut metrics = BTreeMap::new();
    for name in METRICS {
        let values: Vec<f64> = summaries
            .iter()
            .filter_map(report_metrics)
            .map(|m| metric(m, name))
            .collect();
        if values.len() != summaries.len() {
            continue;
        }
        let entry = if values.len() >= 2 {
            let a = aggregate_seeds(&seeds, &values, cfg.sample_std)?;
            MeanStd {
                values,
                mean: a.mean,
                std: Some(a.std),
            }
        } else {
            MeanStd {
                mean: values[0],
                std: None,
                values,
            }
        };
        metrics.insert(name.to_string(), entry);
    }
    Ok(Aggregate { split, seeds, metrics })
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let out = out_dir(cfg);
    let corpus = load_corpus(cfg)?;
    let prep = prepare(cfg, &corpus)?;
    write(&out.join("config.json"), &cfg.to_json()?)?;
    let mut summaries = Vec::new();
    for &seed in &cfg.seeds {
        let dir = out.join(format!("seed-{seed}"));
        let (_, summary) = train_seed(cfg, &prep, seed, &dir)?;
        if let Some(m) = report_metrics(&summary) {
            println!(
                "seed {seed}: best step {} las {:.4} f1_labeled {:.4}",
                summary.best_step, m.las, m.f1_labeled
            );
        }
        summaries.push(summary);
    }
    write_json(&out.join("aggregate.json"), &aggregate(cfg, &summaries)?)?;
    println!("wrote {}", out.display());
    Ok(())
}

const ALIASES: [(&str, &str); 9] = [
    ("N", "model.layers"),
    ("h", "model.hidden"),
    ("d_mlp", "model.mlp_dim"),
    ("a", "model.scaling"),
    ("ln", "model.layer_norm"),
    ("init", "model.init"),
    ("gat", "model.gat_pairs"),
    ("phi", "model.tagger"),
    ("tag_embed", "model.tag_embed"),
];

fn resolve_key(key: &str) -> &str {
    ALIASES.iter().find(|(a, _)| *a == key).map(|(_, p)| *p).unwrap_or(key)
}

/// `a=1` and `a=inv_sqrt_d` style shorthands for the scaling values.
fn resolve_value(path: &str, v: &str) -> String {
    if path == "model.scaling" {
        match v {
            "1" => return "unit".into(),
            "1/sqrt(d)" | "rsqrt" => return "inv_sqrt_d".into(),
            _ => {}
        }
    }
    v.to_string()
}

#[derive(Debug, Clone)]
struct Sweep {
    path: String,
    values: Vec<String>,
}

fn parse_sweeps(raw: &[String]) -> Result<Vec<Sweep>> {
    let mut out: Vec<Sweep> = Vec::new();
    for s in raw {
        let Some((k, vs)) = s.split_once('=') else {
            bail!("sweep {s:?} is not KEY=V1,V2");
        };
        let path = resolve_key(k.trim()).to_string();
        if out.iter().any(|w| w.path == path) {
            bail!("{path} swept twice");
        }
        let values: Vec<String> = vs
            .split(',')
            .map(|v| resolve_value(&path, v.trim()))
            .filter(|v| !v.is_empty())
            .collect();
        if values.is_empty() {
            bail!("sweep {k} has no values");
        }
        out.push(Sweep { path, values });
    }
    Ok(out)
}

fn cartesian(sweeps: &[Sweep]) -> Vec<Vec<String>> {
    let mut combos = vec![Vec::new()];
    for s in sweeps {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                s.values.iter().map(move |v| {
                    let mut c = c.clone();
                    c.push(v.clone());
                    c
                })
            })
            .collect();
    }
    combos
}

struct GridPoint {
    id: usize,
    values: Vec<String>,
    cfg: RunConfig,
    dir: PathBuf,
}

/// What the grid tables need from one finished seed.
struct SeedResult {
    summary: RunSummary,
    /// Selection metric on the reporting split at every evaluation.
    scores: BTreeMap<usize, f64>,
}

struct GridRun {
    config_id: usize,
    values: Vec<String>,
    seed: u64,
    outcome: std::result::Result<SeedResult, String>,
}

fn load_seed(dir: &Path, las: bool) -> Result<SeedResult> {
    let read = |name: &str| -> Result<String> {
        let p = dir.join(name);
        fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))
    };
    let summary: RunSummary = serde_json::from_str(&read("summary.json")?)?;
    let history: Vec<EvalRecord> = serde_json::from_str(&read("history.json")?)?;
    let scores = history
        .iter()
        .filter_map(|r| {
            let s = r.split("test").or_else(|| r.split("dev"))?;
            let m = s.metrics.as_ref()?;
            Some((r.step, if las { m.las } else { m.f1_labeled }))
        })
        .collect();
    Ok(SeedResult { summary, scores })
}

/// Runs every point in this process, one seed after another.
fn run_sequential(points: &[GridPoint], corpus: &biaffine_lab::experiment::Corpus) -> Result<BTreeMap<(usize, u64), String>> {
    let mut failures = BTreeMap::new();
    for p in points {
        write(&p.dir.join("config.json"), &p.cfg.to_json()?)?;
        let prep = prepare(&p.cfg, corpus);
        for &seed in &p.cfg.seeds {
            let r = match &prep {
                Ok(prep) => train_seed(&p.cfg, prep, seed, &p.dir.join(format!("seed-{seed}"))).map(|_| ()),
                Err(e) => Err(anyhow::anyhow!("{e}")),
            };
            match r {
                Ok(()) => println!("config {} {:?} seed {seed}: done", p.id, p.values),
                Err(e) => {
                    println!("config {} {:?} seed {seed}: failed: {e:#}", p.id, p.values);
                    failures.insert((p.id, seed), format!("{e:#}"));
                }
            }
        }
    }
    Ok(failures)
}

/// Runs each point as its own `train` process, at most `jobs` at a time.
/// Every process writes only below its point's directory.
fn run_processes(points: &[GridPoint], jobs: usize) -> Result<BTreeMap<(usize, u64), String>> {
    let exe = std::env::current_exe().context("locating the biaffine-lab executable")?;
    for p in points {
        write(&p.dir.join("config.json"), &p.cfg.to_json()?)?;
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    let results: Vec<(usize, std::io::Result<std::process::Output>)> = pool.install(|| {
        points
            .par_iter()
            .map(|p| {
                let out = std::process::Command::new(&exe)
                    .arg("train")
                    .arg("--config")
                    .arg(p.dir.join("config.json"))
                    .output();
                (p.id, out)
            })
            .collect()
    });
    let mut failures = BTreeMap::new();
    for ((id, out), p) in results.into_iter().zip(points) {
        let msg = match out {
            Ok(o) if o.status.success() => None,
            Ok(o) => {
                let err = String::from_utf8_lossy(&o.stderr);
                Some(format!("{} ({})", err.trim().lines().last().unwrap_or("no message"), o.status))
            }
            Err(e) => Some(format!("could not start train: {e}")),
        };
        println!("config {id} {:?}: {}", p.values, msg.as_deref().unwrap_or("done"));
        if let Some(m) = msg {
            for &seed in &p.cfg.seeds {
                failures.insert((id, seed), m.clone());
            }
        }
    }
    Ok(failures)
}

/// Trains the cartesian product of `raw_sweeps` over `base`. With
/// `jobs > 1` each point runs in a separate process.
pub fn grid(base: &RunConfig, raw_sweeps: &[String], jobs: usize) -> Result<()> {
    let sweeps = parse_sweeps(raw_sweeps)?;
    let out = out_dir(base);
    write(&out.join("base_config.json"), &base.to_json()?)?;
    let mut points = Vec::new();
    for (id, values) in cartesian(&sweeps).into_iter().enumerate() {
        let mut v = base.to_value();
        for (s, val) in sweeps.iter().zip(&values) {
            set_path(&mut v, &s.path, val)?;
        }
        let dir = out.join(format!("config-{id}"));
        v["out_dir"] = serde_json::to_value(&dir)?;
        let cfg: RunConfig = serde_json::from_value(v).with_context(|| format!("sweep point {values:?}"))?;
        cfg.validate()?;
        points.push(GridPoint { id, values, cfg, dir });
    }
    let failures = if jobs > 1 {
        run_processes(&points, jobs)?
    } else {
        run_sequential(&points, &load_corpus(base)?)?
    };
    let mut runs = Vec::new();
    for p in &points {
        let las = p.cfg.task.selection() == Selection::Las;
        for &seed in &p.cfg.seeds {
            let outcome = match failures.get(&(p.id, seed)) {
                Some(e) => Err(e.clone()),
                None => load_seed(&p.dir.join(format!("seed-{seed}")), las).map_err(|e| format!("{e:#}")),
            };
            runs.push(GridRun {
                config_id: p.id,
                values: p.values.clone(),
                seed,
                outcome,
            });
        }
    }
    write(&out.join("rows.csv"), &rows_csv(&sweeps, &runs)?)?;
    write(&out.join("pivot.csv"), &pivot_csv(&sweeps, &runs)?)?;
    if let Some(a) = sweeps.iter().position(|s| s.path == "model.scaling") {
        let las = points.first().is_some_and(|p| p.cfg.task.selection() == Selection::Las);
        write(&out.join("pvalues.csv"), &pvalues_csv(&sweeps, a, las, &runs)?)?;
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn csv_string(write_rows: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> Result<()>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    write_rows(&mut w)?;
    Ok(String::from_utf8(w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?)?)
}

fn rows_csv(sweeps: &[Sweep], runs: &[GridRun]) -> Result<String> {
    csv_string(|w| {
        let mut header = vec!["config_id".to_string()];
        header.extend(sweeps.iter().map(|s| s.path.clone()));
        header.extend(["seed", "status", "split", "best_step"].map(String::from));
        header.extend(METRICS.map(String::from));
        w.write_record(&header)?;
        for r in runs {
            let mut row = vec![r.config_id.to_string()];
            row.extend(r.values.iter().cloned());
            row.push(r.seed.to_string());
            match &r.outcome {
                Ok(SeedResult { summary: s, .. }) => {
                    let split = if s.metrics.test.is_some() { "test" } else { "dev" };
                    row.extend(["ok".to_string(), split.to_string(), s.best_step.to_string()]);
                    let m = report_metrics(s).expect("dev metrics exist after training");
                    row.extend(METRICS.map(|k| metric(m, k).to_string()));
                }
                Err(e) => {
                    row.push(format!("error: {e}"));
                    row.extend(std::iter::repeat_n(String::new(), 2 + METRICS.len()));
                }
            }
            w.write_record(&row)?;
        }
        Ok(())
    })
}

fn pivot_csv(sweeps: &[Sweep], runs: &[GridRun]) -> Result<String> {
    csv_string(|w| {
        let mut header = vec!["config_id".to_string()];
        header.extend(sweeps.iter().map(|s| s.path.clone()));
        header.push("seeds".into());
        header.extend(METRICS.map(String::from));
        w.write_record(&header)?;
        let mut ids: Vec<usize> = runs.iter().map(|r| r.config_id).collect();
        ids.dedup();
        for id in ids {
            let group: Vec<&GridRun> = runs.iter().filter(|r| r.config_id == id).collect();
            let ok: Vec<(u64, &MetricsReport)> = group
                .iter()
                .filter_map(|r| r.outcome.as_ref().ok().and_then(|s| report_metrics(&s.summary).map(|m| (r.seed, m))))
                .collect();
            let mut row = vec![id.to_string()];
            row.extend(group[0].values.iter().cloned());
            row.push(ok.len().to_string());
            for k in METRICS {
                let values: Vec<f64> = ok.iter().map(|(_, m)| metric(m, k)).collect();
                let seeds: Vec<u64> = ok.iter().map(|(s, _)| *s).collect();
                row.push(match values.len() {
                    0 => String::new(),
                    1 => format!("{:.4} ± 0.0000", values[0]),
                    _ => {
                        let a = aggregate_seeds(&seeds, &values, false)?;
                        format!("{:.4} ± {:.4}", a.mean, a.std)
                    }
                });
            }
            w.write_record(&row)?;
        }
        Ok(())
    })
}

/// Wilcoxon of normalized (xs) over unnormalized (ys) scores, matched on
/// seed and checkpoint step, for every setting of the other swept keys.
fn pvalues_csv(sweeps: &[Sweep], a: usize, las: bool, runs: &[GridRun]) -> Result<String> {
    csv_string(|w| {
        let mut header: Vec<String> = sweeps
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != a)
            .map(|(_, s)| s.path.clone())
            .collect();
        header.extend(["metric", "pairs", "w_plus", "p_value", "note"].map(String::from));
        w.write_record(&header)?;
        let others = |r: &GridRun| -> Vec<String> {
            r.values
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != a)
                .map(|(_, v)| v.clone())
                .collect()
        };
        let mut keys: Vec<Vec<String>> = runs.iter().map(others).collect();
        keys.sort();
        keys.dedup();
        for key in keys {
            let pick = |scaling: &str| -> BTreeMap<u64, &SeedResult> {
                runs.iter()
                    .filter(|r| others(r) == key && r.values[a] == scaling)
                    .filter_map(|r| r.outcome.as_ref().ok().map(|s| (r.seed, s)))
                    .collect()
            };
            let norm = pick("inv_sqrt_d");
            let unit = pick("unit");
            let (mut xs, mut ys) = (Vec::new(), Vec::new());
            for (seed, rn) in &norm {
                let Some(ru) = unit.get(seed) else { continue };
                for (step, x) in &rn.scores {
                    if let Some(y) = ru.scores.get(step) {
                        xs.push(*x);
                        ys.push(*y);
                    }
                }
            }
            let mut row = key.clone();
            row.push(if las { "las" } else { "f1_labeled" }.into());
            row.push(xs.len().to_string());
            match wilcoxon_one_tailed(&xs, &ys) {
                Ok(t) => row.extend([t.w_plus.to_string(), t.p_value.to_string(), String::new()]),
                Err(e) => row.extend([String::new(), String::new(), e.to_string()]),
            }
            w.write_record(&row)?;
        }
        Ok(())
    })
}

pub fn synth(out: &Path, seed: u64) -> Result<()> {
    let tb = synth::generate(&SynthConfig {
        seed,
        ..Default::default()
    })?;
    for (name, split) in [("train", &tb.train), ("dev", &tb.dev), ("test", &tb.test)] {
        write(&out.join(format!("{name}.conllu")), &write_conllu(split))?;
    }
    println!("wrote {} / {} / {} sentences to {}", tb.train.len(), tb.dev.len(), tb.test.len(), out.display());
    Ok(())
}
