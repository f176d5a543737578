use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use biaffine_lab::config::{parse_override, RunConfig};
use biaffine_lab::decode::DecodeMode;
use biaffine_lab::verify::Suite;
use clap::{Args, Parser, Subcommand};

mod inspect;
mod run;

/// Exit codes: 0 success, 1 verification failure, 2 configuration or usage
/// error, 3 numerical divergence.
#[derive(Parser)]
#[command(name = "biaffine-lab", version, about = "Biaffine dependency parsing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per seed and write histories, checkpoints and summaries.
    Train {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score a checkpoint on a data file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_parser = parse_mode)]
        decode: Option<DecodeMode>,
        /// Directory for metrics.json and predictions.conllu.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the cartesian product of swept settings.
    Grid {
        #[command(flatten)]
        run: RunArgs,
        /// KEY=V1,V2,... where KEY is a dotted config path or one of
        /// N, h, d_mlp, a, ln, init, gat, phi, tag_embed.
        #[arg(long = "sweep", required = true)]
        sweeps: Vec<String>,
        /// Run up to this many sweep points as separate processes.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Run a fixed-seed property suite.
    Verify {
        #[arg(value_parser = parse_suite)]
        suite: Suite,
    },
    /// Recompute rank and variance traces from saved checkpoints.
    Analyze {
        /// A run directory written by `train` with `save_checkpoints`.
        #[arg(long)]
        run: PathBuf,
    },
    /// Write the synthetic treebank as CoNLL-U.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 13)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. --set model.layers=3.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Comma-separated seeds, replacing the config's list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Output directory (default: runs).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let base = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                RunConfig::from_json(&text)?
            }
            None => RunConfig::default(),
        };
        let overrides = self
            .overrides
            .iter()
            .map(|s| parse_override(s))
            .collect::<biaffine_lab::Result<Vec<_>>>()?;
        let mut cfg = base.with_overrides(&overrides)?;
        if let Some(seeds) = &self.seeds {
            cfg.seeds = seeds.clone();
        }
        if let Some(out) = &self.out {
            cfg.out_dir = Some(out.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_mode(s: &str) -> Result<DecodeMode, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown decode mode {s:?} (greedy, mst, sigmoid)"))
}

fn parse_suite(s: &str) -> Result<Suite, String> {
    Suite::parse(s).map_err(|e| e.to_string())
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("BIAFFINE_LAB_THREADS") {
        let n: usize = v
            .parse()
            .with_context(|| format!("BIAFFINE_LAB_THREADS must be a positive integer, got {v:?}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<bool> {
    configure_threads()?;
    match cli.command {
        Command::Train { run } => run::train(&run.load()?).map(|_| true),
        Command::Eval {
            checkpoint,
            data,
            decode,
            out,
        } => inspect::eval(&checkpoint, &data, decode, out.as_deref()).map(|_| true),
        Command::Grid { run, sweeps, jobs } => run::grid(&run.load()?, &sweeps, jobs).map(|_| true),
        Command::Verify { suite } => inspect::verify(suite),
        Command::Analyze { run } => inspect::analyze(&run).map(|_| true),
        Command::Synth { out, seed } => run::synth(&out, seed).map(|_| true),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            let diverged = e
                .chain()
                .any(|c| matches!(c.downcast_ref(), Some(biaffine_lab::Error::Divergence { .. })));
            ExitCode::from(if diverged { 3 } else { 2 })
        }
    }
}
