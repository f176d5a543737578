use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = r#"{
  "task": "syndp",
  "data": {"kind": "synthetic", "train": 40, "dev": 12, "test": 12},
  "model": {"hidden": 8, "feature_dim": 8, "tagger_hidden": 8, "tag_dim": 4, "mlp_dim": 8, "rel_dim": 8, "layers": 1},
  "schedule": {"total_steps": 30, "eval_interval": 10, "early_stop_fraction": 1.0},
  "seeds": [1, 2]
}"#;

fn bin(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_biaffine-lab"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn setup() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.json");
    fs::write(&cfg, TINY).unwrap();
    (dir, cfg)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn train_writes_artifacts_for_each_seed() {
    let (dir, _) = setup();
    let out = bin(&["train", "--config", "tiny.json", "--set", "save_checkpoints=true", "--out", "run"], dir.path());
    ok(&out);
    let run = dir.path().join("run");
    let echo = json(&run.join("config.json"));
    assert_eq!(echo["save_checkpoints"], Value::Bool(true));
    for seed in [1, 2] {
        let s = run.join(format!("seed-{seed}"));
        for f in ["history.csv", "summary.json", "best.json", "ranks.csv", "variance.csv"] {
            assert!(s.join(f).is_file(), "missing {f}");
        }
        for step in [0, 10, 20, 30] {
            assert!(s.join(format!("checkpoints/step-{step:06}.json")).is_file());
        }
        let (header, rows) = read_csv(&s.join("history.csv"));
        assert_eq!(header[0], "step");
        assert_eq!(rows.len(), 9, "train/dev/test rows at 3 evaluations");
        let summary = json(&s.join("summary.json"));
        assert_eq!(summary["seed"], seed);
        assert!(summary["config"].is_object(), "summary carries the config echo");
    }
    let agg = json(&run.join("aggregate.json"));
    let las = &agg["metrics"]["las"];
    let values: Vec<f64> = las["values"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let mean = values.iter().sum::<f64>() / 2.0;
    assert!((las["mean"].as_f64().unwrap() - mean).abs() < 1e-12);
    assert!(las["std"].is_number());
}

#[test]
fn single_seed_has_no_spread() {
    let (dir, _) = setup();
    ok(&bin(&["train", "--config", "tiny.json", "--seeds", "5", "--out", "one"], dir.path()));
    let agg = json(&dir.path().join("one/aggregate.json"));
    assert!(agg["metrics"]["las"]["std"].is_null());
}

#[test]
fn exit_codes() {
    let (dir, _) = setup();
    let missing = bin(
        &["train", "--config", "tiny.json", "--set", r#"data={"kind":"files","train":"nope.conllu","dev":"nope.conllu"}"#],
        dir.path(),
    );
    assert_eq!(missing.status.code(), Some(2));
    assert_eq!(bin(&["train", "--config", "absent.json"], dir.path()).status.code(), Some(2));
    assert_eq!(bin(&["train", "--set", "model.nonsense=1"], dir.path()).status.code(), Some(2));
    assert_eq!(bin(&["verify", "bogus"], dir.path()).status.code(), Some(2));
    assert_eq!(bin(&["verify", "metrics"], dir.path()).status.code(), Some(0));
    let diverged = bin(
        &["train", "--config", "tiny.json", "--seeds", "1", "--set", "optimizer.lr=1e150", "--out", "div"],
        dir.path(),
    );
    assert_eq!(diverged.status.code(), Some(3), "{}", String::from_utf8_lossy(&diverged.stderr));
}

#[test]
fn verify_reports_each_check() {
    let (dir, _) = setup();
    let out = bin(&["verify", "mst"], dir.path());
    ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 3, "{text}");
}

#[test]
fn eval_and_analyze_from_checkpoints() {
    let (dir, _) = setup();
    let d = dir.path();
    ok(&bin(&["synth", "--out", "tb"], d));
    let files = r#"data={"kind":"files","train":"tb/train.conllu","dev":"tb/dev.conllu"}"#;
    ok(&bin(
        &[
            "train", "--config", "tiny.json", "--set", files, "--set", "save_checkpoints=true", "--seeds", "1",
            "--set", "schedule.total_steps=20", "--out", "run",
        ],
        d,
    ));

    // a checkpoint scored on its own training file reproduces the train row
    let best_step = json(&d.join("run/seed-1/summary.json"))["best_step"].as_u64().unwrap();
    ok(&bin(
        &["eval", "--checkpoint", "run/seed-1/best.json", "--data", "tb/train.conllu", "--out", "ev"],
        d,
    ));
    let report = json(&d.join("ev/metrics.json"));
    let (header, rows) = read_csv(&d.join("run/seed-1/history.csv"));
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let train_row = rows
        .iter()
        .find(|r| r[col("step")] == best_step.to_string() && r[col("split")] == "train")
        .unwrap();
    let recorded: f64 = train_row[col("las")].parse().unwrap();
    assert!((report["metrics"]["las"].as_f64().unwrap() - recorded).abs() < 1e-12);
    assert_eq!(report["valid_tree_rate"].as_f64(), Some(1.0));
    assert!(fs::read_to_string(d.join("ev/predictions.conllu")).unwrap().lines().count() > 10);

    fs::write(d.join("empty.conllu"), "").unwrap();
    let empty = bin(&["eval", "--checkpoint", "run/seed-1/best.json", "--data", "empty.conllu"], d);
    assert_eq!(empty.status.code(), Some(2));
    fs::write(d.join("odd.conllu"), "1\tx\t_\tX\tNEWTAG\t_\t0\troot\t_\t_\n\n").unwrap();
    let mismatch = bin(&["eval", "--checkpoint", "run/seed-1/best.json", "--data", "odd.conllu"], d);
    assert_eq!(mismatch.status.code(), Some(2));

    fs::remove_file(d.join("run/seed-1/ranks.csv")).unwrap();
    ok(&bin(&["analyze", "--run", "run"], d));
    let (header, rows) = read_csv(&d.join("run/seed-1/ranks.csv"));
    assert_eq!(header, ["step", "matrix_name", "effective_rank"]);
    assert_eq!(rows.len(), 3 * 4, "three checkpoints, four LSTM matrices");
    let (header, rows) = read_csv(&d.join("run/seed-1/variance.csv"));
    assert_eq!(header, ["step", "scaling", "score_mean", "score_variance"]);
    assert_eq!(rows.len(), 3);

    assert_eq!(bin(&["analyze", "--run", "tb"], d).status.code(), Some(2));
}

#[test]
fn analyze_without_lstm_layers_gives_empty_rank_trace() {
    let (dir, _) = setup();
    let d = dir.path();
    ok(&bin(
        &["train", "--config", "tiny.json", "--seeds", "1", "--set", "model.layers=0", "--set", "save_checkpoints=true", "--out", "flat"],
        d,
    ));
    ok(&bin(&["analyze", "--run", "flat"], d));
    assert_eq!(read_csv(&d.join("flat/seed-1/ranks.csv")).1.len(), 0);
    assert_eq!(read_csv(&d.join("flat/seed-1/variance.csv")).1.len(), 4);
}

#[test]
fn grid_over_scaling_pairs_seeds() {
    let (dir, _) = setup();
    let d = dir.path();
    ok(&bin(&["grid", "--config", "tiny.json", "--sweep", "a=1,inv_sqrt_d", "--out", "g"], d));
    let (header, rows) = read_csv(&d.join("g/rows.csv"));
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r[header.iter().position(|h| h == "status").unwrap()] == "ok"));
    let las = header.iter().position(|h| h == "las").unwrap();

    // pivot means recomputed from the raw rows
    let (_, pivot) = read_csv(&d.join("g/pivot.csv"));
    assert_eq!(pivot.len(), 2);
    for (i, p) in pivot.iter().enumerate() {
        let vals: Vec<f64> = rows[2 * i..2 * i + 2].iter().map(|r| r[las].parse().unwrap()).collect();
        let mean = (vals[0] + vals[1]) / 2.0;
        let cell = &p[p.len() - 4];
        let shown: f64 = cell.split(' ').next().unwrap().parse().unwrap();
        assert!((shown - mean).abs() < 5e-5, "{cell} vs {mean}");
    }

    let (header, pv) = read_csv(&d.join("g/pvalues.csv"));
    assert_eq!(pv.len(), 1);
    let pairs: usize = pv[0][header.iter().position(|h| h == "pairs").unwrap()].parse().unwrap();
    assert_eq!(pairs, 6, "2 seeds x 3 checkpoints");
}

#[test]
fn grid_records_failures_and_continues() {
    let (dir, _) = setup();
    let d = dir.path();
    ok(&bin(
        &["grid", "--config", "tiny.json", "--seeds", "1", "--sweep", "optimizer.lr=1e150,0.001", "--out", "g"],
        d,
    ));
    let (header, rows) = read_csv(&d.join("g/rows.csv"));
    let status = header.iter().position(|h| h == "status").unwrap();
    assert!(rows[0][status].starts_with("error"), "{:?}", rows[0]);
    assert_eq!(rows[1][status], "ok");
}

#[test]
fn parallel_grid_matches_sequential() {
    let (dir, _) = setup();
    let d = dir.path();
    let sweep = ["--sweep", "N=0,1"];
    ok(&bin(&["grid", "--config", "tiny.json", "--seeds", "1", sweep[0], sweep[1], "--out", "seq"], d));
    ok(&bin(&["grid", "--config", "tiny.json", "--seeds", "1", sweep[0], sweep[1], "--jobs", "2", "--out", "par"], d));
    assert_eq!(fs::read(d.join("seq/rows.csv")).unwrap(), fs::read(d.join("par/rows.csv")).unwrap());
}

#[test]
fn semantic_graph_predictions_stay_json() {
    let (dir, _) = setup();
    let d = dir.path();
    let one = r#"{"words": ["Acme", "hired", "Bob", "in", "Paris"],
        "entities": [{"id": 0, "label": "org", "start": 0, "end": 1},
                     {"id": 1, "label": "per", "start": 2, "end": 3},
                     {"id": 2, "label": "loc", "start": 4, "end": 5}],
        "relations": [{"label": "work_for", "head": 0, "tail": 1}, {"label": "located", "head": 1, "tail": 2}]}"#;
    let data = format!("[{}]", vec![one; 6].join(","));
    fs::write(d.join("graphs.json"), &data).unwrap();
    let files = r#"data={"kind":"files","train":"graphs.json","dev":"graphs.json"}"#;
    ok(&bin(
        &["train", "--config", "tiny.json", "--set", "task=\"semdp\"", "--set", files, "--seeds", "1", "--out", "sem"],
        d,
    ));
    ok(&bin(&["eval", "--checkpoint", "sem/seed-1/best.json", "--data", "graphs.json", "--out", "ev"], d));
    let pred: Value = serde_json::from_str(&fs::read_to_string(d.join("ev/predictions.json")).unwrap()).unwrap();
    assert_eq!(pred.as_array().unwrap().len(), 6);
}
