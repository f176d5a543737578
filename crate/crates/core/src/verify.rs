//! Fixed-seed property suites behind the `verify` command.

use serde::{Deserialize, Serialize};

use crate::analysis::{verify_claim1, verify_variance_law, CLAIM1_TOLERANCE};
use crate::data::{EncodedSample, FeatureMode};
use crate::decode::{
    brute_force_arborescence, build_energy, chu_liu_edmonds, greedy_decode, max_arborescence, total_score,
    validate_arborescence,
};
use crate::error::{Error, Result};
use crate::eval::{attachment_scores, micro_f1, wilcoxon_one_tailed};
use crate::model::{Model, ModelConfig, Scaling, ScoreSet, Sizes};
use crate::numerics::params::{max_relative_error, GRAD_CHECK_FLOOR};
use crate::numerics::{finite_diff_gradient, InitMode, SeededRng, Tape, Tensor};
use crate::train::{edge_loss, relation_loss, tape_loss, LossWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Claim1,
    Variance,
    Mst,
    Gradients,
    Metrics,
    All,
}

impl Suite {
    pub fn parse(s: &str) -> Result<Suite> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown suite {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub suite: String,
    pub name: String,
    pub observed: String,
    pub tolerance: String,
    pub passed: bool,
}

impl Check {
    fn new(suite: &str, name: &str, observed: String, tolerance: &str, passed: bool) -> Check {
        Check {
            suite: suite.into(),
            name: name.into(),
            observed,
            tolerance: tolerance.into(),
            passed,
        }
    }
}

pub fn run_suite(suite: Suite) -> Result<Vec<Check>> {
    Ok(match suite {
        Suite::Claim1 => claim1()?,
        Suite::Variance => variance()?,
        Suite::Mst => mst(),
        Suite::Gradients => gradients()?,
        Suite::Metrics => metrics()?,
        Suite::All => {
            let mut all = Vec::new();
            for s in [Suite::Claim1, Suite::Variance, Suite::Mst, Suite::Gradients, Suite::Metrics] {
                all.extend(run_suite(s)?);
            }
            all
        }
    })
}

fn claim1() -> Result<Vec<Check>> {
    let r = verify_claim1(100, 16, &mut SeededRng::new(101))?;
    Ok(vec![
        Check::new(
            "claim1",
            "trace sweep non-decreasing (100 trials, dims <= 16)",
            format!("{} violations, max relative drop {:.3e}", r.violations, r.max_violation),
            "0 violations beyond 1e-9 relative",
            r.violations == 0,
        ),
        Check::new(
            "claim1",
            "direct and cyclic trace routes agree",
            format!("max relative gap {:.3e}", r.max_route_gap),
            "<= 1e-9 relative",
            r.max_route_gap <= CLAIM1_TOLERANCE,
        ),
    ])
}

fn variance() -> Result<Vec<Check>> {
    let rows = verify_variance_law(&[16, 64, 256], 100_000, &mut SeededRng::new(202))?;
    let mut out = Vec::new();
    for r in rows {
        let raw = (r.variance - r.d as f64).abs() / r.d as f64;
        out.push(Check::new(
            "variance",
            &format!("Var(q.k) for d = {}", r.d),
            format!("{:.4} (ratio {:.4})", r.variance, r.ratio),
            "within 5% of d",
            raw <= 0.05,
        ));
        out.push(Check::new(
            "variance",
            &format!("Var(q.k / sqrt(d)) for d = {}", r.d),
            format!("{:.4}", r.scaled_variance),
            "within 5% of 1",
            (r.scaled_variance - 1.0).abs() <= 0.05,
        ));
    }
    Ok(out)
}

fn random_scores(n1: usize, rng: &mut SeededRng) -> Vec<Vec<f64>> {
    (0..n1)
        .map(|_| (0..n1).map(|_| rng.normal()).collect())
        .collect()
}

/// Random score set over `n` words and `r` relations.
pub fn random_scoreset(n: usize, r: usize, rng: &mut SeededRng) -> ScoreSet {
    let n1 = n + 1;
    ScoreSet {
        s_edge: Tensor::new(vec![n1, n1], (0..n1 * n1).map(|_| 3.0 * rng.normal()).collect()).expect("shape"),
        s_rel: Tensor::new(vec![n, n1, r], (0..n * n1 * r).map(|_| rng.normal()).collect()).expect("shape"),
        tag_logits: None,
        tags: vec![0; n],
        scaling: 1.0,
    }
}

fn mst() -> Vec<Check> {
    let mut rng = SeededRng::new(303);
    let mut mismatches = 0;
    for k in 0..500 {
        let n = 1 + k % 5;
        let s = random_scores(n + 1, &mut rng);
        let heads = max_arborescence(&s, true);
        let (best, _) = brute_force_arborescence(&s, true);
        if total_score(&s, &heads) != best {
            mismatches += 1;
        }
    }
    let mut invalid = 0;
    let mut greedy_invalid = 0;
    for _ in 0..1000 {
        let n = 1 + rng.below(20);
        let sc = random_scoreset(n, 3, &mut rng);
        let g = chu_liu_edmonds(&sc, &build_energy(&sc, 1.0), true);
        if !validate_arborescence(&g.heads).is_valid() {
            invalid += 1;
        }
        if !greedy_decode(&sc).validity.is_valid() {
            greedy_invalid += 1;
        }
    }
    vec![
        Check::new(
            "mst",
            "Chu-Liu/Edmonds total equals brute force (500 instances, n <= 5)",
            format!("{mismatches} mismatches"),
            "exact",
            mismatches == 0,
        ),
        Check::new(
            "mst",
            "MST decodes are valid arborescences (1000 score sets, n <= 20)",
            format!("{invalid} invalid"),
            "0 invalid",
            invalid == 0,
        ),
        Check::new(
            "mst",
            "greedy decoding can produce invalid structures",
            format!("{greedy_invalid} of 1000 invalid"),
            "at least 1",
            greedy_invalid > 0,
        ),
    ]
}

/// Config touching every parameter group: embeddings, tagger BiLSTM and
/// classifier, tag embeddings, parser BiLSTM with layer norm, GAT, heads and
/// both biaffine scorers.
pub fn gradient_check_config() -> ModelConfig {
    ModelConfig {
        feature_dim: 5,
        feature_mode: FeatureMode::Trainable,
        tagger: true,
        tagger_hidden: 3,
        tag_embed: true,
        tag_dim: 3,
        layers: 2,
        hidden: 3,
        layer_norm: true,
        mlp_dim: 4,
        rel_dim: 3,
        init: InitMode::Normal,
        scaling: Scaling::InvSqrtD,
        gat_pairs: 1,
        oracle_tags: false,
    }
}

/// Maximum relative error between tape and central-difference gradients of
/// the total loss on a 3-word sentence, per parameter.
pub fn gradient_errors(seed: u64) -> Result<Vec<(String, f64)>> {
    let sizes = Sizes {
        words: 6,
        tags: 3,
        relations: 4,
    };
    let model = Model::new(gradient_check_config(), sizes, None, &mut SeededRng::new(seed))?;
    let s = EncodedSample {
        words: vec![2, 5, 1],
        tags: vec![1, 0, 2],
        heads: vec![2, 0, 2],
        rels: vec![3, 0, 1],
        edges: vec![(1, 2, 3), (2, 0, 0), (3, 2, 1)],
    };
    let w = LossWeights::default();
    let loss = |store: &crate::numerics::ParameterStore| {
        let mut tape = Tape::new(store);
        let f = model.forward(&mut tape, &s.words, &s.tags);
        let (root, _) = tape_loss(&mut tape, &f, &s, w);
        tape.scalar(root)
    };
    let mut tape = Tape::new(model.params());
    let f = model.forward(&mut tape, &s.words, &s.tags);
    let (root, _) = tape_loss(&mut tape, &f, &s, w);
    let grads = tape.backward(root);
    let mut store = model.params().clone();
    let mut out = Vec::new();
    for (id, p) in model.params().iter() {
        let analytic = grads
            .get(id)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; p.value.len()]);
        let numeric = finite_diff_gradient(loss, &mut store, id, 1e-5);
        out.push((p.name.clone(), max_relative_error(&analytic, numeric.data(), GRAD_CHECK_FLOOR)));
    }
    Ok(out)
}

fn gradients() -> Result<Vec<Check>> {
    let errs = gradient_errors(404)?;
    let (worst_name, worst) = errs
        .iter()
        .cloned()
        .fold((String::new(), 0.0), |a, b| if b.1 > a.1 { b } else { a });
    Ok(vec![Check::new(
        "gradients",
        &format!("tape vs central differences over {} parameters", errs.len()),
        format!("max relative error {worst:.3e} ({worst_name})"),
        "< 1e-4",
        worst < 1e-4,
    )])
}

fn metrics() -> Result<Vec<Check>> {
    let f1 = micro_f1(&[1, 2, 3], &[1, 2, 4]);
    let (uas, las) = attachment_scores(&[2, 0, 2, 1], &[1, 0, 2, 2], &[2, 0, 2, 3], &[1, 0, 3, 2])?;
    let p = wilcoxon_one_tailed(&[2.0, 3.0, 4.0, 5.0, 6.0], &[1.0; 5])?.p_value;
    let n = 7;
    let uniform_edge = edge_loss(&Tensor::zeros(&[n + 1, n + 1]), &vec![0; n], &vec![true; n])?;
    let uniform_rel = relation_loss(&Tensor::zeros(&[1, 2, 13]), &[0], &[4], &[true])?;
    Ok(vec![
        Check::new("metrics", "micro-F1 with TP=2 FP=1 FN=1", format!("{f1}"), "exactly 2/3", f1 == 2.0 / 3.0),
        Check::new(
            "metrics",
            "UAS / LAS on the 4-word fixture",
            format!("{uas} / {las}"),
            "exactly 0.75 / 0.5",
            uas == 0.75 && las == 0.5,
        ),
        Check::new("metrics", "exact Wilcoxon, 5 positive differences", format!("{p}"), "exactly 1/32", p == 1.0 / 32.0),
        Check::new(
            "metrics",
            "uniform edge loss on 7 words",
            format!("{uniform_edge}"),
            "7 ln 8 within 1e-12",
            (uniform_edge - 7.0 * 8f64.ln()).abs() <= 1e-12,
        ),
        Check::new(
            "metrics",
            "uniform relation loss, 13 relations",
            format!("{uniform_rel}"),
            "ln 13 within 1e-12",
            (uniform_rel - 13f64.ln()).abs() <= 1e-12,
        ),
    ])
}
