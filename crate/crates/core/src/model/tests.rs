use super::*;
use crate::data::FeatureMode;

fn small_config() -> ModelConfig {
    ModelConfig {
        feature_dim: 6,
        feature_mode: FeatureMode::Trainable,
        tagger: true,
        tagger_hidden: 3,
        tag_embed: true,
        tag_dim: 4,
        layers: 1,
        hidden: 3,
        layer_norm: true,
        mlp_dim: 4,
        rel_dim: 3,
        init: InitMode::Uniform,
        scaling: Scaling::Unit,
        gat_pairs: 1,
        oracle_tags: false,
    }
}

const SIZES: Sizes = Sizes {
    words: 9,
    tags: 3,
    relations: 3,
};

fn model(config: ModelConfig) -> Model {
    Model::new(config, SIZES, None, &mut SeededRng::new(5)).unwrap()
}

fn zero_all(m: &mut Model) {
    for p in m.params_mut().iter_mut() {
        p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
}

#[test]
fn biaffine_identity_examples() {
    let mut store = ParameterStore::new();
    let mut e1 = Tensor::zeros(&[1, 4]);
    e1.set(0, 0, 1.0);
    let w = store.add("w", Tensor::eye(4).reshape(vec![4, 1, 4]).unwrap(), true);
    let b = store.add("b", Tensor::zeros(&[4]), true);
    for (scale, expect) in [(1.0, 1.0), (Scaling::InvSqrtD.factor(4), 0.5)] {
        let mut tape = Tape::new(&store);
        let x = tape.constant(&e1);
        let s = biaffine_pair(&mut tape, x, x, Affine { w, b }, 1, scale);
        assert_eq!(tape.data(s), &[expect]);
    }
}

#[test]
fn parser_output_shapes() {
    let m = model(small_config());
    let s = m.score(&[1, 2, 3, 4, 5], &[0; 5]);
    assert_eq!(s.s_edge.shape(), &[6, 6]);
    assert_eq!(s.s_rel.shape(), &[5, 6, 3]);
    assert_eq!(s.tag_logits.as_ref().unwrap().shape(), &[5, 3]);
    assert!(s.s_edge.is_finite() && s.s_rel.is_finite());
}

#[test]
fn minimal_path_reads_features_directly() {
    let cfg = ModelConfig {
        tagger: false,
        tag_embed: false,
        layers: 0,
        gat_pairs: 0,
        ..small_config()
    };
    assert_eq!(cfg.parser_input_dim(), cfg.feature_dim);
    let m = model(cfg.clone());
    assert_eq!(m.params().by_name("parser.mlp.edge_head.w").unwrap().value.shape(), &[6, 4]);
    let s = m.score(&[3, 1], &[0, 0]);
    assert_eq!(s.s_edge.shape(), &[3, 3]);
    let with_tags = ModelConfig {
        tag_embed: true,
        ..cfg
    };
    assert_eq!(with_tags.parser_input_dim(), 6 + 4);
}

#[test]
fn scaling_multiplies_edge_scores_exactly() {
    let scaled_cfg = ModelConfig {
        scaling: Scaling::InvSqrtD,
        gat_pairs: 0,
        ..small_config()
    };
    let unit_cfg = ModelConfig {
        gat_pairs: 0,
        ..small_config()
    };
    let base = Model::new(unit_cfg, SIZES, None, &mut SeededRng::new(9)).unwrap();
    let scaled = Model::from_params(scaled_cfg, SIZES, base.params().clone()).unwrap();
    let words = [1, 5, 2, 7];
    let a = base.score(&words, &[0; 4]);
    let b = scaled.score(&words, &[0; 4]);
    let k = 1.0 / 4f64.sqrt();
    for (x, y) in a.s_edge.data().iter().zip(b.s_edge.data()) {
        assert!((x * k - y).abs() <= 1e-15 * x.abs().max(1.0));
    }
    for dep in 1..=4 {
        let ra: Vec<f64> = a.s_edge.row(dep).to_vec();
        let rb: Vec<f64> = b.s_edge.row(dep).to_vec();
        assert_eq!(argmax(&ra), argmax(&rb));
    }
}

#[test]
fn forward_is_bitwise_deterministic() {
    let m = model(small_config());
    let a = m.score(&[1, 2, 3], &[0, 1, 2]);
    let b = m.score(&[1, 2, 3], &[0, 1, 2]);
    assert_eq!(a, b);
}

#[test]
fn zero_tagger_gives_uniform_probabilities() {
    let mut m = model(small_config());
    zero_all(&mut m);
    let s = m.score(&[4], &[0]);
    let logits = s.tag_logits.unwrap();
    assert_eq!(logits.shape(), &[1, 3]);
    let p = crate::numerics::scaled_softmax(logits.row(0), 1.0).unwrap();
    assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
}

#[test]
fn zero_lstm_outputs_zero_and_heads_give_activation_of_bias() {
    let mut m = model(ModelConfig {
        gat_pairs: 0,
        ..small_config()
    });
    zero_all(&mut m);
    let id = m.params().id("parser.mlp.edge_head.b").unwrap();
    m.params_mut().get_mut(id).value = Tensor::vector(vec![0.5, -1.0, 0.0, 2.0]);
    let layer = m.ids.parser[0];
    let head_ids = m.ids.edge_head;
    let mut tape = Tape::new(m.params());
    let x = tape.constant(&Tensor::filled(&[3, 10], 0.7));
    let h = bilstm_layer(&mut tape, x, &BiLstmLayer { norm: None, ..layer });
    assert!(tape.data(h).iter().all(|v| *v == 0.0));
    let out = head(&mut tape, h, head_ids);
    let expect = [0.5, (-1.0f64).exp_m1(), 0.0, 2.0];
    for row in tape.data(out).chunks(4) {
        for (a, b) in row.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}

#[test]
fn reversed_input_swaps_directions() {
    let m = model(small_config());
    let layer = m.ids.parser[0];
    let swapped = BiLstmLayer {
        fwd: layer.bwd,
        bwd: layer.fwd,
        norm: None,
    };
    let plain = BiLstmLayer { norm: None, ..layer };
    let mut rng = SeededRng::new(3);
    let rows: Vec<Vec<f64>> = (0..4).map(|_| (0..10).map(|_| rng.normal()).collect()).collect();
    let rev: Vec<Vec<f64>> = rows.iter().rev().cloned().collect();
    let mut tape = Tape::new(m.params());
    let x = tape.constant(&Tensor::from_rows(&rows).unwrap());
    let xr = tape.constant(&Tensor::from_rows(&rev).unwrap());
    let a = bilstm_layer(&mut tape, x, &plain);
    let b = bilstm_layer(&mut tape, xr, &swapped);
    let (a, b) = (tape.value(a), tape.value(b));
    for t in 0..4 {
        let ra = a.row(t);
        let rb = b.row(3 - t);
        for k in 0..3 {
            assert!((ra[k] - rb[3 + k]).abs() < 1e-14);
            assert!((ra[3 + k] - rb[k]).abs() < 1e-14);
        }
    }
}

#[test]
fn tag_embedding_equals_one_hot_product() {
    let m = model(small_config());
    let te = m.ids.tag_embed.unwrap();
    let tags = [2usize, 0, 2];
    let mut tape = Tape::new(m.params());
    let table = tape.param(te.w);
    let rows = tape.gather_rows(table, &tags);
    let bias = tape.param(te.b);
    let direct = tape.add_row(rows, bias);
    let mut onehot = Tensor::zeros(&[3, 3]);
    for (i, &t) in tags.iter().enumerate() {
        onehot.set(i, t, 1.0);
    }
    let oh = tape.constant(&onehot);
    let prod = tape.matmul(oh, table);
    let via = tape.add_row(prod, bias);
    let (d, v) = (tape.value(direct), tape.value(via));
    assert!(d.max_abs_diff(&v) < 1e-12);
    assert_eq!(d.row(0), d.row(2));
}

#[test]
fn single_tag_class_gives_constant_embedding() {
    let sizes = Sizes { tags: 1, ..SIZES };
    let m = Model::new(small_config(), sizes, None, &mut SeededRng::new(2)).unwrap();
    let s = m.score(&[1, 2, 3], &[0, 0, 0]);
    assert_eq!(s.tags, vec![0, 0, 0]);
}

#[test]
fn gat_attention_properties() {
    let m = model(small_config());
    let g = m.ids.gat[0];
    let d = small_config().parser_output_dim();
    let mut rng = SeededRng::new(4);
    let mut tape = Tape::new(m.params());

    let single = tape.constant(&Tensor::from_rows(&[(0..d).map(|_| rng.normal()).collect()]).unwrap());
    let (out, alpha) = gat_layer(&mut tape, single, &g, None);
    assert_eq!(tape.data(alpha), &[1.0]);
    let w = tape.param(g.w);
    let wh = tape.matmul(single, w);
    let expect = tape.elu(wh);
    assert!(tape.value(out).max_abs_diff(&tape.value(expect)) < 1e-15);

    let row: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
    let same = tape.constant(&Tensor::from_rows(&vec![row; 4]).unwrap());
    let (_, alpha) = gat_layer(&mut tape, same, &g, None);
    assert!(tape.data(alpha).iter().all(|a| (a - 0.25).abs() < 1e-15));

    let rows: Vec<Vec<f64>> = (0..5).map(|_| (0..d).map(|_| rng.normal()).collect()).collect();
    let x = tape.constant(&Tensor::from_rows(&rows).unwrap());
    let bias = biaffine_pair(&mut tape, x, x, g.scorer, 1, 1.0);
    let (_, alpha) = gat_layer(&mut tape, x, &g, Some(bias));
    for r in tape.data(alpha).chunks(5) {
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn checkpoint_roundtrip() {
    use crate::data::{parse_conllu, Vocabulary};
    let text = "1\ta\t_\t_\tX\t_\t2\tnsubj\t_\t_\n2\tb\t_\t_\tY\t_\t0\troot\t_\t_\n";
    let vocab = Vocabulary::build(&parse_conllu(text).unwrap(), 1).unwrap();
    let sizes = Sizes {
        words: vocab.num_words(),
        tags: vocab.num_tags(),
        relations: vocab.num_relations(),
    };
    let m = Model::new(small_config(), sizes, None, &mut SeededRng::new(1)).unwrap();
    let ck = Checkpoint::new(&m, &vocab, serde_json::json!({"k": 1}), 7);
    let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
    let m2 = back.to_model().unwrap();
    assert_eq!(m.score(&[1, 2], &[0, 1]), m2.score(&[1, 2], &[0, 1]));
    assert_eq!(back.step, 7);
}

#[test]
fn frozen_features_carry_no_gradient() {
    let cfg = ModelConfig {
        feature_mode: FeatureMode::Frozen,
        ..small_config()
    };
    let table = Tensor::filled(&[SIZES.words, 6], 0.1);
    let m = Model::new(cfg, SIZES, Some(table), &mut SeededRng::new(1)).unwrap();
    assert!(!m.params().by_name("embed.word").unwrap().requires_grad);
    let mut tape = Tape::new(m.params());
    let f = m.forward(&mut tape, &[1, 2], &[0, 0]);
    let s = tape.sum(f.s_edge);
    let g = tape.backward(s);
    assert!(g.get(m.params().id("embed.word").unwrap()).is_none());
    assert!(g.get(m.params().id("parser.root").unwrap()).is_some());
}
