use super::*;
use crate::numerics::SeededRng;

fn scoreset(edge: Vec<Vec<f64>>, labels: usize, rng: Option<&mut SeededRng>) -> ScoreSet {
    let n1 = edge.len();
    let n = n1 - 1;
    let rel = match rng {
        Some(r) => (0..n * n1 * labels).map(|_| r.normal()).collect(),
        None => vec![0.0; n * n1 * labels],
    };
    ScoreSet {
        s_edge: Tensor::from_rows(&edge).unwrap(),
        s_rel: Tensor::new(vec![n, n1, labels], rel).unwrap(),
        tag_logits: None,
        tags: vec![0; n],
        scaling: 1.0,
    }
}

#[test]
fn greedy_single_word() {
    let s = scoreset(vec![vec![0.0, 0.0], vec![0.9, 0.1]], 2, None);
    let g = greedy_decode(&s);
    assert_eq!(g.heads, vec![0]);
    assert!(g.validity.single_root && g.validity.is_valid());
}

#[test]
fn greedy_reports_cycles_honestly() {
    let s = scoreset(
        vec![vec![0.0; 3], vec![0.0, 0.0, 5.0], vec![0.0, 5.0, 0.0]],
        1,
        None,
    );
    let g = greedy_decode(&s);
    assert_eq!(g.heads, vec![2, 1]);
    assert!(!g.validity.acyclic);
    assert!(!g.validity.is_valid());
    let m = decode(&s, &DecodeOptions::default());
    assert!(m.validity.is_valid());
}

#[test]
fn greedy_ties_pick_lowest_index() {
    let s = scoreset(
        vec![vec![0.0; 4], vec![1.0, 0.0, 1.0, 1.0], vec![0.5, 2.0, 0.0, 2.0], vec![3.0; 4]],
        2,
        None,
    );
    let g = greedy_decode(&s);
    assert_eq!(g.heads, vec![0, 1, 0]);
    assert_eq!(g.relations, vec![0, 0, 0]);
}

#[test]
fn uniform_edge_row_energy() {
    let s = scoreset(vec![vec![0.0; 4]; 4], 1, None);
    let e = build_energy(&s, DEFAULT_TAU);
    for i in 1..4 {
        for j in 0..4 {
            assert!((e.energy.at(i, j) - (0.25f64).ln()).abs() < 1e-15);
        }
    }
}

#[test]
fn tau_widens_the_gap_and_keeps_best_relation() {
    let mut rng = SeededRng::new(2);
    let edge: Vec<Vec<f64>> = (0..5).map(|_| (0..5).map(|_| rng.normal()).collect()).collect();
    let s = scoreset(edge, 4, Some(&mut rng));
    let lo = build_energy(&s, 1.0);
    let hi = build_energy(&s, 10.0);
    assert_eq!(lo.best_relation, hi.best_relation);
    for i in 1..5 {
        let gap = |e: &EnergyMatrix| {
            let mut r = e.energy.row(i).to_vec();
            r.sort_by(|a, b| b.partial_cmp(a).unwrap());
            r[0] - r[1]
        };
        assert!(gap(&hi) > gap(&lo));
    }
}

#[test]
fn mst_single_word_and_validity() {
    let s = scoreset(vec![vec![0.0, 0.0], vec![-3.0, 8.0]], 1, None);
    let g = decode(&s, &DecodeOptions::default());
    assert_eq!(g.heads, vec![0]);
    let mut rng = SeededRng::new(8);
    for _ in 0..50 {
        let n1 = 2 + rng.below(10);
        let edge = (0..n1).map(|_| (0..n1).map(|_| 3.0 * rng.normal()).collect()).collect();
        let s = scoreset(edge, 3, Some(&mut rng));
        let g = decode(&s, &DecodeOptions::default());
        assert!(g.validity.is_valid(), "{:?}", g.heads);
        assert_eq!(g.edges.len(), n1 - 1);
    }
}

#[test]
fn sigmoid_mode_thresholds() {
    let zero = Tensor::zeros(&[3, 3]);
    assert!(sigmoid_edge_decode(&zero, 0.5).is_empty());
    let mut t = Tensor::zeros(&[3, 3]);
    t.set(2, 1, 10.0);
    assert_eq!(sigmoid_edge_decode(&t, 0.5), vec![(2, 1)]);
}

#[test]
fn sigmoid_ranking_survives_positive_scaling() {
    let mut rng = SeededRng::new(3);
    let scores: Vec<f64> = (0..40).map(|_| 4.0 * rng.normal()).collect();
    let rank = |xs: &[f64]| {
        let mut idx: Vec<usize> = (0..xs.len()).collect();
        idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
        idx
    };
    let p: Vec<f64> = scores.iter().map(|&s| sigmoid(s)).collect();
    let q: Vec<f64> = scores.iter().map(|&s| sigmoid(s / 8.0)).collect();
    assert_eq!(rank(&p), rank(&q));
}

#[test]
fn validation_cases() {
    assert!(validate_arborescence(&[0, 1]).is_valid());
    let two_roots = validate_arborescence(&[0, 0]);
    assert!(!two_roots.single_root && two_roots.acyclic && two_roots.connected);
    let self_loop = validate_arborescence(&[0, 2]);
    assert!(!self_loop.is_valid());
    let cycle = validate_arborescence(&[0, 3, 2]);
    assert!(!cycle.acyclic && !cycle.connected);
}
