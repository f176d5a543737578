//! Maximum spanning arborescence (Chu-Liu/Edmonds) over dense scores
//! `scores[dep][head]`, node 0 being ROOT.

/// Heads for nodes `1..len`; entry 0 is a placeholder. With `single_root`
/// exactly one node attaches to ROOT. Ties go to the lowest index.
pub fn max_arborescence(scores: &[Vec<f64>], single_root: bool) -> Vec<usize> {
    let n1 = scores.len();
    if n1 <= 1 {
        return vec![0; n1];
    }
    if !single_root || n1 == 2 {
        return contract(scores);
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for r in 1..n1 {
        let mut s = scores.to_vec();
        for (dep, row) in s.iter_mut().enumerate().skip(1) {
            if dep != r {
                row[0] = f64::NEG_INFINITY;
            }
        }
        let heads = contract(&s);
        let total = total_score(scores, &heads);
        if best.as_ref().is_none_or(|(b, _)| total > *b) {
            best = Some((total, heads));
        }
    }
    best.expect("at least one word").1
}

/// Sum of `scores[i][heads[i]]` over `i = 1..`, left to right.
pub fn total_score(scores: &[Vec<f64>], heads: &[usize]) -> f64 {
    heads
        .iter()
        .enumerate()
        .skip(1)
        .map(|(d, &h)| scores[d][h])
        .sum()
}

fn best_head(row: &[f64], dep: usize) -> usize {
    let mut best = usize::MAX;
    for (h, &v) in row.iter().enumerate() {
        if h == dep {
            continue;
        }
        if best == usize::MAX || v > row[best] {
            best = h;
        }
    }
    best
}

fn find_cycle(heads: &[usize]) -> Option<Vec<usize>> {
    let n = heads.len();
    let mut color = vec![0u8; n];
    color[0] = 2;
    for start in 1..n {
        if color[start] != 0 {
            continue;
        }
        let mut path = Vec::new();
        let mut v = start;
        while color[v] == 0 {
            color[v] = 1;
            path.push(v);
            v = heads[v];
        }
        if color[v] == 1 {
            let pos = path.iter().position(|&u| u == v).expect("on path");
            return Some(path[pos..].to_vec());
        }
        for u in path {
            color[u] = 2;
        }
    }
    None
}

fn contract(scores: &[Vec<f64>]) -> Vec<usize> {
    let n = scores.len();
    let mut heads = vec![0usize; n];
    for (d, row) in scores.iter().enumerate().skip(1) {
        heads[d] = best_head(row, d);
    }
    let Some(cycle) = find_cycle(&heads) else {
        return heads;
    };
    let mut in_cycle = vec![false; n];
    for &v in &cycle {
        in_cycle[v] = true;
    }
    // Contracted graph: non-cycle nodes keep their relative order, the cycle
    // becomes the last node.
    let outside: Vec<usize> = (0..n).filter(|&v| !in_cycle[v]).collect();
    let c = outside.len();
    let m = c + 1;
    let mut new_id = vec![usize::MAX; n];
    for (k, &v) in outside.iter().enumerate() {
        new_id[v] = k;
    }
    let cycle_score: f64 = cycle.iter().map(|&v| scores[v][heads[v]]).sum();
    let mut sub = vec![vec![f64::NEG_INFINITY; m]; m];
    // Entering the cycle: which cycle node is entered from each outside head.
    let mut enter = vec![usize::MAX; m];
    // Leaving the cycle: which cycle node heads each outside dependent.
    let mut leave = vec![usize::MAX; m];
    for (kd, &d) in outside.iter().enumerate().skip(1) {
        for (kh, &h) in outside.iter().enumerate() {
            if h != d {
                sub[kd][kh] = scores[d][h];
            }
        }
        for &v in &cycle {
            let s = scores[d][v];
            if leave[kd] == usize::MAX || s > sub[kd][c] {
                sub[kd][c] = s;
                leave[kd] = v;
            }
        }
    }
    for (kh, &h) in outside.iter().enumerate() {
        for &v in &cycle {
            let s = scores[v][h] - scores[v][heads[v]] + cycle_score;
            if enter[kh] == usize::MAX || s > sub[c][kh] {
                sub[c][kh] = s;
                enter[kh] = v;
            }
        }
    }
    let sub_heads = contract(&sub);
    let mut out = heads.clone();
    for (kd, &d) in outside.iter().enumerate().skip(1) {
        let kh = sub_heads[kd];
        out[d] = if kh == c { leave[kd] } else { outside[kh] };
    }
    let kh = sub_heads[c];
    let entry = enter[kh];
    out[entry] = outside[kh];
    out
}

/// Every head assignment that forms an arborescence rooted at 0, by
/// exhaustive enumeration. Exponential; intended as a reference for small
/// inputs.
pub fn brute_force_arborescence(scores: &[Vec<f64>], single_root: bool) -> (f64, Vec<usize>) {
    let n1 = scores.len();
    let mut heads = vec![0usize; n1];
    let mut best = (f64::NEG_INFINITY, heads.clone());
    if n1 <= 1 {
        return (0.0, heads);
    }
    loop {
        if is_arborescence(&heads, single_root) {
            let t = total_score(scores, &heads);
            if t > best.0 {
                best = (t, heads.clone());
            }
        }
        let mut k = 1;
        loop {
            if k == n1 {
                return best;
            }
            heads[k] += 1;
            if heads[k] == k {
                heads[k] += 1;
            }
            if heads[k] < n1 {
                break;
            }
            heads[k] = 0;
            k += 1;
        }
    }
}

fn is_arborescence(heads: &[usize], single_root: bool) -> bool {
    let n1 = heads.len();
    if single_root && heads.iter().skip(1).filter(|&&h| h == 0).count() != 1 {
        return false;
    }
    (1..n1).all(|start| {
        let mut v = start;
        for _ in 0..n1 {
            if v == 0 {
                return true;
            }
            v = heads[v];
        }
        false
    })
}
