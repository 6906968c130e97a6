//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

/// Brute-force DBSCAN: neighborhoods by explicit enumeration, clusters as
/// connected components of core points (union-find), and each border point
/// attached to the adjacent cluster whose lowest core index is smallest.
pub fn dbscan_oracle(points: &[Vec<f64>], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let near = |i: usize, j: usize| dist(&points[i], &points[j]) <= eps;
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts).collect();

    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut Vec<usize>, mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for i in 0..n {
        for j in 0..n {
            if core[i] && core[j] && near(i, j) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    // component root -> lowest core index in the component
    let mut first_core: HashMap<usize, usize> = HashMap::new();
    for i in 0..n {
        if core[i] {
            let r = find(&mut parent, i);
            first_core.entry(r).or_insert(i);
        }
    }
    let mut out = vec![None; n];
    for i in 0..n {
        if core[i] {
            out[i] = Some(first_core[&find(&mut parent, i)]);
        } else {
            out[i] = (0..n)
                .filter(|&j| core[j] && near(i, j))
                .map(|j| first_core[&find(&mut parent, j)])
                .min();
        }
    }
    out
}

/// True when two assignments induce the same partition, with `None` in the
/// same places.
pub fn same_partition(a: &[Option<usize>], b: &[Option<usize>]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut fwd = HashMap::new();
    let mut back = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        match (x, y) {
            (None, None) => {}
            (Some(x), Some(y)) => {
                if *fwd.entry(*x).or_insert(*y) != *y || *back.entry(*y).or_insert(*x) != *x {
                    return false;
                }
            }
            _ => return false,
        }
    }
    true
}

pub fn ap_oracle(rel: &[bool]) -> f64 {
    let total = rel.iter().filter(|&&r| r).count();
    let mut sum = 0.0;
    for k in 1..=rel.len() {
        if rel[k - 1] {
            let hits_at_k = rel[..k].iter().filter(|&&r| r).count();
            sum += hits_at_k as f64 / k as f64;
        }
    }
    sum / total as f64
}

pub fn map_oracle(lists: &[Vec<bool>]) -> f64 {
    lists.iter().map(|l| ap_oracle(l)).sum::<f64>() / lists.len() as f64
}

pub fn nn_oracle(lists: &[Vec<bool>]) -> f64 {
    lists.iter().filter(|l| l[0]).count() as f64 / lists.len() as f64
}

pub fn ndcg_oracle(lists: &[Vec<bool>], k: usize) -> f64 {
    let per = |rel: &[bool]| {
        let gain = |i: usize| 1.0 / (i as f64 + 1.0).log2();
        let dcg: f64 = (1..=k.min(rel.len())).filter(|&i| rel[i - 1]).map(gain).sum();
        let mut ideal_rel = rel.to_vec();
        ideal_rel.sort_by(|a, b| b.cmp(a));
        let idcg: f64 = (1..=k.min(rel.len())).filter(|&i| ideal_rel[i - 1]).map(gain).sum();
        if idcg == 0.0 {
            0.0
        } else {
            dcg / idcg
        }
    };
    lists.iter().map(|l| per(l)).sum::<f64>() / lists.len() as f64
}

/// MPEG-7 ANMRR written out term by term.
pub fn anmrr_oracle(lists: &[Vec<bool>]) -> f64 {
    let ngs: Vec<f64> = lists.iter().map(|l| l.iter().filter(|&&r| r).count() as f64).collect();
    let gtm = ngs.iter().cloned().fold(0.0, f64::max);
    let mut total = 0.0;
    for (l, &ng) in lists.iter().zip(&ngs) {
        let k = (4.0 * ng).min(2.0 * gtm);
        let mut avr = 0.0;
        for (pos, &r) in l.iter().enumerate() {
            if r {
                let rank = (pos + 1) as f64;
                avr += if rank > k { 1.25 * k } else { rank };
            }
        }
        avr /= ng;
        let mrr = avr - 0.5 - ng / 2.0;
        total += mrr / (1.25 * k - 0.5 - ng / 2.0);
    }
    total / lists.len() as f64
}

/// 101-point interpolated precision: at recall level `l/100`, the largest
/// precision over every cutoff whose recall reaches the level.
pub fn pr_oracle(lists: &[Vec<bool>]) -> Vec<f64> {
    let mut out = vec![0.0; 101];
    for l in lists {
        let total = l.iter().filter(|&&r| r).count();
        for (level, slot) in out.iter_mut().enumerate() {
            let mut best = 0.0f64;
            for k in 1..=l.len() {
                let hits = l[..k].iter().filter(|&&r| r).count();
                if hits * 100 >= level * total {
                    best = best.max(hits as f64 / k as f64);
                }
            }
            *slot += best;
        }
    }
    out.iter().map(|s| s / lists.len() as f64).collect()
}

/// Maximum-weight assignment by enumerating every injective map of rows
/// into columns.
pub fn assignment_oracle(w: &[Vec<f64>]) -> f64 {
    let rows = w.len();
    let cols = w.first().map_or(0, |r| r.len());
    fn go(w: &[Vec<f64>], row: usize, used: &mut Vec<bool>, cols: usize) -> f64 {
        if row == w.len() {
            return 0.0;
        }
        // leaving a row unmatched is allowed when rows outnumber columns
        let mut best = if w.len() > cols { go(w, row + 1, used, cols) } else { f64::NEG_INFINITY };
        for c in 0..cols {
            if !used[c] {
                used[c] = true;
                best = best.max(w[row][c] + go(w, row + 1, used, cols));
                used[c] = false;
            }
        }
        best
    }
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    go(w, 0, &mut vec![false; cols], cols)
}

/// Plain triple-loop matrix product of row-major `a` (`n×k`) and `b` (`k×m`).
pub fn matmul_oracle(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            for t in 0..k {
                out[i * m + j] += a[i * k + t] * b[t * m + j];
            }
        }
    }
    out
}
