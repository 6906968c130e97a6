/// Maximum-weight one-to-one assignment between the rows and columns of a
/// (possibly rectangular) weight table.
///
/// Returns the optimal total and, per row, the matched column (`None` for
/// rows left unmatched when there are more rows than columns).
pub fn hungarian_max(weights: &[Vec<f64>]) -> (f64, Vec<Option<usize>>) {
    let rows = weights.len();
    let cols = weights.iter().map(|r| r.len()).max().unwrap_or(0);
    if rows == 0 || cols == 0 {
        return (0.0, vec![None; rows]);
    }
    let n = rows.max(cols);
    let max_w = weights
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0);
    // minimise max_w - w on the zero-padded square matrix
    let cost = |i: usize, j: usize| -> f64 {
        let w = weights
            .get(i)
            .and_then(|r| r.get(j))
            .copied()
            .unwrap_or(0.0);
        max_w - w
    };

    // Potentials formulation, 1-based with a virtual column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![None; rows];
    let mut total = 0.0;
    for j in 1..=n {
        let i = owner[j];
        if i == 0 || i > rows || j > cols {
            continue;
        }
        let w = weights[i - 1].get(j - 1).copied().unwrap_or(0.0);
        assignment[i - 1] = Some(j - 1);
        total += w;
    }
    (total, assignment)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(weights: &[Vec<f64>]) -> f64 {
        fn rec(w: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
            if row == w.len() {
                return 0.0;
            }
            // leaving the row unmatched is allowed
            let mut best = rec(w, row + 1, used);
            for j in 0..used.len() {
                if !used[j] {
                    used[j] = true;
                    best = best.max(w[row][j] + rec(w, row + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        let cols = weights.iter().map(|r| r.len()).max().unwrap_or(0);
        rec(weights, 0, &mut vec![false; cols])
    }

    #[test]
    fn square_and_rectangular_cases() {
        let w = vec![vec![1.0, 2.0, 3.0], vec![2.0, 4.0, 6.0], vec![3.0, 6.0, 9.0]];
        assert_eq!(hungarian_max(&w).0, brute(&w));
        let tall = vec![vec![5.0, 1.0], vec![4.0, 0.0], vec![0.0, 7.0]];
        let (total, a) = hungarian_max(&tall);
        assert_eq!(total, 12.0);
        assert_eq!(a, vec![Some(0), None, Some(1)]);
        let wide = vec![vec![1.0, 9.0, 2.0]];
        assert_eq!(hungarian_max(&wide), (9.0, vec![Some(1)]));
        assert_eq!(hungarian_max(&[]).0, 0.0);
    }

    #[test]
    fn agrees_with_enumeration() {
        let mut state = 12345u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) % 20) as f64
        };
        for r in 1..=5 {
            for c in 1..=5 {
                let w: Vec<Vec<f64>> = (0..r).map(|_| (0..c).map(|_| next()).collect()).collect();
                assert_eq!(hungarian_max(&w).0, brute(&w), "{w:?}");
            }
        }
    }
}
