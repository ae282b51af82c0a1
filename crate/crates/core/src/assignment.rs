//! Minimum-cost rectangular assignment (Hungarian method with potentials).

use alloc::vec;
use alloc::vec::Vec;

/// Assigns each of the `n` rows to a distinct column of an `n x m` cost
/// matrix, `n <= m`, minimizing the total cost. Returns the column of each
/// row and the total cost.
pub(crate) fn min_cost_assignment(cost: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let n = cost.len();
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    let m = cost[0].len();
    assert!(n <= m, "more rows than columns");
    // 1-based arrays; column 0 is the virtual start column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut row_of = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of = vec![0usize; n];
    for j in 1..=m {
        if row_of[j] != 0 {
            col_of[row_of[j] - 1] = j - 1;
        }
    }
    let total = col_of.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
    (col_of, total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(cost: &[Vec<f64>]) -> f64 {
        fn rec(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
            if row == cost.len() {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..used.len() {
                if !used[j] {
                    used[j] = true;
                    best = best.min(cost[row][j] + rec(cost, row + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        rec(cost, 0, &mut vec![false; cost[0].len()])
    }

    #[test]
    fn matches_brute_force_on_small_matrices() {
        let mut state = 12345u64;
        let mut next = || {
            state = crate::seed::mix(state);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for n in 1..=5 {
            for m in n..=6 {
                for _ in 0..20 {
                    let cost: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| next() * 10.0).collect()).collect();
                    let (cols, total) = min_cost_assignment(&cost);
                    let mut seen = cols.clone();
                    seen.sort();
                    seen.dedup();
                    assert_eq!(seen.len(), n);
                    assert!((total - brute(&cost)).abs() < 1e-9);
                }
            }
        }
    }
}
