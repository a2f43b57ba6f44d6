//! Minimum-cost perfect matching on a square cost matrix.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Permutation `π` minimizing `Σᵢ cost[i][π(i)]`, lexicographically smallest
/// among all minimizers.
pub fn optimal_bipartite_match(cost: &Matrix) -> Result<Vec<usize>> {
    if !cost.is_square() {
        return Err(Error::NonSquare {
            rows: cost.rows(),
            cols: cost.cols(),
        });
    }
    let n = cost.rows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let best = assignment_cost(cost, &hungarian(cost));
    let scale = cost.data().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-9 * scale * n as f64;

    // Fix rows in order, each to the smallest column that still admits an
    // optimal completion.
    let mut perm = vec![usize::MAX; n];
    let mut used = vec![false; n];
    let mut fixed_cost = 0.0;
    for row in 0..n {
        let free_rows: Vec<usize> = (row + 1..n).collect();
        let mut chosen = None;
        for col in (0..n).filter(|&c| !used[c]) {
            let free_cols: Vec<usize> = (0..n).filter(|&c| !used[c] && c != col).collect();
            let rest = if free_rows.is_empty() {
                0.0
            } else {
                let sub = submatrix(cost, &free_rows, &free_cols);
                assignment_cost(&sub, &hungarian(&sub))
            };
            if fixed_cost + cost[(row, col)] + rest <= best + tol {
                chosen = Some(col);
                break;
            }
        }
        let col = chosen.expect("an optimal completion always exists");
        perm[row] = col;
        used[col] = true;
        fixed_cost += cost[(row, col)];
    }
    Ok(perm)
}

pub fn assignment_cost(cost: &Matrix, perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum()
}

fn submatrix(cost: &Matrix, rows: &[usize], cols: &[usize]) -> Matrix {
    let mut m = Matrix::zeros(rows.len(), cols.len());
    for (a, &i) in rows.iter().enumerate() {
        for (b, &j) in cols.iter().enumerate() {
            m[(a, b)] = cost[(i, j)];
        }
    }
    m
}

/// Shortest augmenting path Hungarian algorithm, O(n³).
fn hungarian(cost: &Matrix) -> Vec<usize> {
    let n = cost.rows();
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
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
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Exhaustive search over all permutations in lexicographic order; returns
/// the first minimizer. Only usable for small `n`.
pub fn brute_force_match(cost: &Matrix) -> (Vec<usize>, f64) {
    fn rec(
        cost: &Matrix,
        row: usize,
        used: &mut [bool],
        cur: &mut Vec<usize>,
        acc: f64,
        best: &mut (Vec<usize>, f64),
    ) {
        let n = cost.rows();
        if row == n {
            if acc < best.1 {
                *best = (cur.clone(), acc);
            }
            return;
        }
        for col in 0..n {
            if !used[col] {
                used[col] = true;
                cur.push(col);
                rec(cost, row + 1, used, cur, acc + cost[(row, col)], best);
                cur.pop();
                used[col] = false;
            }
        }
    }
    let mut best = (Vec::new(), f64::INFINITY);
    rec(
        cost,
        0,
        &mut vec![false; cost.rows()],
        &mut Vec::new(),
        0.0,
        &mut best,
    );
    best
}
