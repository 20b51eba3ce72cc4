//! Minimum-cost assignment (Hungarian / shortest augmenting path with potentials).

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    /// `row_to_col[i]` is the column matched to row `i`, or `None` when the
    /// matrix has more rows than columns and row `i` is left out.
    pub row_to_col: Vec<Option<usize>>,
    pub total_cost: f64,
}

impl Assignment {
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.row_to_col
            .iter()
            .enumerate()
            .filter_map(|(r, c)| c.map(|c| (r, c)))
    }
}

/// Minimum-total-cost injective matching of `min(rows, cols)` pairs.
///
/// Rectangular inputs are padded to a square with dummy entries equal to the
/// largest cost. Among optimal matchings the lexicographically smallest one
/// (by column index per row, dummies ranking last) is returned.
pub fn hungarian(cost: &Matrix) -> Result<Assignment> {
    let (rows, cols) = cost.shape();
    if rows == 0 || cols == 0 {
        return Err(Error::validation("assignment over an empty cost matrix"));
    }
    let n = rows.max(cols);
    let pad = cost
        .as_slice()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut square = vec![vec![pad; n]; n];
    for i in 0..rows {
        square[i][..cols].copy_from_slice(cost.row(i));
    }

    let (perm, u, v) = solve(&square);
    let optimum = perm_cost(&square, &perm);
    let perm = lexicographic_refine(&square, perm, optimum, &u, &v);

    let row_to_col = (0..rows)
        .map(|i| (perm[i] < cols).then_some(perm[i]))
        .collect::<Vec<_>>();
    let total_cost = row_to_col
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.map(|c| cost[(i, c)]))
        .sum();
    Ok(Assignment {
        row_to_col,
        total_cost,
    })
}

fn perm_cost(c: &[Vec<f64>], perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(i, &j)| c[i][j]).sum()
}

fn tolerance(c: &[Vec<f64>]) -> f64 {
    let scale = c
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1.0);
    1e-9 * scale * c.len() as f64
}

/// O(n^3) shortest-augmenting-path assignment on a square matrix.
/// Returns the row permutation and the row/column potentials.
fn solve(c: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = c.len();
    // 1-based internal indexing; index 0 is the virtual source column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = c[i0 - 1][j - 1] - u[i0] - v[j];
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
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0usize; n];
    for j in 1..=n {
        perm[matched_row[j] - 1] = j - 1;
    }
    (perm, u[1..].to_vec(), v[1..].to_vec())
}

/// Walks rows in order, fixing each to the smallest column that still admits
/// an optimal completion. Edges with positive reduced cost under the optimal
/// duals cannot appear in any optimum and are skipped without a re-solve.
fn lexicographic_refine(
    c: &[Vec<f64>],
    mut perm: Vec<usize>,
    optimum: f64,
    u: &[f64],
    v: &[f64],
) -> Vec<usize> {
    let n = c.len();
    let tol = tolerance(c);
    let mut fixed_cost = 0.0;
    let mut used_cols = vec![false; n];
    for i in 0..n {
        for j in 0..perm[i] {
            if used_cols[j] || c[i][j] - u[i] - v[j] > tol {
                continue;
            }
            // Rows after i over the columns left once i takes j.
            let rest_rows: Vec<usize> = (i + 1..n).collect();
            let rest_cols: Vec<usize> = (0..n).filter(|&k| !used_cols[k] && k != j).collect();
            let sub: Vec<Vec<f64>> = rest_rows
                .iter()
                .map(|&r| rest_cols.iter().map(|&k| c[r][k]).collect())
                .collect();
            let (sub_cost, sub_perm) = if sub.is_empty() {
                (0.0, Vec::new())
            } else {
                let (p, _, _) = solve(&sub);
                (perm_cost(&sub, &p), p)
            };
            if (fixed_cost + c[i][j] + sub_cost - optimum).abs() <= tol {
                perm[i] = j;
                for (offset, &sc) in sub_perm.iter().enumerate() {
                    perm[i + 1 + offset] = rest_cols[sc];
                }
                break;
            }
        }
        used_cols[perm[i]] = true;
        fixed_cost += c[i][perm[i]];
    }
    perm
}
