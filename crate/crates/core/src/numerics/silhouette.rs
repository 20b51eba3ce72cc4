use super::matrix::euclidean;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Mean silhouette coefficient of `labels` over the rows of `x` (Euclidean distance).
///
/// Points in singleton clusters contribute 0, as do points with `a = b = 0`.
pub fn silhouette_score(x: &Matrix, labels: &[usize]) -> Result<f64> {
    let n = x.rows();
    if labels.len() != n {
        return Err(Error::validation(format!(
            "{} labels for {n} rows",
            labels.len()
        )));
    }
    let (dense, k) = densify(labels);
    if k < 2 {
        return Err(Error::domain(
            "silhouette needs at least two distinct labels",
        ));
    }
    let mut sizes = vec![0usize; k];
    for &c in &dense {
        sizes[c] += 1;
    }

    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if i != j {
                sums[dense[j]] += euclidean(x.row(i), x.row(j));
            }
        }
        let own = dense[i];
        if sizes[own] == 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

/// Maps arbitrary label ids onto `0..k` in ascending id order.
fn densify(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut ids: Vec<usize> = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let dense = labels
        .iter()
        .map(|l| ids.binary_search(l).expect("label present"))
        .collect();
    (dense, ids.len())
}
