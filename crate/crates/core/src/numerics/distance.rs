use serde::{Deserialize, Serialize};

use super::matrix::{dot, euclidean, norm};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairwiseMetric {
    Euclidean,
    CosineSimilarity,
}

/// Symmetric `n x n` matrix of pairwise Euclidean distances or cosine similarities between rows.
pub fn pairwise_metric(x: &Matrix, metric: PairwiseMetric) -> Result<Matrix> {
    let n = x.rows();
    if n == 0 {
        return Err(Error::validation("pairwise metric of an empty matrix"));
    }
    let mut out = Matrix::zeros(n, n);
    match metric {
        PairwiseMetric::Euclidean => {
            for i in 0..n {
                for j in (i + 1)..n {
                    let d = euclidean(x.row(i), x.row(j));
                    out[(i, j)] = d;
                    out[(j, i)] = d;
                }
            }
        }
        PairwiseMetric::CosineSimilarity => {
            let norms: Vec<f64> = x.row_iter().map(norm).collect();
            if let Some(i) = norms.iter().position(|&v| v == 0.0) {
                return Err(Error::domain(format!(
                    "row {i} has zero norm; cosine similarity undefined"
                )));
            }
            for i in 0..n {
                out[(i, i)] = 1.0;
                for j in (i + 1)..n {
                    let c = (dot(x.row(i), x.row(j)) / (norms[i] * norms[j])).clamp(-1.0, 1.0);
                    out[(i, j)] = c;
                    out[(j, i)] = c;
                }
            }
        }
    }
    Ok(out)
}
