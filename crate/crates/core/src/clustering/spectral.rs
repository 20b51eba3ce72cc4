use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{kmeans, ClusterAssignment, ClusterMethod};
use crate::error::{Error, Result};
use crate::numerics::{squared_distance, symmetric_eigen, Matrix};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaplacianKind {
    /// `I - D^-1/2 A D^-1/2`, spectral rows normalized before k-means.
    #[default]
    Normalized,
    /// `D - A` (ratio cut), spectral rows used as-is.
    Unnormalized,
}

/// Restart and affinity settings shared by k-means and spectral runs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterParams {
    pub n_neighbors: usize,
    pub n_init: usize,
    pub max_iter: usize,
    pub laplacian: LaplacianKind,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            n_neighbors: 10,
            n_init: 10,
            max_iter: 300,
            laplacian: LaplacianKind::Normalized,
        }
    }
}

/// Symmetrized 0/1 kNN adjacency: `i ~ j` when either lists the other among its
/// `n_neighbors` nearest rows (ties broken by row index).
pub fn knn_adjacency(x: &Matrix, n_neighbors: usize) -> Result<Matrix> {
    let n = x.rows();
    if n_neighbors == 0 || n_neighbors >= n {
        return Err(Error::validation(format!(
            "n_neighbors must lie in [1, {}), got {n_neighbors}",
            n
        )));
    }
    let mut a = Matrix::zeros(n, n);
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        order.clear();
        order.extend(
            (0..n)
                .filter(|&j| j != i)
                .map(|j| (squared_distance(x.row(i), x.row(j)), j)),
        );
        order.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)));
        for &(_, j) in &order[..n_neighbors] {
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
    }
    Ok(a)
}

/// Spectral clustering over a kNN affinity graph.
pub fn spectral<R: Rng + ?Sized>(
    x: &Matrix,
    k: usize,
    cfg: &ClusterParams,
    rng: &mut R,
) -> Result<ClusterAssignment> {
    let n = x.rows();
    if k == 0 || k > n {
        return Err(Error::validation(format!(
            "cannot form {k} clusters from {n} rows"
        )));
    }
    if k == 1 {
        let centroids = Matrix::zeros(1, 1);
        return Ok(ClusterAssignment {
            labels: vec![0; n],
            centroids,
            inertia: 0.0,
            k,
            method: ClusterMethod::Spectral,
        });
    }
    let adjacency = knn_adjacency(x, cfg.n_neighbors)?;
    let degree: Vec<f64> = adjacency.row_iter().map(|r| r.iter().sum()).collect();
    let isolated = degree.iter().filter(|&&d| d == 0.0).count();
    if isolated > 0 {
        warn!("{isolated} isolated vertices in the kNN graph; their D^-1/2 entries are set to 0");
    }

    let mut lap = Matrix::zeros(n, n);
    match cfg.laplacian {
        LaplacianKind::Normalized => {
            let inv_sqrt: Vec<f64> = degree
                .iter()
                .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
                .collect();
            for i in 0..n {
                for j in 0..n {
                    let id = if i == j { 1.0 } else { 0.0 };
                    lap[(i, j)] = id - inv_sqrt[i] * adjacency[(i, j)] * inv_sqrt[j];
                }
            }
        }
        LaplacianKind::Unnormalized => {
            for i in 0..n {
                for j in 0..n {
                    lap[(i, j)] = if i == j { degree[i] } else { 0.0 } - adjacency[(i, j)];
                }
            }
        }
    }

    let eig = symmetric_eigen(&lap, k)?;
    let mut embedding = eig.eigenvectors;
    if cfg.laplacian == LaplacianKind::Normalized {
        for i in 0..n {
            let r = embedding.row_mut(i);
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                r.iter_mut().for_each(|v| *v /= norm);
            }
        }
    }
    let mut assignment = kmeans(&embedding, k, cfg.n_init, cfg.max_iter, rng)?;
    assignment.method = ClusterMethod::Spectral;
    Ok(assignment)
}
