//! K-means and spectral clustering, plus silhouette-driven choice of K.

mod k_search;
mod kmeans;
mod spectral;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub use k_search::{estimate_k, KSearchConfig, KSearchResult};
pub use kmeans::{kmeans, kmeans_with_trace, KMeansTrace};
pub use spectral::{knn_adjacency, spectral, LaplacianKind, ClusterParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMethod {
    Kmeans,
    Spectral,
}

/// An induced partition: per-row cluster ids in `0..k` and one centroid per cluster.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    /// `k x d`; for spectral runs these live in the spectral-embedding space.
    pub centroids: Matrix,
    pub inertia: f64,
    pub k: usize,
    pub method: ClusterMethod,
}

impl ClusterAssignment {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

#[derive(Serialize, Deserialize)]
struct SchemaLine {
    utterance_id: String,
    cluster_id: usize,
}

/// Writes `{"utterance_id", "cluster_id"}` JSONL.
pub fn write_schema(path: &Path, ids: &[String], labels: &[usize]) -> Result<()> {
    if ids.len() != labels.len() {
        return Err(Error::validation("schema ids and labels differ in length"));
    }
    let mut out = Vec::new();
    for (id, &c) in ids.iter().zip(labels) {
        let line = serde_json::to_string(&SchemaLine {
            utterance_id: id.clone(),
            cluster_id: c,
        })
        .expect("schema lines serialize");
        writeln!(out, "{line}").expect("write to vec");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_schema(path: &Path) -> Result<(Vec<String>, Vec<usize>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let l: SchemaLine = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        ids.push(l.utterance_id);
        labels.push(l.cluster_id);
    }
    Ok((ids, labels))
}

/// Writes the K search table as `K,silhouette` CSV.
pub fn write_score_table(path: &Path, table: &[(usize, f64)]) -> Result<()> {
    let mut out = String::from("K,silhouette\n");
    for (k, s) in table {
        out.push_str(&format!("{k},{s}\n"));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Relabels clusters in order of first appearance, permuting centroid rows to match.
pub(crate) fn canonicalize(labels: &mut [usize], centroids: &Matrix) -> Matrix {
    let k = centroids.rows();
    let mut map = vec![usize::MAX; k];
    let mut next = 0;
    for l in labels.iter_mut() {
        if map[*l] == usize::MAX {
            map[*l] = next;
            next += 1;
        }
        *l = map[*l];
    }
    // unused clusters (impossible after repair) keep trailing slots
    for m in map.iter_mut() {
        if *m == usize::MAX {
            *m = next;
            next += 1;
        }
    }
    let mut out = Matrix::zeros(k, centroids.cols());
    for (old, &new) in map.iter().enumerate() {
        out.row_mut(new).copy_from_slice(centroids.row(old));
    }
    out
}
