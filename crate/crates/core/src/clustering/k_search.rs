use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{kmeans, spectral, ClusterAssignment, ClusterMethod, ClusterParams};
use crate::error::{Error, Result};
use crate::numerics::{silhouette_score, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KSearchConfig {
    pub k_min: usize,
    pub k_max: usize,
    /// Number of K values drawn; a value at or above the range size sweeps it all.
    pub trials: usize,
    pub rng_seed: u64,
}

impl Default for KSearchConfig {
    fn default() -> Self {
        Self {
            k_min: 5,
            k_max: 50,
            trials: 46,
            rng_seed: 0,
        }
    }
}

impl KSearchConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if n <= self.k_min {
            return Err(Error::validation(format!(
                "{n} rows cannot be split into at least {} clusters",
                self.k_min
            )));
        }
        if self.k_min < 2 || self.k_min > self.k_max || self.k_max > n - 1 {
            return Err(Error::validation(format!(
                "K range [{}, {}] invalid for {n} rows (need 2 <= k_min <= k_max <= n-1)",
                self.k_min, self.k_max
            )));
        }
        if self.trials == 0 {
            return Err(Error::config("K search needs at least one trial"));
        }
        Ok(())
    }

    /// The K values evaluated, ascending.
    pub fn candidates(&self) -> Vec<usize> {
        let span = self.k_max - self.k_min + 1;
        if self.trials >= span {
            return (self.k_min..=self.k_max).collect();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        let mut ks: Vec<usize> = sample(&mut rng, span, self.trials)
            .into_iter()
            .map(|i| self.k_min + i)
            .collect();
        ks.sort_unstable();
        ks
    }
}

#[derive(Clone, Debug)]
pub struct KSearchResult {
    pub k_best: usize,
    /// `(K, silhouette)` ascending in K.
    pub score_table: Vec<(usize, f64)>,
    pub best: ClusterAssignment,
}

/// Clusters `x` at every candidate K and keeps the one with the highest
/// silhouette (ties toward smaller K). Silhouettes are measured in `x`.
///
/// Each K uses its own generator seeded from `(rng_seed, K)`, so the outcome
/// for a given K does not depend on which other K values were drawn.
pub fn estimate_k(
    x: &Matrix,
    cfg: &KSearchConfig,
    method: ClusterMethod,
    params: &ClusterParams,
) -> Result<KSearchResult> {
    cfg.validate(x.rows())?;
    let mut table = Vec::new();
    let mut best: Option<(f64, ClusterAssignment)> = None;
    for k in cfg.candidates() {
        let mut rng = ChaCha8Rng::seed_from_u64(per_k_seed(cfg.rng_seed, k));
        let a = cluster_once(x, k, method, params, &mut rng)?;
        let s = silhouette_score(x, &a.labels)?;
        table.push((k, s));
        if best.as_ref().is_none_or(|(b, _)| s > *b) {
            best = Some((s, a));
        }
    }
    let (_, best) = best.expect("at least one candidate");
    Ok(KSearchResult {
        k_best: best.k,
        score_table: table,
        best,
    })
}

pub(crate) fn cluster_once<R: Rng + ?Sized>(
    x: &Matrix,
    k: usize,
    method: ClusterMethod,
    params: &ClusterParams,
    rng: &mut R,
) -> Result<ClusterAssignment> {
    match method {
        ClusterMethod::Kmeans => kmeans(x, k, params.n_init, params.max_iter, rng),
        ClusterMethod::Spectral => spectral(x, k, params, rng),
    }
}

fn per_k_seed(seed: u64, k: usize) -> u64 {
    seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}
