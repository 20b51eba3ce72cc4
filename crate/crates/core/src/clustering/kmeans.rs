use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::{canonicalize, ClusterAssignment, ClusterMethod};
use crate::error::{Error, Result};
use crate::numerics::{squared_distance, Matrix};

/// Inertia after each Lloyd iteration of every restart.
#[derive(Clone, Debug, Default)]
pub struct KMeansTrace {
    pub restarts: Vec<Vec<f64>>,
}

/// Best-of-`n_init` k-means (k-means++ seeding, Lloyd iterations) by inertia.
pub fn kmeans<R: Rng + ?Sized>(
    x: &Matrix,
    k: usize,
    n_init: usize,
    max_iter: usize,
    rng: &mut R,
) -> Result<ClusterAssignment> {
    kmeans_with_trace(x, k, n_init, max_iter, rng).map(|(a, _)| a)
}

pub fn kmeans_with_trace<R: Rng + ?Sized>(
    x: &Matrix,
    k: usize,
    n_init: usize,
    max_iter: usize,
    rng: &mut R,
) -> Result<(ClusterAssignment, KMeansTrace)> {
    let n = x.rows();
    if k == 0 || k > n {
        return Err(Error::validation(format!(
            "cannot form {k} clusters from {n} rows"
        )));
    }
    if n_init == 0 {
        return Err(Error::config("kmeans needs n_init >= 1"));
    }
    // Each restart draws from its own stream so restarts are independent units.
    let seeds: Vec<u64> = (0..n_init).map(|_| rng.random()).collect();
    let mut trace = KMeansTrace::default();
    let mut best: Option<(Vec<usize>, Matrix, f64)> = None;
    for seed in seeds {
        let mut local = ChaCha8Rng::seed_from_u64(seed);
        let (labels, centroids, inertia, history) = lloyd(x, k, max_iter, &mut local);
        trace.restarts.push(history);
        if best.as_ref().is_none_or(|b| inertia < b.2) {
            best = Some((labels, centroids, inertia));
        }
    }
    let (mut labels, centroids, inertia) = best.expect("n_init >= 1");
    let centroids = canonicalize(&mut labels, &centroids);
    Ok((
        ClusterAssignment {
            labels,
            centroids,
            inertia,
            k,
            method: ClusterMethod::Kmeans,
        },
        trace,
    ))
}

fn lloyd<R: Rng + ?Sized>(
    x: &Matrix,
    k: usize,
    max_iter: usize,
    rng: &mut R,
) -> (Vec<usize>, Matrix, f64, Vec<f64>) {
    let mut centroids = plus_plus_seeds(x, k, rng);
    let mut labels = assign(x, &centroids);
    repair_empty(x, k, &mut labels, &centroids);
    let mut history = Vec::new();
    for _ in 0..max_iter {
        centroids = means(x, k, &labels);
        history.push(inertia(x, &labels, &centroids));
        let mut next = assign(x, &centroids);
        repair_empty(x, k, &mut next, &centroids);
        if next == labels {
            break;
        }
        labels = next;
    }
    let centroids = means(x, k, &labels);
    let total = inertia(x, &labels, &centroids);
    (labels, centroids, total, history)
}

/// k-means++: first centre uniform, the rest by squared-distance weighting.
fn plus_plus_seeds<R: Rng + ?Sized>(x: &Matrix, k: usize, rng: &mut R) -> Matrix {
    let n = x.rows();
    let mut chosen = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    let first = rng.random_range(0..n);
    chosen.push(first);
    taken[first] = true;
    let mut d2: Vec<f64> = x.row_iter().map(|r| squared_distance(r, x.row(first))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                if target < w {
                    idx = i;
                    break;
                }
                target -= w;
            }
            // floating leftovers can land on a zero-weight tail
            if d2[idx] <= 0.0 {
                idx = (0..n).rev().find(|&i| d2[i] > 0.0).unwrap_or(idx);
            }
            idx
        } else {
            // all remaining points coincide with a centre: pick any untaken row
            let free: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(pick);
        taken[pick] = true;
        for (i, r) in x.row_iter().enumerate() {
            d2[i] = d2[i].min(squared_distance(r, x.row(pick)));
        }
    }
    x.select_rows(&chosen)
}

fn assign(x: &Matrix, centroids: &Matrix) -> Vec<usize> {
    x.row_iter()
        .map(|r| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, cen) in centroids.row_iter().enumerate() {
                let d = squared_distance(r, cen);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Moves, for each empty cluster, the point of the largest cluster farthest
/// from that cluster's centroid.
fn repair_empty(x: &Matrix, k: usize, labels: &mut [usize], centroids: &Matrix) {
    loop {
        let mut sizes = vec![0usize; k];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let largest = (0..k).max_by_key(|&c| (sizes[c], std::cmp::Reverse(c))).unwrap();
        let far = (0..labels.len())
            .filter(|&i| labels[i] == largest)
            .max_by(|&i, &j| {
                let di = squared_distance(x.row(i), centroids.row(largest));
                let dj = squared_distance(x.row(j), centroids.row(largest));
                di.total_cmp(&dj).then(j.cmp(&i))
            })
            .unwrap();
        labels[far] = empty;
    }
}

fn means(x: &Matrix, k: usize, labels: &[usize]) -> Matrix {
    let mut sums = Matrix::zeros(k, x.cols());
    let mut counts = vec![0usize; k];
    for (r, &l) in x.row_iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums.row_mut(l).iter_mut().zip(r) {
            *s += v;
        }
    }
    for (c, &count) in counts.iter().enumerate() {
        if count > 0 {
            sums.row_mut(c).iter_mut().for_each(|s| *s /= count as f64);
        }
    }
    sums
}

fn inertia(x: &Matrix, labels: &[usize], centroids: &Matrix) -> f64 {
    x.row_iter()
        .zip(labels)
        .map(|(r, &l)| squared_distance(r, centroids.row(l)))
        .sum()
}
