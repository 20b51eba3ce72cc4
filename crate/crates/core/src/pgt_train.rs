//! Pseudo-label fine-tuning with a Siamese pair of heads.
//!
//! The learnable twin clusters each batch with K-means. The fixed twin scores
//! the same partition by cosine softmax against its own centroids, and its
//! cross-entropy gradient is carried over to the learnable twin as
//! `grad_learnable = grad_fixed + W_learnable - W_fixed`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::align::{compute_metrics, hungarian, AlignmentMode};
use crate::clustering::kmeans;
use crate::corpus::DatasetRegistry;
use crate::error::{Error, Result};
use crate::mdb_train::{AdamWConfig, OptimizerState};
use crate::numerics::io::EmbeddingTable;
use crate::numerics::{dot, norm, silhouette_score, Matrix};
use crate::views::{head_forward, LayerGrads, ProjectionHead};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefreshPolicy {
    Never,
    PerEpoch,
    EveryNSteps(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PgtConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    /// Temperature of the soft labels.
    pub tau_pgt: f64,
    pub refresh: RefreshPolicy,
    /// Share of each dataset held out for the per-epoch trace.
    pub holdout_fraction: f64,
    pub kmeans_n_init: usize,
    pub kmeans_max_iter: usize,
    pub rng_seed: u64,
}

impl Default for PgtConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            learning_rate: 1e-3,
            weight_decay: 1e-2,
            warmup_fraction: 0.1,
            tau_pgt: 0.1,
            refresh: RefreshPolicy::PerEpoch,
            holdout_fraction: 0.2,
            kmeans_n_init: 3,
            kmeans_max_iter: 100,
            rng_seed: 0,
        }
    }
}

impl PgtConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_pgt > 0.0 && self.tau_pgt.is_finite()) {
            return Err(Error::config(format!("tau_pgt must be positive, got {}", self.tau_pgt)));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) || !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::config("warmup_fraction and holdout_fraction must lie in [0, 1)"));
        }
        if self.batch_size < 2 || self.kmeans_n_init == 0 || self.kmeans_max_iter == 0 {
            return Err(Error::config("batch_size must be at least 2 and kmeans settings positive"));
        }
        if self.refresh == RefreshPolicy::EveryNSteps(0) {
            return Err(Error::config("every_n_steps refresh needs n > 0"));
        }
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::config("learning_rate and weight_decay must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SiamesePair {
    pub learnable: ProjectionHead,
    pub fixed: ProjectionHead,
}

impl SiamesePair {
    pub fn new(checkpoint: &ProjectionHead) -> Self {
        Self {
            learnable: checkpoint.clone(),
            fixed: checkpoint.clone(),
        }
    }

    pub fn refresh(&mut self) {
        self.fixed.clone_from(&self.learnable);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PgtStepTrace {
    pub pseudo_labels: Vec<usize>,
    pub remap: Vec<usize>,
    pub loss: f64,
    pub grad_fixed: Vec<f64>,
    pub grad_transferred: Vec<f64>,
}

impl PgtStepTrace {
    pub fn remap_is_identity(&self) -> bool {
        self.remap.iter().enumerate().all(|(i, &j)| i == j)
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d = norm(a) * norm(b);
    if d > 0.0 {
        dot(a, b) / d
    } else {
        0.0
    }
}

/// Permutation `p` with learnable cluster `i` matched to fixed cluster `p[i]`,
/// maximizing summed centroid cosine similarity.
pub fn remap_clusters(centroids_learnable: &Matrix, centroids_fixed: &Matrix) -> Result<Vec<usize>> {
    if centroids_learnable.rows() != centroids_fixed.rows() {
        return Err(Error::validation(format!(
            "centroid counts differ: {} vs {}",
            centroids_learnable.rows(),
            centroids_fixed.rows()
        )));
    }
    if centroids_learnable.cols() != centroids_fixed.cols() {
        return Err(Error::validation(format!(
            "centroid dimensions differ: {} vs {}",
            centroids_learnable.cols(),
            centroids_fixed.cols()
        )));
    }
    let k = centroids_learnable.rows();
    let mut cost = Matrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            cost[(i, j)] = -cosine(centroids_learnable.row(i), centroids_fixed.row(j));
        }
    }
    let a = hungarian(&cost)?;
    Ok(a.row_to_col
        .into_iter()
        .map(|c| c.expect("square assignment is complete"))
        .collect())
}

/// `grad_fixed + w_learnable - w_fixed`, elementwise.
pub fn transfer_gradient(grad_fixed: &[f64], w_learnable: &[f64], w_fixed: &[f64]) -> Result<Vec<f64>> {
    if grad_fixed.len() != w_learnable.len() || w_learnable.len() != w_fixed.len() {
        return Err(Error::validation(format!(
            "gradient transfer shapes differ: {}, {}, {}",
            grad_fixed.len(),
            w_learnable.len(),
            w_fixed.len()
        )));
    }
    Ok(grad_fixed
        .iter()
        .zip(w_learnable)
        .zip(w_fixed)
        .map(|((g, l), f)| g + (l - f))
        .collect())
}

/// Centroids of `z` for a partition into `k` clusters.
pub fn partition_centroids(z: &Matrix, partition: &[usize], k: usize) -> Result<(Matrix, Vec<usize>)> {
    let mut c = Matrix::zeros(k, z.cols());
    let mut counts = vec![0usize; k];
    for (row, &p) in z.row_iter().zip(partition) {
        if p >= k {
            return Err(Error::validation(format!("cluster id {p} out of range for K={k}")));
        }
        counts[p] += 1;
        for (a, v) in c.row_mut(p).iter_mut().zip(row) {
            *a += v;
        }
    }
    for (j, &n) in counts.iter().enumerate() {
        if n == 0 {
            return Err(Error::validation(format!("cluster {j} of the partition is empty")));
        }
        c.row_mut(j).iter_mut().for_each(|v| *v /= n as f64);
    }
    Ok((c, counts))
}

fn unit_rows(m: &Matrix, what: &str) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut units = Vec::with_capacity(m.rows());
    let mut norms = Vec::with_capacity(m.rows());
    for (i, r) in m.row_iter().enumerate() {
        let n = norm(r);
        if !(n > 0.0) {
            return Err(Error::domain(format!("{what} {i} has zero norm")));
        }
        units.push(r.iter().map(|v| v / n).collect());
        norms.push(n);
    }
    Ok((units, norms))
}

fn soft_label_log_probs(z_hat: &[Vec<f64>], c_hat: &[Vec<f64>], tau: f64) -> Vec<Vec<f64>> {
    z_hat
        .iter()
        .map(|z| {
            let logits: Vec<f64> = c_hat.iter().map(|c| dot(z, c) / tau).collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + logits.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
            logits.into_iter().map(|s| s - lse).collect()
        })
        .collect()
}

fn check_labels(x: &Matrix, partition: &[usize], targets: &[usize], k: usize) -> Result<()> {
    if partition.len() != x.rows() || targets.len() != x.rows() {
        return Err(Error::validation("label vectors must match the batch rows"));
    }
    if x.rows() == 0 {
        return Err(Error::validation("empty batch"));
    }
    if let Some(t) = targets.iter().find(|&&t| t >= k) {
        return Err(Error::validation(format!("target {t} out of range for K={k}")));
    }
    Ok(())
}

/// Mean cross-entropy of the hard `targets` under the fixed head's soft labels,
/// with the partition held constant.
pub fn pseudo_label_loss_value(
    fixed: &ProjectionHead,
    x: &Matrix,
    partition: &[usize],
    targets: &[usize],
    k: usize,
    tau: f64,
) -> Result<f64> {
    check_labels(x, partition, targets, k)?;
    let z = head_forward(fixed, x)?;
    let (c, _) = partition_centroids(&z, partition, k)?;
    let (z_hat, _) = unit_rows(&z, "representation")?;
    let (c_hat, _) = unit_rows(&c, "centroid")?;
    let logp = soft_label_log_probs(&z_hat, &c_hat, tau);
    Ok(-logp.iter().zip(targets).map(|(lp, &t)| lp[t]).sum::<f64>() / x.rows() as f64)
}

/// [`pseudo_label_loss_value`] and its gradient with respect to the fixed head's layers.
/// Gradients flow through the representations and through the centroid means.
pub fn pseudo_label_loss(
    fixed: &ProjectionHead,
    x: &Matrix,
    partition: &[usize],
    targets: &[usize],
    k: usize,
    tau: f64,
) -> Result<(f64, LayerGrads)> {
    check_labels(x, partition, targets, k)?;
    if x.cols() != fixed.input_dim() {
        return Err(Error::validation(format!(
            "head expects {} input columns, got {}",
            fixed.input_dim(),
            x.cols()
        )));
    }
    let traces: Vec<_> = x.row_iter().map(|r| fixed.forward_trace(r)).collect();
    let z = Matrix::from_rows(&traces.iter().map(|t| t.output.clone()).collect::<Vec<_>>())
        .map_err(|_| Error::domain("fixed head produced non-finite output"))?;
    let (c, counts) = partition_centroids(&z, partition, k)?;
    let (z_hat, z_norm) = unit_rows(&z, "representation")?;
    let (c_hat, c_norm) = unit_rows(&c, "centroid")?;
    let logp = soft_label_log_probs(&z_hat, &c_hat, tau);
    let b = x.rows() as f64;
    let loss = -logp.iter().zip(targets).map(|(lp, &t)| lp[t]).sum::<f64>() / b;

    let dim = z.cols();
    let mut d_c_hat = vec![vec![0.0; dim]; k];
    let mut d_z: Vec<Vec<f64>> = Vec::with_capacity(z.rows());
    for (i, lp) in logp.iter().enumerate() {
        let mut d_z_hat = vec![0.0; dim];
        for (j, &l) in lp.iter().enumerate() {
            let ds = (l.exp() - f64::from(j == targets[i])) / (b * tau);
            for ((dz, dc), (&cv, &zv)) in d_z_hat
                .iter_mut()
                .zip(&mut d_c_hat[j])
                .zip(c_hat[j].iter().zip(&z_hat[i]))
            {
                *dz += ds * cv;
                *dc += ds * zv;
            }
        }
        let along = dot(&d_z_hat, &z_hat[i]);
        d_z.push(
            d_z_hat
                .iter()
                .zip(&z_hat[i])
                .map(|(d, u)| (d - u * along) / z_norm[i])
                .collect(),
        );
    }
    let d_c: Vec<Vec<f64>> = d_c_hat
        .iter()
        .enumerate()
        .map(|(j, dch)| {
            let along = dot(dch, &c_hat[j]);
            dch.iter()
                .zip(&c_hat[j])
                .map(|(d, u)| (d - u * along) / c_norm[j])
                .collect()
        })
        .collect();
    let mut grads = LayerGrads::zeros_like(fixed);
    for ((trace, dz), &p) in traces.iter().zip(&mut d_z).zip(partition) {
        let share = counts[p] as f64;
        for (a, g) in dz.iter_mut().zip(&d_c[p]) {
            *a += g / share;
        }
        fixed.backward(trace, dz, &mut grads);
    }
    Ok((loss, grads))
}

/// One Siamese update. Only `learnable` is modified.
#[allow(clippy::too_many_arguments)]
pub fn pgt_step(
    learnable: &mut ProjectionHead,
    fixed: &ProjectionHead,
    x: &Matrix,
    k: usize,
    optimizer: &mut OptimizerState,
    config: &PgtConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PgtStepTrace> {
    if k > x.rows() {
        return Err(Error::validation(format!(
            "K={k} exceeds the {} rows of the batch",
            x.rows()
        )));
    }
    let z_learn = head_forward(learnable, x)?;
    let assignment = kmeans(&z_learn, k, config.kmeans_n_init, config.kmeans_max_iter, rng)?;
    let z_fixed = head_forward(fixed, x)?;
    let (c_fixed, _) = partition_centroids(&z_fixed, &assignment.labels, k)?;
    let remap = remap_clusters(&assignment.centroids, &c_fixed)?;
    let targets: Vec<usize> = assignment.labels.iter().map(|&p| remap[p]).collect();
    let (loss, grads) = pseudo_label_loss(fixed, x, &assignment.labels, &targets, k, config.tau_pgt)?;
    let grad_fixed = grads.flatten();
    let mut w_learn = learnable.layer_params();
    let grad_transferred = transfer_gradient(&grad_fixed, &w_learn, &fixed.layer_params())?;
    optimizer.update(&mut w_learn, &grad_transferred);
    learnable.set_layer_params(&w_learn);
    Ok(PgtStepTrace {
        pseudo_labels: assignment.labels,
        remap,
        loss,
        grad_fixed,
        grad_transferred,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PgtStepRecord {
    pub step: usize,
    pub epoch: usize,
    pub dataset_id: String,
    pub loss: f64,
    pub remap_identity: bool,
}

/// Held-out clustering quality of the learnable twin; epoch 0 is before training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochEval {
    pub epoch: usize,
    pub dataset_id: String,
    pub acc: Option<f64>,
    pub silhouette: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct PgtOutcome {
    pub head: ProjectionHead,
    pub step_trace: Vec<PgtStepRecord>,
    pub epoch_trace: Vec<EpochEval>,
}

/// Passed to the observer after every step.
pub struct PgtEvent<'a> {
    pub epoch: usize,
    pub step: usize,
    pub dataset_id: &'a str,
    pub trace: &'a PgtStepTrace,
    pub pair: &'a SiamesePair,
}

struct DatasetRows {
    id: String,
    k: usize,
    train: Matrix,
    holdout: Matrix,
    holdout_gold: Vec<Option<usize>>,
}

fn prepare(
    registry: &DatasetRegistry,
    embeddings: &EmbeddingTable,
    config: &PgtConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<DatasetRows>> {
    let mut out = Vec::with_capacity(registry.len());
    for d in registry.datasets() {
        let ids: Vec<&str> = d.records.iter().map(|r| r.utterance_id.as_str()).collect();
        let x = embeddings.gather(&ids)?;
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.shuffle(rng);
        let n_hold = (config.holdout_fraction * ids.len() as f64).round() as usize;
        let (hold, train) = order.split_at(n_hold);
        let k = d.label_count();
        if train.len() < k {
            return Err(Error::validation(format!(
                "dataset {:?} has {} training rows for K={k}",
                d.dataset_id,
                train.len()
            )));
        }
        out.push(DatasetRows {
            id: d.dataset_id.clone(),
            k,
            train: x.select_rows(train),
            holdout: x.select_rows(hold),
            holdout_gold: hold
                .iter()
                .map(|&i| d.records[i].gold_intent.as_deref().and_then(|g| d.label_index(g)))
                .collect(),
        });
    }
    Ok(out)
}

/// Shuffled batches of at least `max(batch_size, k)` rows; a short tail joins the previous batch.
fn batches(n: usize, batch_size: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let size = batch_size.max(k);
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < k.max(2)) {
        let tail = out.pop().unwrap();
        out.last_mut().unwrap().extend(tail);
    }
    out
}

fn batch_count(n: usize, batch_size: usize, k: usize) -> usize {
    let size = batch_size.max(k);
    let full = n / size;
    let rem = n % size;
    if full == 0 {
        1
    } else if rem == 0 || rem < k.max(2) {
        full
    } else {
        full + 1
    }
}

fn evaluate_holdout(
    head: &ProjectionHead,
    rows: &DatasetRows,
    epoch: usize,
    config: &PgtConfig,
    seed_stream: u64,
) -> Result<EpochEval> {
    let mut eval = EpochEval {
        epoch,
        dataset_id: rows.id.clone(),
        acc: None,
        silhouette: None,
    };
    if rows.holdout.rows() <= rows.k {
        return Ok(eval);
    }
    let z = head_forward(head, &rows.holdout)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    rng.set_stream(seed_stream);
    let a = kmeans(&z, rows.k, config.kmeans_n_init.max(5), config.kmeans_max_iter, &mut rng)?;
    eval.silhouette = silhouette_score(&z, &a.labels).ok();
    let (pred, gold): (Vec<usize>, Vec<usize>) = a
        .labels
        .iter()
        .zip(&rows.holdout_gold)
        .filter_map(|(&p, g)| g.map(|g| (p, g)))
        .unzip();
    if !gold.is_empty() {
        eval.acc = Some(compute_metrics(&pred, &gold, AlignmentMode::OneToOne)?.acc);
    }
    Ok(eval)
}

pub fn train_pgt(
    config: &PgtConfig,
    registry: &DatasetRegistry,
    checkpoint: &ProjectionHead,
    embeddings: &EmbeddingTable,
) -> Result<PgtOutcome> {
    train_pgt_observed(config, registry, checkpoint, embeddings, |_| {})
}

pub fn train_pgt_observed<F>(
    config: &PgtConfig,
    registry: &DatasetRegistry,
    checkpoint: &ProjectionHead,
    embeddings: &EmbeddingTable,
    mut observer: F,
) -> Result<PgtOutcome>
where
    F: FnMut(&PgtEvent<'_>),
{
    config.validate()?;
    if registry.is_empty() {
        return Err(Error::validation("registry has no datasets"));
    }
    if checkpoint.input_dim() != embeddings.dim() {
        return Err(Error::validation(format!(
            "checkpoint expects {}-dim embeddings, table has {}",
            checkpoint.input_dim(),
            embeddings.dim()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    rng.set_stream(1);
    let data = prepare(registry, embeddings, config, &mut rng)?;
    rng.set_stream(2);

    let per_epoch: usize = data
        .iter()
        .map(|d| batch_count(d.train.rows(), config.batch_size, d.k))
        .sum();
    let mut pair = SiamesePair::new(checkpoint);
    let mut opt = OptimizerState::new(
        AdamWConfig::new(config.learning_rate, config.weight_decay, config.warmup_fraction),
        pair.learnable.layer_param_count(),
        config.epochs * per_epoch,
    );
    let eval_stream = |d: usize| 1 << 32 | d as u64;
    let mut epoch_trace = Vec::new();
    for (d, rows) in data.iter().enumerate() {
        epoch_trace.push(evaluate_holdout(&pair.learnable, rows, 0, config, eval_stream(d))?);
    }
    let mut step_trace = Vec::new();
    let mut step = 0usize;
    for epoch in 1..=config.epochs {
        for rows in &data {
            for idx in batches(rows.train.rows(), config.batch_size, rows.k, &mut rng) {
                step += 1;
                let x = rows.train.select_rows(&idx);
                let mut step_rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
                step_rng.set_stream(2 << 32 | step as u64);
                let trace = pgt_step(
                    &mut pair.learnable,
                    &pair.fixed,
                    &x,
                    rows.k,
                    &mut opt,
                    config,
                    &mut step_rng,
                )?;
                observer(&PgtEvent {
                    epoch,
                    step,
                    dataset_id: &rows.id,
                    trace: &trace,
                    pair: &pair,
                });
                step_trace.push(PgtStepRecord {
                    step,
                    epoch,
                    dataset_id: rows.id.clone(),
                    loss: trace.loss,
                    remap_identity: trace.remap_is_identity(),
                });
                if let RefreshPolicy::EveryNSteps(n) = config.refresh {
                    if step % n == 0 {
                        pair.refresh();
                    }
                }
            }
        }
        if config.refresh == RefreshPolicy::PerEpoch {
            pair.refresh();
        }
        for (d, rows) in data.iter().enumerate() {
            epoch_trace.push(evaluate_holdout(&pair.learnable, rows, epoch, config, eval_stream(d))?);
        }
        log::debug!("pgt epoch {epoch} done after {step} steps");
    }
    let mut head = pair.learnable;
    if config.epochs > 0 {
        head.view_id = "PGT".into();
    }
    Ok(PgtOutcome {
        head,
        step_trace,
        epoch_trace,
    })
}

pub fn write_step_trace(path: &Path, trace: &[PgtStepRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut body = String::from("step,dataset_id,loss,remap_identity\n");
    for r in trace {
        body.push_str(&format!("{},{},{},{}\n", r.step, r.dataset_id, r.loss, r.remap_identity));
    }
    w.write_all(body.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}
