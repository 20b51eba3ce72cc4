//! Multi-domain-batch training of the MDB projection head.
//!
//! Every step draws a batch split near-equally over the registered datasets;
//! each sample is classified against its own dataset's label set only, and the
//! per-sample losses are averaged jointly for one update.

mod loss;
mod optim;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use loss::{
    cosine_nll, cosine_softmax_loss, cosine_softmax_loss_value, cosine_softmax_probabilities,
    HeadGrads, LabeledSample,
};
pub use optim::{AdamWConfig, OptimizerState};

use crate::corpus::{sample_domain_batch, DatasetRegistry, DomainBatch};
use crate::error::{Error, Result};
use crate::numerics::io::{preview, EmbeddingTable};
use crate::numerics::{dot, norm};
use crate::views::ProjectionHead;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IterationsRule {
    /// `ceil(largest training split / batch_size)`.
    LargestDatasetOverBatch,
    Explicit(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MdbConfig {
    pub tau: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub iterations_per_epoch: IterationsRule,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub rng_seed: u64,
}

impl Default for MdbConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl MdbConfig {
    /// Full-scale hyperparameters.
    pub fn full_scale() -> Self {
        Self {
            tau: 0.05,
            batch_size: 64,
            epochs: 30,
            learning_rate: 5e-6,
            weight_decay: 1e-2,
            warmup_fraction: 0.1,
            iterations_per_epoch: IterationsRule::LargestDatasetOverBatch,
            hidden_dims: vec![256],
            output_dim: 256,
            rng_seed: 0,
        }
    }

    /// Same shape with a learning rate suited to a small head trained from scratch.
    pub fn desk() -> Self {
        Self {
            learning_rate: 1e-3,
            ..Self::full_scale()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full_scale" => Ok(Self::full_scale()),
            "desk" => Ok(Self::desk()),
            _ => Err(Error::config(format!("unknown MDB preset {name:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::config(format!(
                "warmup_fraction must lie in [0, 1), got {}",
                self.warmup_fraction
            )));
        }
        if self.batch_size == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::config("batch_size and layer widths must be positive"));
        }
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::config("learning_rate and weight_decay must be non-negative"));
        }
        if self.iterations_per_epoch == IterationsRule::Explicit(0) {
            return Err(Error::config("explicit iterations_per_epoch must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetAccuracy {
    pub dataset_id: String,
    pub validation: Option<f64>,
    pub test: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct MdbOutcome {
    pub head: ProjectionHead,
    pub loss_trace: Vec<LossPoint>,
    pub accuracy: Vec<DatasetAccuracy>,
}

/// Per-dataset `(record, intent)` pools after the 70/20/10 split.
#[derive(Clone, Debug, Default)]
pub struct SplitPools {
    pub train: Vec<Vec<(usize, usize)>>,
    pub valid: Vec<Vec<(usize, usize)>>,
    pub test: Vec<Vec<(usize, usize)>>,
}

/// Shuffles each dataset's labeled samples and cuts them 70/20/10.
pub fn split_registry(registry: &DatasetRegistry, rng: &mut ChaCha8Rng) -> SplitPools {
    let mut pools = SplitPools::default();
    for d in registry.datasets() {
        let mut s = d.labeled_samples();
        s.shuffle(rng);
        let n = s.len();
        let n_train = ((0.7 * n as f64).round() as usize).clamp(n.min(1), n);
        let n_valid = ((0.2 * n as f64).round() as usize).min(n - n_train);
        let test = s.split_off(n_train + n_valid);
        let valid = s.split_off(n_train);
        pools.train.push(s);
        pools.valid.push(valid);
        pools.test.push(test);
    }
    pools
}

/// Fresh head with one classifier per registered dataset.
pub fn init_head(
    config: &MdbConfig,
    registry: &DatasetRegistry,
    input_dim: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ProjectionHead> {
    let mut dims = vec![input_dim];
    dims.extend(&config.hidden_dims);
    dims.push(config.output_dim);
    let mut head = ProjectionHead::init("MDB", &dims, rng)?;
    for d in registry.datasets() {
        head.add_dataset_head(&d.dataset_id, d.labels.clone(), rng);
    }
    Ok(head)
}

fn check_embedded(registry: &DatasetRegistry, embeddings: &EmbeddingTable) -> Result<()> {
    let missing: Vec<String> = registry
        .datasets()
        .iter()
        .flat_map(|d| {
            d.labeled_samples()
                .into_iter()
                .map(move |(r, _)| &d.records[r].utterance_id)
        })
        .filter(|id| !embeddings.contains(id))
        .cloned()
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::validation(format!(
            "{} training records have no base embedding: {}",
            missing.len(),
            preview(&missing)
        )))
    }
}

/// Resolves a batch into loss samples.
pub fn batch_samples<'a>(
    registry: &'a DatasetRegistry,
    embeddings: &'a EmbeddingTable,
    batch: &DomainBatch,
) -> Result<Vec<LabeledSample<'a>>> {
    let mut out = Vec::with_capacity(batch.total_size());
    for g in &batch.groups {
        let d = &registry.datasets()[g.dataset];
        for s in &g.samples {
            let id = &d.records[s.record].utterance_id;
            let x = embeddings
                .get(id)
                .ok_or_else(|| Error::validation(format!("no base embedding for {id:?}")))?;
            out.push(LabeledSample {
                x,
                dataset_id: &d.dataset_id,
                intent: s.intent,
            });
        }
    }
    Ok(out)
}

/// Nearest-class-weight (cosine) accuracy on the given pool of one dataset.
pub fn dataset_accuracy(
    head: &ProjectionHead,
    registry: &DatasetRegistry,
    embeddings: &EmbeddingTable,
    dataset: usize,
    pool: &[(usize, usize)],
) -> Option<f64> {
    if pool.is_empty() {
        return None;
    }
    let d = &registry.datasets()[dataset];
    let w = &head.dataset_heads.get(&d.dataset_id)?.weight;
    let mut correct = 0usize;
    for &(r, intent) in pool {
        let h = head.forward_row(embeddings.get(&d.records[r].utterance_id)?);
        let pred = w
            .row_iter()
            .map(|row| dot(&h, row) / norm(row).max(f64::MIN_POSITIVE))
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (l, s)| if s > best.1 { (l, s) } else { best })
            .0;
        correct += usize::from(pred == intent);
    }
    Some(correct as f64 / pool.len() as f64)
}

pub fn iterations_per_epoch(config: &MdbConfig, pools: &SplitPools) -> usize {
    match config.iterations_per_epoch {
        IterationsRule::Explicit(n) => n,
        IterationsRule::LargestDatasetOverBatch => {
            let largest = pools.train.iter().map(Vec::len).max().unwrap_or(0);
            largest.div_ceil(config.batch_size).max(1)
        }
    }
}

pub fn train_mdb(
    config: &MdbConfig,
    registry: &DatasetRegistry,
    embeddings: &EmbeddingTable,
) -> Result<MdbOutcome> {
    config.validate()?;
    if registry.is_empty() {
        return Err(Error::validation("registry has no datasets"));
    }
    check_embedded(registry, embeddings)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut head = init_head(config, registry, embeddings.dim(), &mut rng)?;
    rng.set_stream(1);
    let pools = split_registry(registry, &mut rng);
    rng.set_stream(2);

    let per_epoch = iterations_per_epoch(config, &pools);
    let total = config.epochs * per_epoch;
    let mut opt = OptimizerState::new(
        AdamWConfig::new(config.learning_rate, config.weight_decay, config.warmup_fraction),
        head.all_params().len(),
        total,
    );
    let mut loss_trace = Vec::with_capacity(total);
    let mut params = head.all_params();
    for step in 1..=total {
        let batch = sample_domain_batch(&pools.train, config.batch_size, &mut rng)?;
        let samples = batch_samples(registry, embeddings, &batch)?;
        let (loss, grads) = cosine_softmax_loss(&head, &samples, config.tau)?;
        let lr = opt.update(&mut params, &grads.flatten());
        head.set_all_params(&params);
        loss_trace.push(LossPoint { step, loss, lr });
        if step % per_epoch == 0 {
            log::debug!("mdb epoch {} loss {loss:.6}", step / per_epoch);
        }
    }
    let accuracy = registry
        .datasets()
        .iter()
        .enumerate()
        .map(|(k, d)| DatasetAccuracy {
            dataset_id: d.dataset_id.clone(),
            validation: dataset_accuracy(&head, registry, embeddings, k, &pools.valid[k]),
            test: dataset_accuracy(&head, registry, embeddings, k, &pools.test[k]),
        })
        .collect();
    Ok(MdbOutcome {
        head,
        loss_trace,
        accuracy,
    })
}

pub fn write_loss_trace(path: &Path, trace: &[LossPoint]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut body = String::from("step,loss,lr\n");
    for p in trace {
        body.push_str(&format!("{},{},{}\n", p.step, p.loss, p.lr));
    }
    w.write_all(body.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}
