//! End-to-end induction: extract, embed, compose views, choose K, cluster,
//! train the schema classifier, predict the test split and score it.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::align::{compute_metrics, AlignmentMode, MetricsReport};
use crate::clustering::{estimate_k, write_schema, write_score_table, ClusterMethod, ClusterParams, KSearchConfig};
use crate::corpus::{extract_intent_utterances, load_dialogues, UtteranceRecord};
use crate::error::{Error, Result};
use crate::numerics::io::{preview, EmbeddingTable};
use crate::numerics::Matrix;
use crate::schema_classifier::{read_predictions, train_classifier, write_predictions, ClassifierConfig};
use crate::views::{compose_masked, head_forward, normalize_rows, ProjectionHead, ViewMask};

pub const SCHEMA_FILE: &str = "schema.jsonl";
pub const SCORES_FILE: &str = "k_scores.csv";
pub const CLASSIFIER_FILE: &str = "classifier.json";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const TIMINGS_FILE: &str = "timings.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub train_corpus: PathBuf,
    #[serde(default)]
    pub test_corpus: Option<PathBuf>,
    pub embeddings: PathBuf,
    #[serde(default)]
    pub mdb_checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub pgt_checkpoint: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default = "all_views")]
    pub view_mask: ViewMask,
    #[serde(default = "default_method")]
    pub clustering_method: ClusterMethod,
    #[serde(default)]
    pub cluster_params: ClusterParams,
    #[serde(default)]
    pub k_search: KSearchConfig,
    #[serde(default)]
    pub alignment_mode: AlignmentMode,
    /// Scale every row of every view to unit norm before concatenation.
    #[serde(default)]
    pub normalize_views: bool,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub rng_seed: u64,
    /// Directory relative paths resolve against; the config file's directory when loaded.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn all_views() -> ViewMask {
    ViewMask::ALL
}

fn default_method() -> ClusterMethod {
    ClusterMethod::Kmeans
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Checks that come before any compute.
    pub fn validate(&self) -> Result<()> {
        if !self.view_mask.any() {
            return Err(Error::config("at least one view must be enabled"));
        }
        let views = [
            (1, "MDB", &self.mdb_checkpoint),
            (2, "PGT", &self.pgt_checkpoint),
        ];
        for (i, name, ckpt) in views {
            if !self.view_mask.0[i] {
                continue;
            }
            match ckpt {
                None => {
                    return Err(Error::config(format!(
                        "view {name} is enabled but no checkpoint is configured"
                    )))
                }
                Some(p) if !self.resolve(p).is_file() => {
                    return Err(Error::config(format!(
                        "{name} checkpoint {} not found",
                        self.resolve(p).display()
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

/// Per-stage seed: the first eight bytes of `SHA-256(root || stage)`.
pub fn stage_seed(root: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(stage.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub induced_k: usize,
    /// Relative to the output directory.
    pub schema_path: PathBuf,
    pub n_train: usize,
    pub n_test: usize,
    pub score_table: Vec<(usize, f64)>,
    pub cluster_sizes: Vec<usize>,
    pub train_metrics: Option<MetricsReport>,
    pub test_metrics: Option<MetricsReport>,
    pub config: PipelineConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTimings {
    /// `(stage, seconds)` in execution order.
    pub stages: Vec<(String, f64)>,
}

impl RunTimings {
    fn lap(&mut self, stage: &str, since: &mut Instant) {
        self.stages.push((stage.to_string(), since.elapsed().as_secs_f64()));
        *since = Instant::now();
    }
}

struct Views {
    mdb: Option<ProjectionHead>,
    pgt: Option<ProjectionHead>,
    mask: ViewMask,
    normalize: bool,
}

impl Views {
    fn compose(&self, x: &Matrix) -> Result<Matrix> {
        let forward = |head: &Option<ProjectionHead>, on: bool| -> Result<Matrix> {
            match head {
                Some(h) if on => head_forward(h, x),
                _ => Ok(Matrix::zeros(x.rows(), 0)),
            }
        };
        let mut z = [
            if self.mask.0[0] { x.clone() } else { Matrix::zeros(x.rows(), 0) },
            forward(&self.mdb, self.mask.0[1])?,
            forward(&self.pgt, self.mask.0[2])?,
        ];
        if self.normalize {
            for (v, &on) in z.iter_mut().zip(&self.mask.0) {
                if on {
                    *v = normalize_rows(v)?;
                }
            }
        }
        Ok(compose_masked([&z[0], &z[1], &z[2]], self.mask)?.h)
    }
}

/// Gold intents as indices into their sorted distinct values; rows without one are dropped.
fn gold_pairs(records: &[UtteranceRecord], predicted: &[usize]) -> Option<(Vec<usize>, Vec<usize>)> {
    let names: BTreeSet<&str> = records.iter().filter_map(|r| r.gold_intent.as_deref()).collect();
    if names.is_empty() {
        return None;
    }
    let index: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (*n, i)).collect();
    Some(
        records
            .iter()
            .zip(predicted)
            .filter_map(|(r, &p)| r.gold_intent.as_deref().map(|g| (p, index[g])))
            .unzip(),
    )
}

fn load_head(cfg: &PipelineConfig, path: &Option<PathBuf>, on: bool, dim: usize) -> Result<Option<ProjectionHead>> {
    match path {
        Some(p) if on => {
            let head = ProjectionHead::load(&cfg.resolve(p))?;
            if head.input_dim() != dim {
                return Err(Error::config(format!(
                    "checkpoint {} expects {}-dim embeddings, table has {dim}",
                    p.display(),
                    head.input_dim()
                )));
            }
            Ok(Some(head))
        }
        _ => Ok(None),
    }
}

pub fn induce(config: &PipelineConfig) -> Result<(RunReport, RunTimings)> {
    config.validate()?;
    let mut timings = RunTimings::default();
    let mut clock = Instant::now();

    let train = extract_intent_utterances(&load_dialogues(&config.resolve(&config.train_corpus))?);
    if train.is_empty() {
        return Err(Error::validation("training corpus has no intent-bearing turns"));
    }
    let test = match &config.test_corpus {
        Some(p) => extract_intent_utterances(&load_dialogues(&config.resolve(p))?),
        None => Vec::new(),
    };
    let table = EmbeddingTable::read_jsonl(&config.resolve(&config.embeddings))?;
    timings.lap("load", &mut clock);

    let views = Views {
        mdb: load_head(config, &config.mdb_checkpoint, config.view_mask.0[1], table.dim())?,
        pgt: load_head(config, &config.pgt_checkpoint, config.view_mask.0[2], table.dim())?,
        mask: config.view_mask,
        normalize: config.normalize_views,
    };
    let train_ids: Vec<&str> = train.iter().map(|r| r.utterance_id.as_str()).collect();
    let h_train = views.compose(&table.gather(&train_ids)?)?;
    timings.lap("views", &mut clock);

    let mut k_search = config.k_search;
    k_search.rng_seed = stage_seed(config.rng_seed, "estimate_k");
    if k_search.k_max >= h_train.rows() {
        log::warn!(
            "k_max {} lowered to {} for {} training rows",
            k_search.k_max,
            h_train.rows() - 1,
            h_train.rows()
        );
        k_search.k_max = h_train.rows() - 1;
    }
    let search = estimate_k(&h_train, &k_search, config.clustering_method, &config.cluster_params)?;
    let schema = search.best.labels.clone();
    log::info!("induced K = {}", search.k_best);
    timings.lap("cluster", &mut clock);

    let out_dir = config.resolve(&config.output_dir);
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let train_id_strings: Vec<String> = train.iter().map(|r| r.utterance_id.clone()).collect();
    write_schema(&out_dir.join(SCHEMA_FILE), &train_id_strings, &schema)?;
    write_score_table(&out_dir.join(SCORES_FILE), &search.score_table)?;

    let classifier = train_classifier(&h_train, &schema, &config.classifier)?;
    classifier.save(&out_dir.join(CLASSIFIER_FILE))?;
    timings.lap("classifier", &mut clock);

    let mut test_metrics = None;
    if !test.is_empty() {
        let test_ids: Vec<&str> = test.iter().map(|r| r.utterance_id.as_str()).collect();
        let h_test = views.compose(&table.gather(&test_ids)?)?;
        let predicted = classifier.predict(&h_test)?;
        let ids: Vec<String> = test.iter().map(|r| r.utterance_id.clone()).collect();
        write_predictions(&out_dir.join(PREDICTIONS_FILE), &ids, &predicted)?;
        if let Some((p, g)) = gold_pairs(&test, &predicted) {
            test_metrics = Some(compute_metrics(&p, &g, config.alignment_mode)?);
        }
    }
    let train_metrics = match gold_pairs(&train, &schema) {
        Some((p, g)) => Some(compute_metrics(&p, &g, config.alignment_mode)?),
        None => None,
    };
    timings.lap("evaluate", &mut clock);

    let report = RunReport {
        induced_k: search.k_best,
        schema_path: PathBuf::from(SCHEMA_FILE),
        n_train: train.len(),
        n_test: test.len(),
        score_table: search.score_table,
        cluster_sizes: search.best.cluster_sizes(),
        train_metrics,
        test_metrics,
        config: config.clone(),
    };
    let report_json = serde_json::to_string_pretty(&report).expect("report serializes");
    let report_path = out_dir.join(REPORT_FILE);
    std::fs::write(&report_path, report_json).map_err(|e| Error::io(&report_path, e))?;
    let timings_path = out_dir.join(TIMINGS_FILE);
    std::fs::write(&timings_path, serde_json::to_string_pretty(&timings).expect("timings serialize"))
        .map_err(|e| Error::io(&timings_path, e))?;
    Ok((report, timings))
}

/// Joins predictions with the gold intents of a reference dialogue file on `utterance_id`.
/// Predictions for reference turns without an intent are ignored.
pub fn evaluate(predictions: &Path, references: &Path, mode: AlignmentMode) -> Result<MetricsReport> {
    let refs = load_dialogues(references)?;
    let preds = read_predictions(predictions)?;
    let mut by_id: HashMap<&str, usize> = HashMap::with_capacity(preds.len());
    for (id, p) in &preds {
        if by_id.insert(id.as_str(), *p).is_some() {
            return Err(Error::validation(format!("prediction for {id:?} appears twice")));
        }
    }
    let known: HashMap<&str, Option<&str>> = refs
        .records()
        .map(|r| (r.utterance_id.as_str(), r.gold_intent.as_deref()))
        .collect();
    let unknown: Vec<String> = preds
        .iter()
        .filter(|(id, _)| !known.contains_key(id.as_str()))
        .map(|(id, _)| id.clone())
        .collect();
    if !unknown.is_empty() {
        return Err(Error::validation(format!(
            "{} predicted ids are absent from the references: {}",
            unknown.len(),
            preview(&unknown)
        )));
    }
    let labeled: Vec<&UtteranceRecord> = refs.records().filter(|r| r.gold_intent.is_some()).collect();
    let missing: Vec<String> = labeled
        .iter()
        .filter(|r| !by_id.contains_key(r.utterance_id.as_str()))
        .map(|r| r.utterance_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::validation(format!(
            "{} reference ids have no prediction: {}",
            missing.len(),
            preview(&missing)
        )));
    }
    if labeled.is_empty() {
        return Err(Error::validation("reference file has no gold intents"));
    }
    let records: Vec<UtteranceRecord> = labeled.into_iter().cloned().collect();
    let predicted: Vec<usize> = records.iter().map(|r| by_id[r.utterance_id.as_str()]).collect();
    let (p, g) = gold_pairs(&records, &predicted).expect("labeled records present");
    compute_metrics(&p, &g, mode)
}
