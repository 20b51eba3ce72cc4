//! Predicted-to-reference label alignment and the evaluation metric suite.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::hungarian::hungarian;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentMode {
    /// Injective Hungarian matching on the contingency table.
    #[default]
    OneToOne,
    /// Each predicted cluster maps to its majority reference label.
    Overlapping,
}

/// Counts of `(predicted, reference)` co-occurrences over dense label indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contingency {
    /// Distinct predicted label ids, ascending; row `i` is `predicted[i]`.
    pub predicted: Vec<usize>,
    /// Distinct reference label ids, ascending; column `j` is `reference[j]`.
    pub reference: Vec<usize>,
    pub counts: Vec<Vec<usize>>,
}

impl Contingency {
    pub fn new(pred: &[usize], reference: &[usize]) -> Result<Self> {
        if pred.len() != reference.len() {
            return Err(Error::validation(format!(
                "{} predicted labels vs {} reference labels",
                pred.len(),
                reference.len()
            )));
        }
        if pred.is_empty() {
            return Err(Error::validation("no labels to compare"));
        }
        let p_ids = distinct(pred);
        let r_ids = distinct(reference);
        let mut counts = vec![vec![0usize; r_ids.len()]; p_ids.len()];
        for (p, r) in pred.iter().zip(reference) {
            let i = p_ids.binary_search(p).unwrap();
            let j = r_ids.binary_search(r).unwrap();
            counts[i][j] += 1;
        }
        Ok(Self {
            predicted: p_ids,
            reference: r_ids,
            counts,
        })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    fn row_sums(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    fn col_sums(&self) -> Vec<usize> {
        (0..self.reference.len())
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }
}

fn distinct(labels: &[usize]) -> Vec<usize> {
    let mut v = labels.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub mode: AlignmentMode,
    /// Predicted label id -> reference label id.
    pub mapping: BTreeMap<usize, usize>,
    pub unmatched_predicted: Vec<usize>,
}

impl AlignmentResult {
    pub fn aligned(&self, pred: usize) -> Option<usize> {
        self.mapping.get(&pred).copied()
    }
}

fn align_contingency(table: &Contingency, mode: AlignmentMode) -> Result<AlignmentResult> {
    let mut mapping = BTreeMap::new();
    match mode {
        AlignmentMode::OneToOne => {
            let cost = Matrix::from_vec(
                table.predicted.len(),
                table.reference.len(),
                table
                    .counts
                    .iter()
                    .flatten()
                    .map(|&c| -(c as f64))
                    .collect(),
            )?;
            for (i, j) in hungarian(&cost)?.pairs() {
                mapping.insert(table.predicted[i], table.reference[j]);
            }
        }
        AlignmentMode::Overlapping => {
            for (i, row) in table.counts.iter().enumerate() {
                // first maximal count, i.e. ties toward the smaller reference id
                let j = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
                mapping.insert(table.predicted[i], table.reference[j]);
            }
        }
    }
    let unmatched_predicted = table
        .predicted
        .iter()
        .copied()
        .filter(|p| !mapping.contains_key(p))
        .collect();
    Ok(AlignmentResult {
        mode,
        mapping,
        unmatched_predicted,
    })
}

/// Aligns predicted cluster ids to reference label ids.
pub fn align_labels(pred: &[usize], reference: &[usize], mode: AlignmentMode) -> Result<AlignmentResult> {
    align_contingency(&Contingency::new(pred, reference)?, mode)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc: f64,
    pub nmi: f64,
    /// `ari_raw` clamped to `[0, 1]`.
    pub ari: f64,
    pub ari_raw: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub n: usize,
    pub alignment: AlignmentResult,
    pub contingency: Contingency,
}

/// ACC, NMI, ARI and macro precision/recall/F1 of `pred` against `reference`.
pub fn compute_metrics(pred: &[usize], reference: &[usize], mode: AlignmentMode) -> Result<MetricsReport> {
    let table = Contingency::new(pred, reference)?;
    let alignment = align_contingency(&table, mode)?;
    let n = table.total();

    let mut correct = 0usize;
    // per reference column: true positives and predicted-as counts
    let mut tp = vec![0usize; table.reference.len()];
    let mut predicted_as = vec![0usize; table.reference.len()];
    for (i, row) in table.counts.iter().enumerate() {
        let Some(target) = alignment.aligned(table.predicted[i]) else {
            continue;
        };
        let j = table.reference.binary_search(&target).unwrap();
        correct += row[j];
        tp[j] += row[j];
        predicted_as[j] += row.iter().sum::<usize>();
    }
    let acc = correct as f64 / n as f64;

    let support = table.col_sums();
    let classes = support.len() as f64;
    let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
    for j in 0..support.len() {
        let p = if predicted_as[j] > 0 {
            tp[j] as f64 / predicted_as[j] as f64
        } else {
            0.0
        };
        let r = tp[j] as f64 / support[j] as f64;
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        p_sum += p;
        r_sum += r;
        f_sum += f;
    }

    let nmi = nmi(&table);
    let ari_raw = ari(&table);
    Ok(MetricsReport {
        acc,
        nmi,
        ari: ari_raw.clamp(0.0, 1.0),
        ari_raw,
        precision: p_sum / classes,
        recall: r_sum / classes,
        f1: f_sum / classes,
        n,
        alignment,
        contingency: table,
    })
}

fn entropy(counts: &[usize], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `2 I(Y;C) / (H(Y) + H(C))`, natural logs; 1 when both labelings are constant.
fn nmi(t: &Contingency) -> f64 {
    let n = t.total() as f64;
    let rows = t.row_sums();
    let cols = t.col_sums();
    let h_pred = entropy(&rows, n);
    let h_ref = entropy(&cols, n);
    if h_pred + h_ref == 0.0 {
        return 1.0;
    }
    let mut mi = 0.0;
    for (i, row) in t.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let c = c as f64;
            mi += c / n * (c * n / (rows[i] as f64 * cols[j] as f64)).ln();
        }
    }
    (2.0 * mi / (h_pred + h_ref)).clamp(0.0, 1.0)
}

fn comb2(x: usize) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index from the contingency table; 1 in the degenerate cases
/// where the expected and maximal index coincide.
fn ari(t: &Contingency) -> f64 {
    let n = t.total();
    let sum_cells: f64 = t.counts.iter().flatten().map(|&c| comb2(c)).sum();
    let sum_rows: f64 = t.row_sums().into_iter().map(comb2).sum();
    let sum_cols: f64 = t.col_sums().into_iter().map(comb2).sum();
    let total = comb2(n);
    if total == 0.0 {
        return 1.0;
    }
    let expected = sum_rows * sum_cols / total;
    let max_index = 0.5 * (sum_rows + sum_cols);
    let denom = max_index - expected;
    if denom == 0.0 {
        1.0
    } else {
        (sum_cells - expected) / denom
    }
}
