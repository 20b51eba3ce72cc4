//! Multinomial logistic regression trained on the induced schema.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, norm, Matrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub l2: f64,
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Fixed gradient step; `None` uses the inverse of a Lipschitz bound.
    pub step_size: Option<f64>,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            max_iter: 1000,
            grad_tol: 1e-6,
            step_size: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    /// `C x d`, in the raw (unstandardized) feature space.
    pub weights: Matrix,
    pub biases: Vec<f64>,
    /// Schema cluster id of each row, ascending.
    pub class_ids: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainTrace {
    pub losses: Vec<f64>,
    pub final_grad_norm: f64,
    pub iterations: usize,
}

fn standardize(x: &Matrix) -> (Matrix, Vec<f64>, Vec<f64>) {
    let mean = x.column_means();
    let n = x.rows() as f64;
    let mut sd = vec![0.0; x.cols()];
    for r in x.row_iter() {
        for ((s, v), m) in sd.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    for s in &mut sd {
        *s = (*s / n).sqrt();
        if !(*s > 1e-12) {
            *s = 1.0;
        }
    }
    let mut z = x.clone();
    for i in 0..z.rows() {
        for ((v, m), s) in z.row_mut(i).iter_mut().zip(&mean).zip(&sd) {
            *v = (*v - m) / s;
        }
    }
    (z, mean, sd)
}

/// Largest eigenvalue of `[X 1]^T [X 1] / n` by power iteration.
fn gram_spectral_radius(x: &Matrix) -> f64 {
    let d = x.cols() + 1;
    let n = x.rows() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..1.5)).collect();
    let mut lambda = 0.0;
    for _ in 0..200 {
        let nv = norm(&v);
        v.iter_mut().for_each(|a| *a /= nv);
        let mut next = vec![0.0; d];
        for r in x.row_iter() {
            let s = dot(r, &v[..d - 1]) + v[d - 1];
            for (a, b) in next.iter_mut().zip(r) {
                *a += s * b;
            }
            next[d - 1] += s;
        }
        next.iter_mut().for_each(|a| *a /= n);
        let est = dot(&next, &v);
        v = next;
        if (est - lambda).abs() <= 1e-9 * est.abs() {
            lambda = est;
            break;
        }
        lambda = est;
    }
    lambda
}

struct Objective<'a> {
    x: &'a Matrix,
    y: &'a [usize],
    classes: usize,
    l2: f64,
}

impl Objective<'_> {
    /// Loss plus gradients for `w` (`C x d`) and `b`.
    fn eval(&self, w: &Matrix, b: &[f64]) -> (f64, Matrix, Vec<f64>) {
        let n = self.x.rows() as f64;
        let mut gw = Matrix::zeros(self.classes, self.x.cols());
        let mut gb = vec![0.0; self.classes];
        let mut loss = 0.0;
        let mut scores = vec![0.0; self.classes];
        for (r, &yi) in self.x.row_iter().zip(self.y) {
            for (c, s) in scores.iter_mut().enumerate() {
                *s = dot(w.row(c), r) + b[c];
            }
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
            loss += m + z.ln() - scores[yi];
            for c in 0..self.classes {
                let g = ((scores[c] - m).exp() / z - f64::from(c == yi)) / n;
                gb[c] += g;
                for (a, v) in gw.row_mut(c).iter_mut().zip(r) {
                    *a += g * v;
                }
            }
        }
        let mut penalty = 0.0;
        for (g, wv) in gw.as_mut_slice().iter_mut().zip(w.as_slice()) {
            *g += self.l2 * wv;
            penalty += wv * wv;
        }
        (loss / n + 0.5 * self.l2 * penalty, gw, gb)
    }
}

pub fn train_classifier(h: &Matrix, labels: &[usize], config: &ClassifierConfig) -> Result<LinearClassifier> {
    train_classifier_traced(h, labels, config).map(|(c, _)| c)
}

/// Full-batch gradient descent on standardized features; the learned map is
/// folded back so the returned classifier acts on raw rows.
pub fn train_classifier_traced(
    h: &Matrix,
    labels: &[usize],
    config: &ClassifierConfig,
) -> Result<(LinearClassifier, TrainTrace)> {
    if h.rows() == 0 || h.cols() == 0 {
        return Err(Error::validation("classifier needs a non-empty training matrix"));
    }
    if labels.len() != h.rows() {
        return Err(Error::validation(format!(
            "{} labels for {} rows",
            labels.len(),
            h.rows()
        )));
    }
    let mut class_ids = labels.to_vec();
    class_ids.sort_unstable();
    class_ids.dedup();
    let classes = class_ids.len();
    let y: Vec<usize> = labels
        .iter()
        .map(|l| class_ids.binary_search(l).expect("label listed"))
        .collect();
    if classes == 1 {
        return Ok((
            LinearClassifier {
                weights: Matrix::zeros(1, h.cols()),
                biases: vec![0.0],
                class_ids,
            },
            TrainTrace {
                losses: Vec::new(),
                final_grad_norm: 0.0,
                iterations: 0,
            },
        ));
    }
    let (x, mean, sd) = standardize(h);
    let step = match config.step_size {
        Some(s) if s > 0.0 => s,
        Some(s) => return Err(Error::config(format!("step_size must be positive, got {s}"))),
        None => 1.0 / (0.5 * gram_spectral_radius(&x) + config.l2),
    };
    let obj = Objective {
        x: &x,
        y: &y,
        classes,
        l2: config.l2,
    };
    let mut w = Matrix::zeros(classes, x.cols());
    let mut b = vec![0.0; classes];
    let mut losses = Vec::new();
    let mut grad_norm = f64::INFINITY;
    let mut iterations = 0;
    while iterations < config.max_iter {
        let (loss, gw, gb) = obj.eval(&w, &b);
        losses.push(loss);
        grad_norm = (gw.as_slice().iter().chain(&gb).map(|g| g * g).sum::<f64>()).sqrt();
        if grad_norm < config.grad_tol {
            break;
        }
        for (a, g) in w.as_mut_slice().iter_mut().zip(gw.as_slice()) {
            *a -= step * g;
        }
        for (a, g) in b.iter_mut().zip(&gb) {
            *a -= step * g;
        }
        iterations += 1;
    }
    // fold the standardization into the affine map
    let mut weights = Matrix::zeros(classes, h.cols());
    let mut biases = b;
    for c in 0..classes {
        for j in 0..h.cols() {
            let wv = w[(c, j)] / sd[j];
            weights[(c, j)] = wv;
            biases[c] -= wv * mean[j];
        }
    }
    Ok((
        LinearClassifier {
            weights,
            biases,
            class_ids,
        },
        TrainTrace {
            losses,
            final_grad_norm: grad_norm,
            iterations,
        },
    ))
}

impl LinearClassifier {
    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn scores(&self, row: &[f64]) -> Vec<f64> {
        self.weights
            .row_iter()
            .zip(&self.biases)
            .map(|(w, b)| dot(w, row) + b)
            .collect()
    }

    /// Argmax class id per row; ties go to the smaller class id.
    pub fn predict(&self, h: &Matrix) -> Result<Vec<usize>> {
        if h.cols() != self.dim() {
            return Err(Error::validation(format!(
                "classifier expects {} features, got {}",
                self.dim(),
                h.cols()
            )));
        }
        Ok(h.row_iter()
            .map(|r| {
                let s = self.scores(r);
                let best = s
                    .iter()
                    .enumerate()
                    .fold(0, |best, (c, &v)| if v > s[best] { c } else { best });
                self.class_ids[best]
            })
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("classifier serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Self = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if c.class_ids.is_empty() || c.weights.rows() != c.class_ids.len() || c.biases.len() != c.class_ids.len() {
            return Err(Error::validation(format!(
                "{}: classifier shapes disagree",
                path.display()
            )));
        }
        Ok(c)
    }
}

#[derive(Serialize, Deserialize)]
struct PredictionLine {
    utterance_id: String,
    predicted_cluster: usize,
}

pub fn write_predictions(path: &Path, ids: &[String], predicted: &[usize]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (id, &p) in ids.iter().zip(predicted) {
        let line = serde_json::to_string(&PredictionLine {
            utterance_id: id.clone(),
            predicted_cluster: p,
        })
        .expect("prediction serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<(String, usize)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p: PredictionLine = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((p.utterance_id, p.predicted_cluster));
    }
    Ok(out)
}
