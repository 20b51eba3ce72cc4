//! Per-utterance views and their concatenation into the multi-view representation.
//!
//! The general-embedding view is the base embedding itself. The two trained
//! views come from a [`ProjectionHead`]: an affine stack with `tanh` between
//! layers and a linear final layer. Training code differentiates through the
//! head with [`ProjectionHead::forward_trace`] and [`ProjectionHead::backward`].

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{norm, Matrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineLayer {
    /// `out x in`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl AffineLayer {
    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weight
                .row_iter()
                .zip(&self.bias)
                .map(|(w, b)| w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + b),
        );
    }
}

/// Per-dataset normalized classification weights, rows in label order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHead {
    pub labels: Vec<String>,
    /// `L^k x output_dim`.
    pub weight: Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionHead {
    pub view_id: String,
    pub layers: Vec<AffineLayer>,
    pub dataset_heads: BTreeMap<String, DatasetHead>,
}

/// Activations recorded by [`ProjectionHead::forward_trace`] for one row.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// `inputs[l]` is the input to layer `l` (post-tanh for `l > 0`).
    inputs: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

/// Gradients with the same layout as the head's layer stack.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl LayerGrads {
    pub fn zeros_like(head: &ProjectionHead) -> Self {
        Self {
            weights: head
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.weight.rows(), l.weight.cols()))
                .collect(),
            biases: head.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
        out
    }
}

impl ProjectionHead {
    /// Glorot-uniform weights, zero biases. `dims = [input, hidden.., output]`.
    pub fn init<R: Rng + ?Sized>(view_id: &str, dims: &[usize], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::config(format!("invalid head dimensions {dims:?}")));
        }
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let values = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-bound..=bound))
                    .collect();
                AffineLayer {
                    weight: Matrix::from_vec(fan_out, fan_in, values).expect("finite init"),
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        Ok(Self {
            view_id: view_id.to_string(),
            layers,
            dataset_heads: BTreeMap::new(),
        })
    }

    pub fn from_layers(view_id: &str, layers: Vec<AffineLayer>) -> Result<Self> {
        let head = Self {
            view_id: view_id.to_string(),
            layers,
            dataset_heads: BTreeMap::new(),
        };
        head.validate()?;
        Ok(head)
    }

    /// Adds a Glorot-initialized classification matrix for `dataset_id`.
    pub fn add_dataset_head<R: Rng + ?Sized>(
        &mut self,
        dataset_id: &str,
        labels: Vec<String>,
        rng: &mut R,
    ) {
        let out = self.output_dim();
        let bound = (6.0 / (labels.len() + out) as f64).sqrt();
        let values = (0..labels.len() * out)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        let weight = Matrix::from_vec(labels.len(), out, values).expect("finite init");
        self.dataset_heads
            .insert(dataset_id.to_string(), DatasetHead { labels, weight });
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, AffineLayer::input_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, AffineLayer::output_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::validation("projection head has no layers"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.bias.len() != l.output_dim() {
                return Err(Error::validation(format!(
                    "layer {i}: bias length {} for {} outputs",
                    l.bias.len(),
                    l.output_dim()
                )));
            }
            if i > 0 && self.layers[i - 1].output_dim() != l.input_dim() {
                return Err(Error::validation(format!(
                    "layer {i} expects {} inputs, previous layer emits {}",
                    l.input_dim(),
                    self.layers[i - 1].output_dim()
                )));
            }
        }
        for (id, h) in &self.dataset_heads {
            if h.weight.cols() != self.output_dim() || h.weight.rows() != h.labels.len() {
                return Err(Error::validation(format!(
                    "dataset head {id:?} has shape {:?}, expected ({}, {})",
                    h.weight.shape(),
                    h.labels.len(),
                    self.output_dim()
                )));
            }
        }
        Ok(())
    }

    /// Forward pass of a single row.
    pub fn forward_row(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.apply(&cur, &mut next);
            if i < last {
                next.iter_mut().for_each(|v| *v = v.tanh());
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    pub fn forward_trace(&self, x: &[f64]) -> ForwardTrace {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut next = Vec::new();
            layer.apply(&cur, &mut next);
            if i < last {
                next.iter_mut().for_each(|v| *v = v.tanh());
            }
            inputs.push(std::mem::replace(&mut cur, next));
        }
        ForwardTrace {
            inputs,
            output: cur,
        }
    }

    /// Accumulates `d loss / d params` into `grads` given `d loss / d output` for one traced row.
    pub fn backward(&self, trace: &ForwardTrace, grad_output: &[f64], grads: &mut LayerGrads) {
        let mut delta = grad_output.to_vec();
        for l in (0..self.layers.len()).rev() {
            let input = &trace.inputs[l];
            let gw = &mut grads.weights[l];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                grads.biases[l][o] += d;
                for (g, &x) in gw.row_mut(o).iter_mut().zip(input) {
                    *g += d * x;
                }
            }
            if l == 0 {
                break;
            }
            // input[l] = tanh(pre_{l-1}); d pre = d input * (1 - input^2)
            let w = &self.layers[l].weight;
            let mut prev = vec![0.0; w.cols()];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (p, &wij) in prev.iter_mut().zip(w.row(o)) {
                    *p += d * wij;
                }
            }
            for (p, &a) in prev.iter_mut().zip(input) {
                *p *= 1.0 - a * a;
            }
            delta = prev;
        }
    }

    /// Layer-stack parameters flattened as `[W0, b0, W1, b1, ...]`.
    pub fn layer_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.layer_param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn layer_param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum()
    }

    pub fn set_layer_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.layer_param_count(), "parameter length mismatch");
        let mut pos = 0;
        for l in &mut self.layers {
            let w = l.weight.as_mut_slice();
            w.copy_from_slice(&flat[pos..pos + w.len()]);
            pos += w.len();
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[pos..pos + nb]);
            pos += nb;
        }
    }

    /// Layer parameters followed by dataset-head weights in id order.
    pub fn all_params(&self) -> Vec<f64> {
        let mut out = self.layer_params();
        for h in self.dataset_heads.values() {
            out.extend_from_slice(h.weight.as_slice());
        }
        out
    }

    pub fn set_all_params(&mut self, flat: &[f64]) {
        let n = self.layer_param_count();
        self.set_layer_params(&flat[..n]);
        let mut pos = n;
        for h in self.dataset_heads.values_mut() {
            let w = h.weight.as_mut_slice();
            w.copy_from_slice(&flat[pos..pos + w.len()]);
            pos += w.len();
        }
        assert_eq!(pos, flat.len(), "parameter length mismatch");
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ckpt = HeadCheckpoint {
            view_id: self.view_id.clone(),
            input_dim: self.input_dim(),
            output_dim: self.output_dim(),
            layers: self.layers.clone(),
            dataset_heads: self.dataset_heads.clone(),
        };
        let text = serde_json::to_string(&ckpt).expect("heads serialize");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: HeadCheckpoint = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let head = Self {
            view_id: ckpt.view_id,
            layers: ckpt.layers,
            dataset_heads: ckpt.dataset_heads,
        };
        head.validate()?;
        if head.input_dim() != ckpt.input_dim || head.output_dim() != ckpt.output_dim {
            return Err(Error::validation(format!(
                "{}: declared dims {}->{} disagree with layers {}->{}",
                path.display(),
                ckpt.input_dim,
                ckpt.output_dim,
                head.input_dim(),
                head.output_dim()
            )));
        }
        Ok(head)
    }
}

/// On-disk head checkpoint.
#[derive(Serialize, Deserialize)]
struct HeadCheckpoint {
    view_id: String,
    input_dim: usize,
    output_dim: usize,
    layers: Vec<AffineLayer>,
    dataset_heads: BTreeMap<String, DatasetHead>,
}

/// Forwards every row of `x` through `head`.
pub fn head_forward(head: &ProjectionHead, x: &Matrix) -> Result<Matrix> {
    if x.cols() != head.input_dim() {
        return Err(Error::validation(format!(
            "head {:?} expects {} input columns, got {}",
            head.view_id,
            head.input_dim(),
            x.cols()
        )));
    }
    let mut values = Vec::with_capacity(x.rows() * head.output_dim());
    for r in x.row_iter() {
        values.extend(head.forward_row(r));
    }
    Matrix::from_vec(x.rows(), head.output_dim(), values)
        .map_err(|_| Error::domain(format!("head {:?} produced non-finite output", head.view_id)))
}

pub const VIEW_IDS: [&str; 3] = ["GE", "MDB", "PGT"];

/// Which of the three views (GE, MDB, PGT) take part, in `T/F` notation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ViewMask(pub [bool; 3]);

impl ViewMask {
    pub const ALL: ViewMask = ViewMask([true; 3]);

    pub fn any(&self) -> bool {
        self.0.iter().any(|&b| b)
    }

    pub fn notation(&self) -> String {
        self.0.iter().map(|&b| if b { 'T' } else { 'F' }).collect()
    }
}

impl std::str::FromStr for ViewMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let chars: Vec<char> = s.chars().collect();
        if chars.len() != 3 {
            return Err(Error::config(format!("view mask {s:?} must have 3 letters")));
        }
        let mut mask = [false; 3];
        for (m, c) in mask.iter_mut().zip(chars) {
            *m = match c.to_ascii_uppercase() {
                'T' => true,
                'F' => false,
                _ => return Err(Error::config(format!("view mask {s:?}: use T or F"))),
            };
        }
        Ok(ViewMask(mask))
    }
}

impl Serialize for ViewMask {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.notation())
    }
}

impl<'de> Deserialize<'de> for ViewMask {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Concatenated multi-view representation with its column-block layout.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiViewEmbedding {
    pub h: Matrix,
    pub view_dims: [usize; 3],
}

impl MultiViewEmbedding {
    pub fn view_ids(&self) -> [&'static str; 3] {
        VIEW_IDS
    }

    /// The column block of view `i` (0 = GE, 1 = MDB, 2 = PGT).
    pub fn view(&self, i: usize) -> Matrix {
        let start: usize = self.view_dims[..i].iter().sum();
        self.h.column_block(start, start + self.view_dims[i])
    }
}

/// Concatenates `Z1 | Z2 | Z3` row-wise, in GE, MDB, PGT order.
pub fn compose_views(z1: &Matrix, z2: &Matrix, z3: &Matrix) -> Result<MultiViewEmbedding> {
    let h = Matrix::hconcat(&[z1, z2, z3])?;
    Ok(MultiViewEmbedding {
        h,
        view_dims: [z1.cols(), z2.cols(), z3.cols()],
    })
}

/// Like [`compose_views`], replacing every disabled view by a zero-width block.
pub fn compose_masked(views: [&Matrix; 3], mask: ViewMask) -> Result<MultiViewEmbedding> {
    if !mask.any() {
        return Err(Error::config("at least one view must be enabled"));
    }
    let rows = views[mask.0.iter().position(|&b| b).unwrap()].rows();
    let empty = Matrix::zeros(rows, 0);
    let pick = |i: usize| if mask.0[i] { views[i] } else { &empty };
    compose_views(pick(0), pick(1), pick(2))
}

/// Scales every row to unit L2 norm.
pub fn normalize_rows(x: &Matrix) -> Result<Matrix> {
    let mut out = x.clone();
    for i in 0..out.rows() {
        let r = out.row_mut(i);
        let n = norm(r);
        if n == 0.0 {
            return Err(Error::domain(format!("row {i} has zero norm")));
        }
        r.iter_mut().for_each(|v| *v /= n);
    }
    Ok(out)
}
