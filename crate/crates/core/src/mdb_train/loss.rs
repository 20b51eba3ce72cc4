//! Per-dataset cosine softmax over normalized class weights.
//!
//! For a sample of dataset `k` with head output `h` and class matrix `W^k`,
//! the logits are `cos(h, w_l) / tau` and the loss is the cross entropy of the
//! gold class. Both normalizations are differentiated through.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::{dot, norm, Matrix};
use crate::views::{LayerGrads, ProjectionHead};

/// One training sample: base embedding, owning dataset, gold class index.
#[derive(Clone, Copy, Debug)]
pub struct LabeledSample<'a> {
    pub x: &'a [f64],
    pub dataset_id: &'a str,
    pub intent: usize,
}

/// Gradients for the layer stack and every dataset head.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadGrads {
    pub layers: LayerGrads,
    pub dataset_heads: BTreeMap<String, Matrix>,
}

impl HeadGrads {
    pub fn zeros_like(head: &ProjectionHead) -> Self {
        Self {
            layers: LayerGrads::zeros_like(head),
            dataset_heads: head
                .dataset_heads
                .iter()
                .map(|(id, h)| (id.clone(), Matrix::zeros(h.weight.rows(), h.weight.cols())))
                .collect(),
        }
    }

    /// Same order as [`ProjectionHead::all_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.layers.flatten();
        for g in self.dataset_heads.values() {
            out.extend_from_slice(g.as_slice());
        }
        out
    }
}

fn unit(v: &[f64], what: &str) -> Result<(Vec<f64>, f64)> {
    let n = norm(v);
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::domain(format!("{what} has zero or non-finite norm")));
    }
    Ok((v.iter().map(|x| x / n).collect(), n))
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
    logits.iter().map(|s| s - lse).collect()
}

/// Class probabilities `softmax(cos(h, w_l) / tau)`.
pub fn cosine_softmax_probabilities(h: &[f64], weight: &Matrix, tau: f64) -> Result<Vec<f64>> {
    check_tau(tau)?;
    let (hh, _) = unit(h, "representation")?;
    let mut logits = Vec::with_capacity(weight.rows());
    for (l, w) in weight.row_iter().enumerate() {
        let (ww, _) = unit(w, &format!("class weight row {l}"))?;
        logits.push(dot(&hh, &ww) / tau);
    }
    Ok(log_softmax(&logits).into_iter().map(f64::exp).collect())
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("temperature must be positive, got {tau}")))
    }
}

/// Negative log-likelihood of `target` for one representation, with gradients
/// with respect to `h` and `weight`, each scaled by `scale`.
pub fn cosine_nll(
    h: &[f64],
    weight: &Matrix,
    target: usize,
    tau: f64,
    scale: f64,
) -> Result<(f64, Vec<f64>, Matrix)> {
    check_tau(tau)?;
    if target >= weight.rows() {
        return Err(Error::validation(format!(
            "class {target} out of range for {} classes",
            weight.rows()
        )));
    }
    let (hh, hn) = unit(h, "representation")?;
    let mut units = Vec::with_capacity(weight.rows());
    let mut logits = Vec::with_capacity(weight.rows());
    for (l, w) in weight.row_iter().enumerate() {
        let (ww, wn) = unit(w, &format!("class weight row {l}"))?;
        logits.push(dot(&hh, &ww) / tau);
        units.push((ww, wn));
    }
    let logp = log_softmax(&logits);
    let loss = -logp[target];

    let mut d_hhat = vec![0.0; hh.len()];
    let mut d_weight = Matrix::zeros(weight.rows(), weight.cols());
    for (l, (ww, wn)) in units.iter().enumerate() {
        let ds = scale * (logp[l].exp() - f64::from(l == target)) / tau;
        for (d, w) in d_hhat.iter_mut().zip(ww) {
            *d += ds * w;
        }
        // d w_hat = ds * h_hat, projected onto the tangent space of w_hat
        let along = ds * dot(ww, &hh);
        for ((g, &hv), &wv) in d_weight.row_mut(l).iter_mut().zip(&hh).zip(ww) {
            *g = (ds * hv - wv * along) / wn;
        }
    }
    let along = dot(&hh, &d_hhat);
    let d_h = d_hhat
        .iter()
        .zip(&hh)
        .map(|(d, u)| (d - u * along) / hn)
        .collect();
    Ok((loss, d_h, d_weight))
}

fn dataset_head<'h>(head: &'h ProjectionHead, id: &str) -> Result<&'h Matrix> {
    head.dataset_heads
        .get(id)
        .map(|h| &h.weight)
        .ok_or_else(|| Error::validation(format!("head has no classifier for dataset {id:?}")))
}

/// Mean loss over `samples`.
pub fn cosine_softmax_loss_value(
    head: &ProjectionHead,
    samples: &[LabeledSample<'_>],
    tau: f64,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::validation("empty batch"));
    }
    let mut total = 0.0;
    for s in samples {
        let w = dataset_head(head, s.dataset_id)?;
        let h = head.forward_row(s.x);
        let (hh, _) = unit(&h, "representation")?;
        let mut logits = Vec::with_capacity(w.rows());
        for (l, row) in w.row_iter().enumerate() {
            let (ww, _) = unit(row, &format!("class weight row {l}"))?;
            logits.push(dot(&hh, &ww) / tau);
        }
        total -= log_softmax(&logits)[s.intent];
    }
    Ok(total / samples.len() as f64)
}

/// Mean loss over `samples` and its gradient with respect to every head parameter.
pub fn cosine_softmax_loss(
    head: &ProjectionHead,
    samples: &[LabeledSample<'_>],
    tau: f64,
) -> Result<(f64, HeadGrads)> {
    if samples.is_empty() {
        return Err(Error::validation("empty batch"));
    }
    let scale = 1.0 / samples.len() as f64;
    let mut grads = HeadGrads::zeros_like(head);
    let mut total = 0.0;
    for s in samples {
        let w = dataset_head(head, s.dataset_id)?;
        let trace = head.forward_trace(s.x);
        let (loss, d_h, d_w) = cosine_nll(&trace.output, w, s.intent, tau, scale)?;
        total += loss;
        let acc = grads
            .dataset_heads
            .get_mut(s.dataset_id)
            .expect("gradient slot per dataset head");
        for (a, g) in acc.as_mut_slice().iter_mut().zip(d_w.as_slice()) {
            *a += g;
        }
        head.backward(&trace, &d_h, &mut grads.layers);
    }
    Ok((total * scale, grads))
}
