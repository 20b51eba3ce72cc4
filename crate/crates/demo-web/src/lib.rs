//! WebAssembly bindings for the demo page in `www/`.
//!
//! Each export returns JSON (or a plain float array) so the page can draw it
//! without knowing the crate's types.

use intent_induction::align::{compute_metrics, AlignmentMode};
use intent_induction::clustering::{
    estimate_k, kmeans, spectral, ClusterMethod, ClusterParams, KSearchConfig,
};
use intent_induction::fixtures::{concentric_rings, gaussian_blobs};
use intent_induction::mdb_train::cosine_softmax_probabilities;
use intent_induction::numerics::Matrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use wasm_bindgen::prelude::*;

fn points(x: &Matrix) -> Vec<[f64; 2]> {
    x.row_iter().map(|r| [r[0], r[1]]).collect()
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

pub fn rings_json(per_ring: usize, noise: f64, n_neighbors: usize, seed: u64) -> Result<String, String> {
    let (x, truth) = concentric_rings(per_ring, &[1.0, 5.0], noise, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let km = kmeans(&x, 2, 10, 300, &mut rng).map_err(err)?;
    let params = ClusterParams {
        n_neighbors,
        ..ClusterParams::default()
    };
    let sp = spectral(&x, 2, &params, &mut rng).map_err(err)?;
    let acc = |labels: &[usize]| {
        compute_metrics(labels, &truth, AlignmentMode::OneToOne).map(|m| m.acc)
    };
    Ok(json!({
        "points": points(&x),
        "truth": truth,
        "kmeans": { "labels": km.labels, "acc": acc(&km.labels).map_err(err)? },
        "spectral": { "labels": sp.labels, "acc": acc(&sp.labels).map_err(err)? },
    })
    .to_string())
}

pub fn sweep_json(
    k_true: usize,
    per_blob: usize,
    separation: f64,
    k_min: usize,
    k_max: usize,
    seed: u64,
) -> Result<String, String> {
    let (x, truth) = gaussian_blobs(k_true, per_blob, 2, separation, 1.0, seed);
    let cfg = KSearchConfig {
        k_min,
        k_max,
        trials: k_max.saturating_sub(k_min) + 1,
        rng_seed: seed,
    };
    let r = estimate_k(&x, &cfg, ClusterMethod::Kmeans, &ClusterParams::default()).map_err(err)?;
    Ok(json!({
        "points": points(&x),
        "truth": truth,
        "table": r.score_table,
        "k_best": r.k_best,
        "labels": r.best.labels,
    })
    .to_string())
}

/// Class probabilities for a 2-D representation at `h_angle` against unit
/// class weights at `class_angles` (radians).
pub fn softmax_probs(h_angle: f64, class_angles: &[f64], tau: f64) -> Result<Vec<f64>, String> {
    if class_angles.is_empty() {
        return Err("need at least one class".into());
    }
    let rows: Vec<Vec<f64>> = class_angles.iter().map(|a| vec![a.cos(), a.sin()]).collect();
    let w = Matrix::from_rows(&rows).map_err(err)?;
    cosine_softmax_probabilities(&[h_angle.cos(), h_angle.sin()], &w, tau).map_err(err)
}

#[wasm_bindgen(js_name = compareRings)]
pub fn compare_rings(per_ring: u32, noise: f64, n_neighbors: u32, seed: u32) -> Result<String, JsError> {
    rings_json(per_ring as usize, noise, n_neighbors as usize, seed.into()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = silhouetteSweep)]
pub fn silhouette_sweep(
    k_true: u32,
    per_blob: u32,
    separation: f64,
    k_min: u32,
    k_max: u32,
    seed: u32,
) -> Result<String, JsError> {
    sweep_json(
        k_true as usize,
        per_blob as usize,
        separation,
        k_min as usize,
        k_max as usize,
        seed.into(),
    )
    .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = cosineSoftmax)]
pub fn cosine_softmax(h_angle: f64, class_angles: Vec<f64>, tau: f64) -> Result<Vec<f64>, JsError> {
    softmax_probs(h_angle, &class_angles, tau).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn rings_payload_has_both_methods() {
        let v: Value = serde_json::from_str(&rings_json(100, 0.05, 10, 1).unwrap()).unwrap();
        assert_eq!(v["points"].as_array().unwrap().len(), 200);
        assert_eq!(v["spectral"]["acc"].as_f64().unwrap(), 1.0);
        assert!(v["kmeans"]["acc"].as_f64().unwrap() < 0.9);
    }

    #[test]
    fn sweep_finds_well_separated_blobs() {
        let v: Value = serde_json::from_str(&sweep_json(4, 30, 12.0, 2, 8, 3).unwrap()).unwrap();
        assert_eq!(v["k_best"].as_u64().unwrap(), 4);
        assert_eq!(v["table"].as_array().unwrap().len(), 7);
    }

    #[test]
    fn softmax_is_a_distribution_peaked_at_the_nearest_class() {
        let p = softmax_probs(0.1, &[0.0, 2.0, 4.0], 0.1).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[0] > 0.99);
        assert!(softmax_probs(0.0, &[], 0.1).is_err());
        assert!(softmax_probs(0.0, &[1.0], 0.0).is_err());
    }
}
