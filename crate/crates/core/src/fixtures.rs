//! Synthetic geometries and corpora with known intent structure.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    write_records_jsonl, Dataset, DatasetRegistry, SpeakerRole, UtteranceRecord, INFORM_INTENT,
};
use crate::error::{Error, Result};
use crate::numerics::io::EmbeddingTable;
use crate::numerics::Matrix;

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Points on concentric circles with Gaussian radial jitter; label = ring index.
pub fn concentric_rings(per_ring: usize, radii: &[f64], noise: f64, seed: u64) -> (Matrix, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(per_ring * radii.len());
    let mut labels = Vec::with_capacity(rows.capacity());
    for (ring, &r) in radii.iter().enumerate() {
        for _ in 0..per_ring {
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let rad = r + noise * gaussian(&mut rng);
            rows.push([rad * theta.cos(), rad * theta.sin()]);
            labels.push(ring);
        }
    }
    (Matrix::from_rows(&rows).expect("finite"), labels)
}

/// Blob centres with every pair exactly `separation` apart: scaled unit axes
/// when `dim >= k`, otherwise a regular polygon in the first two coordinates
/// (adjacent centres `separation` apart).
pub fn blob_centres(k: usize, dim: usize, separation: f64) -> Matrix {
    let mut c = Matrix::zeros(k, dim);
    if dim >= k {
        let s = separation / std::f64::consts::SQRT_2;
        for i in 0..k {
            c[(i, i)] = s;
        }
    } else {
        assert!(dim >= 2, "polygon layout needs two dimensions");
        let radius = if k > 1 {
            separation / (2.0 * (std::f64::consts::PI / k as f64).sin())
        } else {
            0.0
        };
        for i in 0..k {
            let a = std::f64::consts::TAU * i as f64 / k as f64;
            c[(i, 0)] = radius * a.cos();
            c[(i, 1)] = radius * a.sin();
        }
    }
    c
}

/// Isotropic Gaussian blobs of standard deviation `sigma` around [`blob_centres`].
pub fn gaussian_blobs(
    k: usize,
    per_blob: usize,
    dim: usize,
    separation: f64,
    sigma: f64,
    seed: u64,
) -> (Matrix, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres = blob_centres(k, dim, separation);
    let mut values = Vec::with_capacity(k * per_blob * dim);
    let mut labels = Vec::with_capacity(k * per_blob);
    for c in 0..k {
        for _ in 0..per_blob {
            values.extend(centres.row(c).iter().map(|m| m + sigma * gaussian(&mut rng)));
            labels.push(c);
        }
    }
    (Matrix::from_vec(k * per_blob, dim, values).expect("finite"), labels)
}

/// Two anisotropic Gaussians separated along axis 1 by `gap`, stretched along
/// axis 0 with standard deviation `long_sd`; all other axes use `short_sd`.
pub fn elongated_pair(
    per_cluster: usize,
    dim: usize,
    gap: f64,
    long_sd: f64,
    short_sd: f64,
    seed: u64,
) -> (Matrix, Vec<usize>) {
    assert!(dim >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(2 * per_cluster * dim);
    let mut labels = Vec::with_capacity(2 * per_cluster);
    for c in 0..2 {
        let offset = if c == 0 { -gap / 2.0 } else { gap / 2.0 };
        for _ in 0..per_cluster {
            for d in 0..dim {
                let v = match d {
                    0 => long_sd * gaussian(&mut rng),
                    1 => offset + short_sd * gaussian(&mut rng),
                    _ => short_sd * gaussian(&mut rng),
                };
                values.push(v);
            }
            labels.push(c);
        }
    }
    (Matrix::from_vec(2 * per_cluster, dim, values).expect("finite"), labels)
}

fn random_unit<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Labeled training domains embedded in a shared space: every domain has its
/// own random class centres at radius `centre_radius`.
pub fn multi_domain_fixture(
    domains: usize,
    intents_per_domain: usize,
    per_intent: usize,
    dim: usize,
    centre_radius: f64,
    sigma: f64,
    seed: u64,
) -> (DatasetRegistry, EmbeddingTable) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut datasets = Vec::new();
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for d in 0..domains {
        let dataset_id = format!("domain{d}");
        let labels: Vec<String> = (0..intents_per_domain).map(|i| format!("d{d}_intent{i}")).collect();
        let centres: Vec<Vec<f64>> = (0..intents_per_domain)
            .map(|_| random_unit(dim, &mut rng).into_iter().map(|x| x * centre_radius).collect())
            .collect();
        let mut records = Vec::new();
        for (i, centre) in centres.iter().enumerate() {
            for s in 0..per_intent {
                let id = format!("{dataset_id}-{i}-{s}");
                values.extend(centre.iter().map(|m| m + sigma * gaussian(&mut rng)));
                ids.push(id.clone());
                records.push(UtteranceRecord {
                    utterance_id: id,
                    text: format!("{} sample {s}", labels[i]),
                    speaker_role: SpeakerRole::Customer,
                    acts: vec![INFORM_INTENT.to_string()],
                    gold_intent: Some(labels[i].clone()),
                    dataset_id: dataset_id.clone(),
                });
            }
        }
        datasets.push(Dataset::new(dataset_id, records, labels).expect("fixture labels valid"));
    }
    let n = ids.len();
    let table = EmbeddingTable::new(ids, Matrix::from_vec(n, dim, values).expect("finite"))
        .expect("unique ids");
    (DatasetRegistry::new(datasets).expect("unique datasets"), table)
}

/// Geometry of a generated corpus, as read by the `gen-fixture` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusFixtureSpec {
    pub dim: usize,
    /// Intents of the target (induction) domain.
    pub intents: usize,
    pub dialogues_per_intent: usize,
    pub separation: f64,
    pub sigma: f64,
    /// Fraction of intent-tagged turns that carry no gold intent; they sit between two intents.
    pub noise_fraction: f64,
    /// Standard-deviation multiplier along one random direction per intent.
    pub elongation: f64,
    pub test_fraction: f64,
    pub training_domains: usize,
    pub training_intents: usize,
    pub training_per_intent: usize,
}

impl Default for CorpusFixtureSpec {
    fn default() -> Self {
        Self {
            dim: 16,
            intents: 6,
            dialogues_per_intent: 20,
            separation: 8.0,
            sigma: 1.0,
            noise_fraction: 0.1,
            elongation: 1.0,
            test_fraction: 0.3,
            training_domains: 3,
            training_intents: 4,
            training_per_intent: 30,
        }
    }
}

/// Files written by [`write_corpus_fixture`], relative to its output directory.
pub const FIXTURE_FILES: [&str; 4] = ["train.jsonl", "test.jsonl", "registry.json", "embeddings.jsonl"];

/// Writes a synthetic target-domain corpus (train/test dialogues), labeled
/// training domains with a registry manifest, and one embedding file covering
/// every utterance.
pub fn write_corpus_fixture(dir: &Path, spec: &CorpusFixtureSpec, seed: u64) -> Result<()> {
    if spec.intents == 0 || spec.dim == 0 || spec.dialogues_per_intent == 0 {
        return Err(Error::config("fixture needs intents, dim and dialogues > 0"));
    }
    if !(0.0..1.0).contains(&spec.noise_fraction) || !(0.0..1.0).contains(&spec.test_fraction) {
        return Err(Error::config("noise_fraction and test_fraction must lie in [0, 1)"));
    }
    std::fs::create_dir_all(dir.join("domains")).map_err(|e| Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut emb_ids: Vec<String> = Vec::new();
    let mut emb_values: Vec<f64> = Vec::new();
    let normal = Normal::new(0.0, spec.sigma).map_err(|e| Error::config(e.to_string()))?;

    let centres = spread_centres(spec.intents, spec.dim, spec.separation);
    let stretch: Vec<Vec<f64>> = (0..spec.intents).map(|_| random_unit(spec.dim, &mut rng)).collect();
    let labels: Vec<String> = (0..spec.intents).map(|i| format!("intent_{i:02}")).collect();

    let mut train = Vec::new();
    let mut test = Vec::new();
    let total = spec.intents * spec.dialogues_per_intent;
    for n in 0..total {
        let intent = n % spec.intents;
        let dialogue_id = format!("dlg{n:05}");
        let is_noise = rng.random::<f64>() < spec.noise_fraction;
        let gold = (!is_noise).then(|| labels[intent].clone());
        let mut point: Vec<f64> = if is_noise {
            // ambiguous turn halfway between two intents
            let other = (intent + 1 + rng.random_range(0..spec.intents.max(2) - 1)) % spec.intents;
            centres
                .row(intent)
                .iter()
                .zip(centres.row(other))
                .map(|(a, b)| 0.5 * (a + b) + normal.sample(&mut rng))
                .collect()
        } else {
            centres.row(intent).iter().map(|m| m + normal.sample(&mut rng)).collect()
        };
        if !is_noise && spec.elongation != 1.0 {
            let along: f64 = spec.sigma * (spec.elongation - 1.0) * gaussian(&mut rng);
            point.iter_mut().zip(&stretch[intent]).for_each(|(p, u)| *p += along * u);
        }
        let turns = [
            (SpeakerRole::Agent, vec![], None, "how can I help you today".to_string()),
            (
                SpeakerRole::Customer,
                vec![INFORM_INTENT.to_string()],
                gold.clone(),
                match &gold {
                    Some(g) => format!("I would like help with {} please", g.replace('_', " ")),
                    None => "uh just a second sorry".to_string(),
                },
            ),
            (SpeakerRole::Agent, vec!["Acknowledge".to_string()], None, "sure one moment".to_string()),
        ];
        let split = if rng.random::<f64>() < spec.test_fraction { &mut test } else { &mut train };
        for (t, (role, acts, intent, text)) in turns.into_iter().enumerate() {
            let uid = format!("{dialogue_id}-t{t}");
            emb_ids.push(uid.clone());
            if t == 1 {
                emb_values.extend_from_slice(&point);
            } else {
                emb_values.extend((0..spec.dim).map(|_| gaussian(&mut rng)));
            }
            split.push((
                dialogue_id.clone(),
                t as u32,
                UtteranceRecord {
                    utterance_id: uid,
                    text,
                    speaker_role: role,
                    acts,
                    gold_intent: intent,
                    dataset_id: "target".into(),
                },
            ));
        }
    }
    for (name, rows) in [("train.jsonl", &train), ("test.jsonl", &test)] {
        write_records_jsonl(
            &dir.join(name),
            rows.iter().map(|(d, t, r)| (d.as_str(), *t, r)),
        )?;
    }

    let mut manifest = serde_json::Map::new();
    if spec.training_domains > 0 {
        let (registry, table) = multi_domain_fixture(
            spec.training_domains,
            spec.training_intents,
            spec.training_per_intent,
            spec.dim,
            spec.separation,
            spec.sigma,
            rng.random(),
        );
        for d in registry.datasets() {
            let rel = format!("domains/{}.jsonl", d.dataset_id);
            write_records_jsonl(
                &dir.join(&rel),
                d.records.iter().map(|r| (r.utterance_id.as_str(), 0, r)),
            )?;
            manifest.insert(
                d.dataset_id.clone(),
                serde_json::json!({ "path": rel, "labels": d.labels }),
            );
        }
        for (id, row) in table.ids().iter().zip(table.matrix().row_iter()) {
            emb_ids.push(id.clone());
            emb_values.extend_from_slice(row);
        }
    }
    let reg_path = dir.join("registry.json");
    std::fs::write(&reg_path, serde_json::to_string_pretty(&manifest).expect("json"))
        .map_err(|e| Error::io(&reg_path, e))?;

    let n = emb_ids.len();
    EmbeddingTable::new(emb_ids, Matrix::from_vec(n, spec.dim, emb_values)?)?
        .write_jsonl(&dir.join("embeddings.jsonl"))
}

/// Centres pairwise `separation` apart where the dimension allows it; a line for `dim == 1`.
fn spread_centres(k: usize, dim: usize, separation: f64) -> Matrix {
    if dim >= 2 {
        return blob_centres(k, dim, separation);
    }
    let mut c = Matrix::zeros(k, dim);
    for i in 0..k {
        c[(i, 0)] = separation * i as f64;
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::euclidean;

    #[test]
    fn blob_centres_are_equidistant() {
        let c = blob_centres(8, 8, 10.0);
        for i in 0..8 {
            for j in (i + 1)..8 {
                assert!((euclidean(c.row(i), c.row(j)) - 10.0).abs() < 1e-12);
            }
        }
        let p = blob_centres(5, 2, 3.0);
        assert!((euclidean(p.row(0), p.row(1)) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn rings_have_expected_radii() {
        let (x, labels) = concentric_rings(50, &[1.0, 5.0], 0.0, 1);
        for (r, &l) in x.row_iter().zip(&labels) {
            let rad = (r[0] * r[0] + r[1] * r[1]).sqrt();
            assert!((rad - [1.0, 5.0][l]).abs() < 1e-12);
        }
    }

    #[test]
    fn corpus_fixture_files_load() {
        let dir = tempfile::tempdir().unwrap();
        write_corpus_fixture(dir.path(), &CorpusFixtureSpec::default(), 7).unwrap();
        for f in FIXTURE_FILES {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let train = crate::corpus::load_dialogues(&dir.path().join("train.jsonl")).unwrap();
        let emb = EmbeddingTable::read_jsonl(&dir.path().join("embeddings.jsonl")).unwrap();
        assert!(train.records().all(|r| emb.contains(&r.utterance_id)));
        let reg = DatasetRegistry::load(&dir.path().join("registry.json")).unwrap();
        assert_eq!(reg.len(), 3);
        assert!(reg.datasets().iter().flat_map(|d| &d.records).all(|r| emb.contains(&r.utterance_id)));
    }
}
