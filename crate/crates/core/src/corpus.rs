//! Dialogue ingestion, intent-turn extraction, and multi-domain batch assembly.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dialogue-act tag marking turns that carry an intent.
pub const INFORM_INTENT: &str = "InformIntent";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeakerRole {
    Agent,
    Customer,
}

/// One dialogue turn. A missing `gold_intent` marks noise or unlabeled text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub utterance_id: String,
    pub text: String,
    pub speaker_role: SpeakerRole,
    pub acts: Vec<String>,
    pub gold_intent: Option<String>,
    pub dataset_id: String,
}

impl UtteranceRecord {
    pub fn has_act(&self, act: &str) -> bool {
        self.acts.iter().any(|a| a == act)
    }
}

/// Wire form of one JSONL line.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DialogueLine {
    pub dialogue_id: String,
    pub turn_index: u32,
    pub utterance_id: String,
    pub text: String,
    pub speaker_role: SpeakerRole,
    pub acts: Vec<String>,
    pub intent: Option<String>,
    pub dataset_id: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dialogue {
    pub dialogue_id: String,
    pub turns: Vec<UtteranceRecord>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DialogueSet {
    pub dialogues: Vec<Dialogue>,
}

impl DialogueSet {
    pub fn n(&self) -> usize {
        self.dialogues.len()
    }

    pub fn records(&self) -> impl Iterator<Item = &UtteranceRecord> + '_ {
        self.dialogues.iter().flat_map(|d| d.turns.iter())
    }

    pub fn record_count(&self) -> usize {
        self.dialogues.iter().map(|d| d.turns.len()).sum()
    }
}

/// Parses dialogue JSONL. Turns are grouped by `dialogue_id` in first-appearance
/// order and keep their file order within each dialogue.
pub fn load_dialogues(path: &Path) -> Result<DialogueSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_dialogues(BufReader::new(file), path)
}

pub fn parse_dialogues<R: BufRead>(reader: R, path: &Path) -> Result<DialogueSet> {
    let mut set = DialogueSet::default();
    let mut by_id: HashMap<String, usize> = HashMap::new();
    let mut seen_ids: HashSet<String> = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: DialogueLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        if parsed.text.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: "empty \"text\"".into(),
            });
        }
        if !seen_ids.insert(parsed.utterance_id.clone()) {
            return Err(Error::validation(format!(
                "{}:{line_no}: duplicate utterance_id {:?}",
                path.display(),
                parsed.utterance_id
            )));
        }
        let slot = *by_id.entry(parsed.dialogue_id.clone()).or_insert_with(|| {
            set.dialogues.push(Dialogue {
                dialogue_id: parsed.dialogue_id.clone(),
                turns: Vec::new(),
            });
            set.dialogues.len() - 1
        });
        set.dialogues[slot].turns.push(UtteranceRecord {
            utterance_id: parsed.utterance_id,
            text: parsed.text,
            speaker_role: parsed.speaker_role,
            acts: parsed.acts,
            gold_intent: parsed.intent,
            dataset_id: parsed.dataset_id,
        });
    }
    Ok(set)
}

/// Writes records back out as dialogue JSONL under the given dialogue id per record.
pub fn write_records_jsonl<'a, I>(path: &Path, records: I) -> Result<()>
where
    I: IntoIterator<Item = (&'a str, u32, &'a UtteranceRecord)>,
{
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (dialogue_id, turn_index, r) in records {
        let line = DialogueLine {
            dialogue_id: dialogue_id.to_string(),
            turn_index,
            utterance_id: r.utterance_id.clone(),
            text: r.text.clone(),
            speaker_role: r.speaker_role,
            acts: r.acts.clone(),
            intent: r.gold_intent.clone(),
            dataset_id: r.dataset_id.clone(),
        };
        let s = serde_json::to_string(&line).expect("dialogue lines serialize");
        writeln!(w, "{s}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_dialogues(path: &Path, set: &DialogueSet) -> Result<()> {
    write_records_jsonl(
        path,
        set.dialogues.iter().flat_map(|d| {
            d.turns
                .iter()
                .enumerate()
                .map(move |(i, t)| (d.dialogue_id.as_str(), i as u32, t))
        }),
    )
}

/// The `InformIntent` turns of every dialogue, in order. Noise turns (no gold intent) are kept.
pub fn extract_intent_utterances(dialogues: &DialogueSet) -> Vec<UtteranceRecord> {
    dialogues
        .records()
        .filter(|r| r.has_act(INFORM_INTENT))
        .cloned()
        .collect()
}

/// One labeled training dataset.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub dataset_id: String,
    pub records: Vec<UtteranceRecord>,
    /// Intent label list, in manifest order.
    pub labels: Vec<String>,
}

impl Dataset {
    pub fn new(dataset_id: String, records: Vec<UtteranceRecord>, labels: Vec<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for l in &labels {
            if !seen.insert(l) {
                return Err(Error::validation(format!(
                    "dataset {dataset_id:?} lists label {l:?} twice"
                )));
            }
        }
        if labels.len() < 2 {
            return Err(Error::validation(format!(
                "dataset {dataset_id:?} needs at least 2 intent labels, got {}",
                labels.len()
            )));
        }
        for r in &records {
            if let Some(intent) = &r.gold_intent {
                if !seen.contains(intent) {
                    return Err(Error::validation(format!(
                        "dataset {dataset_id:?}: utterance {:?} has intent {intent:?} outside the label list",
                        r.utterance_id
                    )));
                }
            }
        }
        Ok(Self {
            dataset_id,
            records,
            labels,
        })
    }

    pub fn label_count(&self) -> usize {
        self.labels.len()
    }

    pub fn label_index(&self, intent: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == intent)
    }

    /// `(record index, intent index)` for every record carrying a gold intent.
    pub fn labeled_samples(&self) -> Vec<(usize, usize)> {
        self.records
            .iter()
            .enumerate()
            .filter_map(|(i, r)| {
                r.gold_intent
                    .as_deref()
                    .and_then(|g| self.label_index(g))
                    .map(|l| (i, l))
            })
            .collect()
    }
}

#[derive(Deserialize)]
struct ManifestEntry {
    path: PathBuf,
    labels: Vec<String>,
}

/// Labeled datasets keyed by id, in registry (manifest) order.
#[derive(Clone, Debug, Default)]
pub struct DatasetRegistry {
    datasets: Vec<Dataset>,
}

impl DatasetRegistry {
    pub fn new(datasets: Vec<Dataset>) -> Result<Self> {
        let mut seen = HashSet::new();
        for d in &datasets {
            if !seen.insert(d.dataset_id.clone()) {
                return Err(Error::validation(format!(
                    "dataset {:?} registered twice",
                    d.dataset_id
                )));
            }
        }
        Ok(Self { datasets })
    }

    /// Loads a manifest `{dataset_id: {"path": ..., "labels": [...]}}`; relative paths
    /// resolve against the manifest's directory.
    pub fn load(manifest: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
        let entries: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&text)
            .map_err(|e| Error::Parse {
                path: manifest.to_path_buf(),
                line: e.line(),
                message: e.to_string(),
            })?;
        let base = manifest.parent().unwrap_or(Path::new("."));
        let mut datasets = Vec::with_capacity(entries.len());
        for (id, value) in entries {
            let entry: ManifestEntry = serde_json::from_value(value).map_err(|e| Error::Parse {
                path: manifest.to_path_buf(),
                line: 0,
                message: format!("dataset {id:?}: {e}"),
            })?;
            let path = base.join(&entry.path);
            let records: Vec<UtteranceRecord> = load_dialogues(&path)?.records().cloned().collect();
            datasets.push(Dataset::new(id, records, entry.labels)?);
        }
        Self::new(datasets)
    }

    pub fn datasets(&self) -> &[Dataset] {
        &self.datasets
    }

    pub fn len(&self) -> usize {
        self.datasets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.datasets.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Dataset> {
        self.datasets.iter().find(|d| d.dataset_id == id)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchSample {
    /// Index into the dataset's record list.
    pub record: usize,
    /// Index into the dataset's label list.
    pub intent: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DomainGroup {
    /// Position of the dataset in the registry.
    pub dataset: usize,
    pub samples: Vec<BatchSample>,
}

/// A batch made of independent per-dataset groups.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DomainBatch {
    pub groups: Vec<DomainGroup>,
}

impl DomainBatch {
    pub fn total_size(&self) -> usize {
        self.groups.iter().map(|g| g.samples.len()).sum()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.samples.len()).collect()
    }
}

/// Near-equal split of `batch_size` over `datasets` groups; the first
/// `batch_size % datasets` groups take one extra sample.
pub fn domain_quotas(batch_size: usize, datasets: usize) -> Vec<usize> {
    let base = batch_size / datasets;
    let extra = batch_size % datasets;
    (0..datasets).map(|i| base + usize::from(i < extra)).collect()
}

/// Samples one multi-domain batch. Candidate pools are given per dataset as
/// `(record, intent)` pairs; sampling is without replacement unless a pool is
/// smaller than its quota.
pub fn sample_domain_batch<R: Rng + ?Sized>(
    pools: &[Vec<(usize, usize)>],
    batch_size: usize,
    rng: &mut R,
) -> Result<DomainBatch> {
    let d = pools.len();
    if d == 0 || batch_size < d {
        return Err(Error::config(format!(
            "batch size {batch_size} cannot cover {d} datasets"
        )));
    }
    let quotas = domain_quotas(batch_size, d);
    let mut groups = Vec::with_capacity(d);
    for (k, (pool, &quota)) in pools.iter().zip(&quotas).enumerate() {
        if pool.is_empty() {
            return Err(Error::validation(format!(
                "dataset #{k} has no labeled records to sample"
            )));
        }
        let picks: Vec<usize> = if quota <= pool.len() {
            sample(rng, pool.len(), quota).into_vec()
        } else {
            (0..quota).map(|_| rng.random_range(0..pool.len())).collect()
        };
        let samples = picks
            .into_iter()
            .map(|p| BatchSample {
                record: pool[p].0,
                intent: pool[p].1,
            })
            .collect();
        groups.push(DomainGroup { dataset: k, samples });
    }
    Ok(DomainBatch { groups })
}

/// Samples a batch over every labeled record of every registered dataset.
pub fn build_domain_batch<R: Rng + ?Sized>(
    registry: &DatasetRegistry,
    batch_size: usize,
    rng: &mut R,
) -> Result<DomainBatch> {
    let pools: Vec<Vec<(usize, usize)>> = registry
        .datasets()
        .iter()
        .map(Dataset::labeled_samples)
        .collect();
    sample_domain_batch(&pools, batch_size, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn line(d: &str, turn: u32, id: &str, acts: &[&str], intent: Option<&str>) -> String {
        serde_json::json!({
            "dialogue_id": d, "turn_index": turn, "utterance_id": id, "text": format!("text {id}"),
            "speaker_role": if turn % 2 == 0 { "customer" } else { "agent" },
            "acts": acts, "intent": intent, "dataset_id": "bank"
        })
        .to_string()
    }

    fn parse(text: &str) -> Result<DialogueSet> {
        parse_dialogues(text.as_bytes(), Path::new("mem.jsonl"))
    }

    #[test]
    fn two_dialogues_six_records() {
        let mut text = String::new();
        for d in ["d1", "d2"] {
            for t in 0..3 {
                text += &line(d, t, &format!("{d}-{t}"), &[], None);
                text += "\n";
            }
        }
        let set = parse(&text).unwrap();
        assert_eq!(set.n(), 2);
        assert_eq!(set.record_count(), 6);
        assert_eq!(set.dialogues[1].turns[2].utterance_id, "d2-2");
    }

    #[test]
    fn empty_file_has_no_dialogues() {
        assert_eq!(parse("").unwrap().n(), 0);
    }

    #[test]
    fn missing_text_names_the_line() {
        let good = line("d", 0, "a", &[], None);
        let bad = r#"{"dialogue_id":"d","turn_index":1,"utterance_id":"b","speaker_role":"agent","acts":[],"intent":null,"dataset_id":"x"}"#;
        match parse(&format!("{good}\n{bad}\n")) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("text"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let text = format!("{}\n{}\n", line("d", 0, "a", &[], None), line("e", 0, "a", &[], None));
        assert!(matches!(parse(&text), Err(Error::Validation(_))));
    }

    #[test]
    fn extraction_keeps_inform_intent_turns_and_noise() {
        let acts: [&[&str]; 5] = [&[], &[INFORM_INTENT], &["Other"], &["Other", INFORM_INTENT], &[]];
        let intents = [None, Some("a"), None, None, None];
        let text: String = (0..5)
            .map(|t| line("d", t as u32, &format!("u{t}"), acts[t], intents[t]) + "\n")
            .collect();
        let set = parse(&text).unwrap();
        let out = extract_intent_utterances(&set);
        let ids: Vec<_> = out.iter().map(|r| r.utterance_id.as_str()).collect();
        assert_eq!(ids, ["u1", "u3"]);
        assert_eq!(out[1].gold_intent, None);

        let none = parse(&line("d", 0, "z", &["Other"], None)).unwrap();
        assert!(extract_intent_utterances(&none).is_empty());
    }

    #[test]
    fn quota_examples() {
        assert_eq!(domain_quotas(36, 6), vec![6; 6]);
        assert_eq!(domain_quotas(64, 6), vec![11, 11, 11, 11, 10, 10]);
        assert_eq!(domain_quotas(8, 1), vec![8]);
    }

    #[test]
    fn quota_rule_exhaustive() {
        for d in 1..=12 {
            for b in d..=200 {
                let q = domain_quotas(b, d);
                assert_eq!(q.iter().sum::<usize>(), b);
                assert!(q.iter().max().unwrap() - q.iter().min().unwrap() <= 1);
            }
        }
    }

    #[test]
    fn batch_smaller_than_dataset_count_is_config_error() {
        let pools = vec![vec![(0, 0)]; 3];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_domain_batch(&pools, 2, &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn small_pools_sample_with_replacement() {
        let pools = vec![vec![(0, 0), (1, 1)], (0..50).map(|i| (i, i % 3)).collect()];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = sample_domain_batch(&pools, 10, &mut rng).unwrap();
        assert_eq!(b.group_sizes(), vec![5, 5]);
        let big: HashSet<_> = b.groups[1].samples.iter().map(|s| s.record).collect();
        assert_eq!(big.len(), 5);
    }

    proptest! {
        #[test]
        fn batches_honor_quotas_and_seed(d in 1usize..7, extra in 0usize..40, seed in any::<u64>()) {
            let pools: Vec<Vec<(usize, usize)>> =
                (0..d).map(|k| (0..(5 + 3 * k)).map(|i| (i, i % 2)).collect()).collect();
            let b = d + extra;
            let mut r1 = ChaCha8Rng::seed_from_u64(seed);
            let mut r2 = ChaCha8Rng::seed_from_u64(seed);
            let x = sample_domain_batch(&pools, b, &mut r1).unwrap();
            let y = sample_domain_batch(&pools, b, &mut r2).unwrap();
            prop_assert_eq!(&x, &y);
            prop_assert_eq!(x.total_size(), b);
            let s = x.group_sizes();
            prop_assert!(s.iter().max().unwrap() - s.iter().min().unwrap() <= 1);
        }

        #[test]
        fn extraction_is_idempotent_subsequence(mask in prop::collection::vec(any::<bool>(), 0..20)) {
            let text: String = mask.iter().enumerate().map(|(i, &m)| {
                let acts: &[&str] = if m { &[INFORM_INTENT] } else { &[] };
                line(&format!("d{}", i / 4), i as u32, &format!("u{i}"), acts, None) + "\n"
            }).collect();
            let set = parse(&text).unwrap();
            let once = extract_intent_utterances(&set);
            let again = extract_intent_utterances(&DialogueSet {
                dialogues: vec![Dialogue { dialogue_id: "x".into(), turns: once.clone() }],
            });
            prop_assert_eq!(&once, &again);
            prop_assert_eq!(once.len(), mask.iter().filter(|&&m| m).count());
            let flat: Vec<_> = set.records().map(|r| r.utterance_id.clone()).collect();
            let mut pos = 0;
            for r in &once {
                let found = flat[pos..].iter().position(|id| id == &r.utterance_id);
                prop_assert!(found.is_some());
                pos += found.unwrap() + 1;
            }
        }
    }
}
