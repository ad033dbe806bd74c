//! Preference pairs from scored rationale runs, their JSONL export and the
//! DPO loss.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discovery::RunRecord;
use crate::gbdt::MetricScore;

pub const PAIR_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SAMPLES: usize = 30;
pub const DEFAULT_BETA: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub rationale: String,
    pub features: Vec<String>,
    pub score: MetricScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPool {
    pub dataset: String,
    pub prompt: String,
    pub baseline: MetricScore,
    /// Runs that beat their baseline.
    pub positives: Vec<PoolEntry>,
    pub negatives: Vec<PoolEntry>,
    /// Successful records considered, and failed records skipped on the way.
    pub successful: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Absolute,
    RelativePos,
    RelativeNeg,
}

impl Criterion {
    pub fn name(self) -> &'static str {
        match self {
            Criterion::Absolute => "absolute",
            Criterion::RelativePos => "relative_pos",
            Criterion::RelativeNeg => "relative_neg",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferencePair {
    pub dataset: String,
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub criterion: Criterion,
    pub chosen_score: MetricScore,
    pub rejected_score: MetricScore,
}

#[derive(Debug, Error)]
pub enum PreferenceError {
    #[error("no successful runs to build a pool from")]
    EmptyPool,
    #[error("no pairs to export")]
    NoPairs,
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum MathError {
    #[error("beta must be positive and finite, got {0}")]
    Beta(f64),
    #[error("log-probability `{0}` must be finite and at most zero")]
    LogProb(&'static str),
}

/// Builds a pool from the first `samples` successful records. Records are
/// positive when their score strictly beats their own baseline.
pub fn collect_pool(records: &[RunRecord], samples: usize) -> Result<RunPool, PreferenceError> {
    let mut pool: Option<RunPool> = None;
    let mut failed = 0;
    for r in records {
        if let Some(p) = &pool {
            if p.successful >= samples {
                break;
            }
        }
        let (Some(score), Some(rationale)) = (r.score, r.rationale_raw.as_ref()) else {
            failed += 1;
            continue;
        };
        if !r.succeeded() {
            failed += 1;
            continue;
        }
        let p = pool.get_or_insert_with(|| RunPool {
            dataset: r.dataset.clone(),
            prompt: r.prompt.clone(),
            baseline: r.baseline,
            positives: Vec::new(),
            negatives: Vec::new(),
            successful: 0,
            failed: 0,
        });
        let entry = PoolEntry {
            rationale: rationale.clone(),
            features: r.chosen_features.clone(),
            score,
        };
        if score.is_better_than(&r.baseline) {
            p.positives.push(entry);
        } else {
            p.negatives.push(entry);
        }
        p.successful += 1;
    }
    let mut pool = pool.ok_or(PreferenceError::EmptyPool)?;
    pool.failed = failed;
    Ok(pool)
}

/// One pool per (dataset, prompt), in first-appearance order.
pub fn collect_pools(
    records: &[RunRecord],
    samples: usize,
) -> Result<Vec<RunPool>, PreferenceError> {
    let mut keys: Vec<(&str, &str)> = Vec::new();
    for r in records {
        let key = (r.dataset.as_str(), r.prompt.as_str());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let pools: Vec<RunPool> = keys
        .into_iter()
        .filter_map(|(dataset, prompt)| {
            let group: Vec<RunRecord> = records
                .iter()
                .filter(|r| r.dataset == dataset && r.prompt == prompt)
                .cloned()
                .collect();
            collect_pool(&group, samples).ok()
        })
        .collect();
    if pools.is_empty() {
        return Err(PreferenceError::EmptyPool);
    }
    Ok(pools)
}

fn pair(
    pool: &RunPool,
    criterion: Criterion,
    chosen: &PoolEntry,
    rejected: &PoolEntry,
) -> PreferencePair {
    PreferencePair {
        dataset: pool.dataset.clone(),
        prompt: pool.prompt.clone(),
        chosen: chosen.rationale.clone(),
        rejected: rejected.rationale.clone(),
        criterion,
        chosen_score: chosen.score,
        rejected_score: rejected.score,
    }
}

fn within(
    pool: &RunPool,
    entries: &[PoolEntry],
    criterion: Criterion,
    out: &mut Vec<PreferencePair>,
) {
    for (i, a) in entries.iter().enumerate() {
        for b in &entries[i + 1..] {
            if a.score.is_better_than(&b.score) {
                out.push(pair(pool, criterion, a, b));
            } else if b.score.is_better_than(&a.score) {
                out.push(pair(pool, criterion, b, a));
            }
        }
    }
}

/// Every positive against every negative, then within-pool pairs ordered by
/// score. Within-pool ties produce no pair.
pub fn build_pairs(pool: &RunPool) -> Vec<PreferencePair> {
    let mut out = Vec::new();
    for p in &pool.positives {
        for n in &pool.negatives {
            out.push(pair(pool, Criterion::Absolute, p, n));
        }
    }
    within(pool, &pool.positives, Criterion::RelativePos, &mut out);
    within(pool, &pool.negatives, Criterion::RelativeNeg, &mut out);
    out
}

/// Summed sequence log-probabilities under the policy and the reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpoInputs {
    pub logp_policy_chosen: f64,
    pub logp_ref_chosen: f64,
    pub logp_policy_rejected: f64,
    pub logp_ref_rejected: f64,
    pub beta: f64,
}

/// `-ln sigmoid(beta * ((pc - rc) - (pr - rr)))`.
pub fn dpo_loss(inputs: &DpoInputs) -> Result<f64, MathError> {
    if !(inputs.beta > 0.0 && inputs.beta.is_finite()) {
        return Err(MathError::Beta(inputs.beta));
    }
    for (name, v) in [
        ("logp_policy_chosen", inputs.logp_policy_chosen),
        ("logp_ref_chosen", inputs.logp_ref_chosen),
        ("logp_policy_rejected", inputs.logp_policy_rejected),
        ("logp_ref_rejected", inputs.logp_ref_rejected),
    ] {
        if !(v.is_finite() && v <= 0.0) {
            return Err(MathError::LogProb(name));
        }
    }
    let margin = inputs.beta
        * ((inputs.logp_policy_chosen - inputs.logp_ref_chosen)
            - (inputs.logp_policy_rejected - inputs.logp_ref_rejected));
    // softplus(-margin), stable for large |margin|
    Ok((-margin).max(0.0) + (-margin.abs()).exp().ln_1p())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PairMeta {
    schema_version: u32,
    criterion: Criterion,
    #[serde(rename = "chosen_Z")]
    chosen_z: f64,
    #[serde(rename = "rejected_Z")]
    rejected_z: f64,
    metric: crate::gbdt::MetricKind,
    dataset: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PairLine {
    prompt: String,
    chosen: String,
    rejected: String,
    meta: PairMeta,
}

impl From<&PreferencePair> for PairLine {
    fn from(p: &PreferencePair) -> Self {
        PairLine {
            prompt: p.prompt.clone(),
            chosen: p.chosen.clone(),
            rejected: p.rejected.clone(),
            meta: PairMeta {
                schema_version: PAIR_SCHEMA_VERSION,
                criterion: p.criterion,
                chosen_z: p.chosen_score.value,
                rejected_z: p.rejected_score.value,
                metric: p.chosen_score.kind,
                dataset: p.dataset.clone(),
            },
        }
    }
}

impl From<PairLine> for PreferencePair {
    fn from(l: PairLine) -> Self {
        PreferencePair {
            dataset: l.meta.dataset,
            prompt: l.prompt,
            chosen: l.chosen,
            rejected: l.rejected,
            criterion: l.meta.criterion,
            chosen_score: MetricScore::new(l.meta.metric, l.meta.chosen_z),
            rejected_score: MetricScore::new(l.meta.metric, l.meta.rejected_z),
        }
    }
}

fn io_err(path: &Path, e: impl ToString) -> PreferenceError {
    PreferenceError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Writes one JSON object per pair. Refuses to create a file for no pairs.
pub fn export_jsonl(pairs: &[PreferencePair], path: &Path) -> Result<usize, PreferenceError> {
    if pairs.is_empty() {
        return Err(PreferenceError::NoPairs);
    }
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    for p in pairs {
        let line = serde_json::to_string(&PairLine::from(p)).map_err(|e| io_err(path, e))?;
        writeln!(out, "{line}").map_err(|e| io_err(path, e))?;
    }
    out.flush().map_err(|e| io_err(path, e))?;
    Ok(pairs.len())
}

pub fn import_jsonl(path: &Path) -> Result<Vec<PreferencePair>, PreferenceError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut pairs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: PairLine =
            serde_json::from_str(&line).map_err(|e| PreferenceError::Format {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
        pairs.push(parsed.into());
    }
    Ok(pairs)
}

/// Settings for an external fine-tuning run, written next to the exported
/// pairs. Nothing here is used for training inside this crate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub batch_size: u32,
    pub epochs: u32,
    pub learning_rate: f64,
    pub mixed_precision: String,
    pub lora_rank: u32,
    pub lora_alpha: u32,
    pub lora_dropout: f64,
    pub scheduler: String,
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub sft: StageConfig,
    pub dpo: StageConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let stage = |epochs, learning_rate, beta| StageConfig {
            batch_size: 4,
            epochs,
            learning_rate,
            mixed_precision: "bf16".into(),
            lora_rank: 8,
            lora_alpha: 16,
            lora_dropout: 0.0,
            scheduler: "cosine".into(),
            beta,
        };
        TrainingConfig {
            sft: stage(5, 1e-4, None),
            dpo: stage(4, 8e-6, Some(DEFAULT_BETA)),
        }
    }
}

/// Path of the metadata file written beside `pairs_path`.
pub fn metadata_path(pairs_path: &Path) -> PathBuf {
    let mut name = pairs_path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    pairs_path.with_file_name(name)
}

pub fn write_metadata(
    pairs_path: &Path,
    config: &TrainingConfig,
    counts: &PairCounts,
) -> Result<PathBuf, PreferenceError> {
    let path = metadata_path(pairs_path);
    let body = serde_json::json!({
        "schema_version": PAIR_SCHEMA_VERSION,
        "training": config,
        "counts": counts,
    });
    let text = serde_json::to_string_pretty(&body).map_err(|e| io_err(&path, e))?;
    fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;
    Ok(path)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub positives: usize,
    pub negatives: usize,
    pub absolute: usize,
    pub relative_pos: usize,
    pub relative_neg: usize,
}

impl PairCounts {
    pub fn total(&self) -> usize {
        self.absolute + self.relative_pos + self.relative_neg
    }

    pub fn tally(pools: &[RunPool], pairs: &[PreferencePair]) -> Self {
        let mut c = PairCounts {
            positives: pools.iter().map(|p| p.positives.len()).sum(),
            negatives: pools.iter().map(|p| p.negatives.len()).sum(),
            ..PairCounts::default()
        };
        for p in pairs {
            match p.criterion {
                Criterion::Absolute => c.absolute += 1,
                Criterion::RelativePos => c.relative_pos += 1,
                Criterion::RelativeNeg => c.relative_neg += 1,
            }
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gbdt::MetricKind;
    use proptest::prelude::*;

    fn entry(i: usize, z: f64) -> PoolEntry {
        PoolEntry {
            rationale: format!("definition: idea {i}\n- because"),
            features: vec![format!("f{i}")],
            score: MetricScore::new(MetricKind::Auc, z),
        }
    }

    fn pool(pos: &[f64], neg: &[f64]) -> RunPool {
        RunPool {
            dataset: "d".into(),
            prompt: "x".into(),
            baseline: MetricScore::new(MetricKind::Auc, 0.5),
            positives: pos.iter().enumerate().map(|(i, &z)| entry(i, z)).collect(),
            negatives: neg
                .iter()
                .enumerate()
                .map(|(i, &z)| entry(100 + i, z))
                .collect(),
            successful: pos.len() + neg.len(),
            failed: 0,
        }
    }

    fn record(i: usize, score: Option<f64>) -> RunRecord {
        let base = MetricScore::new(MetricKind::Auc, 0.7);
        RunRecord {
            schema_version: 1,
            dataset: "d".into(),
            experiment: 0,
            iteration: i + 1,
            seed: 0,
            system_prompt: "s".into(),
            prompt: "x".into(),
            rationale_raw: Some(format!("definition: r{i}")),
            rationale: None,
            code_raw: None,
            program: None,
            chosen_features: vec![],
            evaluated_subsets: 1,
            score: score.map(|v| MetricScore::new(MetricKind::Auc, v)),
            baseline: base,
            improved: false,
            failure_reason: score
                .is_none()
                .then(|| crate::discovery::FailureReason::new("parse", "x")),
            c: 0,
            t: 0,
            latency_ms: 0,
        }
    }

    #[test]
    fn pool_partition_is_strict() {
        let mut records: Vec<RunRecord> = (0..30)
            .map(|i| record(i, Some(if i < 12 { 0.8 } else { 0.6 })))
            .collect();
        records[29].score = Some(MetricScore::new(MetricKind::Auc, 0.7));
        records.push(record(30, Some(0.9)));
        let p = collect_pool(&records, 30).unwrap();
        assert_eq!((p.positives.len(), p.negatives.len()), (12, 18));
        let failures: Vec<RunRecord> = (0..3).map(|i| record(i, None)).collect();
        assert!(matches!(
            collect_pool(&failures, 30),
            Err(PreferenceError::EmptyPool)
        ));
    }

    #[test]
    fn worked_pair_counts() {
        let pairs = build_pairs(&pool(&[0.9, 0.8, 0.85], &[0.4, 0.3]));
        assert_eq!(pairs.len(), 10);
        let c = PairCounts::tally(&[], &pairs);
        assert_eq!((c.absolute, c.relative_pos, c.relative_neg), (6, 3, 1));
        assert_eq!(build_pairs(&pool(&[0.9, 0.9], &[])).len(), 0);
        let neg_only = build_pairs(&pool(&[], &[0.1, 0.2, 0.3]));
        assert!(neg_only
            .iter()
            .all(|p| p.criterion == Criterion::RelativeNeg));
        assert_eq!(neg_only.len(), 3);
    }

    #[test]
    fn loss_values() {
        let eq = DpoInputs {
            logp_policy_chosen: -3.0,
            logp_ref_chosen: -3.0,
            logp_policy_rejected: -3.0,
            logp_ref_rejected: -3.0,
            beta: DEFAULT_BETA,
        };
        assert!((dpo_loss(&eq).unwrap() - 2f64.ln()).abs() < 1e-12);
        let worked = DpoInputs {
            logp_policy_chosen: -1.0,
            logp_ref_chosen: -1.5,
            logp_policy_rejected: -2.0,
            logp_ref_rejected: -1.0,
            beta: 0.1,
        };
        let oracle = (1.0 + (-0.15f64).exp()).ln();
        assert!((dpo_loss(&worked).unwrap() - oracle).abs() < 1e-9);
        assert!((oracle - 0.62096).abs() < 1e-5);
        assert!(dpo_loss(&DpoInputs { beta: 0.0, ..eq }).is_err());
        assert!(dpo_loss(&DpoInputs {
            logp_ref_chosen: f64::NAN,
            ..eq
        })
        .is_err());
    }

    #[test]
    fn export_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.jsonl");
        let pairs = build_pairs(&pool(&[0.9, 0.8, 0.85], &[0.4, 0.3]));
        assert_eq!(export_jsonl(&pairs, &path).unwrap(), 10);
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 10);
        assert!(text.lines().next().unwrap().contains("\"chosen_Z\":0.9"));
        assert_eq!(import_jsonl(&path).unwrap(), pairs);

        let empty = dir.path().join("none.jsonl");
        assert!(matches!(
            export_jsonl(&[], &empty),
            Err(PreferenceError::NoPairs)
        ));
        assert!(!empty.exists());
    }

    #[test]
    fn training_defaults() {
        let t = TrainingConfig::default();
        assert_eq!(t.dpo.beta, Some(0.1));
        assert_eq!(t.dpo.learning_rate, 8e-6);
        assert_eq!((t.sft.epochs, t.dpo.epochs), (5, 4));
        assert_eq!(
            metadata_path(Path::new("out/p.jsonl")),
            Path::new("out/p.jsonl.meta.json")
        );
    }

    proptest! {
        #[test]
        fn shift_invariance(
            pc in -50.0f64..-1.0, rc in -50.0f64..-1.0, pr in -50.0f64..-1.0, rr in -50.0f64..-1.0,
            shift in -20.0f64..0.0,
        ) {
            let a = DpoInputs { logp_policy_chosen: pc, logp_ref_chosen: rc, logp_policy_rejected: pr, logp_ref_rejected: rr, beta: 0.1 };
            let b = DpoInputs { logp_policy_chosen: pc + shift, logp_ref_chosen: rc + shift, ..a };
            prop_assert!((dpo_loss(&a).unwrap() - dpo_loss(&b).unwrap()).abs() < 1e-9);
            let tiny = DpoInputs { beta: 1e-12, ..a };
            prop_assert!((dpo_loss(&tiny).unwrap() - 2f64.ln()).abs() < 1e-9);
            prop_assert!(dpo_loss(&a).unwrap() >= 0.0);
        }

        #[test]
        fn pair_criteria_hold(p in 0usize..8, q in 0usize..8, seed in any::<u64>()) {
            let zs: Vec<f64> = (0..p + q).map(|i| ((seed.wrapping_mul(i as u64 + 7)) % 1000) as f64 / 1000.0 + i as f64 * 1e-6).collect();
            let pl = pool(&zs[..p], &zs[p..]);
            for pair in build_pairs(&pl) {
                prop_assert_ne!(&pair.chosen, &pair.rejected);
                if pair.criterion != Criterion::Absolute {
                    prop_assert!(pair.chosen_score.is_better_than(&pair.rejected_score));
                }
            }
        }
    }
}
