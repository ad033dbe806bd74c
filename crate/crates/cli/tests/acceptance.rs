//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fail. Pass criterion ids (e.g. `AC6`) to run a subset.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use clap::Parser;
use featgen_cli::{run, Cli, RunConfig, REPORT_FILE, RUN_LOG_FILE};
use featgen_core::discovery::{
    read_run_log, run_evaluation, run_experiment, CandidateScorer, EvalReport, FailureReason,
    LoopParams, RunRecord, ScoredCandidate,
};
use featgen_core::feature_lang::{evaluate, parse_program, FeatureProgram};
use featgen_core::gbdt::{
    auc, fit, fit_traced, objective_loss, param_grid, FeatureMatrix, MetricKind, MetricScore,
    Objective,
};
use featgen_core::llm::{ChatClient, GatewayError, ScriptedClient};
use featgen_core::preference::{build_pairs, collect_pool, dpo_loss, Criterion, DpoInputs};
use featgen_core::subset::{search, SubsetEvaluator};
use featgen_core::task::{ColumnData, ColumnKind, ColumnSpec, Dataset, TaskSpec, TaskType};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Check = (&'static str, &'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        {
            let ok: bool = $cond;
            if !ok {
                return Err(format!($($msg)+));
            }
        }
    };
}

// ---------------------------------------------------------------- helpers

fn spec(name: &str, kind: ColumnKind) -> ColumnSpec {
    ColumnSpec {
        name: name.into(),
        description: format!("{name} value"),
        kind,
    }
}

fn task(task_type: TaskType, columns: &[(&str, ColumnKind)], label: &str) -> TaskSpec {
    let label_kind = match task_type {
        TaskType::Classification => ColumnKind::Binary,
        TaskType::Regression => ColumnKind::Numeric,
    };
    let mut cols: Vec<ColumnSpec> = columns.iter().map(|(n, k)| spec(n, *k)).collect();
    cols.push(ColumnSpec {
        name: label.into(),
        description: "target".into(),
        kind: label_kind,
    });
    TaskSpec {
        domain: "Synthetic".into(),
        task_type,
        problem_statement: format!("predict {label}"),
        label_column: label.into(),
        columns: cols,
    }
}

/// Writes `data.csv` and `meta.json` into `dir`.
fn write_task(dir: &Path, task: &TaskSpec, columns: &[(&str, Vec<f64>)]) {
    let n = columns[0].1.len();
    let mut csv = columns
        .iter()
        .map(|(n, _)| *n)
        .collect::<Vec<_>>()
        .join(",");
    csv.push('\n');
    for r in 0..n {
        let row: Vec<String> = columns.iter().map(|(_, v)| format!("{}", v[r])).collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    fs::write(dir.join("data.csv"), csv).unwrap();
    fs::write(
        dir.join("meta.json"),
        serde_json::to_string_pretty(task).unwrap(),
    )
    .unwrap();
}

fn write_config(
    dir: &Path,
    name: &str,
    script: &[String],
    params: LoopParams,
    out: &str,
) -> std::path::PathBuf {
    fs::write(
        dir.join("script.json"),
        serde_json::to_string(script).unwrap(),
    )
    .unwrap();
    let mut config = RunConfig::new("data.csv", "meta.json");
    config.dataset.name = Some(name.into());
    config.scripted_responses = Some("script.json".into());
    config.loop_params = params;
    config.output_dir = out.into();
    let path = dir.join(format!("{out}.json"));
    fs::write(&path, config.to_json()).unwrap();
    path
}

fn discover_cli(config: &Path) -> Result<(EvalReport, Vec<RunRecord>, String), String> {
    let cli = Cli::parse_from(["featgen", "discover", "--config", config.to_str().unwrap()]);
    let mut out = Vec::new();
    run(&cli, &mut out).map_err(|e| format!("discover failed: {e}"))?;
    let dir = config.parent().unwrap().join(config.file_stem().unwrap());
    let report: EvalReport =
        serde_json::from_str(&fs::read_to_string(dir.join(REPORT_FILE)).unwrap())
            .map_err(|e| e.to_string())?;
    let log = fs::read(dir.join(RUN_LOG_FILE)).unwrap();
    let (records, _) = read_run_log(&mut log.as_slice()).map_err(|e| e.to_string())?;
    Ok((report, records, String::from_utf8(out).unwrap()))
}

fn pairwise_auc(scores: &[f64], labels: &[f64]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1.0 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0.0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

// ---------------------------------------------------------------- AC1

fn ac1_auc_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(2..=300);
        let levels = rng.random_range(2..50);
        let scores: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0..levels) as f64 / levels as f64)
            .collect();
        let mut labels: Vec<f64> = (0..n).map(|_| rng.random_range(0..2) as f64).collect();
        labels[0] = 1.0;
        labels[1] = 0.0;
        labels.shuffle(&mut rng);
        let got = auc(&scores, &labels).map_err(|e| e.to_string())?.value;
        worst = worst.max((got - pairwise_auc(&scores, &labels)).abs());
    }
    let elapsed = start.elapsed();
    ensure!(worst <= 1e-9, "max deviation {worst:e}");
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!("200 datasets, max deviation {worst:.1e}"))
}

// ---------------------------------------------------------------- AC2

fn ac2_dpo_loss() -> Outcome {
    let equal = DpoInputs {
        logp_policy_chosen: -4.2,
        logp_ref_chosen: -4.2,
        logp_policy_rejected: -4.2,
        logp_ref_rejected: -4.2,
        beta: 0.1,
    };
    let l = dpo_loss(&equal).map_err(|e| e.to_string())?;
    ensure!((l - 2f64.ln()).abs() <= 1e-12, "equal inputs gave {l}");

    let worked = DpoInputs {
        logp_policy_chosen: -1.0,
        logp_ref_chosen: -1.5,
        logp_policy_rejected: -2.0,
        logp_ref_rejected: -1.0,
        beta: 0.1,
    };
    let oracle = -(1.0 / (1.0 + (-0.15f64).exp())).ln();
    let l = dpo_loss(&worked).map_err(|e| e.to_string())?;
    ensure!(
        (l - oracle).abs() <= 1e-9,
        "worked example gave {l}, want {oracle}"
    );

    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for i in 0..1000 {
        let base = DpoInputs {
            logp_policy_chosen: rng.random_range(-60.0..-1.0),
            logp_ref_chosen: rng.random_range(-60.0..0.0),
            logp_policy_rejected: rng.random_range(-60.0..0.0),
            logp_ref_rejected: rng.random_range(-60.0..0.0),
            beta: rng.random_range(0.01..1.0),
        };
        let up = DpoInputs {
            logp_policy_chosen: base.logp_policy_chosen + rng.random_range(0.01..1.0),
            ..base
        };
        let (a, b) = (dpo_loss(&base).unwrap(), dpo_loss(&up).unwrap());
        ensure!(
            b < a,
            "tuple {i}: loss {a} -> {b} after raising the chosen log-prob"
        );
    }
    Ok(format!(
        "ln 2 and worked example {l:.5}; 1000 monotone tuples"
    ))
}

// ---------------------------------------------------------------- AC3

fn record(i: usize, score: f64, baseline: f64) -> RunRecord {
    RunRecord {
        schema_version: 1,
        dataset: "pool".into(),
        experiment: 0,
        iteration: i + 1,
        seed: 0,
        system_prompt: String::new(),
        prompt: "x".into(),
        rationale_raw: Some(format!("definition: idea {i}")),
        rationale: None,
        code_raw: None,
        program: None,
        chosen_features: vec![],
        evaluated_subsets: 1,
        score: Some(MetricScore::new(MetricKind::Auc, score)),
        baseline: MetricScore::new(MetricKind::Auc, baseline),
        improved: score > baseline,
        failure_reason: None,
        c: 0,
        t: 0,
        latency_ms: 0,
    }
}

fn ac3_pair_counts() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut total = 0;
    for case in 0..100 {
        let (p, q) = (rng.random_range(0..=20usize), rng.random_range(0..=20usize));
        if p + q < 2 {
            continue;
        }
        // Distinct scores: positives above 0.5, negatives at or below.
        let mut pos: Vec<f64> = (0..p).map(|i| 0.5 + (i + 1) as f64 * 0.01).collect();
        let mut neg: Vec<f64> = (0..q).map(|i| 0.5 - i as f64 * 0.01).collect();
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        let mut zs: Vec<f64> = pos.iter().chain(&neg).copied().collect();
        zs.shuffle(&mut rng);
        let records: Vec<RunRecord> = zs
            .iter()
            .enumerate()
            .map(|(i, &z)| record(i, z, 0.5))
            .collect();
        let pool = collect_pool(&records, records.len()).map_err(|e| e.to_string())?;
        ensure!(
            pool.positives.len() == p && pool.negatives.len() == q,
            "case {case}: pool sizes"
        );
        let pairs = build_pairs(&pool);
        let want = p * q + p * p.saturating_sub(1) / 2 + q * q.saturating_sub(1) / 2;
        ensure!(
            pairs.len() == want,
            "case {case}: {} pairs, want {want}",
            pairs.len()
        );
        ensure!(want == (p + q) * (p + q - 1) / 2, "case {case}: identity");
        let in_pool = |entries: &[featgen_core::preference::PoolEntry], r: &str| {
            entries.iter().any(|e| e.rationale == r)
        };
        for pair in &pairs {
            ensure!(
                pair.chosen != pair.rejected,
                "case {case}: chosen equals rejected"
            );
            match pair.criterion {
                Criterion::Absolute => ensure!(
                    in_pool(&pool.positives, &pair.chosen)
                        && in_pool(&pool.negatives, &pair.rejected),
                    "case {case}: absolute pair crosses pools the wrong way"
                ),
                Criterion::RelativePos | Criterion::RelativeNeg => {
                    let entries = if pair.criterion == Criterion::RelativePos {
                        &pool.positives
                    } else {
                        &pool.negatives
                    };
                    ensure!(
                        in_pool(entries, &pair.chosen) && in_pool(entries, &pair.rejected),
                        "case {case}: relative pair spans pools"
                    );
                    ensure!(
                        pair.chosen_score.value > pair.rejected_score.value,
                        "case {case}: relative pair not ordered by score"
                    );
                }
            }
        }
        total += pairs.len();
    }
    Ok(format!("100 pools, {total} pairs"))
}

// ---------------------------------------------------------------- AC4

/// Replays a fixed score sequence regardless of the program.
struct TraceScorer {
    task: TaskSpec,
    kind: MetricKind,
    baseline: f64,
    scores: Mutex<Vec<f64>>,
}

impl CandidateScorer for TraceScorer {
    fn task(&self) -> &TaskSpec {
        &self.task
    }
    fn metric(&self) -> MetricKind {
        self.kind
    }
    fn baseline(&self, _seed: u64) -> Result<MetricScore, String> {
        Ok(MetricScore::new(self.kind, self.baseline))
    }
    fn score(
        &self,
        _seed: u64,
        program: &FeatureProgram,
    ) -> Result<ScoredCandidate, FailureReason> {
        let mut scores = self.scores.lock().unwrap();
        if scores.is_empty() {
            return Err(FailureReason::new("score", "trace exhausted"));
        }
        Ok(ScoredCandidate {
            chosen_features: program.names(),
            score: MetricScore::new(self.kind, scores.remove(0)),
            evaluations: vec![],
        })
    }
}

fn dialogue(i: usize) -> [String; 2] {
    [
        format!("definition: candidate {i}\n- reason {i}"),
        format!("```python\ndf['f{i}'] = df['a'] * {}\n```", i + 2),
    ]
}

fn trace(
    kind: MetricKind,
    scores: &[f64],
    k: usize,
    l: usize,
) -> Result<(Vec<f64>, usize, f64), String> {
    let task_type = if kind == MetricKind::Auc {
        TaskType::Classification
    } else {
        TaskType::Regression
    };
    let scorer = TraceScorer {
        task: task(task_type, &[("a", ColumnKind::Numeric)], "y"),
        kind,
        baseline: 0.70,
        scores: Mutex::new(scores.to_vec()),
    };
    let script: Vec<String> = (0..scores.len() + 2).flat_map(dialogue).collect();
    let client = ScriptedClient::new(script).unwrap();
    let params = LoopParams {
        target_improvements: k,
        patience: l,
        ..LoopParams::default()
    };
    let (summary, records) =
        run_experiment("trace", 0, 1, &params, &client, &scorer).map_err(|e| e.to_string())?;
    ensure!(summary.aborted.is_none(), "aborted: {:?}", summary.aborted);
    ensure!(records.len() == summary.iterations, "record count");
    let s = summary.improvements.iter().map(|s| s.value).collect();
    Ok((s, summary.iterations, summary.maximum.value))
}

fn ac4_trace() -> Outcome {
    for (kind, mirror) in [(MetricKind::Auc, false), (MetricKind::Mse, true)] {
        let m = |v: f64| if mirror { 1.4 - v } else { v };
        let ms = |vs: &[f64]| vs.iter().map(|&v| m(v)).collect::<Vec<f64>>();
        let close = |a: &[f64], b: &[f64]| {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
        };

        let (s, iters, _) = trace(kind, &ms(&[0.72, 0.69, 0.71, 0.68, 0.68]), 3, 2)?;
        ensure!(
            iters == 5 && close(&s, &ms(&[0.72, 0.71])),
            "{kind}: main trace gave {iters} iterations, S={s:?}"
        );

        let (s, iters, _) = trace(kind, &ms(&[0.71, 0.69, 0.72, 0.73, 0.99]), 3, 2)?;
        ensure!(
            iters == 4 && close(&s, &ms(&[0.71, 0.72, 0.73])),
            "{kind}: K-first gave {iters}, S={s:?}"
        );

        // A score equal to the baseline is not an improvement.
        let (s, iters, max) = trace(kind, &ms(&[0.69, 0.70, 0.99]), 3, 2)?;
        ensure!(
            iters == 2 && s.is_empty(),
            "{kind}: L-first gave {iters}, S={s:?}"
        );
        ensure!(
            (max - 0.70).abs() < 1e-12,
            "{kind}: empty S must fall back to the baseline"
        );
    }

    // Failed parses count toward L.
    let scorer = TraceScorer {
        task: task(TaskType::Classification, &[("a", ColumnKind::Numeric)], "y"),
        kind: MetricKind::Auc,
        baseline: 0.70,
        scores: Mutex::new(vec![0.72]),
    };
    let mut script: Vec<String> = dialogue(0).to_vec();
    for _ in 0..2 {
        script.push("definition: x".into());
        script.push("```python\nimport os\n```".into());
    }
    let client = ScriptedClient::new(script).unwrap();
    let params = LoopParams {
        target_improvements: 3,
        patience: 2,
        ..LoopParams::default()
    };
    let (summary, _) =
        run_experiment("trace", 0, 1, &params, &client, &scorer).map_err(|e| e.to_string())?;
    ensure!(
        summary.iterations == 3 && summary.c == 1 && summary.t == 2,
        "failure counting: {summary:?}"
    );

    // Aggregation over experiments uses the population std of the maxima.
    let scripted = |_: usize| -> Result<Box<dyn ChatClient>, GatewayError> {
        Ok(Box::new(ScriptedClient::new(
            (0..4).flat_map(dialogue).collect(),
        )?))
    };
    let scorer = TraceScorer {
        task: task(TaskType::Classification, &[("a", ColumnKind::Numeric)], "y"),
        kind: MetricKind::Auc,
        baseline: 0.70,
        scores: Mutex::new(vec![0.72, 0.74, 0.69, 0.69]),
    };
    let params = LoopParams {
        experiments: 2,
        target_improvements: 2,
        patience: 2,
        ..LoopParams::default()
    };
    let eval =
        run_evaluation("trace", "m", &params, &scripted, &scorer).map_err(|e| e.to_string())?;
    ensure!(
        eval.report.maxima == vec![0.74, 0.70],
        "maxima {:?}",
        eval.report.maxima
    );
    ensure!(
        (eval.report.mean - 0.72).abs() < 1e-12 && (eval.report.std - 0.02).abs() < 1e-12,
        "mean/std {} {}",
        eval.report.mean,
        eval.report.std
    );
    Ok("5-iteration trace, K-first, L-first, failures and aggregation; AUC and MSE".into())
}

// ---------------------------------------------------------------- AC5

struct TableEvaluator {
    scores: HashMap<Vec<String>, f64>,
    kind: MetricKind,
    calls: AtomicUsize,
}

impl SubsetEvaluator for TableEvaluator {
    fn evaluate(&self, subset: &[String]) -> Result<MetricScore, String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let mut key = subset.to_vec();
        key.sort();
        self.scores
            .get(&key)
            .map(|&v| MetricScore::new(self.kind, v))
            .ok_or_else(|| format!("{key:?} not in table"))
    }
}

fn ac5_subset_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    for case in 0..50 {
        let k = rng.random_range(1..=5usize);
        let kind = if case % 2 == 0 {
            MetricKind::Auc
        } else {
            MetricKind::Mse
        };
        let mut names: Vec<String> = (0..k)
            .map(|i| format!("feat_{}", (b'a' + i as u8) as char))
            .collect();
        names.shuffle(&mut rng);
        let mut sorted = names.clone();
        sorted.sort();
        let mut table = HashMap::new();
        let mut all = Vec::new();
        for mask in 1u32..(1 << k) {
            let subset: Vec<String> = (0..k)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| sorted[i].clone())
                .collect();
            // Coarse values so ties are common.
            let v = rng.random_range(0..8) as f64 / 8.0;
            table.insert(subset.clone(), v);
            all.push((subset, v));
        }
        // Oracle: best value, then fewest features, then smallest name list.
        let best_value = match kind {
            MetricKind::Auc => all.iter().map(|(_, v)| *v).fold(f64::MIN, f64::max),
            MetricKind::Mse => all.iter().map(|(_, v)| *v).fold(f64::MAX, f64::min),
        };
        let want = all
            .iter()
            .filter(|(_, v)| *v == best_value)
            .map(|(s, _)| s.clone())
            .min_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)))
            .unwrap();
        let evaluator = TableEvaluator {
            scores: table,
            kind,
            calls: AtomicUsize::new(0),
        };
        let got = search(&names, &evaluator).map_err(|e| e.to_string())?;
        ensure!(
            got.chosen_features == want,
            "case {case}: chose {:?}, want {want:?}",
            got.chosen_features
        );
        ensure!(got.score.value == best_value, "case {case}: score");
        ensure!(
            evaluator.calls.load(Ordering::SeqCst) == (1 << k) - 1,
            "case {case}: evaluation count"
        );
    }

    let names: Vec<String> = (0..6).map(|i| format!("g{i}")).collect();
    let mut table = HashMap::new();
    for n in &names {
        table.insert(vec![n.clone()], 0.6);
    }
    table.insert(names.clone(), 0.7);
    let evaluator = TableEvaluator {
        scores: table,
        kind: MetricKind::Auc,
        calls: AtomicUsize::new(0),
    };
    let got = search(&names, &evaluator).map_err(|e| e.to_string())?;
    let calls = evaluator.calls.load(Ordering::SeqCst);
    ensure!(calls == 7, "k=6 made {calls} evaluations");
    ensure!(
        got.chosen_features == names,
        "k=6 chose {:?}",
        got.chosen_features
    );
    Ok("50 random tables match enumeration; k=6 makes 7 evaluations".into())
}

// ---------------------------------------------------------------- AC6

/// Label depends only on a/b. Both columns share a scale spanning eight
/// orders of magnitude, so the boundary is a thin diagonal that axis-aligned
/// splits on a and b only approximate.
fn ratio_columns(n: usize, seed: u64) -> Vec<(&'static str, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for _ in 0..n {
        let scale = 10f64.powf(rng.random_range(-4.0..4.0));
        a.push(scale * rng.random_range(0.9..1.11));
        b.push(scale * rng.random_range(0.9..1.11));
    }
    let ratio: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x / y).collect();
    let mut sorted = ratio.clone();
    sorted.sort_by(|x, y| x.total_cmp(y));
    let median = sorted[n / 2];
    let y: Vec<f64> = ratio
        .iter()
        .map(|&r| {
            let noise = rng.random_range(-0.02..0.02) * median;
            if r > median + noise {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    vec![("a", a), ("b", b), ("y", y)]
}

fn ac6_planted_ratio() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let t = task(
        TaskType::Classification,
        &[("a", ColumnKind::Numeric), ("b", ColumnKind::Numeric)],
        "y",
    );
    write_task(dir.path(), &t, &ratio_columns(2000, 606));
    let script = vec![
        "definition: ratio of a to b, the size of a relative to b.\n- the label follows the balance between the two.\n\
         definition: total of a and b.\n- overall scale.\n\
         definition: log of b.\n- compresses the range."
            .to_string(),
        "```python\ndf['r'] = df['a']/df['b']\ndf['total'] = df['a'] + df['b']\ndf['log_b'] = np.log(df['b'])\n```".into(),
    ];
    let params = LoopParams {
        experiments: 1,
        target_improvements: 1,
        ..LoopParams::default()
    };
    let config = write_config(dir.path(), "planted_ratio", &script, params, "run");
    let (report, records, _) = discover_cli(&config)?;
    let elapsed = start.elapsed();
    let rec = records.first().ok_or("no iterations ran")?;
    let score = rec
        .score
        .ok_or_else(|| format!("iteration failed: {:?}", rec.failure_reason))?;
    let gain = score.value - report.baseline.value;
    ensure!(
        gain >= 0.05,
        "AUC {:.4} vs baseline {:.4}",
        score.value,
        report.baseline.value
    );
    ensure!(
        rec.chosen_features == vec!["r".to_string()],
        "selected {:?}",
        rec.chosen_features
    );
    ensure!(
        rec.evaluated_subsets == 7,
        "evaluated {} subsets",
        rec.evaluated_subsets
    );
    ensure!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
    Ok(format!(
        "AUC {:.4} vs baseline {:.4} (+{gain:.4}), selected {{r}}",
        score.value, report.baseline.value
    ))
}

// ---------------------------------------------------------------- AC7

const GOLDEN: &[&str] = &[
    "df['activity_bmi_interaction'] = df['paq605'] * df['bmxbmi']",
    "df['adjusted_avg_glucose'] = df['lbxglu'].where(df['diq010'] == 1, 0)",
    "df['bmi_glucose_ratio'] = df['bmxbmi']/df['lbxglu']",
    "df['activity_glucose_ratio'] = df['paq605']/df['lbxglu']",
    "df['totalvalue'] = df.groupby('from')['value'].transform('sum')",
    "df['count_transactions'] = df.groupby('from')['from'].transform('count')",
    "df['frequency_tx'] = df.groupby(['from','to'])['from'].transform('count')",
    "df['avgpp'] = (df['ngp'].where(df['repetition'] == 1).fillna(0) + df['ngp'].where(df['repetition'] == 2).fillna(0) +\n\
     df['ngp'].where(df['repetition'] == 3).fillna(0) + df['ngp'].where(df['repetition'] == 4).fillna(0)) / 4",
    "df['grv'] = df.groupby('cultivar')['ngl'].transform(lambda x: ((x - x.mean())**2).mean())",
];
const AVERAGE_WITH_REPLACE: &str =
    "df['average_health_metric'] = (df['bmxbmi'] + df['lbxglu'] + df['diq010'].replace({'yes':1, 'no':0}))/3";

type Col = Vec<Option<f64>>;

fn opt_num(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Option<f64> {
    (rng.random_range(0..10) > 0).then(|| rng.random_range(lo..hi))
}

fn pick<'a>(rng: &mut ChaCha8Rng, options: &[&'a str]) -> &'a str {
    options[rng.random_range(0..options.len())]
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn group_by<K: Ord + Clone>(keys: &[K]) -> BTreeMap<K, Vec<usize>> {
    let mut groups: BTreeMap<K, Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        groups.entry(k.clone()).or_default().push(i);
    }
    groups
}

/// Compares an evaluated column against an oracle. A degenerate oracle
/// column (all missing, or complete and constant) must be rejected instead.
fn check_column(
    program: &str,
    t: &TaskSpec,
    ds: &Dataset,
    name: &str,
    want: &Col,
) -> Result<(), String> {
    let p = parse_program(program, t).map_err(|e| format!("{name}: parse: {e}"))?;
    let degenerate = want.iter().all(|v| v.is_none())
        || (want.iter().all(|v| v.is_some()) && want.windows(2).all(|w| w[0] == w[1]));
    match evaluate(&p, ds) {
        Err(e) => {
            ensure!(degenerate, "{name}: unexpected error {e}");
            Ok(())
        }
        Ok(out) => {
            ensure!(!degenerate, "{name}: degenerate column accepted");
            let got = out.column(name).ok_or("missing output")?.to_numeric();
            for (i, (g, w)) in got.iter().zip(want).enumerate() {
                let ok = match (g, w) {
                    (None, None) => true,
                    (Some(g), Some(w)) => (g - w).abs() <= 1e-9 * (1.0 + w.abs()),
                    _ => false,
                };
                ensure!(ok, "{name} row {i}: got {g:?}, want {w:?}");
            }
            Ok(())
        }
    }
}

fn ac7_parser_golden() -> Outcome {
    let nhanes = task(
        TaskType::Classification,
        &[
            ("paq605", ColumnKind::Numeric),
            ("bmxbmi", ColumnKind::Numeric),
            ("lbxglu", ColumnKind::Numeric),
            ("diq010", ColumnKind::Numeric),
        ],
        "age_group",
    );
    let nhanes_text = task(
        TaskType::Classification,
        &[
            ("bmxbmi", ColumnKind::Numeric),
            ("lbxglu", ColumnKind::Numeric),
            ("diq010", ColumnKind::Categorical),
        ],
        "age_group",
    );
    let ethereum = task(
        TaskType::Classification,
        &[
            ("from", ColumnKind::Categorical),
            ("to", ColumnKind::Categorical),
            ("value", ColumnKind::Numeric),
        ],
        "flag",
    );
    let cultivar = task(
        TaskType::Regression,
        &[
            ("cultivar", ColumnKind::Categorical),
            ("repetition", ColumnKind::Numeric),
            ("ngp", ColumnKind::Numeric),
            ("ngl", ColumnKind::Numeric),
        ],
        "gy",
    );
    let tasks = [
        &nhanes, &nhanes, &nhanes, &nhanes, &ethereum, &ethereum, &ethereum, &cultivar, &cultivar,
    ];
    for (line, t) in GOLDEN.iter().zip(tasks) {
        parse_program(line, t).map_err(|e| format!("`{line}`: {e}"))?;
    }
    parse_program(AVERAGE_WITH_REPLACE, &nhanes_text).map_err(|e| e.to_string())?;

    let mut rng = ChaCha8Rng::seed_from_u64(707);
    for frame in 0..100 {
        let n = rng.random_range(3..25);
        let ctx = |e: String| format!("frame {frame}: {e}");

        // Row-wise lines.
        let paq: Col = (0..n).map(|_| opt_num(&mut rng, 0.0, 5.0)).collect();
        let bmi: Col = (0..n).map(|_| opt_num(&mut rng, 15.0, 40.0)).collect();
        let glu: Col = (0..n)
            .map(|_| {
                if rng.random_range(0..8) == 0 {
                    Some(0.0)
                } else {
                    opt_num(&mut rng, 70.0, 200.0)
                }
            })
            .collect();
        let diq: Col = (0..n)
            .map(|_| opt_num(&mut rng, 0.0, 3.0).map(f64::floor))
            .collect();
        let num = |v: &Col| ColumnData::Numeric(v.clone());
        let ds = Dataset::new(vec![
            ("paq605".into(), num(&paq)),
            ("bmxbmi".into(), num(&bmi)),
            ("lbxglu".into(), num(&glu)),
            ("diq010".into(), num(&diq)),
        ])
        .unwrap();
        let zip2 = |x: &Col, y: &Col, f: &dyn Fn(f64, f64) -> f64| -> Col {
            x.iter()
                .zip(y)
                .map(|(a, b)| a.zip(*b).and_then(|(a, b)| finite(f(a, b))))
                .collect()
        };
        check_column(
            GOLDEN[0],
            &nhanes,
            &ds,
            "activity_bmi_interaction",
            &zip2(&paq, &bmi, &|a, b| a * b),
        )
        .map_err(ctx)?;
        let adjusted: Col = glu
            .iter()
            .zip(&diq)
            .map(|(g, d)| if *d == Some(1.0) { *g } else { Some(0.0) })
            .collect();
        check_column(GOLDEN[1], &nhanes, &ds, "adjusted_avg_glucose", &adjusted).map_err(ctx)?;
        check_column(
            GOLDEN[2],
            &nhanes,
            &ds,
            "bmi_glucose_ratio",
            &zip2(&bmi, &glu, &|a, b| a / b),
        )
        .map_err(ctx)?;
        check_column(
            GOLDEN[3],
            &nhanes,
            &ds,
            "activity_glucose_ratio",
            &zip2(&paq, &glu, &|a, b| a / b),
        )
        .map_err(ctx)?;

        let answers: Vec<Option<&str>> = (0..n)
            .map(|_| {
                (rng.random_range(0..8) > 0).then(|| pick(&mut rng, &["yes", "no", "unknown"]))
            })
            .collect();
        let ds_text = Dataset::new(vec![
            ("bmxbmi".into(), num(&bmi)),
            ("lbxglu".into(), num(&glu)),
            (
                "diq010".into(),
                ColumnData::Text(answers.iter().map(|a| a.map(String::from)).collect()),
            ),
        ])
        .unwrap();
        let average: Col = (0..n)
            .map(|i| {
                let coded = match answers[i] {
                    Some("yes") => Some(1.0),
                    Some("no") => Some(0.0),
                    _ => None,
                };
                Some(bmi[i]? + glu[i]? + coded?).map(|s| s / 3.0)
            })
            .collect();
        check_column(
            AVERAGE_WITH_REPLACE,
            &nhanes_text,
            &ds_text,
            "average_health_metric",
            &average,
        )
        .map_err(ctx)?;

        // Group lines.
        let senders: Vec<&str> = (0..n)
            .map(|_| pick(&mut rng, &["0xa", "0xb", "0xc", "0xd"]))
            .collect();
        let receivers: Vec<&str> = (0..n)
            .map(|_| pick(&mut rng, &["0xa", "0xe", "0xf"]))
            .collect();
        let value: Col = (0..n).map(|_| opt_num(&mut rng, 0.0, 100.0)).collect();
        let text = |v: &[&str]| ColumnData::Text(v.iter().map(|s| Some(s.to_string())).collect());
        let ds = Dataset::new(vec![
            ("from".into(), text(&senders)),
            ("to".into(), text(&receivers)),
            ("value".into(), num(&value)),
        ])
        .unwrap();
        let mut total: Col = vec![None; n];
        let mut count: Col = vec![None; n];
        for rows in group_by(&senders).values() {
            let sum: f64 = rows.iter().filter_map(|&r| value[r]).sum();
            for &r in rows {
                total[r] = Some(sum);
                count[r] = Some(rows.len() as f64);
            }
        }
        let pairs: Vec<(&str, &str)> = senders
            .iter()
            .copied()
            .zip(receivers.iter().copied())
            .collect();
        let mut freq: Col = vec![None; n];
        for rows in group_by(&pairs).values() {
            for &r in rows {
                freq[r] = Some(rows.len() as f64);
            }
        }
        check_column(GOLDEN[4], &ethereum, &ds, "totalvalue", &total).map_err(ctx)?;
        check_column(GOLDEN[5], &ethereum, &ds, "count_transactions", &count).map_err(ctx)?;
        check_column(GOLDEN[6], &ethereum, &ds, "frequency_tx", &freq).map_err(ctx)?;

        let cultivars: Vec<&str> = (0..n)
            .map(|_| pick(&mut rng, &["bmx", "desafio", "nk"]))
            .collect();
        let repetition: Col = (0..n)
            .map(|_| Some(rng.random_range(1..=4) as f64))
            .collect();
        let ngp: Col = (0..n).map(|_| opt_num(&mut rng, 50.0, 250.0)).collect();
        let ngl: Col = (0..n).map(|_| opt_num(&mut rng, 100.0, 600.0)).collect();
        let ds = Dataset::new(vec![
            ("cultivar".into(), text(&cultivars)),
            ("repetition".into(), num(&repetition)),
            ("ngp".into(), num(&ngp)),
            ("ngl".into(), num(&ngl)),
        ])
        .unwrap();
        let avgpp: Col = (0..n)
            .map(|i| {
                let s: f64 = (1..=4)
                    .map(|rep| match (repetition[i], ngp[i]) {
                        (Some(r), Some(v)) if r == rep as f64 => v,
                        _ => 0.0,
                    })
                    .sum();
                Some(s / 4.0)
            })
            .collect();
        check_column(GOLDEN[7], &cultivar, &ds, "avgpp", &avgpp).map_err(ctx)?;
        let mut grv: Col = vec![None; n];
        for rows in group_by(&cultivars).values() {
            let vals: Vec<f64> = rows.iter().filter_map(|&r| ngl[r]).collect();
            let var = (!vals.is_empty()).then(|| {
                let m = vals.iter().sum::<f64>() / vals.len() as f64;
                vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64
            });
            for &r in rows {
                grv[r] = var;
            }
        }
        check_column(GOLDEN[8], &cultivar, &ds, "grv", &grv).map_err(ctx)?;
    }
    Ok(format!(
        "{} golden lines parse; 100 random frames match oracles",
        GOLDEN.len() + 1
    ))
}

// ---------------------------------------------------------------- AC8

fn ac8_gbdt_sanity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let n = 400;
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let noise: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = x.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
    let m = FeatureMatrix::from_columns(
        vec!["x".into(), "noise".into()],
        vec![
            x.iter().map(|&v| Some(v)).collect(),
            noise.iter().map(|&v| Some(v)).collect(),
        ],
    )
    .map_err(|e| e.to_string())?;
    let grid = param_grid(Objective::Logistic, 42);
    let mut worst_auc: f64 = 1.0;
    let (mut full_sample, mut subsampled) = (0, 0);
    for p in &grid {
        let (model, rounds) = fit_traced(&m, &y, p).map_err(|e| e.to_string())?;
        let a = auc(&model.predict_margin(&m), &y)
            .map_err(|e| e.to_string())?
            .value;
        worst_auc = worst_auc.min(a);
        ensure!(a >= 0.99, "{p:?}: training AUC {a}");

        // Every round lowers the loss on the rows its tree was fit on. With
        // all rows in every round that is the full training loss, which must
        // then be non-increasing from round to round.
        let mut prev = objective_loss(Objective::Logistic, &vec![model.base_score; n], &y);
        for (round, r) in rounds.iter().enumerate() {
            ensure!(
                r.in_bag_after <= r.in_bag_before + 1e-12,
                "{p:?}: in-bag loss rose at round {round}: {} -> {}",
                r.in_bag_before,
                r.in_bag_after
            );
            if p.subsample == 1.0 {
                ensure!(
                    r.in_bag_rows == n,
                    "{p:?}: full-sample round used {} rows",
                    r.in_bag_rows
                );
                ensure!(
                    r.full_after <= prev + 1e-12,
                    "{p:?}: training loss rose at round {round}: {prev} -> {}",
                    r.full_after
                );
            }
            prev = r.full_after;
        }
        if p.subsample == 1.0 {
            full_sample += 1;
        } else {
            subsampled += 1;
        }

        let again = fit(&m, &y, p).map_err(|e| e.to_string())?;
        let bytes = |v: Vec<f64>| {
            v.into_iter()
                .flat_map(f64::to_le_bytes)
                .collect::<Vec<u8>>()
        };
        ensure!(
            bytes(model.predict(&m)) == bytes(again.predict(&m)),
            "{p:?}: predictions differ between runs"
        );
    }
    Ok(format!(
        "{} grid points, min training AUC {worst_auc:.4}; training loss non-increasing on {full_sample} \
         full-sample points, in-bag loss decreasing every round on {subsampled} subsampled points",
        grid.len()
    ))
}

// ---------------------------------------------------------------- AC9

fn ac9_regression() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let n = 1000;
    let a: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let b: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let target: Vec<f64> = a
        .iter()
        .zip(&b)
        .map(|(x, y)| x * y + rng.random_range(-0.3..0.3))
        .collect();
    let t = task(
        TaskType::Regression,
        &[("a", ColumnKind::Numeric), ("b", ColumnKind::Numeric)],
        "target",
    );
    write_task(dir.path(), &t, &[("a", a), ("b", b), ("target", target)]);
    let script = vec![
        "definition: product of a and b.\n- the target responds to both together.".to_string(),
        "df['ab'] = df['a'] * df['b']".into(),
    ];
    let params = LoopParams {
        experiments: 1,
        target_improvements: 1,
        ..LoopParams::default()
    };
    let config = write_config(dir.path(), "planted_product", &script, params, "run");
    let (report, records, stdout) = discover_cli(&config)?;
    ensure!(
        report.metric == MetricKind::Mse,
        "metric {:?}",
        report.metric
    );
    ensure!(
        stdout.contains("MSE (↓ lower is better)"),
        "summary lacks MSE heading:\n{stdout}"
    );
    let score = records
        .first()
        .and_then(|r| r.score)
        .ok_or("no successful iteration")?;
    let reduction = 1.0 - score.value / report.baseline.value;
    ensure!(
        reduction >= 0.05,
        "MSE {:.4} vs baseline {:.4}",
        score.value,
        report.baseline.value
    );
    Ok(format!(
        "MSE {:.4} vs baseline {:.4} ({:.1}% lower)",
        score.value,
        report.baseline.value,
        reduction * 100.0
    ))
}

// ---------------------------------------------------------------- AC10

fn ac10_replay() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let t = task(
        TaskType::Classification,
        &[("a", ColumnKind::Numeric), ("b", ColumnKind::Numeric)],
        "y",
    );
    write_task(dir.path(), &t, &ratio_columns(300, 1010));
    let script = vec![
        "definition: ratio.\n- balance.".to_string(),
        "df['r'] = df['a'] / df['b']".into(),
        "no ideas today".into(),
        "definition: difference.\n- spread.".into(),
        "df['d'] = df['a'] - df['b']\ndf['s'] = df['a'] + df['b']".into(),
        "definition: bad.\n- x".into(),
        "df['z'] = df['missing_column'] * 2".into(),
    ];
    let params = LoopParams {
        experiments: 2,
        target_improvements: 2,
        patience: 3,
        root_seed: 5,
        ..LoopParams::default()
    };
    let first = write_config(dir.path(), "replay", &script, params.clone(), "first");
    let second = write_config(dir.path(), "replay", &script, params, "second");
    let (report, records, _) = discover_cli(&first)?;
    discover_cli(&second)?;
    for file in [RUN_LOG_FILE, REPORT_FILE] {
        let a = fs::read(dir.path().join("first").join(file)).unwrap();
        let b = fs::read(dir.path().join("second").join(file)).unwrap();
        ensure!(a == b, "{file} differs between runs");
    }
    ensure!(
        records.iter().any(|r| r.failure_reason.is_some()),
        "expected some failed iterations"
    );
    Ok(format!(
        "{} records and report identical across runs ({} experiments)",
        records.len(),
        report.experiments.len()
    ))
}

// ---------------------------------------------------------------- runner

fn main() {
    let criteria: [Check; 10] = [
        ("AC1", "AUC matches pairwise oracle", ac1_auc_oracle),
        ("AC2", "DPO loss values and monotonicity", ac2_dpo_loss),
        ("AC3", "preference pair-count identity", ac3_pair_counts),
        ("AC4", "discovery loop trace conformance", ac4_trace),
        (
            "AC5",
            "subset search matches enumeration",
            ac5_subset_oracle,
        ),
        ("AC6", "planted ratio end to end", ac6_planted_ratio),
        (
            "AC7",
            "parser golden lines and group oracles",
            ac7_parser_golden,
        ),
        ("AC8", "GBDT sanity on every grid point", ac8_gbdt_sanity),
        (
            "AC9",
            "regression product feature lowers MSE",
            ac9_regression,
        ),
        ("AC10", "replay determinism", ac10_replay),
    ];
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (id, title, check) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| f == id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {id} {title}: {detail} ({secs:.1}s)"),
            Err(reason) => {
                failed += 1;
                println!("FAIL {id} {title}: {reason} ({secs:.1}s)");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
