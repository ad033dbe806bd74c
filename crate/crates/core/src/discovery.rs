//! The discovery loop: repeated dialogue, parse, materialize and score
//! iterations per experiment, stopping after `K` improvements over the
//! baseline or `L` consecutive non-improving iterations.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feature_lang::{evaluate, parse_program, FeatureProgram};
use crate::gbdt::{
    default_metric, grid_evaluate_columns, GridOptions, GridResult, MetricKind, MetricScore,
};
use crate::llm::{ChatClient, GatewayError, SamplingParams};
use crate::prompt::{
    build_stage1_prompt, build_stage2_prompt, extract_code_block, parse_rationale, Rationale,
};
use crate::subset::{select_best_subset, SubsetEvaluation};
use crate::task::{make_split, Dataset, SplitPlan, TaskSpec};

pub const LOG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopParams {
    /// Number of independent experiments (N).
    pub experiments: usize,
    /// Consecutive non-improving iterations that end an experiment (L).
    pub patience: usize,
    /// Improvements that end an experiment (K).
    pub target_improvements: usize,
    /// Overrides the task's default metric.
    pub metric: Option<MetricKind>,
    pub root_seed: u64,
    pub sampling: SamplingParams,
    /// Score candidates with the baseline's best parameters instead of a
    /// fresh grid search.
    pub reuse_baseline_params: bool,
    pub max_concurrent: usize,
}

impl Default for LoopParams {
    fn default() -> Self {
        LoopParams {
            experiments: 7,
            patience: 15,
            target_improvements: 3,
            metric: None,
            root_seed: 0,
            sampling: SamplingParams::default(),
            reuse_baseline_params: false,
            max_concurrent: 1,
        }
    }
}

impl LoopParams {
    pub fn validate(&self) -> Result<(), DiscoveryError> {
        if self.experiments == 0 || self.patience == 0 || self.target_improvements == 0 {
            return Err(DiscoveryError::InvalidParams(
                "experiments, patience and target_improvements must be at least 1".into(),
            ));
        }
        if self.max_concurrent == 0 {
            return Err(DiscoveryError::InvalidParams(
                "max_concurrent must be at least 1".into(),
            ));
        }
        self.sampling
            .validate()
            .map_err(|e| DiscoveryError::InvalidParams(e.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum DiscoveryError {
    #[error("invalid loop parameters: {0}")]
    InvalidParams(String),
    #[error("baseline evaluation failed: {0}")]
    Baseline(String),
    #[error("every experiment aborted: {}", .0.join("; "))]
    AllAborted(Vec<String>),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("run log: {0}")]
    Log(String),
}

/// Why an iteration produced no usable score.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureReason {
    pub stage: String,
    pub message: String,
}

impl FailureReason {
    pub fn new(stage: &str, message: impl ToString) -> Self {
        FailureReason {
            stage: stage.to_string(),
            message: message.to_string(),
        }
    }
}

/// Outcome of scoring one parsed program.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate {
    pub chosen_features: Vec<String>,
    pub score: MetricScore,
    pub evaluations: Vec<SubsetEvaluation>,
}

/// Scores baselines and candidate programs on an experiment's split.
pub trait CandidateScorer: Sync {
    fn task(&self) -> &TaskSpec;
    fn metric(&self) -> MetricKind;
    fn baseline(&self, seed: u64) -> Result<MetricScore, String>;
    fn score(&self, seed: u64, program: &FeatureProgram) -> Result<ScoredCandidate, FailureReason>;
}

/// Scores with grid-searched boosted trees on one stratified 80/20 split per
/// experiment seed.
pub struct GbdtScorer<'a> {
    dataset: &'a Dataset,
    task: &'a TaskSpec,
    metric: MetricKind,
    reuse_baseline_params: bool,
    baselines: Mutex<HashMap<u64, GridResult>>,
}

impl<'a> GbdtScorer<'a> {
    pub fn new(dataset: &'a Dataset, task: &'a TaskSpec, params: &LoopParams) -> Self {
        GbdtScorer {
            dataset,
            task,
            metric: params
                .metric
                .unwrap_or_else(|| default_metric(task.task_type)),
            reuse_baseline_params: params.reuse_baseline_params,
            baselines: Mutex::new(HashMap::new()),
        }
    }

    fn split(&self, seed: u64) -> Result<SplitPlan, String> {
        make_split(self.dataset, self.task, seed).map_err(|e| e.to_string())
    }

    fn baseline_result(&self, seed: u64) -> Result<GridResult, String> {
        if let Some(r) = self.baselines.lock().expect("baseline cache").get(&seed) {
            return Ok(r.clone());
        }
        let split = self.split(seed)?;
        let options = GridOptions {
            fixed_params: None,
            metric: Some(self.metric),
        };
        let result = grid_evaluate_columns(
            self.dataset,
            self.task,
            &split,
            &self.task.feature_names(),
            &options,
        )
        .map_err(|e| e.to_string())?;
        self.baselines
            .lock()
            .expect("baseline cache")
            .insert(seed, result.clone());
        Ok(result)
    }
}

impl CandidateScorer for GbdtScorer<'_> {
    fn task(&self) -> &TaskSpec {
        self.task
    }

    fn metric(&self) -> MetricKind {
        self.metric
    }

    fn baseline(&self, seed: u64) -> Result<MetricScore, String> {
        self.baseline_result(seed).map(|r| r.score)
    }

    fn score(&self, seed: u64, program: &FeatureProgram) -> Result<ScoredCandidate, FailureReason> {
        let split = self
            .split(seed)
            .map_err(|e| FailureReason::new("split", e))?;
        let augmented =
            evaluate(program, self.dataset).map_err(|e| FailureReason::new("evaluate", e))?;
        let fixed_params = if self.reuse_baseline_params {
            let base = self
                .baseline_result(seed)
                .map_err(|e| FailureReason::new("baseline", e))?;
            Some(base.params)
        } else {
            None
        };
        let options = GridOptions {
            fixed_params,
            metric: Some(self.metric),
        };
        let result = select_best_subset(&augmented, program, self.task, &split, &options)
            .map_err(|e| FailureReason::new("subset_search", e))?;
        Ok(ScoredCandidate {
            chosen_features: result.chosen_features,
            score: result.score,
            evaluations: result.evaluations,
        })
    }
}

/// One iteration of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub dataset: String,
    pub experiment: usize,
    pub iteration: usize,
    pub seed: u64,
    pub system_prompt: String,
    pub prompt: String,
    pub rationale_raw: Option<String>,
    pub rationale: Option<Rationale>,
    pub code_raw: Option<String>,
    pub program: Option<Vec<String>>,
    pub chosen_features: Vec<String>,
    pub evaluated_subsets: usize,
    pub score: Option<MetricScore>,
    pub baseline: MetricScore,
    pub improved: bool,
    pub failure_reason: Option<FailureReason>,
    /// Improvement count after this iteration.
    pub c: usize,
    /// Consecutive non-improvement count after this iteration.
    pub t: usize,
    pub latency_ms: u64,
}

impl RunRecord {
    pub fn succeeded(&self) -> bool {
        self.failure_reason.is_none() && self.score.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub experiment: usize,
    pub seed: u64,
    pub baseline: MetricScore,
    /// Scores that improved on the baseline, in order.
    pub improvements: Vec<MetricScore>,
    /// Best improvement, or the baseline when there was none.
    pub maximum: MetricScore,
    pub used_baseline_fallback: bool,
    pub iterations: usize,
    pub c: usize,
    pub t: usize,
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub dataset: String,
    pub method: String,
    pub metric: MetricKind,
    /// Mean of the per-experiment baselines.
    pub baseline: MetricScore,
    pub experiments: Vec<ExperimentSummary>,
    pub maxima: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of `maxima`.
    pub std: f64,
    pub no_improvement: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogEntry {
    Run(Box<RunRecord>),
    Report(Box<EvalReport>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    pub records: Vec<RunRecord>,
}

/// Derives the seed of experiment `index` from the root seed.
pub fn experiment_seed(root: u64, index: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = root.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// State of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentState {
    pub c: usize,
    pub t: usize,
    pub improvements: Vec<(MetricScore, usize)>,
}

enum Gate {
    /// Stop after K improvements or L consecutive failures.
    Algorithm,
    /// Run exactly this many iterations regardless of outcomes.
    Fixed(usize),
}

fn run_iteration(
    client: &dyn ChatClient,
    scorer: &dyn CandidateScorer,
    sampling: &SamplingParams,
    seed: u64,
    record: &mut RunRecord,
) -> Result<(), GatewayError> {
    let ctx = build_stage1_prompt(scorer.task());
    let first = client.complete(&ctx.turns(), sampling)?;
    let mut latency = first.latency_ms;
    record.rationale_raw = Some(first.text.clone());
    // Client-reported time, so scripted replays log zero.
    let finish = |record: &mut RunRecord, latency: u64| record.latency_ms = latency;
    let rationale = match parse_rationale(&first.text) {
        Ok(r) => r,
        Err(e) => {
            record.failure_reason = Some(FailureReason::new("rationale", e));
            finish(record, latency);
            return Ok(());
        }
    };
    record.rationale = Some(rationale.clone());
    let ctx2 = match build_stage2_prompt(&ctx, &rationale) {
        Ok(c) => c,
        Err(e) => {
            record.failure_reason = Some(FailureReason::new("rationale", e));
            finish(record, latency);
            return Ok(());
        }
    };
    let second = client.complete(&ctx2.turns(), sampling)?;
    latency += second.latency_ms;
    record.code_raw = Some(second.text.clone());
    let outcome = extract_code_block(&second.text)
        .map_err(|e| FailureReason::new("code", e))
        .and_then(|code| {
            parse_program(&code, scorer.task()).map_err(|e| FailureReason::new("parse", e))
        })
        .and_then(|program| {
            record.program = Some(program.pretty_lines());
            scorer.score(seed, &program)
        });
    match outcome {
        Ok(scored) => {
            record.chosen_features = scored.chosen_features;
            record.evaluated_subsets = scored.evaluations.len();
            record.score = Some(scored.score);
        }
        Err(reason) => record.failure_reason = Some(reason),
    }
    finish(record, latency);
    Ok(())
}

fn run_loop(
    dataset_name: &str,
    index: usize,
    seed: u64,
    params: &LoopParams,
    gate: Gate,
    client: &dyn ChatClient,
    scorer: &dyn CandidateScorer,
) -> Result<(ExperimentSummary, Vec<RunRecord>), DiscoveryError> {
    let baseline = scorer.baseline(seed).map_err(DiscoveryError::Baseline)?;
    let ctx = build_stage1_prompt(scorer.task());
    let mut state = ExperimentState {
        c: 0,
        t: 0,
        improvements: Vec::new(),
    };
    let mut records: Vec<RunRecord> = Vec::new();
    let mut aborted = None;
    let mut iteration = 0;
    loop {
        let more = match gate {
            Gate::Algorithm => state.c < params.target_improvements && state.t < params.patience,
            Gate::Fixed(n) => iteration < n,
        };
        if !more {
            break;
        }
        iteration += 1;
        let mut record = RunRecord {
            schema_version: LOG_SCHEMA_VERSION,
            dataset: dataset_name.to_string(),
            experiment: index,
            iteration,
            seed,
            system_prompt: ctx.system_instruction.clone(),
            prompt: ctx.stage1_user.clone(),
            rationale_raw: None,
            rationale: None,
            code_raw: None,
            program: None,
            chosen_features: Vec::new(),
            evaluated_subsets: 0,
            score: None,
            baseline,
            improved: false,
            failure_reason: None,
            c: 0,
            t: 0,
            latency_ms: 0,
        };
        if let Err(e) = run_iteration(client, scorer, &params.sampling, seed, &mut record) {
            tracing::warn!(experiment = index, iteration, error = %e, "experiment aborted");
            aborted = Some(e.to_string());
            iteration -= 1;
            break;
        }
        record.improved = record.score.is_some_and(|z| z.is_better_than(&baseline));
        if record.improved {
            state.c += 1;
            state.t = 0;
            state
                .improvements
                .push((record.score.expect("improved implies score"), iteration));
        } else {
            state.t += 1;
        }
        record.c = state.c;
        record.t = state.t;
        tracing::info!(
            experiment = index,
            iteration,
            score = record.score.map(|s| s.value),
            improved = record.improved,
            failure = record.failure_reason.as_ref().map(|f| f.stage.as_str()),
            "iteration finished"
        );
        records.push(record);
    }
    let improvements: Vec<MetricScore> = state.improvements.iter().map(|(s, _)| *s).collect();
    let best = improvements
        .iter()
        .copied()
        .reduce(|a, b| if b.is_better_than(&a) { b } else { a });
    Ok((
        ExperimentSummary {
            experiment: index,
            seed,
            baseline,
            maximum: best.unwrap_or(baseline),
            used_baseline_fallback: best.is_none(),
            improvements,
            iterations: iteration,
            c: state.c,
            t: state.t,
            aborted,
        },
        records,
    ))
}

/// Runs one experiment of the discovery loop.
pub fn run_experiment(
    dataset_name: &str,
    index: usize,
    seed: u64,
    params: &LoopParams,
    client: &dyn ChatClient,
    scorer: &dyn CandidateScorer,
) -> Result<(ExperimentSummary, Vec<RunRecord>), DiscoveryError> {
    run_loop(
        dataset_name,
        index,
        seed,
        params,
        Gate::Algorithm,
        client,
        scorer,
    )
}

/// Runs `params.experiments` experiments, each with its own client from
/// `make_client` and a seed derived from `params.root_seed`, and aggregates
/// the per-experiment maxima.
pub fn run_evaluation(
    dataset_name: &str,
    method: &str,
    params: &LoopParams,
    make_client: &(dyn Fn(usize) -> Result<Box<dyn ChatClient>, GatewayError> + Sync),
    scorer: &dyn CandidateScorer,
) -> Result<Evaluation, DiscoveryError> {
    params.validate()?;
    let indices: Vec<usize> = (0..params.experiments).collect();
    let mut results: Vec<Result<(ExperimentSummary, Vec<RunRecord>), DiscoveryError>> = Vec::new();
    for batch in indices.chunks(params.max_concurrent) {
        let batch_results: Vec<_> = std::thread::scope(|scope| {
            let handles: Vec<_> = batch
                .iter()
                .map(|&i| {
                    scope.spawn(move || {
                        let client = make_client(i)?;
                        let seed = experiment_seed(params.root_seed, i);
                        run_experiment(dataset_name, i, seed, params, client.as_ref(), scorer)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("experiment thread panicked"))
                .collect()
        });
        results.extend(batch_results);
    }
    aggregate(dataset_name, method, scorer.metric(), results)
}

fn aggregate(
    dataset_name: &str,
    method: &str,
    metric: MetricKind,
    results: Vec<Result<(ExperimentSummary, Vec<RunRecord>), DiscoveryError>>,
) -> Result<Evaluation, DiscoveryError> {
    let mut experiments = Vec::new();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for result in results {
        match result {
            Ok((summary, recs)) => {
                experiments.push(summary);
                records.extend(recs);
            }
            Err(DiscoveryError::InvalidParams(m)) => return Err(DiscoveryError::InvalidParams(m)),
            Err(e) => failures.push(e.to_string()),
        }
    }
    if !failures.is_empty() && experiments.is_empty() {
        return Err(DiscoveryError::AllAborted(failures));
    }
    if let Some(first) = failures.first() {
        return Err(DiscoveryError::Baseline(first.clone()));
    }
    if experiments
        .iter()
        .all(|e| e.aborted.is_some() && e.iterations == 0)
    {
        return Err(DiscoveryError::AllAborted(
            experiments
                .iter()
                .filter_map(|e| e.aborted.clone())
                .collect(),
        ));
    }
    let maxima: Vec<f64> = experiments.iter().map(|e| e.maximum.value).collect();
    let (mean, std) = mean_std(&maxima);
    let baselines: Vec<f64> = experiments.iter().map(|e| e.baseline.value).collect();
    let report = EvalReport {
        schema_version: LOG_SCHEMA_VERSION,
        dataset: dataset_name.to_string(),
        method: method.to_string(),
        metric,
        baseline: MetricScore::new(metric, mean_std(&baselines).0),
        no_improvement: experiments.iter().all(|e| e.used_baseline_fallback),
        experiments,
        maxima,
        mean,
        std,
    };
    Ok(Evaluation { report, records })
}

/// Unconditional sampling for preference data: `samples` iterations on a
/// single split, without stopping on improvements or failures.
pub fn run_sampling(
    dataset_name: &str,
    samples: usize,
    params: &LoopParams,
    client: &dyn ChatClient,
    scorer: &dyn CandidateScorer,
) -> Result<Vec<RunRecord>, DiscoveryError> {
    params.validate()?;
    let seed = experiment_seed(params.root_seed, 0);
    let (summary, records) = run_loop(
        dataset_name,
        0,
        seed,
        params,
        Gate::Fixed(samples),
        client,
        scorer,
    )?;
    if let Some(reason) = summary.aborted {
        if records.is_empty() {
            return Err(DiscoveryError::AllAborted(vec![reason]));
        }
    }
    Ok(records)
}

/// Writes records then the report, one JSON object per line.
pub fn write_run_log(
    out: &mut dyn Write,
    records: &[RunRecord],
    report: Option<&EvalReport>,
) -> std::io::Result<()> {
    for r in records {
        let line = serde_json::to_string(&LogEntry::Run(Box::new(r.clone())))
            .map_err(std::io::Error::other)?;
        writeln!(out, "{line}")?;
    }
    if let Some(report) = report {
        let line = serde_json::to_string(&LogEntry::Report(Box::new(report.clone())))
            .map_err(std::io::Error::other)?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Reads a run log back into records and the optional final report.
pub fn read_run_log(
    input: &mut dyn BufRead,
) -> Result<(Vec<RunRecord>, Option<EvalReport>), DiscoveryError> {
    let mut records = Vec::new();
    let mut report = None;
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| DiscoveryError::Log(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<LogEntry>(&line) {
            Ok(LogEntry::Run(r)) => records.push(*r),
            Ok(LogEntry::Report(r)) => report = Some(*r),
            Err(e) => return Err(DiscoveryError::Log(format!("line {}: {e}", i + 1))),
        }
    }
    Ok((records, report))
}
