//! Command-line front end: config loading, discovery runs, preference export
//! and report tables.

pub mod config;
pub mod table;

use std::fmt;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use featgen_core::discovery::{
    read_run_log, run_evaluation, run_sampling, write_run_log, DiscoveryError, EvalReport,
    Evaluation, GbdtScorer, RunRecord,
};
use featgen_core::feature_lang::parse_program;
use featgen_core::gbdt::MetricKind;
use featgen_core::llm::{ChatClient, GatewayError, HttpChatClient, ScriptedClient};
use featgen_core::preference::{
    build_pairs, collect_pools, export_jsonl, write_metadata, PairCounts, PreferenceError,
    TrainingConfig,
};
use featgen_core::task::{load_dataset, TaskSpec};

pub use config::RunConfig;

pub const RUN_LOG_FILE: &str = "runs.ndjson";
pub const REPORT_FILE: &str = "report.json";
pub const SAMPLES_FILE: &str = "samples.ndjson";

/// A failure with its process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration, unreadable input or failed I/O (exit 2).
    Config(String),
    /// Nothing to produce, such as an empty preference pool (exit 3).
    Empty(String),
}

impl CliError {
    pub fn config(msg: impl ToString) -> Self {
        CliError::Config(msg.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Empty(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Empty(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<PreferenceError> for CliError {
    fn from(e: PreferenceError) -> Self {
        match e {
            PreferenceError::EmptyPool | PreferenceError::NoPairs => CliError::Empty(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<DiscoveryError> for CliError {
    fn from(e: DiscoveryError) -> Self {
        CliError::Config(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "featgen",
    version,
    about = "LLM-driven feature discovery for tabular tasks"
)]
pub struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the discovery loop and write a run log and report.
    Discover(RunArgs),
    /// Draw unconditional samples for preference data.
    Sample(SampleArgs),
    /// Turn a run log into preference pairs.
    BuildPrefs(BuildPrefsArgs),
    /// Render mean ± std tables from reports.
    Report(ReportArgs),
    /// Parse a feature code file against a task's metadata without running it.
    ParseCheck(ParseCheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Auc,
    Mse,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Run configuration (JSON)
    #[arg(long)]
    pub config: PathBuf,
    /// Directory for the run log and report
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Number of independent experiments
    #[arg(long)]
    pub experiments: Option<usize>,
    /// Iterations without improvement before an experiment stops
    #[arg(long)]
    pub patience: Option<usize>,
    /// Improvements after which an experiment stops
    #[arg(long)]
    pub target_improvements: Option<usize>,
    /// Root seed; experiment seeds derive from it
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the task's default metric
    #[arg(long, value_enum)]
    pub metric: Option<MetricArg>,
    /// Score candidates with the baseline's best hyperparameters instead of the full grid
    #[arg(long)]
    pub reuse_baseline_params: bool,
    /// Experiments run in parallel
    #[arg(long)]
    pub max_concurrent: Option<usize>,
    /// Sampling temperature
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Nucleus sampling cutoff
    #[arg(long)]
    pub top_p: Option<f64>,
    /// JSON array of canned responses to replay instead of calling an endpoint.
    #[arg(long)]
    pub scripted: Option<PathBuf>,
    /// OpenAI-compatible endpoint, e.g. http://localhost:8000/v1
    #[arg(long, env = "FEATGEN_BASE_URL")]
    pub base_url: Option<String>,
    /// Model name sent with each request
    #[arg(long, env = "FEATGEN_MODEL")]
    pub model: Option<String>,
    /// Bearer token for the endpoint
    #[arg(long, env = "FEATGEN_API_KEY", hide_env_values = true)]
    pub api_key: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Number of samples to draw
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct BuildPrefsArgs {
    /// Run log written by `discover` or `sample`.
    #[arg(long)]
    pub log: PathBuf,
    /// Pair file to write; a `.meta.json` sidecar lands next to it
    #[arg(long)]
    pub out: PathBuf,
    /// Successful records taken per pool
    #[arg(long, default_value_t = featgen_core::preference::DEFAULT_SAMPLES)]
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Text,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Report files or run logs ending in a report.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    pub format: ReportFormat,
    /// Also write the CSV table here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ParseCheckArgs {
    /// Feature code to parse
    #[arg(long)]
    pub code: PathBuf,
    /// Task metadata JSON.
    #[arg(long)]
    pub metadata: PathBuf,
}

impl RunArgs {
    pub fn new(config: impl Into<PathBuf>) -> Self {
        RunArgs {
            config: config.into(),
            output_dir: None,
            experiments: None,
            patience: None,
            target_improvements: None,
            seed: None,
            metric: None,
            reuse_baseline_params: false,
            max_concurrent: None,
            temperature: None,
            top_p: None,
            scripted: None,
            base_url: None,
            model: None,
            api_key: None,
        }
    }

    /// Loads the config file and applies flag and environment overrides.
    pub fn load(&self) -> Result<RunConfig, CliError> {
        let mut c = RunConfig::load(&self.config)?;
        let lp = &mut c.loop_params;
        if let Some(v) = self.experiments {
            lp.experiments = v;
        }
        if let Some(v) = self.patience {
            lp.patience = v;
        }
        if let Some(v) = self.target_improvements {
            lp.target_improvements = v;
        }
        if let Some(v) = self.seed {
            lp.root_seed = v;
        }
        if let Some(m) = self.metric {
            lp.metric = Some(match m {
                MetricArg::Auc => MetricKind::Auc,
                MetricArg::Mse => MetricKind::Mse,
            });
        }
        if self.reuse_baseline_params {
            lp.reuse_baseline_params = true;
        }
        if let Some(v) = self.max_concurrent {
            lp.max_concurrent = v;
        }
        if let Some(v) = self.temperature {
            lp.sampling.temperature = v;
        }
        if let Some(v) = self.top_p {
            lp.sampling.top_p = v;
        }
        if let Some(p) = &self.output_dir {
            c.output_dir = p.clone();
        }
        if let Some(p) = &self.scripted {
            c.scripted_responses = Some(p.clone());
        }
        if let Some(v) = &self.base_url {
            c.endpoint.base_url = v.clone();
        }
        if let Some(v) = &self.model {
            c.endpoint.model = v.clone();
        }
        if self.api_key.is_some() {
            c.endpoint.api_key = self.api_key.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

type ClientFactory = Box<dyn Fn(usize) -> Result<Box<dyn ChatClient>, GatewayError> + Sync>;

fn client_factory(config: &RunConfig) -> Result<ClientFactory, CliError> {
    match config.load_script()? {
        Some(script) => Ok(Box::new(move |_| {
            ScriptedClient::new(script.clone()).map(|c| Box::new(c) as Box<dyn ChatClient>)
        })),
        None => {
            let endpoint = config.endpoint.clone();
            // Fail on bad settings before any experiment starts.
            HttpChatClient::new(endpoint.clone()).map_err(CliError::config)?;
            Ok(Box::new(move |_| {
                HttpChatClient::new(endpoint.clone()).map(|c| Box::new(c) as Box<dyn ChatClient>)
            }))
        }
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::config(format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn log_bytes(records: &[RunRecord], report: Option<&EvalReport>) -> Vec<u8> {
    let mut buf = Vec::new();
    write_run_log(&mut buf, records, report).expect("writing to memory");
    buf
}

/// Runs every experiment and writes `runs.ndjson` and `report.json` to the
/// output directory.
pub fn discover(config: &RunConfig) -> Result<Evaluation, CliError> {
    let (dataset, task) =
        load_dataset(&config.dataset.csv, &config.dataset.metadata).map_err(CliError::config)?;
    let factory = client_factory(config)?;
    let scorer = GbdtScorer::new(&dataset, &task, &config.loop_params);
    let name = config.dataset_name();
    let evaluation = run_evaluation(
        &name,
        &config.method,
        &config.loop_params,
        &*factory,
        &scorer,
    )?;
    create_dir(&config.output_dir)?;
    write_file(
        &config.output_dir.join(RUN_LOG_FILE),
        &log_bytes(&evaluation.records, Some(&evaluation.report)),
    )?;
    let report =
        serde_json::to_string_pretty(&evaluation.report).expect("report serializes") + "\n";
    write_file(&config.output_dir.join(REPORT_FILE), report.as_bytes())?;
    Ok(evaluation)
}

/// Unconditional sampling on one split, written to `samples.ndjson`.
pub fn sample(config: &RunConfig, samples: usize) -> Result<Vec<RunRecord>, CliError> {
    let (dataset, task) =
        load_dataset(&config.dataset.csv, &config.dataset.metadata).map_err(CliError::config)?;
    let factory = client_factory(config)?;
    let client = factory(0).map_err(CliError::config)?;
    let scorer = GbdtScorer::new(&dataset, &task, &config.loop_params);
    let records = run_sampling(
        &config.dataset_name(),
        samples,
        &config.loop_params,
        client.as_ref(),
        &scorer,
    )?;
    create_dir(&config.output_dir)?;
    write_file(
        &config.output_dir.join(SAMPLES_FILE),
        &log_bytes(&records, None),
    )?;
    Ok(records)
}

fn print_summary(out: &mut dyn Write, eval: &Evaluation) -> std::io::Result<()> {
    let r = &eval.report;
    writeln!(out, "dataset: {}  method: {}", r.dataset, r.method)?;
    writeln!(out, "{}", table::heading(r.metric))?;
    writeln!(out, "baseline: {:.4}", r.baseline.value)?;
    for e in &r.experiments {
        let note = match (&e.aborted, e.used_baseline_fallback) {
            (Some(reason), _) => format!(" (aborted: {reason})"),
            (None, true) => " (no improvement; baseline)".to_string(),
            _ => String::new(),
        };
        writeln!(
            out,
            "experiment {}: max {:.4} after {} iterations, {} improvements{note}",
            e.experiment + 1,
            e.maximum.value,
            e.iterations,
            e.improvements.len()
        )?;
    }
    writeln!(out, "mean ± std: {:.4} ± {:.4}", r.mean, r.std)
}

fn read_log(path: &Path) -> Result<(Vec<RunRecord>, Option<EvalReport>), CliError> {
    let file =
        fs::File::open(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    read_run_log(&mut BufReader::new(file))
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

pub fn build_prefs(args: &BuildPrefsArgs, out: &mut dyn Write) -> Result<PairCounts, CliError> {
    let (records, _) = read_log(&args.log)?;
    let pools = collect_pools(&records, args.samples)?;
    let pairs: Vec<_> = pools.iter().flat_map(build_pairs).collect();
    let counts = PairCounts::tally(&pools, &pairs);
    export_jsonl(&pairs, &args.out)?;
    write_metadata(&args.out, &TrainingConfig::default(), &counts)?;
    let io = |e: std::io::Error| CliError::config(e);
    writeln!(out, "pools: {}", pools.len()).map_err(io)?;
    writeln!(out, "positives: {}", counts.positives).map_err(io)?;
    writeln!(out, "negatives: {}", counts.negatives).map_err(io)?;
    writeln!(out, "absolute: {}", counts.absolute).map_err(io)?;
    writeln!(out, "relative_pos: {}", counts.relative_pos).map_err(io)?;
    writeln!(out, "relative_neg: {}", counts.relative_neg).map_err(io)?;
    writeln!(out, "total: {}", counts.total()).map_err(io)?;
    Ok(counts)
}

/// Reads a report from either `report.json` or a run log ending in one.
pub fn load_report(path: &Path) -> Result<EvalReport, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    if let Ok(report) = serde_json::from_str::<EvalReport>(&text) {
        return Ok(report);
    }
    match read_log(path)? {
        (_, Some(report)) => Ok(report),
        (_, None) => Err(CliError::config(format!(
            "{}: no report found",
            path.display()
        ))),
    }
}

pub fn report(args: &ReportArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let reports = args
        .reports
        .iter()
        .map(|p| load_report(p))
        .collect::<Result<Vec<_>, _>>()?;
    let text = match args.format {
        ReportFormat::Text => table::render_text(&reports),
        ReportFormat::Csv => table::render_csv(&reports),
    };
    out.write_all(text.as_bytes()).map_err(CliError::config)?;
    if let Some(path) = &args.csv {
        write_file(path, table::render_csv(&reports).as_bytes())?;
    }
    Ok(())
}

pub fn parse_check(args: &ParseCheckArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let read = |p: &Path| {
        fs::read_to_string(p).map_err(|e| CliError::config(format!("{}: {e}", p.display())))
    };
    let task: TaskSpec = serde_json::from_str(&read(&args.metadata)?)
        .map_err(|e| CliError::config(format!("{}: {e}", args.metadata.display())))?;
    task.validate().map_err(CliError::config)?;
    let code = read(&args.code)?;
    let program = parse_program(&code, &task)
        .map_err(|e| CliError::config(format!("{}: {e}", args.code.display())))?;
    for line in program.pretty_lines() {
        writeln!(out, "{line}").map_err(CliError::config)?;
    }
    Ok(())
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Discover(args) => {
            let config = args.load()?;
            let eval = discover(&config)?;
            print_summary(out, &eval).map_err(CliError::config)
        }
        Command::Sample(args) => {
            let config = args.run.load()?;
            let samples = args.samples.unwrap_or(config.samples);
            let records = sample(&config, samples)?;
            let ok = records.iter().filter(|r| r.succeeded()).count();
            writeln!(
                out,
                "samples: {}  successful: {ok}  improved: {}",
                records.len(),
                records.iter().filter(|r| r.improved).count()
            )
            .map_err(CliError::config)
        }
        Command::BuildPrefs(args) => build_prefs(args, out).map(|_| ()),
        Command::Report(args) => report(args, out),
        Command::ParseCheck(args) => parse_check(args, out),
    }
}
