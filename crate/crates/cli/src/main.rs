use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use fw_core::analytics::ablation::{ablate, EvidenceFilter, ReplayContext};
use fw_core::analytics::corpus;
use fw_core::analytics::records::{read_records, write_records, PipelineRecord};
use fw_core::analytics::stats::McNemarMethod;
use fw_core::analytics::tables;
use fw_core::backends::{
    open_chat, ChatBackend, ReplayChat, ReplayLog, ReplayTools, Script, SimulatedChat,
};
use fw_core::config::{ConfigError, RunConfig};
use fw_core::evidence::{ContentType, ScoringConfig, SourceId};
use fw_core::exec::{self, Execution};
use fw_core::pipeline::{Engine, PipelineError, RunOptions, SampleRun, Settings, DEFAULT_REASONER};
use fw_core::sample::{label_choices, Sample};
use fw_core::tools::build_default_catalog;

#[derive(Parser)]
#[command(name = "fw", version, about = "Multi-source audio question answering with tiered evidence fusion")]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true, env = "FW_CONFIG")]
    config: Option<PathBuf>,
    /// Output directory; overrides the config.
    #[arg(long, global = true, env = "FW_OUT")]
    out: Option<PathBuf>,
    #[arg(long, global = true, env = "FW_SEED")]
    seed: Option<u64>,
    /// Force the content type instead of the source vote.
    #[arg(long, global = true, env = "FW_CONTENT_OVERRIDE")]
    content_override: Option<String>,
    /// Worker threads for batch and replay work.
    #[arg(long, global = true, env = "FW_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Answer one question about one clip.
    Run(RunArgs),
    /// Answer every sample of a JSONL manifest.
    Batch { manifest: PathBuf },
    /// Re-run the pipeline from recorded exchanges and compare decisions.
    Replay { records: PathBuf },
    /// Argumentation-level ablations over recorded bundles.
    Ablate(AblateArgs),
    /// Accuracy tables and override rate.
    Analyze {
        records: PathBuf,
        /// Print CSV instead of text.
        #[arg(long)]
        csv: bool,
    },
    /// Tool catalog.
    Tools {
        #[command(subcommand)]
        action: ToolsAction,
    },
    /// Write a synthetic record corpus.
    Synth { corpus: SynthCorpus, path: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    audio: String,
    #[arg(long)]
    question: String,
    /// One per option, in order; labelled A, B, ...
    #[arg(long = "choice", required = true, num_args = 1)]
    choices: Vec<String>,
    #[arg(long)]
    duration: f64,
    #[arg(long)]
    id: Option<String>,
    /// Gold label, when known.
    #[arg(long)]
    answer: Option<String>,
}

#[derive(Args)]
struct AblateArgs {
    records: PathBuf,
    /// Variants to compare against the baseline replay.
    #[arg(long = "filter", value_parser = parse_filter)]
    filters: Vec<EvidenceFilter>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_enum, default_value_t = Method::Exact)]
    method: Method,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Exact,
    Chi2,
}

#[derive(Subcommand)]
enum ToolsAction {
    List {
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthCorpus {
    PaperStats,
    Planted,
}

fn parse_filter(s: &str) -> Result<EvidenceFilter, String> {
    EvidenceFilter::parse(s).ok_or_else(|| format!("unknown filter {s:?}; use both, a-only or b-only"))
}

/// Failure classes mapped to exit codes.
enum Failure {
    Invariant(anyhow::Error),
    Config(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.into())
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Config(e)
    }
}

type Outcome = Result<(), Failure>;

/// Stdout writes that tolerate a closed pipe (`fw tools list | head`).
macro_rules! out {
    ($($arg:tt)*) => {{
        let _ = write!(std::io::stdout().lock(), $($arg)*);
    }};
}

macro_rules! outln {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("FW_LOG").unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = exec::with_workers(cli.workers, || dispatch(&cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invariant(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Run(args) => cmd_run(cli, args),
        Command::Batch { manifest } => cmd_batch(cli, manifest),
        Command::Replay { records } => cmd_replay(cli, records),
        Command::Ablate(args) => cmd_ablate(cli, args),
        Command::Analyze { records, csv } => cmd_analyze(cli, records, *csv),
        Command::Tools { action: ToolsAction::List { json } } => cmd_tools(cli, *json),
        Command::Synth { corpus, path } => cmd_synth(*corpus, path),
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let path = cli.config.as_ref().ok_or_else(|| anyhow!("this command needs --config"))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if cli.workers.is_some() {
        cfg.workers = cli.workers;
    }
    Ok(cfg)
}

fn optional_config(cli: &Cli) -> Result<Option<RunConfig>, Failure> {
    cli.config.as_ref().map(|_| load_config(cli)).transpose()
}

fn out_dir(cli: &Cli, cfg: Option<&RunConfig>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.map(|c| c.out_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn run_options(cli: &Cli) -> Result<RunOptions, Failure> {
    let content_override = cli
        .content_override
        .as_deref()
        .map(|s| ContentType::parse(s).ok_or_else(|| anyhow!("unknown content type {s:?}")))
        .transpose()?;
    Ok(RunOptions { content_override })
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn write_file(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn save_runs(dir: &Path, runs: &[SampleRun]) -> anyhow::Result<()> {
    let records: Vec<PipelineRecord> = runs.iter().map(|r| r.record.clone()).collect();
    write_records(&dir.join("records.jsonl"), &records)?;
    let outputs: Vec<_> = runs.iter().map(|r| &r.output).collect();
    write_jsonl(&dir.join("outputs.jsonl"), &outputs)
}

fn pipeline_failure(e: PipelineError) -> Failure {
    match e {
        PipelineError::Invariant { .. } => Failure::Invariant(e.into()),
        PipelineError::Input { .. } => Failure::Config(e.into()),
    }
}

fn cmd_run(cli: &Cli, args: &RunArgs) -> Outcome {
    let cfg = load_config(cli)?;
    let engine = cfg.engine()?;
    let id = args.id.clone().unwrap_or_else(|| {
        Path::new(&args.audio)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "sample".into())
    });
    let sample = Sample {
        id,
        audio: args.audio.clone(),
        duration_s: args.duration,
        question: args.question.clone(),
        choices: label_choices(&args.choices),
        answer: args.answer.clone(),
        category: None,
    };
    let run = engine.run_sample(&sample, run_options(cli)?).map_err(pipeline_failure)?;
    save_runs(&cfg.out_dir, std::slice::from_ref(&run))?;
    out!("{}", run.output.render());
    Ok(())
}

#[derive(Debug, Serialize)]
struct BatchSummary {
    lines: usize,
    completed: usize,
    failed: Vec<String>,
    invariant_breaches: Vec<String>,
    warnings: Vec<String>,
    graded: usize,
    correct: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    accuracy: Option<f64>,
}

/// Samples of a JSONL manifest; unparseable lines become warnings.
fn read_manifest(path: &Path) -> anyhow::Result<(Vec<Sample>, usize, Vec<String>)> {
    let file = fs::File::open(path).with_context(|| format!("reading manifest {}", path.display()))?;
    let mut samples = Vec::new();
    let mut warnings = Vec::new();
    let mut lines = 0;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        lines += 1;
        match serde_json::from_str::<Sample>(&line) {
            Ok(s) => samples.push(s),
            Err(e) => warnings.push(format!("manifest line {}: {e}", i + 1)),
        }
    }
    Ok((samples, lines, warnings))
}

fn run_all(engine: &Engine, samples: &[Sample], opts: RunOptions) -> Vec<Result<SampleRun, PipelineError>> {
    // samples fan out over the pool; each sample runs its stages in order
    exec::map(samples, Execution::Parallel, |s| engine.run_sample(s, opts))
}

fn cmd_batch(cli: &Cli, manifest: &Path) -> Outcome {
    let cfg = load_config(cli)?;
    let engine = cfg.engine()?;
    let opts = run_options(cli)?;
    let (samples, lines, warnings) = read_manifest(manifest)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let results = exec::with_workers(cfg.workers, || run_all(&engine, &samples, opts));
    let mut runs = Vec::new();
    let mut failed = Vec::new();
    let mut breaches = Vec::new();
    for r in results {
        match r {
            Ok(run) => runs.push(run),
            Err(e @ PipelineError::Invariant { .. }) => breaches.push(e.to_string()),
            Err(e) => failed.push(e.to_string()),
        }
    }
    save_runs(&cfg.out_dir, &runs)?;
    let graded: Vec<bool> = runs.iter().filter_map(|r| r.record.correct()).collect();
    let correct = graded.iter().filter(|c| **c).count();
    let summary = BatchSummary {
        lines,
        completed: runs.len(),
        failed,
        invariant_breaches: breaches,
        warnings,
        graded: graded.len(),
        correct,
        accuracy: (!graded.is_empty()).then(|| correct as f64 / graded.len() as f64),
    };
    let text = serde_json::to_string_pretty(&summary).map_err(anyhow::Error::from)?;
    write_file(&cfg.out_dir.join("summary.json"), &format!("{text}\n"))?;
    outln!("{text}");
    if summary.invariant_breaches.is_empty() {
        Ok(())
    } else {
        Err(Failure::Invariant(anyhow!("{} sample(s) breached invariants", summary.invariant_breaches.len())))
    }
}

/// An engine whose every backend replays the given records.
fn replay_engine(records: &Path, cfg: Option<&RunConfig>) -> anyhow::Result<Engine> {
    let log = ReplayLog::from_records(records)?;
    let read = read_records(records)?;
    let first = read.records.first();
    let sources: Vec<SourceId> = first
        .map(|r| r.bundle.sources.clone())
        .filter(|s| s.len() == 2)
        .unwrap_or_else(|| vec![SourceId::new(corpus::SOURCE_A), SourceId::new(corpus::SOURCE_B)]);
    let endpoint = first
        .map(|r| r.reasoner_endpoint.clone())
        .filter(|e| !e.is_empty())
        .unwrap_or_else(|| DEFAULT_REASONER.into());
    let chat: Arc<dyn ChatBackend> = Arc::new(ReplayChat::new(log.clone()));
    let mut settings = cfg.map(RunConfig::settings).unwrap_or_default();
    if cfg.is_none() {
        // the recorded calls carry the sampling they were made with
        if let Some(x) = first.and_then(|r| r.exchanges.first()) {
            settings.sampling = x.sampling;
        }
    }
    settings.logical_clock = true;
    Ok(Engine {
        sources: sources.into_iter().map(|s| (s, chat.clone())).collect(),
        reasoner: chat,
        reasoner_endpoint: endpoint,
        tools: Arc::new(ReplayTools::new(log)),
        catalog: match cfg {
            Some(c) => c.catalog()?,
            None => build_default_catalog().validate()?,
        },
        settings,
    })
}

fn cmd_replay(cli: &Cli, records: &Path) -> Outcome {
    let cfg = optional_config(cli)?;
    let read = read_records(records).with_context(|| format!("reading {}", records.display()))?;
    for w in &read.warnings {
        eprintln!("warning: {w}");
    }
    let engine = replay_engine(records, cfg.as_ref())?;
    let samples: Vec<Sample> = read.records.iter().map(PipelineRecord::sample).collect();
    let opts = RunOptions::default();
    let results = run_all(&engine, &samples, opts);
    let mut same = 0;
    let mut runs = Vec::new();
    for (orig, r) in read.records.iter().zip(results) {
        match r {
            Ok(run) => {
                // records hold rounded scores, so compare what would be written
                if serde_json::to_value(&run.record.decision).ok() == serde_json::to_value(&orig.decision).ok() {
                    same += 1;
                } else {
                    outln!("{}: decision changed {} -> {}", orig.sample_id, orig.decision.answer, run.record.decision.answer);
                }
                runs.push(run);
            }
            Err(e) => outln!("{}: {e}", orig.sample_id),
        }
    }
    let dir = out_dir(cli, cfg.as_ref()).join("replay");
    save_runs(&dir, &runs)?;
    outln!("replayed {} of {} records; {same} identical decisions", runs.len(), read.records.len());
    Ok(())
}

/// Selection judge for ablations: the configured reasoner, or the built-in
/// weight-argmax responder when no config is given.
fn ablation_judge(cfg: Option<&RunConfig>) -> anyhow::Result<(Arc<dyn ChatBackend>, ScoringConfig, Settings)> {
    match cfg {
        Some(c) => Ok((open_chat(&c.reasoner)?, c.scoring.clone(), c.settings())),
        None => Ok((Arc::new(SimulatedChat::new(Script::default())), ScoringConfig::default(), Settings::default())),
    }
}

fn cmd_ablate(cli: &Cli, args: &AblateArgs) -> Outcome {
    let cfg = optional_config(cli)?;
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(Failure::Config(anyhow!("alpha must lie in (0, 1)")));
    }
    let read = read_records(&args.records).with_context(|| format!("reading {}", args.records.display()))?;
    for w in &read.warnings {
        eprintln!("warning: {w}");
    }
    let (judge, scoring, settings) = ablation_judge(cfg.as_ref())?;
    let endpoint = cfg.as_ref().map(RunConfig::reasoner_endpoint).unwrap_or_else(|| DEFAULT_REASONER.into());
    let ctx = ReplayContext { scoring: &scoring, sampling: settings.sampling, endpoint: &endpoint, execution: Execution::Parallel };
    let filters = if args.filters.is_empty() {
        vec![EvidenceFilter::SourceAOnly, EvidenceFilter::SourceBOnly]
    } else {
        args.filters.clone()
    };
    let method = match args.method {
        Method::Exact => McNemarMethod::Exact,
        Method::Chi2 => McNemarMethod::ChiSquare,
    };
    let report = ablate(&read.records, &filters, judge.as_ref(), &ctx, args.alpha, method);
    let dir = out_dir(cli, cfg.as_ref());
    let json = serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)?;
    write_file(&dir.join("ablation.json"), &format!("{json}\n"))?;
    let md = report.to_markdown();
    write_file(&dir.join("ablation.md"), &md)?;
    out!("{md}");
    Ok(())
}

fn cmd_analyze(cli: &Cli, records: &Path, csv: bool) -> Outcome {
    let read = read_records(records).with_context(|| format!("reading {}", records.display()))?;
    for w in &read.warnings {
        eprintln!("warning: {w}");
    }
    let analysis = tables::analyze(&read.records);
    if let Some(dir) = &cli.out {
        write_file(&dir.join("analysis.txt"), &analysis.to_text())?;
        write_file(&dir.join("analysis.csv"), &analysis.to_csv())?;
    }
    if csv {
        out!("{}", analysis.to_csv());
    } else {
        out!("{}", analysis.to_text());
    }
    Ok(())
}

fn cmd_tools(cli: &Cli, json: bool) -> Outcome {
    let catalog = match optional_config(cli)? {
        Some(c) => c.catalog()?,
        None => build_default_catalog().validate().map_err(anyhow::Error::from)?,
    };
    if json {
        let text = serde_json::to_string_pretty(catalog.catalog()).map_err(anyhow::Error::from)?;
        outln!("{text}");
        return Ok(());
    }
    outln!("{:<28} {:<14} {:<8} {:<30} {:<6} {:<6} {}", "tool", "tier", "scope", "domains", "music", "llm", "menu");
    for t in catalog.iter() {
        let domains: Vec<String> = t.domains.iter().map(|d| d.to_string()).collect();
        let yn = |b: bool| if b { "yes" } else { "no" };
        outln!(
            "{:<28} {:<14} {:<8} {:<30} {:<6} {:<6} {}",
            t.name,
            t.tier.to_string(),
            t.scope.to_string(),
            domains.join(","),
            yn(t.music_only),
            yn(t.interpreted),
            yn(t.selectable)
        );
    }
    Ok(())
}

fn cmd_synth(corpus: SynthCorpus, path: &Path) -> Outcome {
    let records = match corpus {
        SynthCorpus::PaperStats => corpus::paper_stats_corpus(),
        SynthCorpus::Planted => corpus::planted_ablation_corpus(),
    };
    write_records(path, &records).with_context(|| format!("writing {}", path.display()))?;
    outln!("wrote {} records to {}", records.len(), path.display());
    Ok(())
}
