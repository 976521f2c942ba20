//! The `vidagent` command line.
//!
//! Exit codes: 0 success, 1 bad input or arguments, 2 backend problems
//! (configuration, transport, cassette misses), 3 no answer was produced.
//! Only answers and reports go to stdout; logs go to stderr.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use tracing::{info, warn};

use crate::aggregator::{aggregate, parse_choices, AggregateError, AggregateMode};
use crate::backend::{BackendError, CassetteBackend, ChatBackend, LiveBackend, LiveConfig};
use crate::harness::{evaluate, generate_tasks, TaskSpec};
use crate::memory::{read_records, select_memory_type, MemoryTypeSelection, TaskMemory, DEFAULT_DEDUP_THRESHOLD};
use crate::planner::{self, Limits, PlannerError, Policy, RewardConfig, SearchConfig, Session};
use crate::toolkit::{load_registry, ToolRegistry};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_BACKEND: i32 = 2;
pub const EXIT_NO_ANSWER: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "vidagent", version, about = "Tree-search question answering over symbolic video memory")]
pub struct Cli {
    /// Settings file (TOML). Flags override it; environment variables only fill gaps.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a task memory from extraction records.
    Ingest(IngestArgs),
    /// Answer a question against a stored memory.
    Ask(AskArgs),
    /// Compare selection policies on synthetic tasks.
    Ablate(AblateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MemoryChoice {
    Both,
    Space,
    Time,
}

impl From<MemoryChoice> for MemoryTypeSelection {
    fn from(c: MemoryChoice) -> Self {
        match c {
            MemoryChoice::Both => MemoryTypeSelection::BOTH,
            MemoryChoice::Space => MemoryTypeSelection::SPACE,
            MemoryChoice::Time => MemoryTypeSelection::TIME,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct BackendArgs {
    /// Cassette file for recorded model traffic.
    #[arg(long)]
    pub cassette: Option<PathBuf>,
    /// Call the live backend and append new exchanges to the cassette.
    #[arg(long, requires = "cassette", conflicts_with = "replay")]
    pub record: bool,
    /// Serve every completion from the cassette (the default when one is given).
    #[arg(long, requires = "cassette")]
    pub replay: bool,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// JSON Lines extraction records.
    pub records: PathBuf,
    #[arg(long)]
    pub question: String,
    /// Output memory file.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Skip the model and build this memory type.
    #[arg(long, value_enum)]
    pub memory: Option<MemoryChoice>,
    /// Caption similarity threshold for merging frames into clips.
    #[arg(long)]
    pub dedup: Option<f64>,
    /// Stored video id; defaults to the records file stem.
    #[arg(long)]
    pub video_id: Option<String>,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct AskArgs {
    /// Memory file written by `ingest`.
    pub memory: PathBuf,
    #[arg(long)]
    pub question: String,
    /// Video path shown to the planner; defaults to the memory's video id.
    #[arg(long)]
    pub video: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub policy: Option<Policy>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub max_children: Option<usize>,
    #[arg(long, default_value = "vote")]
    pub aggregate: AggregateMode,
    /// Choice labels, `A,B,C` or `A=text,B=text`.
    #[arg(long)]
    pub choices: Option<String>,
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    /// Tool registry file; defaults to the six built-in sub-task tools.
    #[arg(long)]
    pub tools: Option<PathBuf>,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Task seeds: a count `K` (0..K) or a range `A..B`.
    #[arg(long, default_value = "50")]
    pub seeds: String,
    #[arg(long, default_value_t = 3)]
    pub width: usize,
    #[arg(long, default_value_t = 2)]
    pub depth: usize,
    #[arg(long, default_value_t = 0.67)]
    pub failure_ratio: f64,
    #[arg(long, default_value_t = 4)]
    pub n: usize,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Comma-separated policies.
    #[arg(long, default_value = "mcts,dfs,root,uniform")]
    pub policies: String,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub backend: Option<LiveConfig>,
    /// Tool registry file, relative to this file.
    pub tools: Option<PathBuf>,
    pub planner: PlannerFile,
    pub memory: MemoryFile,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerFile {
    pub n: Option<usize>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub policy: Option<Policy>,
    pub seed: Option<u64>,
    pub max_depth: Option<usize>,
    pub max_children: Option<usize>,
    pub parse_retries: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemoryFile {
    pub dedup_threshold: Option<f64>,
}

#[derive(Debug)]
enum Failure {
    Input(String),
    Backend(String),
    NoAnswer(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Input(_) => EXIT_INPUT,
            Failure::Backend(_) => EXIT_BACKEND,
            Failure::NoAnswer(_) => EXIT_NO_ANSWER,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Backend(m) | Failure::NoAnswer(m) => m,
        }
    }
}

impl From<BackendError> for Failure {
    fn from(e: BackendError) -> Self {
        Failure::Backend(e.to_string())
    }
}

impl From<PlannerError> for Failure {
    fn from(e: PlannerError) -> Self {
        match e {
            PlannerError::Backend(b) => b.into(),
            other => Failure::Input(other.to_string()),
        }
    }
}

struct Loaded {
    file: FileConfig,
    dir: PathBuf,
}

fn load_config(path: Option<&Path>) -> Result<Loaded, Failure> {
    let Some(path) = path else {
        return Ok(Loaded {
            file: FileConfig::default(),
            dir: PathBuf::from("."),
        });
    };
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    let file = toml::from_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    Ok(Loaded {
        file,
        dir: path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(".")),
    })
}

fn live_backend(file: &FileConfig) -> Result<Arc<dyn ChatBackend>, Failure> {
    let mut config = file.backend.clone().unwrap_or_default();
    config.fill_from_env();
    Ok(Arc::new(LiveBackend::new(config)?))
}

fn build_backend(args: &BackendArgs, file: &FileConfig) -> Result<Arc<dyn ChatBackend>, Failure> {
    match &args.cassette {
        None => live_backend(file),
        Some(path) if args.record => Ok(Arc::new(CassetteBackend::record(live_backend(file)?, path)?)),
        Some(path) => Ok(Arc::new(CassetteBackend::replay(path)?)),
    }
}

fn cmd_ingest(args: &IngestArgs, loaded: &Loaded, out: &mut dyn Write) -> Result<(), Failure> {
    let (records, rejected) = read_records(&args.records).map_err(|e| Failure::Input(e.to_string()))?;
    for r in &rejected {
        warn!(line = r.line, reason = %r.reason, "rejected record");
    }
    let selection = match args.memory {
        Some(m) => m.into(),
        None => {
            let backend = build_backend(&args.backend, &loaded.file)?;
            select_memory_type(&args.question, backend.as_ref())?
        }
    };
    let threshold = args
        .dedup
        .or(loaded.file.memory.dedup_threshold)
        .unwrap_or(DEFAULT_DEDUP_THRESHOLD);
    let video_id = args.video_id.clone().unwrap_or_else(|| {
        args.records
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "video".into())
    });
    let ingested = TaskMemory::ingest(video_id, records, selection, threshold).map_err(|e| Failure::Input(e.to_string()))?;
    ingested
        .memory
        .save(&args.out)
        .map_err(|e| Failure::Input(format!("{}: {e}", args.out.display())))?;
    let counts = ingested.memory.row_counts();
    let _ = writeln!(out, "memory: {}", selection.label());
    let _ = writeln!(out, "instances: {}", counts.instances);
    let _ = writeln!(out, "trajectories: {}", counts.trajectories);
    let _ = writeln!(out, "frames: {}", counts.frames);
    let _ = writeln!(out, "clips: {}", counts.clips);
    let _ = writeln!(out, "rejected: {}", rejected.len() + ingested.rejected.len());
    Ok(())
}

fn registry_for(args: &AskArgs, loaded: &Loaded) -> Result<ToolRegistry, Failure> {
    let path = match (&args.tools, &loaded.file.tools) {
        (Some(p), _) => Some(p.clone()),
        (None, Some(p)) => Some(loaded.dir.join(p)),
        (None, None) => None,
    };
    match path {
        Some(p) => load_registry(&p).map_err(|e| Failure::Input(e.to_string())),
        None => Ok(ToolRegistry::with_subtask_tools()),
    }
}

fn cmd_ask(args: &AskArgs, loaded: &Loaded, out: &mut dyn Write) -> Result<(), Failure> {
    let memory = TaskMemory::load(&args.memory).map_err(|e| Failure::Input(e.to_string()))?;
    let registry = registry_for(args, loaded)?;
    let p = &loaded.file.planner;
    let defaults = RewardConfig::default();
    let reward = RewardConfig {
        alpha: args.alpha.or(p.alpha).unwrap_or(defaults.alpha),
        beta: args.beta.or(p.beta).unwrap_or(defaults.beta),
        n: args.n.or(p.n).unwrap_or(defaults.n),
    };
    let base = Limits::for_registry(&registry);
    let limits = Limits {
        max_depth: args.max_depth.or(p.max_depth).unwrap_or(base.max_depth),
        max_children: args.max_children.or(p.max_children).unwrap_or(base.max_children),
        parse_retries: p.parse_retries.unwrap_or(base.parse_retries),
    };
    let config = SearchConfig {
        reward,
        limits,
        policy: args.policy.or(p.policy).unwrap_or(Policy::Mcts),
        seed: args.seed.or(p.seed).unwrap_or(0),
    };
    let backend = build_backend(&args.backend, &loaded.file)?;
    let video = args.video.clone().unwrap_or_else(|| memory.video_id().to_string());
    let session = Session {
        question: &args.question,
        video_ref: &video,
        memory: &memory,
        registry: &registry,
        backend: backend.as_ref(),
    };
    let output = planner::run(session, &config)?;
    info!(answers = output.answers.len(), calls = output.usage.calls, "search finished");
    if let Some(path) = &args.trace_out {
        std::fs::write(path, output.trace().to_json())
            .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    }
    let choices = args.choices.as_deref().map(parse_choices).unwrap_or_default();
    let answer = match aggregate(args.aggregate, &output.answers, &choices, &args.question, backend.as_ref()) {
        Ok(a) => a,
        Err(AggregateError::NoAnswers) => {
            let why = if output.exhausted { "search space exhausted" } else { "every branch failed" };
            return Err(Failure::NoAnswer(format!("no answer: {why}")));
        }
        Err(AggregateError::Backend(e)) => return Err(e.into()),
        Err(e) => return Err(Failure::Input(e.to_string())),
    };
    let _ = writeln!(out, "{}", answer.trim_end());
    Ok(())
}

fn parse_seeds(spec: &str) -> Result<std::ops::Range<u64>, Failure> {
    let bad = || Failure::Input(format!("bad --seeds `{spec}`: expected K or A..B"));
    match spec.split_once("..") {
        Some((a, b)) => {
            let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
            if a >= b {
                return Err(bad());
            }
            Ok(a..b)
        }
        None => {
            let k: u64 = spec.trim().parse().map_err(|_| bad())?;
            if k == 0 {
                return Err(bad());
            }
            Ok(0..k)
        }
    }
}

fn cmd_ablate(args: &AblateArgs, loaded: &Loaded, out: &mut dyn Write) -> Result<(), Failure> {
    let seeds = parse_seeds(&args.seeds)?;
    let policies = args
        .policies
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse::<Policy>)
        .collect::<Result<Vec<_>, _>>()
        .map_err(Failure::Input)?;
    if policies.is_empty() {
        return Err(Failure::Input("no policies given".into()));
    }
    if args.width < 2 || args.depth < 1 || !(0.0..1.0).contains(&args.failure_ratio) {
        return Err(Failure::Input(
            "need --width >= 2, --depth >= 1 and 0 <= --failure-ratio < 1".into(),
        ));
    }
    let p = &loaded.file.planner;
    let defaults = RewardConfig::default();
    let reward = RewardConfig {
        alpha: args.alpha.or(p.alpha).unwrap_or(defaults.alpha),
        beta: args.beta.or(p.beta).unwrap_or(defaults.beta),
        n: args.n,
    };
    reward.validate().map_err(Failure::Input)?;
    let spec = TaskSpec {
        width: args.width,
        depth: args.depth,
        failure_ratio: args.failure_ratio,
    };
    let tasks = generate_tasks(seeds, &spec);
    let report = evaluate(&policies, &tasks, &reward)?;
    let text = if args.json { report.to_json() } else { report.to_table() };
    let _ = out.write_all(text.as_bytes());
    Ok(())
}

/// Parse `args` and run. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = load_config(cli.config.as_deref()).and_then(|loaded| match &cli.command {
        Command::Ingest(a) => cmd_ingest(a, &loaded, out),
        Command::Ask(a) => cmd_ask(a, &loaded, out),
        Command::Ablate(a) => cmd_ablate(a, &loaded, out),
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("vidagent: {}", f.message());
            f.code()
        }
    }
}
