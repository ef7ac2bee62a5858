//! Command-line pipeline: `ingest → annotate → features → cluster →
//! collect-llm → btl → report`, each stage re-runnable on its own.

pub mod config;
pub mod manifest;
pub mod stages;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{LoadedConfig, RunConfig};
pub use manifest::{RunManifest, StageRecord};
pub use stages::Pipeline;

/// Bad configuration, a missing or stale input: exit status 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationError(pub String);

impl std::fmt::Display for ValidationError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ValidationError {}

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "factorpref", version, about = "Clustered factor-level preference analysis of vote data")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, short, global = true, default_value = "factorpref.toml")]
    pub config: PathBuf,
    /// Override any config key, e.g. `--set cluster.k=5`. Repeatable; applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    /// Output directory, overriding `paths.out_dir`.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads for in-stage parallelism [default: all cores].
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Warn instead of failing when an upstream artifact no longer matches the manifest.
    #[arg(long, global = true)]
    pub allow_stale: bool,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load prompts, responses and votes, apply the activity filters.
    Ingest(IngestArgs),
    /// Label humor strategies with an LLM (majority over trials).
    Annotate(AnnotateArgs),
    /// Extract and bin linguistic features into factor sets.
    Features(FeaturesArgs),
    /// Cluster users by voting history; writes k diagnostics for choosing k.
    Cluster(ClusterArgs),
    /// Collect funniest-response selections from an LLM under each persona.
    CollectLlm(CollectArgs),
    /// Fit factor-level Bradley-Terry-Luce scores per condition.
    Btl(BtlArgs),
    /// Rankings, score matrix, heatmap rows, correlations and alignment.
    Report(ReportArgs),
    /// Every stage in order.
    Run,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Minimum total votes for a user to count as active [paper default: 100].
    #[arg(long)]
    pub min_user_votes: Option<u64>,
    /// Minimum votes from active users for a response to be kept [paper default: 3].
    #[arg(long)]
    pub min_response_votes: Option<u64>,
    /// Minimum responses for a prompt to be shown to an LLM [paper default: 5].
    #[arg(long)]
    pub min_responses_per_prompt: Option<u64>,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    /// Self-consistency trials per batch, odd [paper default: 3].
    #[arg(long)]
    pub trials: Option<u32>,
    /// Responses per labeling request [paper default: 20].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// live, replay or record [default: replay].
    #[arg(long)]
    pub mode: Option<String>,
    /// Chat model name [paper default: gpt-5.1].
    #[arg(long)]
    pub model: Option<String>,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    /// Merge LLM strategy labels into factor sets [paper default: true].
    #[arg(long)]
    pub use_labels: Option<bool>,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    /// Number of clusters [paper default: 7].
    #[arg(long)]
    pub k: Option<usize>,
    /// SVD embedding dimensions [paper default: 100].
    #[arg(long)]
    pub dims: Option<usize>,
    /// Seed for SVD and k-means; required in config or here.
    #[arg(long)]
    pub seed: Option<u64>,
    /// k-means restarts [default: 10; not stated in the paper].
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Smallest k in the diagnostics table [default: 2].
    #[arg(long)]
    pub k_min: Option<usize>,
    /// Largest k in the diagnostics table [default: 10].
    #[arg(long)]
    pub k_max: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CollectArgs {
    /// Persona to run; repeatable [paper default: all 7].
    #[arg(long = "persona")]
    pub personas: Vec<String>,
    /// Selection trials per prompt [paper default: 3].
    #[arg(long)]
    pub trials: Option<u32>,
    /// Seed for candidate order; required in config or here.
    #[arg(long)]
    pub seed: Option<u64>,
    /// live, replay or record [default: replay].
    #[arg(long)]
    pub mode: Option<String>,
    /// Chat model name [paper default: gpt-5.1].
    #[arg(long)]
    pub model: Option<String>,
}

#[derive(Debug, Args)]
pub struct BtlArgs {
    /// Pseudo-count per ordered factor pair [paper default: 0.01].
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Top and bottom factors per condition in the rankings [paper default: 3].
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Top and bottom all-users factors shown in the heatmap [paper default: 10].
    #[arg(long)]
    pub heatmap_k: Option<usize>,
}

fn push<T: ToString>(out: &mut Vec<String>, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        out.push(format!("{key}={}", v.to_string()));
    }
}

fn quoted(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

impl Command {
    /// Named flags as `KEY=VALUE` overrides.
    fn overrides(&self) -> Vec<String> {
        let mut o = Vec::new();
        match self {
            Command::Ingest(a) => {
                push(&mut o, "filter.min_user_votes", &a.min_user_votes);
                push(&mut o, "filter.min_response_votes", &a.min_response_votes);
                push(&mut o, "filter.min_responses_per_prompt", &a.min_responses_per_prompt);
            }
            Command::Annotate(a) => {
                push(&mut o, "annotate.trials", &a.trials);
                push(&mut o, "annotate.batch_size", &a.batch_size);
                push(&mut o, "annotate.transport.mode", &a.mode.as_deref().map(quoted));
                push(&mut o, "annotate.transport.model", &a.model.as_deref().map(quoted));
            }
            Command::Features(a) => push(&mut o, "features.use_labels", &a.use_labels),
            Command::Cluster(a) => {
                push(&mut o, "cluster.k", &a.k);
                push(&mut o, "cluster.dims", &a.dims);
                push(&mut o, "cluster.seed", &a.seed);
                push(&mut o, "cluster.restarts", &a.restarts);
                push(&mut o, "cluster.k_min", &a.k_min);
                push(&mut o, "cluster.k_max", &a.k_max);
            }
            Command::CollectLlm(a) => {
                if !a.personas.is_empty() {
                    let list: Vec<String> = a.personas.iter().map(|p| quoted(p)).collect();
                    o.push(format!("collect.personas=[{}]", list.join(", ")));
                }
                push(&mut o, "collect.trials", &a.trials);
                push(&mut o, "collect.seed", &a.seed);
                push(&mut o, "collect.transport.mode", &a.mode.as_deref().map(quoted));
                push(&mut o, "collect.transport.model", &a.model.as_deref().map(quoted));
            }
            Command::Btl(a) => push(&mut o, "btl.alpha", &a.alpha),
            Command::Report(a) => {
                push(&mut o, "report.top_k", &a.top_k);
                push(&mut o, "report.heatmap_k", &a.heatmap_k);
            }
            Command::Run => {}
        }
        o
    }
}

/// Resolves config and overrides into a pipeline rooted at the output dir.
pub fn open_pipeline(cli: &Cli) -> anyhow::Result<Pipeline> {
    let mut overrides = cli.set.clone();
    overrides.extend(cli.command.overrides());
    if let Some(out) = &cli.out_dir {
        let abs = std::path::absolute(out)?;
        overrides.push(format!("paths.out_dir={}", quoted(&abs.to_string_lossy())));
    }
    let config = LoadedConfig::load(&cli.config, &overrides)?;
    Pipeline::open(config, cli.allow_stale)
}

fn dispatch(cli: &Cli) -> anyhow::Result<()> {
    let mut p = open_pipeline(cli)?;
    match &cli.command {
        Command::Ingest(_) => p.ingest(),
        Command::Annotate(_) => p.annotate(None),
        Command::Features(_) => p.features(),
        Command::Cluster(_) => p.cluster(),
        Command::CollectLlm(_) => p.collect_llm(None),
        Command::Btl(_) => p.btl(),
        Command::Report(_) => p.report(),
        Command::Run => p.run_all(),
    }
}

pub fn exit_code(e: &anyhow::Error) -> i32 {
    if e.chain().any(|c| c.is::<ValidationError>()) {
        EXIT_VALIDATION
    } else {
        EXIT_RUNTIME
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .try_init();

    let result = match cli.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(anyhow::Error::from)
            .and_then(|pool| pool.install(|| dispatch(&cli))),
        None => dispatch(&cli),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
