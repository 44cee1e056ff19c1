use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use metacal::gradcheck;
use metacal::harness::{self, RunConfig, RunResult};
use metacal::memory::MemoryBuffer;
use metacal::model::ModelState;
use metacal::synthetic::SyntheticSpec;

#[derive(Parser)]
#[command(name = "metacal", version, about = "Meta-continual active learning on text task streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train over a task stream and write run.json, log.csv and memory.tsv.
    Run(Box<RunArgs>),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Write the memory of a finished run as TSV.
    DumpMemory(DumpArgs),
    /// Recompute metrics from the accuracy matrix of a saved run.json.
    Metrics(MetricsArgs),
    /// Generate a synthetic keyword stream with manifest and lexicon.
    Synth(SynthArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file; command-line flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<String>,
    #[arg(long)]
    lexicon: Option<String>,
    #[arg(long)]
    output_dir: Option<String>,
    /// Comma-separated 1-based task order.
    #[arg(long)]
    order: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    k_shot: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    episode_batches: Option<usize>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    memory_per_class: Option<usize>,
    #[arg(long)]
    relative_weight: Option<f64>,
    #[arg(long)]
    inner_lr: Option<f64>,
    #[arg(long)]
    outer_lr: Option<f64>,
    #[arg(long, value_parser = ["rand", "rep-kmeans", "div-kmeans", "rep-mean", "div-mean", "unc-lc", "unc-margin", "unc-entropy"])]
    al_strategy: Option<String>,
    #[arg(long, value_parser = ["reservoir", "ring", "prototype"])]
    memory_strategy: Option<String>,
    #[arg(long)]
    no_memory: bool,
    #[arg(long)]
    no_inner_aug: bool,
    #[arg(long)]
    no_outer_aug: bool,
    #[arg(long)]
    full_supervision: bool,
    #[arg(long)]
    swap_rate: Option<f64>,
    #[arg(long)]
    delete_rate: Option<f64>,
    #[arg(long)]
    synonym_rate: Option<f64>,
    #[arg(long)]
    input_dim: Option<usize>,
    /// Comma-separated hidden layer widths.
    #[arg(long)]
    hidden_dims: Option<String>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Any config key as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn list(raw: &str) -> String {
    format!("[{raw}]")
}

impl RunArgs {
    fn overrides(&self) -> Result<Vec<(String, String)>> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_owned(), v));
            }
        };
        put("manifest", self.manifest.clone());
        put("lexicon", self.lexicon.clone());
        put("output_dir", self.output_dir.clone());
        put("order", self.order.as_deref().map(list));
        put("seed", self.seed.map(|v| v.to_string()));
        put("k_shot", self.k_shot.map(|v| v.to_string()));
        put("batch_size", self.batch_size.map(|v| v.to_string()));
        put("episode_batches", self.episode_batches.map(|v| v.to_string()));
        put("budget", self.budget.map(|v| v.to_string()));
        put("memory_per_class", self.memory_per_class.map(|v| v.to_string()));
        put("relative_weight", self.relative_weight.map(|v| format!("{v:?}")));
        put("inner_lr", self.inner_lr.map(|v| format!("{v:?}")));
        put("outer_lr", self.outer_lr.map(|v| format!("{v:?}")));
        put("al_strategy", self.al_strategy.clone());
        put("memory_strategy", self.memory_strategy.clone());
        put("use_memory", self.no_memory.then(|| "false".into()));
        put("use_inner_aug", self.no_inner_aug.then(|| "false".into()));
        put("use_outer_aug", self.no_outer_aug.then(|| "false".into()));
        put("full_supervision", self.full_supervision.then(|| "true".into()));
        put("swap_rate", self.swap_rate.map(|v| format!("{v:?}")));
        put("delete_rate", self.delete_rate.map(|v| format!("{v:?}")));
        put("synonym_rate", self.synonym_rate.map(|v| format!("{v:?}")));
        put("input_dim", self.input_dim.map(|v| v.to_string()));
        put("hidden_dims", self.hidden_dims.as_deref().map(list));
        put("checkpoint_every", self.checkpoint_every.map(|v| v.to_string()));
        for kv in &self.set {
            let Some((k, v)) = kv.split_once('=') else {
                bail!("`--set {kv}` is not of the form key=value");
            };
            out.push((k.trim().to_owned(), v.trim().to_owned()));
        }
        Ok(out)
    }
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated layer widths, input first.
    #[arg(long, default_value = "32,16,8")]
    dims: String,
}

#[derive(Args)]
struct DumpArgs {
    /// Output directory of a finished run.
    #[arg(long)]
    run_dir: PathBuf,
    /// Destination TSV; defaults to memory.tsv in the run directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    /// A run.json file or the directory containing it.
    path: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    tasks: usize,
    #[arg(long, default_value_t = 500)]
    pool_size: usize,
    #[arg(long, default_value_t = 200)]
    test_size: usize,
    /// Fraction of pool tokens replaced by shared noise words.
    #[arg(long, default_value_t = 0.0)]
    pool_noise: f64,
}

fn run(args: RunArgs) -> Result<()> {
    let overrides = args.overrides()?;
    let config = match &args.config {
        Some(path) => RunConfig::load(path, &overrides)?,
        None => RunConfig::parse("", &overrides)?,
    };
    let result = harness::run_experiment(&config)
        .with_context(|| format!("run into {}", config.output_dir.display()))?;
    println!("final ACC  {:.4}", result.metrics.final_acc());
    if let Some(b) = result.metrics.final_bwt() {
        println!("final BWT  {b:.4}");
    }
    if let Some(f) = result.metrics.final_fwt() {
        println!("final FWT  {f:.4}");
    }
    println!("overall    {:.4}", result.metrics.overall);
    println!("wrote {}", config.output_dir.display());
    Ok(())
}

fn parse_dims(raw: &str) -> Result<Vec<usize>> {
    raw.split(',')
        .map(|d| d.trim().parse().with_context(|| format!("bad layer width `{d}`")))
        .collect()
}

fn gradcheck(args: GradcheckArgs) -> Result<bool> {
    let dims = parse_dims(&args.dims)?;
    let draws = gradcheck::run_suite(&dims, args.draws, args.seed)?;
    let mut ok = true;
    for d in &draws {
        println!(
            "seed {:>4}  classes {}  head {:.2e}  full {:.2e}  {}",
            d.seed,
            d.classes,
            d.head_error,
            d.full_error,
            if d.passed() { "ok" } else { "FAIL" }
        );
        ok &= d.passed();
    }
    let worst = draws.iter().map(|d| d.full_error.max(d.head_error)).fold(0.0, f64::max);
    println!("{} draws, worst relative error {worst:.2e} (tolerance {:.0e})", draws.len(), gradcheck::TOLERANCE);
    Ok(ok)
}

fn dump_memory(args: DumpArgs) -> Result<()> {
    let model = ModelState::load(args.run_dir.join(harness::CHECKPOINT_FILE))?;
    let raw_path = args.run_dir.join(harness::MEMORY_STATE_FILE);
    let raw = fs::read_to_string(&raw_path).with_context(|| format!("reading {}", raw_path.display()))?;
    let memory: MemoryBuffer = serde_json::from_str(&raw)?;
    let out = args.output.unwrap_or_else(|| args.run_dir.join(harness::MEMORY_FILE));
    harness::dump_memory(&memory, &model, &out)?;
    println!("{} rows to {}", memory.len(), out.display());
    Ok(())
}

fn load_run(path: &Path) -> Result<RunResult> {
    let file = if path.is_dir() { path.join(harness::RUN_FILE) } else { path.to_path_buf() };
    let raw = fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
    Ok(serde_json::from_str(&raw)?)
}

fn metrics(args: MetricsArgs) -> Result<bool> {
    let run = load_run(&args.path)?;
    let summary = run.recompute()?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    let same = summary == run.metrics;
    if !same {
        eprintln!("recomputed metrics differ from the stored ones");
    }
    Ok(same)
}

fn synth(args: SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        tasks: args.tasks,
        pool_size: args.pool_size,
        test_size: args.test_size,
        pool_noise: args.pool_noise,
        seed: args.seed,
        ..SyntheticSpec::default()
    };
    spec.write(&args.output)?;
    println!("wrote {}", args.output.display());
    Ok(())
}

fn main() -> Result<ExitCode> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let ok = match Cli::parse().command {
        Command::Run(a) => run(*a).map(|_| true)?,
        Command::Gradcheck(a) => gradcheck(a)?,
        Command::DumpMemory(a) => dump_memory(a).map(|_| true)?,
        Command::Metrics(a) => metrics(a)?,
        Command::Synth(a) => synth(a).map(|_| true)?,
    };
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
