//! Command-line surface: data dumps, the three training regimes,
//! teacher-free evaluation, generalization sweeps, and gradient-metric
//! summaries. Every run writes plot-ready CSV/JSONL plus a manifest
//! that reproduces it bit for bit (single-threaded).
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure, 3 training
//! finished without reaching its convergence criteria.

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use sortlab::data::{build_module_dataset, sample_digits, sample_length_uniform, UnitId};
use sortlab::env::{generate_trace, TraceRecord};
use sortlab::train::{
    train_modular, train_monolithic, train_staged, RunManifest, RunMetrics, TrainConfig, TrainMode,
};
use sortlab::{AgentParams, Rng};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "sortlab", version, about = "Modular vs. monolithic sorting-network lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dump expert traces (and optionally per-module datasets) as JSON lines.
    GenData(GenDataArgs),
    /// Train a configuration and write metrics, parameters and a manifest.
    Train(TrainArgs),
    /// Evaluate exact-sort accuracy of a trained agent at one length.
    Eval(EvalArgs),
    /// Generalization sweep over a length range.
    Sweep(SweepArgs),
    /// Summarize gradient statistics from a metrics CSV.
    GradStats(GradStatsArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Number of lists to sample (lengths uniform in [2, max-len]).
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long = "max-len", default_value_t = 7)]
    max_len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also dump the supervised dataset of this module.
    #[arg(long)]
    module: Option<String>,
    /// Apply input noise to the dumped module dataset.
    #[arg(long, default_value_t = false)]
    noise: bool,
    /// Include decoded intermediate states in trace records.
    #[arg(long, default_value_t = false)]
    states: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    mode: String,
    /// JSON config file; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Learning-rate override.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "max-len")]
    max_len: Option<usize>,
    #[arg(long = "batch-size")]
    batch_size: Option<usize>,
    #[arg(long = "max-iterations")]
    max_iterations: Option<u64>,
    #[arg(long = "max-wall-ms")]
    max_wall_ms: Option<u64>,
    /// Train the five modular units concurrently.
    #[arg(long, default_value_t = false)]
    parallel: bool,
    /// Uniform length sampling instead of the curriculum.
    #[arg(long, default_value_t = false)]
    uniform: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    length: usize,
    #[arg(short = 'n', long = "episodes", default_value_t = 1000)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    params: PathBuf,
    /// Inclusive length range, e.g. 2..8.
    #[arg(long)]
    lengths: String,
    #[arg(short = 'n', long = "episodes", default_value_t = 200)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradStatsArgs {
    #[arg(long)]
    metrics: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are successes, anything else is usage
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::GenData(args) => gen_data(args),
        Command::Train(args) => train(args),
        Command::Eval(args) => eval(args),
        Command::Sweep(args) => sweep(args),
        Command::GradStats(args) => grad_stats(args),
    }
}

fn usage(msg: String) -> anyhow::Result<ExitCode> {
    eprintln!("error: {msg}");
    Ok(ExitCode::from(EXIT_USAGE))
}

fn gen_data(args: GenDataArgs) -> anyhow::Result<ExitCode> {
    if args.max_len < 2 {
        return usage("--max-len must be at least 2".into());
    }
    let module = match args.module.as_deref() {
        None => None,
        Some(name) => match name.parse::<UnitId>() {
            Ok(m) => Some(m),
            Err(e) => return usage(e.to_string()),
        },
    };

    let mut rng = Rng::new(args.seed);
    let mut trace_lines = String::new();
    let mut sample_lines = String::new();
    for _ in 0..args.count {
        let len = sample_length_uniform(args.max_len, &mut rng);
        let digits = sample_digits(len, &mut rng);
        let trace = generate_trace(&digits, args.max_len)?;
        let record = TraceRecord::from_trace(&digits, &trace, args.states);
        trace_lines.push_str(&serde_json::to_string(&record)?);
        trace_lines.push('\n');
        if let Some(module) = module {
            for sample in
                build_module_dataset(std::slice::from_ref(&trace), module, args.noise, &mut rng)
            {
                sample_lines.push_str(&serde_json::to_string(&sample)?);
                sample_lines.push('\n');
            }
        }
    }

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    std::fs::write(args.out.join("traces.jsonl"), trace_lines)?;
    println!("wrote {}", args.out.join("traces.jsonl").display());
    if module.is_some() {
        std::fs::write(args.out.join("samples.jsonl"), sample_lines)?;
        println!("wrote {}", args.out.join("samples.jsonl").display());
    }
    Ok(ExitCode::SUCCESS)
}

fn build_config(args: &TrainArgs, mode: TrainMode) -> anyhow::Result<TrainConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            TrainConfig::from_json(&text)
                .map_err(|e| anyhow!("config {}: {e}", path.display()))?
        }
        None => {
            let mut c = TrainConfig::default();
            // monolithic training runs on clean teacher states unless a
            // config file asks otherwise
            if mode == TrainMode::Monolithic {
                c.noise = false;
            }
            c
        }
    };
    config.mode = mode;
    if let Some(lr) = args.lr {
        config.learning_rate = lr;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(n) = args.max_len {
        config.max_len = n;
    }
    if let Some(b) = args.batch_size {
        config.batch_size = b;
    }
    if let Some(i) = args.max_iterations {
        config.max_iterations = i;
    }
    if let Some(ms) = args.max_wall_ms {
        config.max_wall_ms = Some(ms);
    }
    if args.parallel {
        config.parallel = true;
    }
    if args.uniform {
        config.uniform_sampling = true;
    }
    if config.max_len < 2 || config.batch_size == 0 || config.learning_rate <= 0.0 {
        return Err(anyhow!("invalid configuration: max_len >= 2, batch_size >= 1 and learning_rate > 0 required"));
    }
    Ok(config)
}

fn write_metrics(dir: &Path, name: &str, metrics: &RunMetrics) -> anyhow::Result<()> {
    let csv = std::fs::File::create(dir.join(format!("metrics_{name}.csv")))?;
    metrics.write_csv(std::io::BufWriter::new(csv))?;
    let jsonl = std::fs::File::create(dir.join(format!("metrics_{name}.jsonl")))?;
    metrics.write_jsonl(std::io::BufWriter::new(jsonl))?;
    Ok(())
}

fn train(args: TrainArgs) -> anyhow::Result<ExitCode> {
    let mode = match args.mode.parse::<TrainMode>() {
        Ok(m) => m,
        Err(e) => return usage(e),
    };
    let config = match build_config(&args, mode) {
        Ok(c) => c,
        Err(e) if args.config.is_none() => return Err(e),
        Err(e) => {
            // config-file problems are usage errors: bad schema or values
            eprintln!("error: {e:#}");
            return Ok(ExitCode::from(EXIT_USAGE));
        }
    };

    // train fully in memory, then write everything, so failed runs
    // leave no partial output files
    let mut not_converged = false;
    let mut summary = serde_json::Map::new();
    let mut outputs: Vec<(String, RunMetrics)> = Vec::new();
    let mut assembly_csv: Option<String> = None;

    let agent: AgentParams = match mode {
        TrainMode::Modular => {
            let outcome = train_modular(&config);
            for unit in &outcome.units {
                if !unit.converged {
                    not_converged = true;
                }
                summary.insert(
                    unit.unit.to_string(),
                    serde_json::json!({
                        "converged": unit.converged,
                        "stop_reason": unit.stop_reason,
                        "iterations": unit.iterations,
                        "iterations_to_criterion": unit.iterations_to_criterion,
                        "wall_ms": unit.wall_ms,
                        "mean_grad_abs": unit.metrics.mean_grad_abs(),
                    }),
                );
                outputs.push((unit.unit.to_string(), unit.metrics.clone()));
            }
            summary.insert(
                "summed_wall_ms".into(),
                serde_json::json!(outcome.summed_wall_ms),
            );
            outcome.agent
        }
        TrainMode::Monolithic => {
            let outcome = train_monolithic(&config);
            not_converged = !outcome.converged;
            summary.insert(
                "monolithic".into(),
                serde_json::json!({
                    "converged": outcome.converged,
                    "stop_reason": outcome.stop_reason,
                    "iterations": outcome.iterations,
                    "iterations_to_criterion": outcome.iterations_to_criterion,
                    "wall_ms": outcome.wall_ms,
                    "mean_grad_abs": outcome.metrics.mean_grad_abs(),
                }),
            );
            outputs.push(("monolithic".into(), outcome.metrics));
            outcome.agent
        }
        TrainMode::Staged => {
            let outcome = train_staged(&config);
            for unit in &outcome.units {
                if !unit.converged {
                    not_converged = true;
                }
                summary.insert(
                    unit.unit.to_string(),
                    serde_json::json!({
                        "converged": unit.converged,
                        "stop_reason": unit.stop_reason,
                        "iterations": unit.iterations,
                        "iterations_to_criterion": unit.iterations_to_criterion,
                        "wall_ms": unit.wall_ms,
                    }),
                );
                outputs.push((unit.unit.to_string(), unit.metrics.clone()));
            }
            summary.insert("wall_ms".into(), serde_json::json!(outcome.wall_ms));
            assembly_csv = Some(outcome.assembly_csv());
            outcome.agent
        }
    };

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let manifest = RunManifest::new(&config);
    std::fs::write(
        args.out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    for (name, metrics) in &outputs {
        write_metrics(&args.out, name, metrics)?;
    }
    if let Some(csv) = assembly_csv {
        std::fs::write(args.out.join("assembly.csv"), csv)?;
    }
    agent.save(&args.out.join("params.bin"))?;
    std::fs::write(
        args.out.join("summary.json"),
        serde_json::to_string_pretty(&serde_json::Value::Object(summary))?,
    )?;

    println!("run written to {}", args.out.display());
    if not_converged {
        eprintln!("training finished without reaching the convergence criteria");
        return Ok(ExitCode::from(EXIT_NOT_CONVERGED));
    }
    Ok(ExitCode::SUCCESS)
}

fn eval(args: EvalArgs) -> anyhow::Result<ExitCode> {
    if args.length < 2 {
        return usage("--length must be at least 2".into());
    }
    let agent = AgentParams::load(&args.params)
        .with_context(|| format!("loading {}", args.params.display()))?;
    let outcome = sortlab::evaluate_sorting(&agent, args.length, args.episodes, args.seed);
    println!("{}", serde_json::to_string(&outcome)?);
    Ok(ExitCode::SUCCESS)
}

fn parse_length_range(text: &str) -> Result<Vec<usize>, String> {
    let (a, b) = text
        .split_once("..")
        .ok_or_else(|| format!("--lengths expects A..B, got {text:?}"))?;
    let lo: usize = a.trim().parse().map_err(|e| format!("bad range start: {e}"))?;
    let hi: usize = b.trim().parse().map_err(|e| format!("bad range end: {e}"))?;
    if lo < 2 || hi < lo {
        return Err(format!("--lengths needs 2 <= A <= B, got {text:?}"));
    }
    Ok((lo..=hi).collect())
}

fn sweep(args: SweepArgs) -> anyhow::Result<ExitCode> {
    let lengths = match parse_length_range(&args.lengths) {
        Ok(l) => l,
        Err(e) => return usage(e),
    };
    let agent = AgentParams::load(&args.params)
        .with_context(|| format!("loading {}", args.params.display()))?;
    let report = sortlab::generalization_sweep(&agent, &lengths, args.episodes, args.seed);
    let csv = report.to_csv();
    match &args.out {
        Some(path) => {
            std::fs::write(path, &csv)?;
            println!("wrote {}", path.display());
        }
        None => print!("{csv}"),
    }
    eprintln!(
        "pass_090_at={:?} zero_accuracy_at={:?}",
        report.pass_090_at, report.zero_accuracy_at
    );
    Ok(ExitCode::SUCCESS)
}

fn grad_stats(args: GradStatsArgs) -> anyhow::Result<ExitCode> {
    let text = std::fs::read_to_string(&args.metrics)
        .with_context(|| format!("reading {}", args.metrics.display()))?;
    let metrics = RunMetrics::from_csv(&text)?;
    let n = metrics.len();
    let mean = metrics.mean_grad_abs();
    let std_mean = if n == 0 {
        0.0
    } else {
        metrics.rows.iter().map(|r| r.grad_std).sum::<f64>() / n as f64
    };
    println!(
        "{}",
        serde_json::json!({
            "iterations": n,
            "run_mean_grad_abs": mean,
            "run_mean_grad_std": std_mean,
        })
    );
    Ok(ExitCode::SUCCESS)
}
