use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dstgen::config::PipelineConfig;
use dstgen::eval::{parse_threshold, DEFAULT_THRESHOLDS};
use dstgen::pipeline::{cmd_contact_sheet, cmd_eval, cmd_generate, cmd_validate_config, GenerateOptions};
use dstgen::sheet::DEFAULT_TILE;

/// Synthetic pose-annotated image datasets from CAD models.
#[derive(Debug, Parser)]
#[command(name = "dstgen", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render, edge-detect, prompt and generate the dataset described by a config.
    Generate(RunArgs),
    /// Score rotation or label predictions against a manifest.
    Eval(EvalArgs),
    /// Write a grid of sampled (edge map, image) pairs for inspection.
    ContactSheet(SheetArgs),
    /// Check a config and load all of its CAD models without generating anything.
    ValidateConfig(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Pipeline config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of CPU worker threads.
    #[arg(long)]
    workers: Option<usize>,
    /// Use the deterministic built-in diffusion stand-in.
    #[arg(long)]
    mock_diffusion: bool,
    /// Use the deterministic built-in description bank instead of an LLM.
    #[arg(long)]
    mock_llm: bool,
    /// Discard previous progress in the output directory.
    #[arg(long)]
    fresh: bool,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// manifest.jsonl, or the dataset directory containing it.
    #[arg(long)]
    manifest: PathBuf,
    /// JSONL file of {id, rotation} or {id, label} lines.
    #[arg(long)]
    predictions: PathBuf,
    /// Accuracy thresholds, e.g. pi/6 or 0.5 (radians). Repeatable.
    #[arg(long = "threshold")]
    thresholds: Vec<String>,
    /// Also write the JSON report to this path.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Print a plain-text table instead of JSON.
    #[arg(long)]
    table: bool,
}

#[derive(Debug, Args)]
struct SheetArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output PNG.
    #[arg(long)]
    out: PathBuf,
    /// Number of pairs to sample.
    #[arg(short, long, default_value_t = 16)]
    n: usize,
    /// Tile edge length in pixels.
    #[arg(long, default_value_t = DEFAULT_TILE)]
    tile: u32,
}

fn load_config(args: &RunArgs) -> Result<PipelineConfig, String> {
    let mut config = PipelineConfig::load(&args.config).map_err(|e| e.to_string())?;
    config.apply_env();
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(w) = args.workers {
        if w == 0 {
            return Err("--workers must be >= 1".into());
        }
        config.workers = w;
    }
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    config.backend.mock_diffusion |= args.mock_diffusion;
    config.backend.mock_llm |= args.mock_llm;
    Ok(config)
}

fn run(cli: Cli) -> Result<u8, String> {
    match cli.command {
        Command::Generate(args) => {
            let config = load_config(&args)?;
            let summary = cmd_generate(&config, &GenerateOptions { fresh: args.fresh }).map_err(|e| e.to_string())?;
            println!(
                "wrote {} ({} records: {} generated, {} reused, {} failed)",
                summary.manifest_path.display(),
                summary.manifest.records.len(),
                summary.generated,
                summary.reused,
                summary.failed
            );
            Ok(summary.exit_code() as u8)
        }
        Command::ValidateConfig(args) => {
            let config = load_config(&args)?;
            config.check_backends().map_err(|e| e.to_string())?;
            let repo = cmd_validate_config(&config).map_err(|e| e.to_string())?;
            println!(
                "config ok: {} classes, {} CAD models, {} items",
                config.classes.len(),
                repo.len(),
                config.total_items()
            );
            Ok(0)
        }
        Command::Eval(args) => {
            let thresholds = if args.thresholds.is_empty() {
                DEFAULT_THRESHOLDS.to_vec()
            } else {
                args.thresholds
                    .iter()
                    .map(|t| parse_threshold(t))
                    .collect::<Result<_, _>>()
                    .map_err(|e| e.to_string())?
            };
            let report = cmd_eval(&args.manifest, &args.predictions, &thresholds).map_err(|e| e.to_string())?;
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            if let Some(path) = &args.report {
                std::fs::write(path, format!("{json}\n")).map_err(|e| format!("{}: {e}", path.display()))?;
            }
            if args.table {
                print!("{}", report.to_table());
            } else {
                println!("{json}");
            }
            Ok(0)
        }
        Command::ContactSheet(args) => {
            let layout = cmd_contact_sheet(&args.manifest, &args.out, args.n, args.tile).map_err(|e| e.to_string())?;
            println!("wrote {} ({}x{} px)", args.out.display(), layout.width(), layout.height());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
