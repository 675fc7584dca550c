use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use embverify::dataset::Format;
use embverify::kv::KvDocument;
use embverify::Exec;
use embverify_cli::artifacts::Layout;
use embverify_cli::commands::{self, Context};
use embverify_cli::config::{ExperimentConfig, FormatChoice};
use embverify_cli::error::{CliError, CliResult, EXIT_NONE_VERIFIED};

/// Region construction, robust training and verification for sentence-embedding classifiers.
#[derive(Debug, Parser)]
#[command(name = "embverify", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment configuration file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 runs everything sequentially.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Widen interval bounds to cover floating-point rounding.
    #[arg(long, global = true)]
    strict_fp: bool,
    /// Overrides one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Use artifacts even if they were produced under a different configuration.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset at `dataset.path`.
    Synth,
    /// Parse a dataset file and print its record counts.
    IngestCheck {
        /// Dataset file; defaults to `dataset.path` from the configuration.
        #[arg(long)]
        input: Option<PathBuf>,
        /// `binary`, `csv` or `auto` (by extension).
        #[arg(long)]
        format: Option<String>,
    },
    /// Build the configured region sets and the containment table.
    Regions,
    /// Train the classifier and the linear probes.
    Train,
    /// Verify the region sets and l-infinity balls against the trained network.
    Verify,
    /// Run regions, train and verify and write a summary.
    Pipeline,
    /// Print the stored stage reports.
    Report,
}

fn load_config(common: &Common) -> CliResult<(ExperimentConfig, PathBuf)> {
    let (mut doc, dir) = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
            let doc = KvDocument::parse(&text).map_err(CliError::input)?;
            let dir = path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
            (doc, dir)
        }
        None => (KvDocument::new(), PathBuf::from(".")),
    };
    for raw in &common.overrides {
        let (k, v) = raw
            .split_once('=')
            .ok_or_else(|| CliError::Validation(format!("--set expects KEY=VALUE, got {raw:?}")))?;
        doc.set(k.trim(), v.trim());
    }
    if let Some(seed) = common.seed {
        doc.set("seed", seed);
    }
    Ok((ExperimentConfig::from_document(&doc)?, dir))
}

fn configure_workers(workers: Option<usize>) -> CliResult<Exec> {
    match workers {
        Some(0) => Err(CliError::Validation("--workers must be at least 1".into())),
        Some(1) => Ok(Exec::Sequential),
        #[cfg(feature = "parallel")]
        Some(n) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::Runtime(format!("cannot start worker pool: {e}")))?;
            Ok(Exec::Parallel)
        }
        _ => Ok(Exec::default()),
    }
}

fn run(cli: Cli) -> CliResult<ExitCode> {
    let common = &cli.common;
    let (config, config_dir) = load_config(common)?;
    let exec = configure_workers(common.workers)?;
    let ctx = Context {
        config,
        config_dir,
        layout: Layout::new(&common.out_dir),
        exec,
        strict_fp: common.strict_fp,
        force: common.force,
    };
    let none_verified = ExitCode::from(EXIT_NONE_VERIFIED as u8);
    match cli.command {
        Command::Synth => print!("{}", commands::cmd_synth(&ctx)?),
        Command::IngestCheck { input, format } => {
            let format = match format.as_deref() {
                Some("auto") => FormatChoice::Auto,
                Some(f) => FormatChoice::Fixed(f.parse::<Format>().map_err(CliError::Validation)?),
                None => ctx.config.dataset_format,
            };
            let path = match input {
                Some(p) => p,
                None => ctx.dataset_path()?,
            };
            print!("{}", commands::cmd_ingest_check(&path, format)?);
        }
        Command::Regions => {
            let inputs = ctx.load_inputs()?;
            print!("{}", commands::run_regions(&ctx, &inputs)?.text);
        }
        Command::Train => {
            let inputs = ctx.load_inputs()?;
            print!("{}", commands::run_train(&ctx, &inputs)?.text);
        }
        Command::Verify => {
            let inputs = ctx.load_inputs()?;
            let out = commands::run_verify(&ctx, &inputs)?;
            print!("{}", out.text);
            if !out.any_verified() {
                return Ok(none_verified);
            }
        }
        Command::Pipeline => {
            let out = commands::run_pipeline(&ctx)?;
            print!("{}", out.text);
            if !out.verify.any_verified() {
                return Ok(none_verified);
            }
        }
        Command::Report => print!("{}", commands::run_report(&ctx)?),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
