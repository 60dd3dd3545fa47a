use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use nas_core::error::{ConfigError, EvaluationError, EvaluatorError, NasError, ParseGenotypeError};
use nas_core::experiments::{self, ExperimentConfig, RunStatus};
use nas_core::search_space::{build_graph, serialize_graph, Genotype};

/// Neural architecture search experiments with setup-dependent fitness.
#[derive(Parser)]
#[command(name = "nas", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every search configured in a TOML file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Results directory; overrides `output` in the config.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Re-evaluate the best architectures of each run on the holdout pool.
    Reeval {
        #[arg(long)]
        results: PathBuf,
    },
    /// Write summary, trajectory and best-architecture tables.
    Report {
        #[arg(long)]
        results: PathBuf,
    },
    /// Test setups against each other with Bonferroni correction for `m` tests.
    Compare {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        m: usize,
    },
    /// Estimate seed and split noise of the configured evaluator.
    Noise {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print the architecture graph of a genotype as JSON.
    ExportArch {
        /// 24 comma-separated integers, topology genes first.
        #[arg(long, allow_hyphen_values = true)]
        genotype: String,
        #[arg(long, default_value_t = 32)]
        stem_channels: u32,
        #[arg(long, default_value_t = 128)]
        width: u32,
        #[arg(long, default_value_t = 128)]
        height: u32,
    },
}

fn output_dir(config: &ExperimentConfig, output: Option<PathBuf>) -> PathBuf {
    output.or_else(|| config.output.clone()).unwrap_or_else(|| PathBuf::from("results"))
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Run { config, output } => {
            let cfg = load_config(&config)?;
            let out = output_dir(&cfg, output);
            let results = experiments::run_experiment(&cfg, &out)?;
            let failed: Vec<_> = results.iter().filter(|r| r.status == RunStatus::Failed).collect();
            println!("{} runs written to {}", results.len(), out.display());
            if let Some(first) = failed.first() {
                let message = first.error.clone().unwrap_or_default();
                return Err(NasError::from(EvaluatorError::Failure(message)))
                    .with_context(|| format!("{} of {} runs failed", failed.len(), results.len()));
            }
        }
        Command::Reeval { results } => {
            let runs = experiments::reevaluate(&results)?;
            let n: usize = runs.iter().map(|r| r.best.len()).sum();
            println!("{n} architectures re-evaluated");
        }
        Command::Report { results } => {
            for row in experiments::summarize(&results)? {
                println!(
                    "{:<8} {:<6} {:>5}  quality {:<8} runs {} [{}]",
                    row.algorithm.to_string(),
                    row.setup.to_string(),
                    row.budget,
                    row.mean_independent_quality.map_or("-".into(), |q| format!("{q:.4}")),
                    row.runs_ok,
                    row.flag
                );
            }
        }
        Command::Compare { results, m } => {
            for row in experiments::compare_setups(&results, m)? {
                println!(
                    "{:<8} {:>5}  {} > {}  p={:.3e} adj={:.3e}{}",
                    row.algorithm.to_string(),
                    row.budget,
                    row.setup_a,
                    row.setup_b,
                    row.p_value,
                    row.p_adjusted,
                    if row.significant { " *" } else { "" }
                );
            }
        }
        Command::Noise { config, output } => {
            let cfg = load_config(&config)?;
            let out = output_dir(&cfg, output);
            for s in experiments::noise_analysis(&cfg, &out)? {
                let fmt = |x: Option<f64>| x.map_or("undefined".into(), |v| format!("{v:.4}"));
                println!("{} noise: rho {} top-{} rho {} argmax agrees {}", s.panel, fmt(s.rho), s.fraction, fmt(s.top_rho), s.argmax_agrees);
            }
        }
        Command::ExportArch { genotype, stem_channels, width, height } => {
            let g: Genotype = genotype.parse()?;
            if stem_channels == 0 || width == 0 || height == 0 {
                bail!(ConfigError::Invalid("stem channels and input dimensions must be positive".into()));
            }
            println!("{}", serialize_graph(&build_graph(&g, stem_channels, width, height)));
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() || cause.is::<ParseGenotypeError>() {
            return 2;
        }
        if cause.is::<EvaluatorError>() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<EvaluationError>() {
            return if e.is_exhaustion() { 1 } else { 3 };
        }
        if let Some(e) = cause.downcast_ref::<NasError>() {
            match e {
                NasError::Config(_) => return 2,
                NasError::Evaluator(_) | NasError::Evaluation(EvaluationError::Evaluator(_)) => return 3,
                _ => {}
            }
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
