//! Command-line runner: expand and execute simulation grids, evaluate
//! stored records, and render reports.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use survey_sim::backend::ServerProfile;
use survey_sim::harness::{
    evaluate, execute, expand_grid, write_reports, BackendKind, EvaluateOptions, Prepared,
    RecordStore, RunConfig,
};

#[derive(Parser)]
#[command(
    name = "survey-sim",
    version,
    about = "Simulate closed-ended survey responses with LLMs and evaluate them against human survey data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Path to the run config (TOML).
    config: Option<PathBuf>,
    /// Alternative to the positional argument.
    #[arg(long = "config", value_name = "PATH")]
    config_flag: Option<PathBuf>,
}

impl ConfigArg {
    fn path(&self) -> Result<&PathBuf> {
        self.config
            .as_ref()
            .or(self.config_flag.as_ref())
            .context("missing config path: pass it as an argument or via --config")
    }
}

#[derive(Subcommand)]
enum Command {
    /// Execute the simulation grid against the configured backends.
    Simulate {
        #[command(flatten)]
        config: ConfigArg,
        /// Print the expanded grid without executing anything.
        #[arg(long)]
        dry_run: bool,
        /// Override the configured concurrency limit.
        #[arg(long, value_name = "N")]
        max_in_flight: Option<usize>,
        /// Override the configured output directory.
        #[arg(long, value_name = "DIR")]
        out_dir: Option<PathBuf>,
        /// Override the server profile of every HTTP model (vllm, openai).
        #[arg(long, value_name = "PROFILE")]
        backend_profile: Option<String>,
    },
    /// Compute metrics from stored records and write all report files.
    Evaluate {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, value_name = "DIR")]
        out_dir: Option<PathBuf>,
        /// Invalid-fraction threshold gating alignment metrics.
        #[arg(long, value_name = "T")]
        threshold: Option<f64>,
    },
    /// Print the stratified baseline metrics per question.
    Baseline {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, value_name = "DIR")]
        out_dir: Option<PathBuf>,
    },
    /// Regenerate the report files from stored records.
    Report {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, value_name = "DIR")]
        out_dir: Option<PathBuf>,
        #[arg(long, value_name = "T")]
        threshold: Option<f64>,
    },
    /// Check that the config, dataset, and templates are consistent.
    ValidateConfig {
        #[command(flatten)]
        config: ConfigArg,
    },
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn load_config(
    arg: &ConfigArg,
    out_dir: Option<&PathBuf>,
    max_in_flight: Option<usize>,
    threshold: Option<f64>,
    backend_profile: Option<&str>,
) -> Result<RunConfig> {
    let path = arg.path()?;
    let mut config =
        RunConfig::load(path).with_context(|| format!("cannot load config {}", path.display()))?;
    if let Some(dir) = out_dir {
        config.run.out_dir = dir.clone();
    }
    if let Some(n) = max_in_flight {
        config.run.max_in_flight = n.max(1);
    }
    if let Some(t) = threshold {
        config.run.threshold = t;
    }
    if let Some(profile_name) = backend_profile {
        let profile = ServerProfile::by_name(profile_name)
            .with_context(|| format!("unknown backend profile {profile_name:?}"))?;
        for model in config.models.values_mut() {
            if let BackendKind::Http {
                profile: model_profile,
                ..
            } = &mut model.kind
            {
                **model_profile = profile.clone();
            }
        }
    }
    Ok(config)
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate {
            config,
            dry_run,
            max_in_flight,
            out_dir,
            backend_profile,
        } => {
            let config = load_config(
                &config,
                out_dir.as_ref(),
                max_in_flight,
                None,
                backend_profile.as_deref(),
            )?;
            let grid = expand_grid(&config)?;
            if dry_run {
                for cell in &grid {
                    println!("{}", cell.key());
                }
                println!("{} cells", grid.len());
                return Ok(());
            }
            let prepared = Prepared::from_config(&config)?;
            let store = RecordStore::open(&config.run.out_dir.join("records"))?;
            let summary = execute(
                &grid,
                &prepared.exec_env(&config),
                &store,
                config.run.max_in_flight,
            )?;
            println!(
                "simulate: {} cells x {} respondents -> {} completed, {} failed, {} skipped",
                grid.len(),
                prepared.dataset.respondents.len(),
                summary.completed,
                summary.failed,
                summary.skipped
            );
            Ok(())
        }
        Command::Evaluate {
            config,
            out_dir,
            threshold,
        } => {
            let config = load_config(&config, out_dir.as_ref(), None, threshold, None)?;
            let evaluation = evaluate_stored(&config)?;
            let written = write_reports(&evaluation, &config.run.out_dir)?;
            println!("evaluate: {} specification rows", evaluation.rows.len());
            for path in written {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::Report {
            config,
            out_dir,
            threshold,
        } => {
            let config = load_config(&config, out_dir.as_ref(), None, threshold, None)?;
            let evaluation = evaluate_stored(&config)?;
            let written = write_reports(&evaluation, &config.run.out_dir)?;
            for path in written {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::Baseline { config, out_dir } => {
            let config = load_config(&config, out_dir.as_ref(), None, None, None)?;
            let (dataset, _) = config.load_dataset()?;
            for question in &dataset.questions {
                let respondents: Vec<_> = dataset
                    .respondents
                    .iter()
                    .filter(|r| r.truth(&question.id).is_some())
                    .cloned()
                    .collect();
                let assignment = survey_sim::survey::stratified_baseline(
                    &respondents,
                    &question.id,
                    config.run.baseline_seed,
                )?;
                let pairs: Vec<(Option<&str>, &str)> = respondents
                    .iter()
                    .filter_map(|r| {
                        let truth = r.truth(&question.id)?;
                        Some((assignment.get(&r.id).map(String::as_str), truth))
                    })
                    .collect();
                let f1 = survey_sim::metrics::macro_f1(&pairs)?;
                let acc = survey_sim::metrics::accuracy(&pairs)?;
                println!(
                    "baseline {} (seed {}): macro_f1 {:.4}, accuracy {:.4}",
                    question.id, config.run.baseline_seed, f1, acc
                );
            }
            Ok(())
        }
        Command::ValidateConfig { config } => {
            let config = load_config(&config, None, None, None, None)?;
            config.validate()?;
            let (dataset, _) = config.load_dataset()?;
            let grid = expand_grid(&config)?;
            println!(
                "ok: {} respondents, {} questions, {} grid cells",
                dataset.respondents.len(),
                dataset.questions.len(),
                grid.len()
            );
            Ok(())
        }
    }
}

fn evaluate_stored(config: &RunConfig) -> Result<survey_sim::harness::Evaluation> {
    let (dataset, _) = config.load_dataset()?;
    let store = RecordStore::open(&config.run.out_dir.join("records"))?;
    let records = store.load_all()?;
    if records.is_empty() {
        bail!("no records found under {}", config.run.out_dir.display());
    }
    let evaluation = evaluate(
        &records,
        &dataset,
        &EvaluateOptions {
            threshold: config.run.threshold,
            baseline_seed: config.run.baseline_seed,
        },
    )?;
    Ok(evaluation)
}
