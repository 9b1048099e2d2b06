use std::path::PathBuf;
use std::process::ExitCode;

use adspeech_cli::config::{override_seeds, resolve_config_source};
use adspeech_cli::{load_records, parse_config, run_experiment, write_reports, ConfigError, REPORT_MD};
use adspeech_core::data::{build_corpus, CorpusConfig, Split};
use anyhow::Context;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adspeech", version, about = "Speech-based dementia classification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write report.csv, report.md and margins.csv.
    Run {
        /// Config file path or preset name (table1, table2, table3).
        #[arg(long)]
        config: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Comma-separated seeds replacing the config's list.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Worker threads for independent seed runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Generate the synthetic corpus and its manifest.
    GenCorpus {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rebuild the report files from the per-run results under a run directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

enum Failure {
    Config(ConfigError),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run {
            config,
            out,
            seeds,
            jobs,
        } => {
            let mut cfg = parse_config(&resolve_config_source(&config)?)?;
            if let Some(seeds) = seeds {
                override_seeds(&mut cfg, seeds)?;
            }
            if jobs == 0 {
                return Err(ConfigError {
                    field: "--jobs".into(),
                    message: "must be at least 1".into(),
                }
                .into());
            }
            let records = run_experiment(&cfg, &out, jobs).with_context(|| format!("experiment {}", cfg.name))?;
            println!("{} runs; reports in {}", records.len(), out.display());
            print!("{}", std::fs::read_to_string(out.join(REPORT_MD)).context("reading report")?);
        }
        Command::GenCorpus { seed, out } => {
            let config = CorpusConfig {
                seed,
                ..CorpusConfig::default()
            };
            let manifest = build_corpus(&config, &out).context("generating corpus")?;
            println!(
                "{} clips ({} train, {} dev, {} test) in {}",
                manifest.len(),
                manifest.split(Split::Train).count(),
                manifest.split(Split::Dev).count(),
                manifest.split(Split::Test).count(),
                out.display()
            );
        }
        Command::Report { input } => {
            let records = load_records(&input)?;
            write_reports(&input, &records)?;
            print!("{}", std::fs::read_to_string(input.join(REPORT_MD)).context("reading report")?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
