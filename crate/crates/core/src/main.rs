use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use walsh::experiments::{self, ExperimentConfig, ResultRecord, Summary, REGISTRY};
use walsh::Error;

/// Monte Carlo experiments on Walsh Brownian motion and its couplings.
#[derive(Debug, Parser)]
#[command(name = "walsh", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment (E1..E13) or `all`.
    Run {
        experiment: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Print the experiment registry.
    List,
    /// Re-run the configuration recorded in a summary file.
    Replay {
        summary: PathBuf,
        /// Output directory; defaults to the recorded one.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
}

const ACCEPTANCE_FAILURE: u8 = 1;
const CONFIG_ERROR: u8 = 2;
const IO_ERROR: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => IO_ERROR,
        Error::Consistency(_) => ACCEPTANCE_FAILURE,
        _ => CONFIG_ERROR,
    }
}

fn fail(e: Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(exit_code(&e))
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    ExperimentConfig::parse(&text)
}

fn print_record(r: &ResultRecord) {
    let se = r.stderr.map(|s| format!(" ± {s:.3e}")).unwrap_or_default();
    let verdict = if r.pass { "pass" } else { "FAIL" };
    println!(
        "{:<4} {:<40} {:>12.6}{se} [{verdict}]",
        r.experiment_id, r.statistic_name, r.estimate
    );
}

fn execute(cfg: &ExperimentConfig) -> Result<Summary, Error> {
    let records = experiments::run_suite(cfg)?;
    for r in &records {
        print_record(r);
    }
    let summary = Summary::new(cfg, records);
    let (csv, json) = experiments::write_results(&cfg.out_dir, &summary)?;
    println!(
        "{} records, suite {}; wrote {} and {}",
        summary.n_records,
        if summary.suite_pass { "passed" } else { "failed" },
        csv.display(),
        json.display()
    );
    Ok(summary)
}

fn verdict(summary: &Summary) -> ExitCode {
    if summary.suite_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(ACCEPTANCE_FAILURE)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::List => {
            for e in &REGISTRY {
                println!("{:<4} {:<28} {}", e.id, e.claim_ref, e.title);
            }
            ExitCode::SUCCESS
        }
        Command::Run {
            experiment,
            config,
            out,
            seed,
            paths,
            dt,
            workers,
        } => {
            let mut cfg = match load_config(&config) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            cfg.experiment_id = experiment;
            cfg.out_dir = out;
            cfg.master_seed = seed;
            if let Some(n) = paths {
                cfg.n_paths = n;
            }
            if let Some(dt) = dt {
                cfg.dt = dt;
            }
            if let Some(k) = workers {
                cfg.workers = k;
            }
            match cfg.validate().and_then(|_| execute(&cfg)) {
                Ok(s) => verdict(&s),
                Err(e) => fail(e),
            }
        }
        Command::Replay { summary, out, workers } => {
            let recorded = match experiments::read_summary(&summary) {
                Ok(s) => s,
                Err(e) => return fail(e),
            };
            let mut cfg = recorded.config.clone();
            if let Some(dir) = out {
                cfg.out_dir = dir;
            }
            if let Some(k) = workers {
                cfg.workers = k;
            }
            let fresh = match execute(&cfg) {
                Ok(s) => s,
                Err(e) => return fail(e),
            };
            let same = |a: &ResultRecord, b: &ResultRecord| {
                a.statistic_name == b.statistic_name
                    && a.estimate.to_bits() == b.estimate.to_bits()
                    && a.pass == b.pass
            };
            let differing = if fresh.records.len() == recorded.records.len() {
                fresh
                    .records
                    .iter()
                    .zip(&recorded.records)
                    .filter(|(a, b)| !same(a, b))
                    .count()
            } else {
                fresh.records.len().max(recorded.records.len())
            };
            if differing > 0 {
                eprintln!("replay differs from the recorded run in {differing} records");
                return ExitCode::from(ACCEPTANCE_FAILURE);
            }
            println!("replay reproduces all {} recorded estimates", fresh.n_records);
            verdict(&fresh)
        }
    }
}
