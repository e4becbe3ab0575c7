use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use causalkv::cise::{self, AppModel, CheckError, DEFAULT_CAP};
use causalkv::demos;
use causalkv::fmke::ProcessMode;
use causalkv::sim::{self, Scenario};
use causalkv::store::Ablations;

#[derive(Parser)]
#[command(
    name = "causalkv",
    version,
    about = "Run scenarios, check application models, replay demos"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file in the simulator. Exit 0 iff every assertion holds.
    Run {
        path: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the full event trace to this file.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Comma-separated store weakenings: no-causal-deps, no-atomic-writes, no-snapshots.
        #[arg(long, value_parser = parse_ablations)]
        ablate: Option<Ablations>,
        /// Override how prescriptions are processed: `cp` or `best-effort`.
        #[arg(long, value_parser = parse_mode)]
        process_mode: Option<ProcessMode>,
    },
    /// Check an application model. Exit 0 iff all three checks pass.
    Check {
        path: PathBuf,
        /// Declare two operations as synchronised, as `op1,op2`.
        #[arg(long = "sync-pair")]
        sync_pairs: Vec<String>,
        /// Drop an invariant before checking.
        #[arg(long = "without-invariant")]
        without: Vec<String>,
        #[arg(long, default_value_t = DEFAULT_CAP)]
        cap: u128,
    },
    /// Run a built-in scenario and print an annotated trace.
    Demo { name: String },
}

fn parse_ablations(s: &str) -> Result<Ablations, String> {
    s.parse()
        .map_err(|e: causalkv::store::StoreError| e.to_string())
}

fn parse_mode(s: &str) -> Result<ProcessMode, String> {
    s.parse()
}

const PASS: u8 = 0;
const FAIL: u8 = 1;
const BAD_INPUT: u8 = 2;
const TOO_LARGE: u8 = 3;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { BAD_INPUT } else { PASS });
        }
    };
    ExitCode::from(match cli.command {
        Command::Run {
            path,
            seed,
            trace,
            ablate,
            process_mode,
        } => run(path, seed, trace, ablate.unwrap_or_default(), process_mode),
        Command::Check {
            path,
            sync_pairs,
            without,
            cap,
        } => check(path, &sync_pairs, &without, cap),
        Command::Demo { name } => demo(&name),
    })
}

fn run(
    path: PathBuf,
    seed: Option<u64>,
    trace: Option<PathBuf>,
    ablate: Ablations,
    mode: Option<ProcessMode>,
) -> u8 {
    let scenario = match std::fs::read_to_string(&path)
        .map_err(|e| e.to_string())
        .and_then(|t| Scenario::from_json(&t).map_err(|e| e.to_string()))
    {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            return BAD_INPUT;
        }
    };
    let report = sim::run_with(&scenario, seed, ablate, mode);
    if let Some(out) = trace {
        if let Err(e) = std::fs::write(&out, report.trace.render()) {
            eprintln!("error: {}: {e}", out.display());
            return BAD_INPUT;
        }
    }
    for f in &report.failures {
        println!("FAIL step {} {}: {}", f.step, f.check, f.message);
    }
    for v in &report.violations {
        println!("VIOLATION {v}");
    }
    let converged = report
        .converged
        .map_or("n/a".to_string(), |c| c.to_string());
    println!(
        "{} {} seed={} ops={} events={} end={} converged={converged}",
        if report.passed() { "PASS" } else { "FAIL" },
        if report.name.is_empty() {
            path.display().to_string()
        } else {
            report.name.clone()
        },
        report.seed,
        report.outcomes.len(),
        report.trace.len(),
        report.end_time,
    );
    if report.passed() {
        PASS
    } else {
        FAIL
    }
}

fn check(path: PathBuf, sync_pairs: &[String], without: &[String], cap: u128) -> u8 {
    let mut model = match std::fs::read_to_string(&path)
        .map_err(|e| e.to_string())
        .and_then(|t| AppModel::from_json(&t).map_err(|e| e.to_string()))
    {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            return BAD_INPUT;
        }
    };
    for pair in sync_pairs {
        let Some((a, b)) = pair.split_once(',') else {
            eprintln!("error: --sync-pair expects `op1,op2`, got `{pair}`");
            return BAD_INPUT;
        };
        if let Some(unknown) = [a, b].into_iter().find(|o| model.op(o).is_none()) {
            eprintln!("error: unknown operation `{unknown}`");
            return BAD_INPUT;
        }
        model = model.with_sync_pair(a, b);
    }
    for name in without {
        model = match model.without_invariant(name) {
            Ok(m) => m,
            Err(e) => {
                eprintln!("error: {e}");
                return BAD_INPUT;
            }
        };
    }
    match cise::check_all_capped(&model, cap) {
        Ok(report) => {
            print!("{}", report.render());
            if report.passed() {
                PASS
            } else {
                FAIL
            }
        }
        Err(e @ CheckError::SizeCap { .. }) => {
            eprintln!("error: {e}");
            TOO_LARGE
        }
        Err(e) => {
            eprintln!("error: {e}");
            BAD_INPUT
        }
    }
}

fn demo(name: &str) -> u8 {
    match demos::run_demo(name) {
        Ok(out) => {
            print!("{}", out.text);
            if out.passed {
                PASS
            } else {
                FAIL
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            BAD_INPUT
        }
    }
}
