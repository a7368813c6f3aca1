use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use massive_ra::harness::{run_to_csv, ExperimentKind, ExperimentSpec};
use massive_ra::stream::derive_stream;
use massive_ra::validate::run_suite;

#[derive(Parser)]
#[command(name = "massive-ra", version, about = "Massive MIMO random access simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML spec file and write its CSV.
    Run {
        spec: PathBuf,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the number of trials per sweep point.
        #[arg(long)]
        trials: Option<usize>,
        /// Override the output path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; affects wall time only.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Run the oracle self-test suite.
    Validate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// List the experiment kinds a spec may use.
    ListExperiments,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn run(spec_path: PathBuf, seed: Option<u64>, trials: Option<usize>, out: Option<PathBuf>, workers: Option<usize>) -> ExitCode {
    let mut spec = match ExperimentSpec::from_file(&spec_path) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(s) = seed {
        spec.experiment.master_seed = s;
    }
    if let Some(t) = trials {
        spec.experiment.num_trials = t;
    }
    if let Some(o) = out {
        spec.experiment.output = o;
    }
    let output = spec.experiment.output.clone();
    match run_to_csv(&spec, workers.unwrap_or_else(default_workers), &output) {
        Ok(rows) => {
            eprintln!("wrote {} rows to {}", rows.len(), output.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { spec, seed, trials, out, workers } => run(spec, seed, trials, out, workers),
        Command::Validate { seed } => {
            let outcomes = run_suite(&mut derive_stream(seed, ExperimentKind::Validate.id(), 0, 0));
            let mut failed = false;
            for o in &outcomes {
                println!("{} {} {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
                failed |= !o.passed;
            }
            if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS }
        }
        Command::ListExperiments => {
            for k in ExperimentKind::ALL {
                println!("{:<12} {}", k.name(), k.description());
                println!("{:<12} sweepable: {}", "", k.sweepable().join(", "));
            }
            ExitCode::SUCCESS
        }
    }
}
