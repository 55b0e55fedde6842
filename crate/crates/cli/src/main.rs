use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use redtail_core::experiment::{self, ExperimentResult, ExperimentSpec};

#[derive(Parser)]
#[command(name = "redtail", version, about = "Tail behaviour of redundancy-d and fork-join server systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate every scenario of a config and write CCDF files plus a summary.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Reproduce one of the built-in figure presets (1 to 4).
    Figure {
        #[arg(value_parser = clap::value_parser!(u32).range(1..=4))]
        number: u32,
        #[command(flatten)]
        run: RunArgs,
        /// Print the preset config and exit.
        #[arg(long)]
        show_config: bool,
    },
    /// Print predicted tail exponents without simulating.
    Predict {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the coupled-stream dominance checks.
    Verify {
        #[arg(long)]
        config: PathBuf,
        /// Jobs per check (defaults to the config's verify_jobs).
        #[arg(long)]
        jobs: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    /// Jobs per replication.
    #[arg(long)]
    jobs: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: ./out/<experiment name>).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn apply(mut spec: ExperimentSpec, run: &RunArgs) -> Result<ExperimentSpec> {
    if let Some(n) = run.jobs {
        spec = spec.with_jobs(n)?;
    }
    if let Some(s) = run.seed {
        spec = spec.with_seed(s);
    }
    Ok(spec)
}

fn simulate(spec: ExperimentSpec, out: Option<PathBuf>) -> Result<ExitCode> {
    let out = out.unwrap_or_else(|| PathBuf::from("out").join(&spec.name));
    let result = experiment::run_experiment(&spec)?;
    experiment::write_outputs(&result, &out).with_context(|| format!("writing {}", out.display()))?;
    print_result(&result);
    println!("wrote {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn print_result(result: &ExperimentResult) {
    println!("{} ({} jobs x {} replications, seed {})", result.name, result.n_jobs, result.replications, result.seed);
    for s in &result.scenarios {
        let slope = match &s.fit {
            Some(f) => format!("{:+.3} ± {:.3}", f.slope, f.stderr),
            None => format!("n/a ({})", s.fit_error.as_deref().unwrap_or("no fit")),
        };
        let predicted = s.prediction.as_ref().map(|p| format!("{:+.3}", p.exponent)).unwrap_or_else(|| "n/a".into());
        let verdict = match s.pass {
            Some(true) => "ok",
            Some(false) => "off",
            None => "-",
        };
        println!("  {:<26} slope {slope:<18} predicted {predicted:<7} tol {:.2}  {verdict}", s.name, s.tolerance);
        if let Some(d) = &s.dominance {
            print!("{d}");
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate { config, run } => {
            let spec = ExperimentSpec::load(&config).with_context(|| format!("loading {}", config.display()))?;
            simulate(apply(spec, &run)?, run.out)
        }
        Command::Figure { number, run, show_config } => {
            if show_config {
                print!("{}", ExperimentSpec::preset_source(number).expect("range-checked"));
                return Ok(ExitCode::SUCCESS);
            }
            simulate(apply(ExperimentSpec::preset(number)?, &run)?, run.out)
        }
        Command::Predict { config } => {
            let spec = ExperimentSpec::load(&config).with_context(|| format!("loading {}", config.display()))?;
            print!("{}", experiment::prediction_table(&experiment::predict(&spec)?));
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { config, jobs, seed } => {
            let mut spec = ExperimentSpec::load(&config).with_context(|| format!("loading {}", config.display()))?;
            if let Some(j) = jobs {
                spec.verify_jobs = j;
            }
            if let Some(s) = seed {
                spec = spec.with_seed(s);
            }
            let outcome = experiment::verify(&spec)?;
            print!("{}", outcome.render());
            Ok(if outcome.ok() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
