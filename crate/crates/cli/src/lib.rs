//! Command-line workflows: simulate, fit, archive, update, report and bench.

pub mod bench;
pub mod error;
pub mod fit;
pub mod io;
pub mod report;
pub mod simulate;
pub mod update;

use clap::{Parser, Subcommand};

pub use error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "ssmup", version, about = "Fit state-space models and update fitted posteriors with new data")]
pub struct Cli {
    /// Worker threads; defaults to SSMUP_JOBS or the number of CPUs.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate a dataset with its true states and parameters.
    Simulate(simulate::SimulateArgs),
    /// Fit a model and write a posterior archive.
    Fit(fit::FitArgs),
    /// Update an archived posterior with new observations.
    Update(update::UpdateArgs),
    /// Aggregate diagnostics over fitted runs.
    Report(report::ReportArgs),
    /// Run a desk-scale simulation study.
    Bench(bench::BenchArgs),
}

fn jobs(flag: Option<usize>) -> CliResult<Option<usize>> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var("SSMUP_JOBS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| CliError::usage(format!("SSMUP_JOBS must be a positive integer, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs(cli.jobs)? {
        if n == 0 {
            return Err(CliError::usage("--jobs must be at least 1"));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Inference(e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::Simulate(a) => simulate::cmd_simulate(a),
        Command::Fit(a) => fit::cmd_fit(a),
        Command::Update(a) => update::cmd_update(a),
        Command::Report(a) => report::cmd_report(a),
        Command::Bench(a) => bench::cmd_bench(a),
    })
}

/// Parse `args` (including the program name) and run.
pub fn run_args<I, T>(args: I) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::usage(e.to_string()))?;
    run(cli)
}
