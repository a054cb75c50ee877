use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::Serialize;
use ssmup::mcmc::{run_mcmc, run_pmmh, Acceptance, Chain, McmcConfig};
use ssmup::smc::{FilterConfig, FilterKind};
use ssmup::updater::PosteriorArchive;
use ssmup::{Dataset, StateSpaceModel};

use crate::error::{CliError, CliResult};
use crate::io::{data_paths, load_covariates, load_data, parse_diag, write_json, AnyModel, ModelKind};
use crate::with_model;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
pub enum Algo {
    #[value(name = "mcmc")]
    #[serde(rename = "mcmc")]
    Mcmc,
    #[value(name = "pmcmc-bootstrap")]
    #[serde(rename = "pmcmc-bootstrap")]
    PmcmcBootstrap,
    #[value(name = "pmcmc-aux")]
    #[serde(rename = "pmcmc-aux")]
    PmcmcAux,
}

#[derive(Args, Clone, Debug)]
pub struct FitArgs {
    #[arg(long, value_enum)]
    pub model: ModelKind,
    /// Directory with data.csv and covariates.json.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "mcmc")]
    pub algo: Algo,
    #[arg(long, default_value_t = 3000)]
    pub iters: usize,
    #[arg(long, default_value_t = 1000)]
    pub burnin: usize,
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
    #[arg(long, default_value_t = 3)]
    pub chains: usize,
    #[arg(long, default_value_t = 100)]
    pub particles: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Fit only the first `t` time points (reduced model).
    #[arg(long)]
    pub until: Option<usize>,
    #[arg(long, default_value_t = 0.2)]
    pub delta1: f64,
    #[arg(long, default_value_t = 0.2)]
    pub delta2: f64,
    /// Diagonal proposal variances for the main block, comma separated.
    #[arg(long)]
    pub cov1: Option<String>,
    /// Diagonal proposal variances for the hyperparameter block.
    #[arg(long)]
    pub cov2: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct ChainReport {
    seed: u64,
    draws: usize,
    acceptance: Acceptance,
}

#[derive(Serialize)]
struct FitReport {
    command: &'static str,
    model: ModelKind,
    algo: Algo,
    label: String,
    t: usize,
    n: usize,
    iterations: usize,
    burn_in: usize,
    thin: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    particles: Option<usize>,
    seed: u64,
    chains: Vec<ChainReport>,
}

#[derive(Serialize)]
pub struct Timing {
    pub wall_time: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub chains: Vec<f64>,
}

impl Algo {
    pub fn filter(self) -> Option<FilterKind> {
        match self {
            Algo::Mcmc => None,
            Algo::PmcmcBootstrap => Some(FilterKind::Bootstrap),
            Algo::PmcmcAux => Some(FilterKind::Auxiliary),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Algo::Mcmc => "mcmc",
            Algo::PmcmcBootstrap => "pmcmc-bootstrap",
            Algo::PmcmcAux => "pmcmc-aux",
        }
    }
}

pub fn fit_chains<M: StateSpaceModel>(
    model: &M,
    data: &Dataset,
    algo: Algo,
    config: &McmcConfig,
    particles: usize,
) -> CliResult<Vec<Chain>> {
    let chains = match algo.filter() {
        None => run_mcmc(model, data, config),
        Some(kind) => run_pmmh(model, data, config, &FilterConfig::new(kind, particles)),
    };
    chains.map_err(|e| match CliError::from(e) {
        CliError::Io(m) => CliError::Io(m),
        CliError::Usage(m) => CliError::Usage(m),
        other => CliError::Inference(other.to_string()),
    })
}

pub fn cmd_fit(args: &FitArgs) -> CliResult<()> {
    let started = std::time::Instant::now();
    let (data_file, cov_file) = data_paths(&args.data);
    let covariates = load_covariates(&cov_file)?.unwrap_or_default();
    let model = AnyModel::build(args.model, &covariates)?;
    let full = load_data(args.model, &data_file, &covariates, 0)?;
    let t = args.until.unwrap_or(full.len());
    if t == 0 || t > full.len() {
        return Err(CliError::usage(format!("--until must lie in 1..={}", full.len())));
    }
    let data = full.truncated(t);
    let config = McmcConfig {
        iterations: args.iters,
        burn_in: args.burnin,
        thin: args.thin,
        chains: args.chains,
        delta_main: args.delta1,
        delta_hyper: args.delta2,
        cov_main: parse_diag(&args.cov1)?,
        cov_hyper: parse_diag(&args.cov2)?,
        seed: args.seed,
        init: None,
    };
    config.validate()?;
    let chains = with_model!(&model, m => fit_chains(m, &data, args.algo, &config, args.particles))?;
    let archive = PosteriorArchive::from_chains(&chains, args.model.id(), &data, Some(args.seed))?;
    archive.save(&args.out)?;
    let report = FitReport {
        command: "fit",
        model: args.model,
        algo: args.algo,
        label: if t < full.len() {
            format!("{}-reduced", args.algo.label())
        } else {
            args.algo.label().to_string()
        },
        t,
        n: archive.len(),
        iterations: args.iters,
        burn_in: args.burnin,
        thin: args.thin,
        particles: args.algo.filter().map(|_| args.particles),
        seed: args.seed,
        chains: chains
            .iter()
            .map(|c| ChainReport {
                seed: c.seed,
                draws: c.len(),
                acceptance: c.acceptance.clone(),
            })
            .collect(),
    };
    write_json(&args.out.join("run_report.json"), &report)?;
    write_json(
        &args.out.join("timing.json"),
        &Timing {
            wall_time: started.elapsed().as_secs_f64(),
            chains: chains.iter().map(|c| c.wall_time).collect(),
        },
    )
}
