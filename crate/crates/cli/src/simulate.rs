use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use ssmup::models::{simulate_covariates, LgssmConfig, OccupancyConfig};
use ssmup::ssm::simulate_dataset;
use ssmup::ParamVector;

use crate::error::{CliError, CliResult};
use crate::io::{parse_params, param_vector, write_data, write_json, write_truth, AnyModel, ModelKind};
use crate::with_model;

#[derive(Args, Clone, Debug)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub model: ModelKind,
    /// Inline `name=value,...` or a JSON file of parameter values.
    #[arg(long)]
    pub params: Option<String>,
    #[arg(long = "T", value_name = "T")]
    pub len: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Occupancy only.
    #[arg(long, default_value_t = 50)]
    pub sites: usize,
    /// Occupancy only.
    #[arg(long, default_value_t = 3)]
    pub visits: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct Meta<'a> {
    model: ModelKind,
    #[serde(rename = "T")]
    len: usize,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    sites: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    visits: Option<usize>,
    params: std::collections::BTreeMap<&'a str, f64>,
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    if args.len == 0 {
        return Err(CliError::usage("--T must be at least 1"));
    }
    let (covariates, base) = match args.model {
        ModelKind::Lgssm => (Default::default(), LgssmConfig::default().truth()),
        ModelKind::Occupancy => {
            if args.sites == 0 || args.visits == 0 {
                return Err(CliError::usage("--sites and --visits must be positive"));
            }
            let cov = simulate_covariates(args.sites, args.visits, args.len, args.seed);
            (cov.to_json_map(), OccupancyConfig::simulation_parameters(args.seed))
        }
    };
    let overrides = match &args.params {
        Some(p) => parse_params(p)?,
        None => Default::default(),
    };
    let model = AnyModel::build(args.model, &covariates)?;
    let (theta, x, data): (ParamVector, _, _) = with_model!(&model, m => {
        let theta = param_vector(m, &overrides, base)?;
        let (x, y) = simulate_dataset(m, &theta, args.len, args.seed)?;
        (theta, x, y)
    });
    write_data(args.model, &data, &model, &args.out)?;
    write_truth(&args.out.join("truth.csv"), &theta, &x)?;
    let occupancy = args.model == ModelKind::Occupancy;
    write_json(
        &args.out.join("meta.json"),
        &Meta {
            model: args.model,
            len: args.len,
            seed: args.seed,
            sites: occupancy.then_some(args.sites),
            visits: occupancy.then_some(args.visits),
            params: theta.names().iter().map(|n| n.as_str()).zip(theta.values().iter().copied()).collect(),
        },
    )
}
