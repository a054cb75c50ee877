use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::Serialize;
use ssmup::dataset::fmt_f64;
use ssmup::smc::FilterKind;
use ssmup::updater::{update_run, PosteriorArchive, UpdateConfig, UpdatedPosterior};

use crate::error::{CliError, CliResult};
use crate::fit::Timing;
use crate::io::{data_paths, load_covariates, load_data, parse_diag, write_json, AnyModel, ModelKind};
use crate::with_model;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FilterArg {
    Bootstrap,
    Auxiliary,
}

impl From<FilterArg> for FilterKind {
    fn from(f: FilterArg) -> Self {
        match f {
            FilterArg::Bootstrap => FilterKind::Bootstrap,
            FilterArg::Auxiliary => FilterKind::Auxiliary,
        }
    }
}

#[derive(Args, Clone, Debug)]
pub struct UpdateArgs {
    #[arg(long)]
    pub archive: PathBuf,
    /// Observations in the model's data format; rows up to the archive's
    /// `t` are ignored. A sibling covariates.json overrides the archived one.
    #[arg(long = "new-data")]
    pub new_data: PathBuf,
    #[arg(long, value_enum, default_value = "bootstrap")]
    pub filter: FilterArg,
    #[arg(long, default_value_t = 100)]
    pub particles: usize,
    #[arg(long, default_value_t = 0.2)]
    pub delta1: f64,
    #[arg(long, default_value_t = 0.2)]
    pub delta2: f64,
    #[arg(long)]
    pub cov1: Option<String>,
    #[arg(long)]
    pub cov2: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct UpdateReport {
    command: &'static str,
    model: ModelKind,
    filter: FilterKind,
    label: &'static str,
    t_reduced: usize,
    t: usize,
    n: usize,
    particles: usize,
    seed: u64,
    acceptance_rate: f64,
    collapsed: usize,
}

pub fn filter_label(kind: FilterKind) -> &'static str {
    match kind {
        FilterKind::Bootstrap => "bumc",
        FilterKind::Auxiliary => "aumc",
    }
}

pub fn cmd_update(args: &UpdateArgs) -> CliResult<()> {
    let started = std::time::Instant::now();
    let reduced = PosteriorArchive::load(&args.archive).map_err(CliError::archive)?;
    let kind = ModelKind::from_id(&reduced.model_id)?;
    let (data_file, cov_file) = data_paths(&args.new_data);
    let covariates = load_covariates(&cov_file)?.unwrap_or_else(|| reduced.data.covariates.clone());
    let model = AnyModel::build(kind, &covariates)?;
    let new_data = load_data(kind, &data_file, &covariates, reduced.t())?;
    let config = UpdateConfig {
        particles: args.particles,
        filter: args.filter.into(),
        delta_main: args.delta1,
        delta_hyper: args.delta2,
        cov_main: parse_diag(&args.cov1)?,
        cov_hyper: parse_diag(&args.cov2)?,
        seed: args.seed,
        ..Default::default()
    };
    let up = with_model!(&model, m => update_run(&reduced, &new_data, m, &config))?;
    let mut full = reduced.data.concat(&new_data)?;
    full.covariates = covariates;
    let archive = up.to_archive(&reduced, &full, Some(args.seed))?;
    archive.save(&args.out)?;
    write_rows(&up, &args.out.join("rows.csv"))?;
    write_json(
        &args.out.join("run_report.json"),
        &UpdateReport {
            command: "update",
            model: kind,
            filter: args.filter.into(),
            label: filter_label(args.filter.into()),
            t_reduced: up.t,
            t: up.t_new,
            n: up.len(),
            particles: args.particles,
            seed: args.seed,
            acceptance_rate: up.acceptance_rate(),
            collapsed: up.collapsed.iter().filter(|c| **c).count(),
        },
    )?;
    write_json(
        &args.out.join("timing.json"),
        &Timing {
            wall_time: started.elapsed().as_secs_f64(),
            chains: vec![up.wall_time],
        },
    )
}

/// Per-row proposals and acceptance bookkeeping.
fn write_rows(up: &UpdatedPosterior, path: &std::path::Path) -> CliResult<()> {
    let io = |e: csv::Error| CliError::Io(e.to_string());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = up.param_names.iter().map(|n| format!("{n}_star")).collect();
    header.extend(["accepted", "accept_prob", "loglik_star", "loglik_r", "collapsed"].map(String::from));
    w.write_record(&header).map_err(io)?;
    for j in 0..up.len() {
        let mut rec: Vec<String> = up.theta_star[j].iter().map(|v| fmt_f64(*v)).collect();
        rec.push(u8::from(up.accepted[j]).to_string());
        rec.push(fmt_f64(up.accept_prob[j]));
        rec.push(fmt_f64(up.loglik_star[j]));
        rec.push(fmt_f64(up.loglik_r[j]));
        rec.push(u8::from(up.collapsed[j]).to_string());
        w.write_record(&rec).map_err(io)?;
    }
    std::fs::write(path, w.into_inner().map_err(|e| CliError::Io(e.to_string()))?)?;
    Ok(())
}
