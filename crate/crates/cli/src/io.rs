//! Model construction and the on-disk data formats.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use ssmup::dataset::{fmt_f64, parse_f64, parse_obs, read_covariates, write_covariates};
use ssmup::models::{
    make_lgssm, make_occupancy, read_occupancy_csv, write_occupancy_csv, Lgssm, LgssmConfig, Occupancy,
    OccupancyConfig, OccupancyCovariates,
};
use ssmup::{Covariates, Dataset, LatentTrajectory, ParamVector, StateSpaceModel};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Lgssm,
    Occupancy,
}

impl ModelKind {
    pub fn id(self) -> &'static str {
        match self {
            ModelKind::Lgssm => "lgssm",
            ModelKind::Occupancy => "occupancy",
        }
    }

    pub fn from_id(id: &str) -> CliResult<Self> {
        match id {
            "lgssm" => Ok(ModelKind::Lgssm),
            "occupancy" => Ok(ModelKind::Occupancy),
            other => Err(CliError::usage(format!("unknown model `{other}`"))),
        }
    }
}

pub enum AnyModel {
    Lgssm(Lgssm),
    Occupancy(Occupancy),
}

/// Run `$body` with `$m` bound to the concrete model.
#[macro_export]
macro_rules! with_model {
    ($model:expr, $m:ident => $body:expr) => {
        match $model {
            $crate::io::AnyModel::Lgssm($m) => $body,
            $crate::io::AnyModel::Occupancy($m) => $body,
        }
    };
}

impl AnyModel {
    pub fn build(kind: ModelKind, covariates: &Covariates) -> CliResult<Self> {
        Ok(match kind {
            ModelKind::Lgssm => AnyModel::Lgssm(make_lgssm(&LgssmConfig::default())),
            ModelKind::Occupancy => {
                let cov = OccupancyCovariates::from_json_map(covariates)?;
                AnyModel::Occupancy(make_occupancy(&OccupancyConfig::new(cov))?)
            }
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::Lgssm(_) => ModelKind::Lgssm,
            AnyModel::Occupancy(_) => ModelKind::Occupancy,
        }
    }

    pub fn sites(&self) -> Option<usize> {
        match self {
            AnyModel::Lgssm(_) => None,
            AnyModel::Occupancy(m) => Some(m.sites()),
        }
    }
}

/// `data.csv` and `covariates.json` inside `dir`, or a data file with a
/// sibling `covariates.json`.
pub fn data_paths(path: &Path) -> (PathBuf, PathBuf) {
    if path.is_dir() {
        (path.join("data.csv"), path.join("covariates.json"))
    } else {
        let parent = path.parent().unwrap_or(Path::new("."));
        (path.to_path_buf(), parent.join("covariates.json"))
    }
}

fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn load_covariates(path: &Path) -> CliResult<Option<Covariates>> {
    if path.exists() {
        Ok(Some(read_covariates(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?))
    } else {
        Ok(None)
    }
}

/// Read a dataset, wide `t,...` or occupancy long format, keeping the rows
/// after `skip`.
pub fn load_data(kind: ModelKind, path: &Path, covariates: &Covariates, skip: usize) -> CliResult<Dataset> {
    let bytes = read_bytes(path)?;
    let long = bytes.starts_with(b"site,");
    let data = match kind {
        ModelKind::Occupancy if long => {
            let cov = OccupancyCovariates::from_json_map(covariates)?;
            let d = read_occupancy_csv(bytes.as_slice(), cov.sites, cov.visits)
                .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            if d.len() > skip {
                d.slice(skip, d.len())
            } else {
                Dataset::empty(d.obs_dim())
            }
        }
        _ => read_wide_after(&bytes, skip)?,
    };
    Ok(data.with_covariates(covariates.clone()))
}

/// Wide `t,<obs columns>` rows with `t > skip`; those rows must run
/// consecutively from `skip + 1`.
fn read_wide_after(bytes: &[u8], skip: usize) -> CliResult<Dataset> {
    let bad = |m: String| CliError::Io(m);
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.get(0) != Some("t") || header.len() < 2 {
        return Err(bad("expected header `t,<obs columns>`".into()));
    }
    let width = header.len() - 1;
    let mut y = Vec::new();
    let mut next = skip + 1;
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let t = parse_f64(&rec[0]).map_err(|e| bad(e.to_string()))? as usize;
        if t <= skip {
            continue;
        }
        if t != next {
            return Err(bad(format!("time index {t} out of sequence, expected {next}")));
        }
        next += 1;
        for f in rec.iter().skip(1) {
            y.push(parse_obs(f).map_err(|e| bad(e.to_string()))?);
        }
    }
    Ok(Dataset::new(width, y)?)
}

pub fn write_data(kind: ModelKind, data: &Dataset, model: &AnyModel, dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    let mut bytes = Vec::new();
    match (kind, model) {
        (ModelKind::Occupancy, AnyModel::Occupancy(m)) => write_occupancy_csv(data, m.sites(), m.visits(), &mut bytes)?,
        _ => data.write_csv(&mut bytes)?,
    }
    fs::write(dir.join("data.csv"), bytes)?;
    write_covariates(&data.covariates, &dir.join("covariates.json"))?;
    Ok(())
}

/// `name,value` rows: the parameters, then the states as `x_<t>_<k>`.
pub fn write_truth(path: &Path, theta: &ParamVector, x: &LatentTrajectory) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(["name", "value"]).map_err(io)?;
    for (n, v) in theta.names().iter().zip(theta.values()) {
        w.write_record([n.as_str(), fmt_f64(*v).as_str()]).map_err(io)?;
    }
    for t in 0..x.len() {
        for (k, v) in x.row(t).iter().enumerate() {
            w.write_record([format!("x_{}_{}", t + 1, k + 1), fmt_f64(*v)]).map_err(io)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    fs::write(path, bytes)?;
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Truth {
    pub params: BTreeMap<String, f64>,
    /// Flattened `x_<t>_<k>` values in time-then-dimension order.
    pub states: Vec<f64>,
}

pub fn read_truth(path: &Path) -> CliResult<Truth> {
    let bytes = read_bytes(path)?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    let mut truth = Truth::default();
    for rec in r.records() {
        let rec = rec.map_err(|e| CliError::Io(e.to_string()))?;
        let v = parse_f64(&rec[1])?;
        if rec[0].starts_with("x_") {
            truth.states.push(v);
        } else {
            truth.params.insert(rec[0].to_string(), v);
        }
    }
    Ok(truth)
}

/// Parameter overrides: inline `a=0.5,c=1` or a JSON file `{"a": 0.5}`.
pub fn parse_params(arg: &str) -> CliResult<BTreeMap<String, f64>> {
    if arg.contains('=') {
        arg.split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|kv| {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| CliError::usage(format!("expected name=value, got `{kv}`")))?;
                let v = v
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| CliError::usage(format!("bad value in `{kv}`")))?;
                Ok((k.trim().to_string(), v))
            })
            .collect()
    } else {
        let text = fs::read_to_string(arg).map_err(|e| CliError::Io(format!("{arg}: {e}")))?;
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{arg}: {e}")))
    }
}

/// Diagonal covariance from a comma-separated list of variances.
pub fn parse_diag(arg: &Option<String>) -> CliResult<Option<DMatrix<f64>>> {
    let Some(s) = arg else { return Ok(None) };
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| CliError::usage(format!("bad variance `{x}`"))))
        .collect::<CliResult<_>>()?;
    Ok(Some(DMatrix::from_diagonal(&DVector::from_vec(v))))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_json(path: &Path) -> CliResult<serde_json::Value> {
    Ok(serde_json::from_slice(&read_bytes(path)?)?)
}

pub fn param_vector<M: StateSpaceModel>(model: &M, values: &BTreeMap<String, f64>, base: ParamVector) -> CliResult<ParamVector> {
    let names = model.param_spec().names();
    if let Some(unknown) = values.keys().find(|k| !names.contains(k)) {
        return Err(CliError::usage(format!("model has no parameter `{unknown}`")));
    }
    let vals = names
        .iter()
        .map(|n| values.get(n).copied().or_else(|| base.get(n)).ok_or_else(|| CliError::usage(format!("missing parameter `{n}`"))))
        .collect::<CliResult<Vec<f64>>>()?;
    Ok(ParamVector::new(names.to_vec(), vals)?)
}
