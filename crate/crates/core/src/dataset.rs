//! Observation datasets, latent trajectories and their on-disk formats.
//!
//! Wide CSV: header `t,<obs columns>`, one row per time point with `t`
//! counted from 1; missing entries are empty fields. Covariates live in a
//! JSON sidecar mapping each name to a nested array.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One observation entry; `None` marks a missing value.
pub type Obs = Option<f64>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CovariateArray {
    Vector(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
    Cube(Vec<Vec<Vec<f64>>>),
}

impl CovariateArray {
    pub fn shape(&self) -> Vec<usize> {
        match self {
            CovariateArray::Vector(v) => vec![v.len()],
            CovariateArray::Matrix(m) => vec![m.len(), m.first().map_or(0, Vec::len)],
            CovariateArray::Cube(c) => vec![
                c.len(),
                c.first().map_or(0, Vec::len),
                c.first().and_then(|m| m.first()).map_or(0, Vec::len),
            ],
        }
    }

    /// Row-major flattening.
    pub fn flatten(&self) -> Vec<f64> {
        match self {
            CovariateArray::Vector(v) => v.clone(),
            CovariateArray::Matrix(m) => m.iter().flatten().copied().collect(),
            CovariateArray::Cube(c) => c.iter().flatten().flatten().copied().collect(),
        }
    }

    pub fn is_rectangular(&self) -> bool {
        match self {
            CovariateArray::Vector(_) => true,
            CovariateArray::Matrix(m) => m.iter().all(|r| r.len() == m[0].len()),
            CovariateArray::Cube(c) => {
                let s = self.shape();
                c.iter().all(|m| m.len() == s[1] && m.iter().all(|r| r.len() == s[2]))
            }
        }
    }
}

pub type Covariates = BTreeMap<String, CovariateArray>;

/// Time-indexed observations, row-major `T x obs_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    obs_dim: usize,
    y: Vec<Obs>,
    pub covariates: Covariates,
}

impl Dataset {
    pub fn new(obs_dim: usize, y: Vec<Obs>) -> Result<Self> {
        if obs_dim == 0 || y.len() % obs_dim != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} entries do not form rows of width {obs_dim}",
                y.len()
            )));
        }
        Ok(Self {
            obs_dim,
            y,
            covariates: Covariates::new(),
        })
    }

    pub fn empty(obs_dim: usize) -> Self {
        Self {
            obs_dim,
            y: Vec::new(),
            covariates: Covariates::new(),
        }
    }

    /// Fully observed univariate series.
    pub fn univariate(values: &[f64]) -> Self {
        Self {
            obs_dim: 1,
            y: values.iter().map(|&v| Some(v)).collect(),
            covariates: Covariates::new(),
        }
    }

    pub fn with_covariates(mut self, covariates: Covariates) -> Self {
        self.covariates = covariates;
        self
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn len(&self) -> usize {
        self.y.len() / self.obs_dim
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, t: usize) -> &[Obs] {
        &self.y[t * self.obs_dim..(t + 1) * self.obs_dim]
    }

    pub fn entries(&self) -> &[Obs] {
        &self.y
    }

    pub fn push_row(&mut self, row: &[Obs]) -> Result<()> {
        if row.len() != self.obs_dim {
            return Err(Error::LengthMismatch {
                expected: self.obs_dim,
                got: row.len(),
            });
        }
        self.y.extend_from_slice(row);
        Ok(())
    }

    /// Rows `start..end` (covariates are carried over unchanged).
    pub fn slice(&self, start: usize, end: usize) -> Dataset {
        Dataset {
            obs_dim: self.obs_dim,
            y: self.y[start * self.obs_dim..end * self.obs_dim].to_vec(),
            covariates: self.covariates.clone(),
        }
    }

    pub fn truncated(&self, t: usize) -> Dataset {
        self.slice(0, t.min(self.len()))
    }

    /// `self` followed by the rows of `other`; covariates taken from `other`
    /// when it has any.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if other.obs_dim != self.obs_dim {
            return Err(Error::ShapeMismatch(format!(
                "observation width {} vs {}",
                self.obs_dim, other.obs_dim
            )));
        }
        let mut y = self.y.clone();
        y.extend_from_slice(&other.y);
        Ok(Dataset {
            obs_dim: self.obs_dim,
            y,
            covariates: if other.covariates.is_empty() {
                self.covariates.clone()
            } else {
                other.covariates.clone()
            },
        })
    }

    /// Univariate, fully observed values; `None` otherwise.
    pub fn univariate_values(&self) -> Option<Vec<f64>> {
        if self.obs_dim != 1 {
            return None;
        }
        self.y.iter().copied().collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.obs_dim).map(|k| format!("y_{k}")));
        w.write_record(&header)?;
        for t in 0..self.len() {
            let mut rec = vec![(t + 1).to_string()];
            rec.extend(self.row(t).iter().map(|v| v.map(fmt_f64).unwrap_or_default()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        if header.get(0) != Some("t") || header.len() < 2 {
            return Err(Error::Parse("expected header `t,<obs columns>`".into()));
        }
        let obs_dim = header.len() - 1;
        let mut y = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let t: usize = rec[0]
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad time index `{}`", &rec[0])))?;
            if t != i + 1 {
                return Err(Error::Parse(format!("time index {t} out of sequence at row {}", i + 1)));
            }
            for field in rec.iter().skip(1) {
                y.push(parse_obs(field)?);
            }
        }
        Dataset::new(obs_dim, y)
    }

    /// Write `data.csv` and `covariates.json` into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(std::fs::File::create(dir.join("data.csv"))?)?;
        write_covariates(&self.covariates, &dir.join("covariates.json"))
    }
}

pub fn parse_obs(field: &str) -> Result<Obs> {
    let f = field.trim();
    if f.is_empty() {
        Ok(None)
    } else {
        f.parse::<f64>()
            .map(Some)
            .map_err(|_| Error::Parse(format!("bad number `{f}`")))
    }
}

pub fn parse_f64(field: &str) -> Result<f64> {
    let f = field.trim();
    f.parse::<f64>().map_err(|_| Error::Parse(format!("bad number `{f}`")))
}

/// Shortest decimal representation that parses back to the same bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_covariates(cov: &Covariates, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer(&mut f, cov)?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn read_covariates(path: &Path) -> Result<Covariates> {
    let text = std::fs::read_to_string(path)?;
    let cov: Covariates = serde_json::from_str(&text)?;
    for (name, arr) in &cov {
        if !arr.is_rectangular() {
            return Err(Error::ShapeMismatch(format!("covariate `{name}` is ragged")));
        }
    }
    Ok(cov)
}

/// Time-indexed latent states, row-major `T x state_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTrajectory {
    state_dim: usize,
    x: Vec<f64>,
}

impl LatentTrajectory {
    pub fn new(state_dim: usize, x: Vec<f64>) -> Result<Self> {
        if state_dim == 0 || x.len() % state_dim != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} entries do not form rows of width {state_dim}",
                x.len()
            )));
        }
        Ok(Self { state_dim, x })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn len(&self) -> usize {
        self.x.len() / self.state_dim
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.x[t * self.state_dim..(t + 1) * self.state_dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.x
    }
}
