//! On-disk posterior archive.
//!
//! ```text
//! manifest.json   format_version, model_id, t, N, state_dim, param_names, data_checksum, seed
//! theta.csv       header = parameter names, N rows
//! latents.csv     header x_<time>_<dim> (1-based, time-major), N rows
//! data.csv        observations 1..t
//! covariates.json covariate sidecar
//! checksums.txt   "<sha256>  <file>" per file above
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{fmt_f64, parse_f64, read_covariates, write_covariates, Dataset};
use crate::error::{Error, Result};
use crate::mcmc::Chain;

pub const FORMAT_VERSION: u32 = 1;

const PAYLOAD: [&str; 5] = ["manifest.json", "theta.csv", "latents.csv", "data.csv", "covariates.json"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub model_id: String,
    pub t: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub state_dim: usize,
    pub param_names: Vec<String>,
    pub data_checksum: String,
    pub seed: Option<u64>,
}

/// `N` joint posterior draws of parameters and latent states given `y_{1:t}`.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorArchive {
    pub model_id: String,
    pub param_names: Vec<String>,
    /// `N x P`, constrained scale.
    pub theta: Vec<Vec<f64>>,
    pub state_dim: usize,
    /// `N x (t * state_dim)`, time-major.
    pub latents: Vec<Vec<f64>>,
    pub data: Dataset,
    pub seed: Option<u64>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl PosteriorArchive {
    pub fn new(
        model_id: &str,
        param_names: Vec<String>,
        theta: Vec<Vec<f64>>,
        state_dim: usize,
        latents: Vec<Vec<f64>>,
        data: Dataset,
        seed: Option<u64>,
    ) -> Result<Self> {
        let a = Self {
            model_id: model_id.to_string(),
            param_names,
            theta,
            state_dim,
            latents,
            data,
            seed,
        };
        a.validate()?;
        Ok(a)
    }

    /// Pool the kept draws of all chains.
    pub fn from_chains(chains: &[Chain], model_id: &str, data: &Dataset, seed: Option<u64>) -> Result<Self> {
        let first = chains
            .first()
            .ok_or_else(|| Error::InvalidConfig("no chains to archive".into()))?;
        if chains.iter().any(|c| c.param_names != first.param_names || c.state_dim != first.state_dim) {
            return Err(Error::ShapeMismatch("chains disagree on parameters or state width".into()));
        }
        let theta = chains.iter().flat_map(|c| c.draws.iter().cloned()).collect();
        let latents = chains.iter().flat_map(|c| c.latent_draws.iter().cloned()).collect();
        Self::new(
            model_id,
            first.param_names.clone(),
            theta,
            first.state_dim,
            latents,
            data.clone(),
            seed,
        )
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// Number of archived time points.
    pub fn t(&self) -> usize {
        self.data.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta.is_empty() {
            return Err(Error::InvalidConfig("archive needs at least one draw".into()));
        }
        if self.data.is_empty() {
            return Err(Error::InvalidConfig("archive needs at least one time point".into()));
        }
        if self.latents.len() != self.theta.len() {
            return Err(Error::LengthMismatch {
                expected: self.theta.len(),
                got: self.latents.len(),
            });
        }
        let p = self.param_names.len();
        if let Some(r) = self.theta.iter().find(|r| r.len() != p) {
            return Err(Error::LengthMismatch {
                expected: p,
                got: r.len(),
            });
        }
        let width = self.t() * self.state_dim;
        if let Some(r) = self.latents.iter().find(|r| r.len() != width) {
            return Err(Error::LengthMismatch {
                expected: width,
                got: r.len(),
            });
        }
        Ok(())
    }

    /// Archived state `x_s` of draw `j` (0-based `s`).
    pub fn state(&self, j: usize, s: usize) -> &[f64] {
        &self.latents[j][s * self.state_dim..(s + 1) * self.state_dim]
    }

    fn theta_csv(&self) -> Result<Vec<u8>> {
        if self.param_names.is_empty() {
            return Ok(Vec::new());
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.param_names)?;
        for row in &self.theta {
            w.write_record(row.iter().map(|v| fmt_f64(*v)))?;
        }
        into_bytes(w)
    }

    fn latents_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<String> = (1..=self.t())
            .flat_map(|s| (1..=self.state_dim).map(move |k| format!("x_{s}_{k}")))
            .collect();
        if header.is_empty() {
            return Ok(Vec::new());
        }
        w.write_record(&header)?;
        for row in &self.latents {
            w.write_record(row.iter().map(|v| fmt_f64(*v)))?;
        }
        into_bytes(w)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        fs::create_dir_all(dir)?;
        let mut data_bytes = Vec::new();
        self.data.write_csv(&mut data_bytes)?;
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            model_id: self.model_id.clone(),
            t: self.t(),
            n: self.len(),
            state_dim: self.state_dim,
            param_names: self.param_names.clone(),
            data_checksum: sha256_hex(&data_bytes),
            seed: self.seed,
        };
        let mut manifest_bytes = serde_json::to_vec_pretty(&manifest)?;
        manifest_bytes.push(b'\n');
        fs::write(dir.join("manifest.json"), &manifest_bytes)?;
        fs::write(dir.join("theta.csv"), self.theta_csv()?)?;
        fs::write(dir.join("latents.csv"), self.latents_csv()?)?;
        fs::write(dir.join("data.csv"), &data_bytes)?;
        write_covariates(&self.data.covariates, &dir.join("covariates.json"))?;
        write_checksums(dir)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        verify_checksums(dir)?;
        let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)
            .map_err(|e| Error::CorruptArchive(format!("manifest: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: manifest.format_version,
                expected: FORMAT_VERSION,
            });
        }
        let data_bytes = fs::read(dir.join("data.csv"))?;
        if sha256_hex(&data_bytes) != manifest.data_checksum {
            return Err(Error::CorruptArchive("data checksum does not match manifest".into()));
        }
        let data = Dataset::read_csv(data_bytes.as_slice())?.with_covariates(read_covariates(&dir.join("covariates.json"))?);
        if data.len() != manifest.t {
            return Err(Error::CorruptArchive(format!(
                "manifest reports t = {}, data has {} rows",
                manifest.t,
                data.len()
            )));
        }
        let theta = if manifest.param_names.is_empty() {
            vec![Vec::new(); manifest.n]
        } else {
            read_matrix(&dir.join("theta.csv"), &manifest.param_names)?
        };
        let latent_header: Vec<String> = (1..=manifest.t)
            .flat_map(|s| (1..=manifest.state_dim).map(move |k| format!("x_{s}_{k}")))
            .collect();
        let latents = if latent_header.is_empty() {
            vec![Vec::new(); manifest.n]
        } else {
            read_matrix(&dir.join("latents.csv"), &latent_header)?
        };
        if theta.len() != manifest.n || latents.len() != manifest.n {
            return Err(Error::CorruptArchive(format!(
                "manifest reports N = {}, found {} parameter rows and {} latent rows",
                manifest.n,
                theta.len(),
                latents.len()
            )));
        }
        Self::new(
            &manifest.model_id,
            manifest.param_names,
            theta,
            manifest.state_dim,
            latents,
            data,
            manifest.seed,
        )
    }
}

fn into_bytes(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn read_matrix(path: &Path, header: &[String]) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path)?;
    let found: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if found != header {
        return Err(Error::CorruptArchive(format!("unexpected header in {}", path.display())));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(rec.iter().map(parse_f64).collect::<Result<Vec<f64>>>()?);
    }
    Ok(rows)
}

fn write_checksums(dir: &Path) -> Result<()> {
    let mut out = String::new();
    for name in PAYLOAD {
        out.push_str(&format!("{}  {name}\n", sha256_hex(&fs::read(dir.join(name))?)));
    }
    fs::write(dir.join("checksums.txt"), out)?;
    Ok(())
}

fn verify_checksums(dir: &Path) -> Result<()> {
    let text = fs::read_to_string(dir.join("checksums.txt"))
        .map_err(|e| Error::CorruptArchive(format!("checksums.txt: {e}")))?;
    let mut seen = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (digest, name) = line
            .split_once("  ")
            .ok_or_else(|| Error::CorruptArchive(format!("malformed checksum line `{line}`")))?;
        let bytes = fs::read(dir.join(name)).map_err(|e| Error::CorruptArchive(format!("{name}: {e}")))?;
        if sha256_hex(&bytes) != digest {
            return Err(Error::CorruptArchive(format!("checksum mismatch for {name}")));
        }
        seen.push(name.to_string());
    }
    for name in PAYLOAD {
        if !seen.iter().any(|s| s == name) {
            return Err(Error::CorruptArchive(format!("no checksum for {name}")));
        }
    }
    Ok(())
}
