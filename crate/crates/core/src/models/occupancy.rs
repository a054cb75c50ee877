//! Dynamic occupancy model with covariate effects on initial occupancy,
//! persistence and detection.
//!
//! The latent state at year `t` is the vector of site occupancies
//! `z_{., t} in {0, 1}^R`; the observation at year `t` is the `R x J`
//! detection matrix flattened site-major (`i * J + j`).
//!
//! ```text
//! z_{i,1}   ~ Bernoulli(psi_i)
//! z_{i,t}   ~ Bernoulli(z_{i,t-1} phi_{i,t-1} + (1 - z_{i,t-1}) gamma)
//! y_{i,j,t} ~ Bernoulli(z_{i,t} p_{i,j,t})
//! logit p_{i,j,t} = alpha_p   + beta_p   * windSpeed_{i,j,t}
//! logit psi_i     = alpha_psi + beta_psi * elevation_i
//! logit phi_{i,t} = alpha_phi + beta_phi * springPrecipitation_{i,t}
//! ```
//!
//! Logits are clamped to `[-30, 30]` before exponentiation.

use std::io::{Read, Write};

use crate::dataset::{CovariateArray, Covariates, Dataset, Obs};
use crate::distributions::DistSpec;
use crate::error::{Error, Result};
use crate::params::{Block, ParamDef, ParamSpec, ParamVector, Prior};
use crate::rng::RngStream;
use crate::ssm::StateSpaceModel;

pub const LOGIT_CLAMP: f64 = 30.0;

pub const WIND: &str = "windSpeed";
pub const ELEVATION: &str = "elevation";
pub const PRECIP: &str = "springPrecipitation";

/// Covariates stored flat: wind `[i][j][t]`, elevation `[i]`, precipitation `[i][t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyCovariates {
    pub sites: usize,
    pub visits: usize,
    pub years: usize,
    pub wind: Vec<f64>,
    pub elevation: Vec<f64>,
    pub precip: Vec<f64>,
}

impl OccupancyCovariates {
    pub fn to_json_map(&self) -> Covariates {
        let (r, j, t) = (self.sites, self.visits, self.years);
        let wind = (0..r)
            .map(|i| (0..j).map(|v| self.wind[(i * j + v) * t..(i * j + v + 1) * t].to_vec()).collect())
            .collect();
        let precip = (0..r).map(|i| self.precip[i * t..(i + 1) * t].to_vec()).collect();
        let mut map = Covariates::new();
        map.insert(WIND.into(), CovariateArray::Cube(wind));
        map.insert(ELEVATION.into(), CovariateArray::Vector(self.elevation.clone()));
        map.insert(PRECIP.into(), CovariateArray::Matrix(precip));
        map
    }

    pub fn from_json_map(map: &Covariates) -> Result<Self> {
        let get = |name: &str| {
            map.get(name)
                .ok_or_else(|| Error::ShapeMismatch(format!("missing covariate `{name}`")))
        };
        let (wind, elev, precip) = (get(WIND)?, get(ELEVATION)?, get(PRECIP)?);
        let ws = wind.shape();
        if ws.len() != 3 || !wind.is_rectangular() {
            return Err(Error::ShapeMismatch(format!("{WIND} must be a sites x visits x years array")));
        }
        let (r, j, t) = (ws[0], ws[1], ws[2]);
        if elev.shape() != vec![r] {
            return Err(Error::ShapeMismatch(format!("{ELEVATION} must have {r} entries")));
        }
        if precip.shape() != vec![r, t] || !precip.is_rectangular() {
            return Err(Error::ShapeMismatch(format!("{PRECIP} must be {r} x {t}")));
        }
        Ok(Self {
            sites: r,
            visits: j,
            years: t,
            wind: wind.flatten(),
            elevation: elev.flatten(),
            precip: precip.flatten(),
        })
    }

    /// Restrict to the first `years` years.
    pub fn truncated(&self, years: usize) -> Self {
        let years = years.min(self.years);
        let (r, j, t) = (self.sites, self.visits, self.years);
        let mut wind = Vec::with_capacity(r * j * years);
        for row in 0..r * j {
            wind.extend_from_slice(&self.wind[row * t..row * t + years]);
        }
        let mut precip = Vec::with_capacity(r * years);
        for i in 0..r {
            precip.extend_from_slice(&self.precip[i * t..i * t + years]);
        }
        Self {
            sites: r,
            visits: j,
            years,
            wind,
            elevation: self.elevation.clone(),
            precip,
        }
    }
}

/// iid standard normal covariates.
pub fn simulate_covariates(sites: usize, visits: usize, years: usize, seed: u64) -> OccupancyCovariates {
    let root = RngStream::new(seed);
    let draw = |stream: u64, n: usize| {
        let mut rng = root.substream(stream);
        (0..n).map(|_| rng.normal()).collect::<Vec<_>>()
    };
    OccupancyCovariates {
        sites,
        visits,
        years,
        wind: draw(0, sites * visits * years),
        elevation: draw(1, sites),
        precip: draw(2, sites * years),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyConfig {
    pub sites: usize,
    pub visits: usize,
    pub years: usize,
    pub covariates: OccupancyCovariates,
}

impl OccupancyConfig {
    pub fn new(covariates: OccupancyCovariates) -> Self {
        Self {
            sites: covariates.sites,
            visits: covariates.visits,
            years: covariates.years,
            covariates,
        }
    }

    /// Parameter values for data generation: the covariate effects are drawn
    /// with scales `sd(alpha_p) = 2`, `sd(alpha_psi) = 3`, `sd(beta_p) = 3`,
    /// `sd(beta_psi) = 2`, `sd(beta_phi) = 2`, with `alpha_phi = 2` and
    /// `gamma ~ Uniform(0.001, 1)`. `sigma_alpha_phi` has no generating role
    /// and is set to 1.
    pub fn simulation_parameters(seed: u64) -> ParamVector {
        let mut rng = RngStream::new(seed).substream(0x0CC);
        let mut n = |mean: f64, sd: f64| mean + sd * rng.normal();
        let alpha_p = n(0.0, 2.0);
        let beta_p = n(0.0, 3.0);
        let alpha_psi = n(0.0, 3.0);
        let beta_psi = n(0.0, 2.0);
        let beta_phi = n(1.5, 2.0);
        let gamma = 0.001 + 0.999 * rng.uniform();
        ParamVector::from_pairs(&[
            ("alpha_p", alpha_p),
            ("beta_p", beta_p),
            ("alpha_psi", alpha_psi),
            ("beta_psi", beta_psi),
            ("alpha_phi", 2.0),
            ("beta_phi", beta_phi),
            ("gamma", gamma),
            ("sigma_alpha_p", 2.0),
            ("sigma_beta_p", 3.0),
            ("sigma_alpha_phi", 1.0),
            ("sigma_beta_phi", 2.0),
        ])
    }
}

#[derive(Clone, Debug)]
pub struct Occupancy {
    spec: ParamSpec,
    cov: OccupancyCovariates,
}

/// Per-site and per-visit log-probabilities for one parameter value.
#[derive(Clone, Debug)]
pub struct OccupancyParams {
    log_psi: Vec<(f64, f64)>,
    /// `[i * years + t]`: persistence from year `t` to `t + 1`.
    log_phi: Vec<(f64, f64)>,
    log_gamma: (f64, f64),
    /// `[(i * visits + j) * years + t]`
    log_p: Vec<(f64, f64)>,
}

/// `(ln s, ln(1 - s))` for `s = logistic(clamp(x))`.
fn log_probs(logit: f64) -> (f64, f64) {
    let x = logit.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
    // ln logistic(x) = -softplus(-x)
    let sp = |v: f64| if v > 30.0 { v } else { v.exp().ln_1p() };
    (-sp(-x), -sp(x))
}

fn hyper_prior() -> Prior {
    Prior::Fixed(DistSpec::TruncatedNormal {
        mean: 0.0,
        sd: 10.0,
        lower: 0.001,
        upper: f64::INFINITY,
    })
}

pub fn occupancy_param_spec() -> ParamSpec {
    let scaled = |mean: f64, sd_param: &str| Prior::NormalWithSdParam {
        mean,
        sd_param: sd_param.into(),
    };
    let wide = Prior::Fixed(DistSpec::Normal { mean: 0.0, sd: 10.0 });
    ParamSpec::new(vec![
        ParamDef::new("alpha_p", scaled(0.0, "sigma_alpha_p"), Block::Main),
        ParamDef::new("beta_p", scaled(0.0, "sigma_beta_p"), Block::Main),
        ParamDef::new("alpha_psi", wide.clone(), Block::Main),
        ParamDef::new("beta_psi", wide, Block::Main),
        ParamDef::new("alpha_phi", scaled(3.0, "sigma_alpha_phi"), Block::Main),
        ParamDef::new("beta_phi", scaled(1.5, "sigma_beta_phi"), Block::Main),
        ParamDef::new(
            "gamma",
            Prior::Fixed(DistSpec::Uniform { lower: 0.001, upper: 1.0 }),
            Block::Main,
        ),
        ParamDef::new("sigma_alpha_p", hyper_prior(), Block::Hyper),
        ParamDef::new("sigma_beta_p", hyper_prior(), Block::Hyper),
        ParamDef::new("sigma_alpha_phi", hyper_prior(), Block::Hyper),
        ParamDef::new("sigma_beta_phi", hyper_prior(), Block::Hyper),
    ])
    .expect("static parameter declarations are valid")
}

pub fn make_occupancy(config: &OccupancyConfig) -> Result<Occupancy> {
    let c = &config.covariates;
    if c.sites != config.sites || c.visits != config.visits || c.years != config.years {
        return Err(Error::ShapeMismatch(format!(
            "covariates are {}x{}x{}, config is {}x{}x{}",
            c.sites, c.visits, c.years, config.sites, config.visits, config.years
        )));
    }
    let (r, j, t) = (config.sites, config.visits, config.years);
    if r == 0 || j == 0 || t == 0 {
        return Err(Error::ShapeMismatch("sites, visits and years must be positive".into()));
    }
    if c.wind.len() != r * j * t || c.elevation.len() != r || c.precip.len() != r * t {
        return Err(Error::ShapeMismatch("covariate lengths do not match (R, J, T)".into()));
    }
    Ok(Occupancy {
        spec: occupancy_param_spec(),
        cov: config.covariates.clone(),
    })
}

impl Occupancy {
    pub fn sites(&self) -> usize {
        self.cov.sites
    }

    pub fn visits(&self) -> usize {
        self.cov.visits
    }

    pub fn years(&self) -> usize {
        self.cov.years
    }

    pub fn covariate_set(&self) -> &OccupancyCovariates {
        &self.cov
    }

    /// Probability that site `i` is occupied at `t` given the previous state.
    fn log_occ_prob(&self, p: &OccupancyParams, prev: &[f64], t: usize, i: usize) -> (f64, f64) {
        if prev[i] > 0.5 {
            p.log_phi[i * self.cov.years + t - 1]
        } else {
            p.log_gamma
        }
    }

    fn site_detected(&self, y: &[Obs], i: usize) -> bool {
        let j = self.cov.visits;
        y[i * j..(i + 1) * j].iter().any(|v| *v == Some(1.0))
    }

    /// `ln p(y_{i,.,t} | z_{i,t})`.
    fn site_obs_logpdf(&self, p: &OccupancyParams, y: &[Obs], z: f64, t: usize, i: usize) -> f64 {
        let (jn, years) = (self.cov.visits, self.cov.years);
        let mut total = 0.0;
        for j in 0..jn {
            match y[i * jn + j] {
                None => {}
                Some(v) => {
                    if z > 0.5 {
                        let (lp, lq) = p.log_p[(i * jn + j) * years + t];
                        total += if v > 0.5 { lp } else { lq };
                    } else if v > 0.5 {
                        return f64::NEG_INFINITY;
                    }
                }
            }
        }
        total
    }

    /// Draw `z_{i,t}` proportional to `p(z) p(y_{i,.,t} | z)`; returns `ln p(z) - ln q(z)`.
    #[allow(clippy::too_many_arguments)]
    fn adapted_site(&self, p: &OccupancyParams, lp: (f64, f64), y: &[Obs], t: usize, i: usize, u: f64, z: &mut f64) -> f64 {
        if self.site_detected(y, i) {
            *z = 1.0;
            return lp.0;
        }
        let occupied = lp.0 + self.site_obs_logpdf(p, y, 1.0, t, i);
        let empty = lp.1;
        let m = occupied.max(empty);
        let log_norm = m + ((occupied - m).exp() + (empty - m).exp()).ln();
        let log_q1 = occupied - log_norm;
        if u < log_q1.exp() {
            *z = 1.0;
            lp.0 - log_q1
        } else {
            *z = 0.0;
            lp.1 - (empty - log_norm)
        }
    }

    fn check_year(&self, t: usize) {
        assert!(
            t < self.cov.years,
            "year index {t} beyond the {} years of covariates",
            self.cov.years
        );
    }
}

fn bern_log(z: f64, lp: (f64, f64)) -> f64 {
    if z > 0.5 {
        lp.0
    } else {
        lp.1
    }
}

impl StateSpaceModel for Occupancy {
    type Prepared = OccupancyParams;

    fn model_id(&self) -> &str {
        "occupancy"
    }

    fn state_dim(&self) -> usize {
        self.cov.sites
    }

    fn obs_dim(&self) -> usize {
        self.cov.sites * self.cov.visits
    }

    fn param_spec(&self) -> &ParamSpec {
        &self.spec
    }

    fn prepare(&self, theta: &ParamVector) -> Result<OccupancyParams> {
        let g = |n: &str| theta.require(n);
        let (ap, bp) = (g("alpha_p")?, g("beta_p")?);
        let (apsi, bpsi) = (g("alpha_psi")?, g("beta_psi")?);
        let (aphi, bphi) = (g("alpha_phi")?, g("beta_phi")?);
        let gamma = g("gamma")?;
        for name in ["sigma_alpha_p", "sigma_beta_p", "sigma_alpha_phi", "sigma_beta_phi"] {
            g(name)?;
        }
        let c = &self.cov;
        let log_gamma = if gamma >= 1.0 {
            (0.0, f64::NEG_INFINITY)
        } else if gamma <= 0.0 {
            (f64::NEG_INFINITY, 0.0)
        } else {
            (gamma.ln(), (-gamma).ln_1p())
        };
        Ok(OccupancyParams {
            log_psi: c.elevation.iter().map(|e| log_probs(apsi + bpsi * e)).collect(),
            log_phi: c.precip.iter().map(|s| log_probs(aphi + bphi * s)).collect(),
            log_gamma,
            log_p: c.wind.iter().map(|w| log_probs(ap + bp * w)).collect(),
        })
    }

    fn horizon(&self) -> Option<usize> {
        Some(self.cov.years)
    }

    fn covariates(&self) -> Covariates {
        self.cov.to_json_map()
    }

    fn init_sample(&self, p: &OccupancyParams, rng: &mut RngStream, out: &mut [f64]) {
        for (i, z) in out.iter_mut().enumerate() {
            *z = if rng.uniform() < p.log_psi[i].0.exp() { 1.0 } else { 0.0 };
        }
    }

    fn init_logpdf(&self, p: &OccupancyParams, x: &[f64]) -> f64 {
        x.iter().zip(&p.log_psi).map(|(&z, &lp)| bern_log(z, lp)).sum()
    }

    fn trans_sample(&self, p: &OccupancyParams, prev: &[f64], t: usize, rng: &mut RngStream, out: &mut [f64]) {
        self.check_year(t);
        for (i, z) in out.iter_mut().enumerate() {
            let lp = self.log_occ_prob(p, prev, t, i);
            *z = if rng.uniform() < lp.0.exp() { 1.0 } else { 0.0 };
        }
    }

    fn trans_logpdf(&self, p: &OccupancyParams, x: &[f64], prev: &[f64], t: usize) -> f64 {
        self.check_year(t);
        let mut total = 0.0;
        for (i, &z) in x.iter().enumerate() {
            total += bern_log(z, self.log_occ_prob(p, prev, t, i));
        }
        total
    }

    fn obs_sample(&self, p: &OccupancyParams, x: &[f64], t: usize, rng: &mut RngStream, out: &mut [f64]) {
        self.check_year(t);
        let (jn, years) = (self.cov.visits, self.cov.years);
        for (i, &z) in x.iter().enumerate() {
            for j in 0..jn {
                let u = rng.uniform();
                let det = p.log_p[(i * jn + j) * years + t].0.exp();
                out[i * jn + j] = if z > 0.5 && u < det { 1.0 } else { 0.0 };
            }
        }
    }

    fn obs_logpdf(&self, p: &OccupancyParams, y: &[Obs], x: &[f64], t: usize) -> f64 {
        self.check_year(t);
        let mut total = 0.0;
        for (i, &z) in x.iter().enumerate() {
            total += self.site_obs_logpdf(p, y, z, t, i);
            if total == f64::NEG_INFINITY {
                break;
            }
        }
        total
    }

    /// Sites with a detection are set occupied; the rest are drawn from the prior.
    fn guided_init_sample(&self, p: &OccupancyParams, y: &[Obs], rng: &mut RngStream, out: &mut [f64]) -> f64 {
        let mut correction = 0.0;
        for (i, z) in out.iter_mut().enumerate() {
            let u = rng.uniform();
            if self.site_detected(y, i) {
                *z = 1.0;
                correction += p.log_psi[i].0;
            } else {
                *z = if u < p.log_psi[i].0.exp() { 1.0 } else { 0.0 };
            }
        }
        correction
    }

    fn guided_trans_sample(
        &self,
        p: &OccupancyParams,
        prev: &[f64],
        y: &[Obs],
        t: usize,
        rng: &mut RngStream,
        out: &mut [f64],
    ) -> f64 {
        self.check_year(t);
        let mut correction = 0.0;
        for (i, z) in out.iter_mut().enumerate() {
            let u = rng.uniform();
            let lp = self.log_occ_prob(p, prev, t, i);
            if self.site_detected(y, i) {
                *z = 1.0;
                correction += lp.0;
            } else {
                *z = if u < lp.0.exp() { 1.0 } else { 0.0 };
            }
        }
        correction
    }

    /// Undetected sites are drawn from their conditional given the year's
    /// non-detections, so the auxiliary filter is fully adapted.
    fn adapted_init_sample(&self, p: &OccupancyParams, y: &[Obs], rng: &mut RngStream, out: &mut [f64]) -> f64 {
        let mut correction = 0.0;
        for (i, z) in out.iter_mut().enumerate() {
            correction += self.adapted_site(p, p.log_psi[i], y, 0, i, rng.uniform(), z);
        }
        correction
    }

    fn adapted_trans_sample(
        &self,
        p: &OccupancyParams,
        prev: &[f64],
        y: &[Obs],
        t: usize,
        rng: &mut RngStream,
        out: &mut [f64],
    ) -> f64 {
        self.check_year(t);
        let mut correction = 0.0;
        for (i, z) in out.iter_mut().enumerate() {
            let lp = self.log_occ_prob(p, prev, t, i);
            correction += self.adapted_site(p, lp, y, t, i, rng.uniform(), z);
        }
        correction
    }

    /// Per-site predictive density of the year's detections, weighting the
    /// two possible occupancy states by their transition probabilities.
    fn lookahead_logpdf(&self, p: &OccupancyParams, y: &[Obs], prev: &[f64], t: usize) -> f64 {
        self.check_year(t);
        let mut total = 0.0;
        for i in 0..self.cov.sites {
            let lp = self.log_occ_prob(p, prev, t, i);
            let occupied = lp.0 + self.site_obs_logpdf(p, y, 1.0, t, i);
            if self.site_detected(y, i) {
                total += occupied;
            } else {
                let empty = lp.1;
                let m = occupied.max(empty);
                total += if m == f64::NEG_INFINITY {
                    m
                } else {
                    m + ((occupied - m).exp() + (empty - m).exp()).ln()
                };
            }
        }
        total
    }

    fn factorized(&self) -> bool {
        true
    }

    fn fixed_coordinate(&self, y: &[Obs], _t: usize, k: usize) -> Option<f64> {
        self.site_detected(y, k).then_some(1.0)
    }

    fn coord_init_sample(&self, p: &OccupancyParams, k: usize, rng: &mut RngStream) -> f64 {
        if rng.uniform() < p.log_psi[k].0.exp() {
            1.0
        } else {
            0.0
        }
    }

    fn coord_trans_sample(&self, p: &OccupancyParams, prev: &[f64], t: usize, k: usize, rng: &mut RngStream) -> f64 {
        if rng.uniform() < self.log_occ_prob(p, prev, t, k).0.exp() {
            1.0
        } else {
            0.0
        }
    }

    fn coord_init_logpdf(&self, p: &OccupancyParams, x: &[f64], k: usize) -> f64 {
        bern_log(x[k], p.log_psi[k])
    }

    fn coord_trans_logpdf(&self, p: &OccupancyParams, x: &[f64], prev: &[f64], t: usize, k: usize) -> f64 {
        bern_log(x[k], self.log_occ_prob(p, prev, t, k))
    }

    fn coord_obs_logpdf(&self, p: &OccupancyParams, y: &[Obs], x: &[f64], t: usize, k: usize) -> f64 {
        self.site_obs_logpdf(p, y, x[k], t, k)
    }
}

/// Long format `site,visit,year,y` (1-based indices, year-major order).
pub fn write_occupancy_csv<W: Write>(data: &Dataset, sites: usize, visits: usize, writer: W) -> Result<()> {
    if data.obs_dim() != sites * visits {
        return Err(Error::ShapeMismatch(format!(
            "observation width {} is not {sites} x {visits}",
            data.obs_dim()
        )));
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["site", "visit", "year", "y"])?;
    for t in 0..data.len() {
        let row = data.row(t);
        for i in 0..sites {
            for j in 0..visits {
                let v = row[i * visits + j].map(crate::dataset::fmt_f64).unwrap_or_default();
                w.write_record([(i + 1).to_string(), (j + 1).to_string(), (t + 1).to_string(), v])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Read the long format. Absent rows and empty `y` fields are missing.
pub fn read_occupancy_csv<R: Read>(reader: R, sites: usize, visits: usize) -> Result<Dataset> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["site", "visit", "year", "y"] {
        return Err(Error::Parse("expected header `site,visit,year,y`".into()));
    }
    let mut entries: Vec<(usize, usize, usize, Obs)> = Vec::new();
    let mut years = 0;
    for rec in r.records() {
        let rec = rec?;
        let idx = |k: usize| -> Result<usize> {
            rec[k]
                .trim()
                .parse::<usize>()
                .ok()
                .filter(|v| *v >= 1)
                .ok_or_else(|| Error::Parse(format!("bad index `{}`", &rec[k])))
        };
        let (i, j, t) = (idx(0)?, idx(1)?, idx(2)?);
        if i > sites || j > visits {
            return Err(Error::ShapeMismatch(format!("site {i} / visit {j} outside {sites} x {visits}")));
        }
        let v = crate::dataset::parse_obs(&rec[3])?;
        if let Some(v) = v {
            if v != 0.0 && v != 1.0 {
                return Err(Error::NonBinary);
            }
        }
        years = years.max(t);
        entries.push((i - 1, j - 1, t - 1, v));
    }
    let width = sites * visits;
    let mut y = vec![None; years * width];
    for (i, j, t, v) in entries {
        y[t * width + i * visits + j] = v;
    }
    Dataset::new(width.max(1), y)
}
