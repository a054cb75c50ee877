//! Update a stored reduced-data posterior with newly arrived observations.
//!
//! Every archived draw `j` is updated independently: its trajectory up to
//! `t` seeds `M` identical particles, a filter runs over the new time
//! points under both the archived parameters and a proposed value, and the
//! proposal is accepted with the updated Metropolis-Hastings ratio built
//! from the new-step likelihood estimates.

mod archive;

use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

pub use archive::{sha256_hex, Manifest, PosteriorArchive, FORMAT_VERSION};

use crate::dataset::{Dataset, LatentTrajectory};
use crate::error::{Error, Result};
use crate::mcmc::TwoStageProposal;
use crate::params::{ParamSpec, ParamVector};
use crate::rng::RngStream;
use crate::smc::{run_filter, FilterConfig, FilterKind, FilterResult, FilterStart, ParticleEnsemble};
use crate::ssm::{check_horizon, obs_log_likelihood, StateSpaceModel};

#[derive(Clone, Debug)]
pub struct UpdateConfig {
    pub particles: usize,
    pub filter: FilterKind,
    pub delta_main: f64,
    pub delta_hyper: f64,
    pub cov_main: Option<DMatrix<f64>>,
    pub cov_hyper: Option<DMatrix<f64>>,
    pub seed: u64,
    pub resample_threshold: f64,
}

impl Default for UpdateConfig {
    fn default() -> Self {
        Self {
            particles: 100,
            filter: FilterKind::Bootstrap,
            delta_main: 0.2,
            delta_hyper: 0.2,
            cov_main: None,
            cov_hyper: None,
            seed: 1,
            resample_threshold: 0.5,
        }
    }
}

impl UpdateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 {
            return Err(Error::InvalidConfig("particle count must be at least 1".into()));
        }
        for d in [self.delta_main, self.delta_hyper] {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::InvalidConfig(format!("step scale must be positive, got {d}")));
            }
        }
        Ok(())
    }

    fn filter_config(&self) -> FilterConfig {
        FilterConfig {
            kind: self.filter,
            particles: self.particles,
            resample_threshold: self.resample_threshold,
        }
    }

    pub fn proposal(&self, spec: &ParamSpec) -> Result<TwoStageProposal> {
        TwoStageProposal::new(
            &spec.split(),
            self.delta_main,
            self.delta_hyper,
            self.cov_main.as_ref(),
            self.cov_hyper.as_ref(),
        )
    }
}

/// Archived history of one draw replicated over `M` particles.
#[derive(Clone, Debug)]
pub struct ReplicatedHistory {
    /// One ensemble per archived time index; all particles equal the archived
    /// state and carry the same cumulative observation log-weight.
    pub ensembles: Vec<ParticleEnsemble>,
}

/// Copy draw `j`'s trajectory into `particles` identical particles for each
/// archived time index, with log-weight `sum_{u <= s} ln p(y_u | x_u, theta)`
/// computed once and duplicated.
pub fn replicate_history<M: StateSpaceModel>(
    model: &M,
    archive: &PosteriorArchive,
    j: usize,
    theta: &ParamVector,
    particles: usize,
) -> Result<ReplicatedHistory> {
    if j >= archive.len() {
        return Err(Error::IndexOutOfRange {
            index: j,
            len: archive.len(),
        });
    }
    if particles == 0 {
        return Err(Error::InvalidConfig("particle count must be at least 1".into()));
    }
    let p = model.prepare(theta)?;
    let mut cumulative = 0.0;
    let ensembles = (0..archive.t())
        .map(|s| {
            let x = archive.state(j, s);
            cumulative += model.obs_logpdf(&p, archive.data.row(s), x, s);
            let mut e = ParticleEnsemble::replicated(x, particles, s);
            e.log_weights.iter_mut().for_each(|w| *w = cumulative);
            e
        })
        .collect();
    Ok(ReplicatedHistory { ensembles })
}

/// Propose `theta*` around `theta_r` with the two-stage block proposal on the
/// unconstrained scale. Returns the proposal and the log Hastings ratio
/// `ln pi(theta_r | theta*) - ln pi(theta* | theta_r)`, which is zero for the
/// symmetric random walk.
pub fn propose_two_stage(
    spec: &ParamSpec,
    theta_r: &ParamVector,
    proposal: &TwoStageProposal,
    rng: &mut RngStream,
) -> Result<(ParamVector, f64)> {
    let eta = spec.to_unconstrained(theta_r)?;
    let cand = proposal.propose(&eta, rng);
    Ok((spec.from_unconstrained(&cand), 0.0))
}

/// `min(1, exp(lp* - lp_r + log_hastings + ll* - ll_r))`.
pub fn updated_mhar(
    log_prior_star: f64,
    log_prior_r: f64,
    log_hastings: f64,
    loglik_new_star: f64,
    loglik_new_r: f64,
) -> Result<f64> {
    if loglik_new_star == f64::NEG_INFINITY && loglik_new_r == f64::NEG_INFINITY {
        return Err(Error::BothCollapsed);
    }
    if loglik_new_star == f64::NEG_INFINITY || log_prior_star == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    let log_ratio = log_prior_star - log_prior_r + log_hastings + loglik_new_star - loglik_new_r;
    if log_ratio.is_nan() {
        return Ok(0.0);
    }
    Ok(log_ratio.exp().min(1.0))
}

/// Output of [`update_run`]; row `j` derives from archive row `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdatedPosterior {
    pub param_names: Vec<String>,
    /// Archived time points.
    pub t: usize,
    /// Total time points after the update.
    pub t_new: usize,
    pub state_dim: usize,
    pub theta_upd: Vec<Vec<f64>>,
    pub theta_star: Vec<Vec<f64>>,
    /// `N x ((T - t) * state_dim)`.
    pub latent_new: Vec<Vec<f64>>,
    pub accepted: Vec<bool>,
    /// Rows where both filter runs collapsed.
    pub collapsed: Vec<bool>,
    pub accept_prob: Vec<f64>,
    pub loglik_star: Vec<f64>,
    pub loglik_r: Vec<f64>,
    /// Observation log-likelihood of `y_{1:t}` along the archived path under
    /// `theta_r` and `theta*`.
    pub history_loglik_r: Vec<f64>,
    pub history_loglik_star: Vec<f64>,
    pub wall_time: f64,
}

impl UpdatedPosterior {
    pub fn len(&self) -> usize {
        self.theta_upd.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta_upd.is_empty()
    }

    pub fn acceptance_rate(&self) -> f64 {
        self.accepted.iter().filter(|a| **a).count() as f64 / self.len().max(1) as f64
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.param_names.iter().position(|n| n == name)?;
        Some(self.theta_upd.iter().map(|r| r[k]).collect())
    }

    /// Archive over `1..T`: archived paths extended by the new states.
    pub fn to_archive(&self, reduced: &PosteriorArchive, full_data: &Dataset, seed: Option<u64>) -> Result<PosteriorArchive> {
        let latents = reduced
            .latents
            .iter()
            .zip(&self.latent_new)
            .map(|(old, new)| old.iter().chain(new).copied().collect())
            .collect();
        PosteriorArchive::new(
            &reduced.model_id,
            self.param_names.clone(),
            self.theta_upd.clone(),
            self.state_dim,
            latents,
            full_data.clone(),
            seed,
        )
    }
}

/// Result of updating a single archive row.
#[derive(Clone, Debug, PartialEq)]
pub struct RowUpdate {
    pub theta_upd: Vec<f64>,
    pub theta_star: Vec<f64>,
    pub latent_new: Vec<f64>,
    pub accepted: bool,
    pub collapsed: bool,
    pub accept_prob: f64,
    pub loglik_star: f64,
    pub loglik_r: f64,
    pub history_loglik_r: f64,
    pub history_loglik_star: f64,
}

fn check_archive<M: StateSpaceModel>(model: &M, archive: &PosteriorArchive, new_data: &Dataset) -> Result<()> {
    if archive.model_id != model.model_id() {
        return Err(Error::ParamMismatch(format!(
            "archive is for model `{}`, not `{}`",
            archive.model_id,
            model.model_id()
        )));
    }
    if archive.param_names != model.param_spec().names() {
        return Err(Error::ParamMismatch(format!(
            "archive parameters {:?} do not match the model's {:?}",
            archive.param_names,
            model.param_spec().names()
        )));
    }
    if archive.state_dim != model.state_dim() {
        return Err(Error::ShapeMismatch(format!(
            "archive state width {} differs from the model's {}",
            archive.state_dim,
            model.state_dim()
        )));
    }
    if new_data.obs_dim() != archive.data.obs_dim() {
        return Err(Error::ShapeMismatch(format!(
            "new data width {} differs from the archive's {}",
            new_data.obs_dim(),
            archive.data.obs_dim()
        )));
    }
    archive.validate()
}

fn new_step_filter<M: StateSpaceModel>(
    model: &M,
    theta: &ParamVector,
    archive: &PosteriorArchive,
    j: usize,
    full: &Dataset,
    config: &FilterConfig,
    rng: &mut RngStream,
) -> Result<Option<FilterResult>> {
    let Ok(p) = model.prepare(theta) else {
        return Ok(None);
    };
    let t = archive.t();
    let start = ParticleEnsemble::replicated(archive.state(j, t - 1), config.particles, t - 1);
    let res = run_filter(model, &p, full, FilterStart::Ensemble(start), full.len(), config, rng)?;
    Ok(Some(res))
}

/// States consistent with the observations, drawn forward from `from`.
fn forward_simulate<M: StateSpaceModel>(
    model: &M,
    theta: &ParamVector,
    from: &[f64],
    full: &Dataset,
    first: usize,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let end = full.len();
    let p = model.prepare(theta)?;
    let d = model.state_dim();
    let mut out = vec![0.0; (end - first) * d];
    let mut prev = from.to_vec();
    for (k, t) in (first..end).enumerate() {
        model.guided_trans_sample(&p, &prev, full.row(t), t, rng, &mut out[k * d..(k + 1) * d]);
        prev.copy_from_slice(&out[k * d..(k + 1) * d]);
    }
    Ok(out)
}

/// Update archive row `j` using RNG substream `key` of the configured seed.
///
/// Substreams of the row stream: 0 proposal, 1 filter under `theta_r`,
/// 2 filter under `theta*`, 3 acceptance uniform, 4 trajectory selection.
pub fn update_row<M: StateSpaceModel>(
    model: &M,
    archive: &PosteriorArchive,
    full: &Dataset,
    j: usize,
    key: u64,
    config: &UpdateConfig,
) -> Result<RowUpdate> {
    if j >= archive.len() {
        return Err(Error::IndexOutOfRange {
            index: j,
            len: archive.len(),
        });
    }
    let spec = model.param_spec();
    let proposal = config.proposal(spec)?;
    let filter = config.filter_config();
    let row = RngStream::new(config.seed).substream(key);
    let t = archive.t();
    let end = full.len();

    let theta_r = spec.vector(archive.theta[j].clone())?;
    let (theta_star, log_hastings) = propose_two_stage(spec, &theta_r, &proposal, &mut row.substream(0))?;
    let lp_r = spec.log_prior_unconstrained(&spec.to_unconstrained(&theta_r)?);
    let lp_star = spec.log_prior_unconstrained(&spec.to_unconstrained(&theta_star)?);

    let path = LatentTrajectory::new(archive.state_dim, archive.latents[j].clone())?;
    let history = |theta: &ParamVector| match model.prepare(theta) {
        Ok(p) => obs_log_likelihood(model, &p, &path, &archive.data, 0, t),
        Err(_) => f64::NEG_INFINITY,
    };
    let history_loglik_r = history(&theta_r);
    let history_loglik_star = history(&theta_star);

    let (run_r, run_star) = if end > t {
        let r = new_step_filter(model, &theta_r, archive, j, full, &filter, &mut row.substream(1))?;
        let s = if lp_star.is_finite() {
            new_step_filter(model, &theta_star, archive, j, full, &filter, &mut row.substream(2))?
        } else {
            None
        };
        (r, s)
    } else {
        (None, None)
    };
    let loglik = |run: &Option<FilterResult>| match run {
        _ if end == t => 0.0,
        Some(res) if res.collapsed_at.is_none() => res.loglik,
        _ => f64::NEG_INFINITY,
    };
    let (ll_r, ll_star) = (loglik(&run_r), loglik(&run_star));

    let (accept_prob, collapsed) = match updated_mhar(lp_star, lp_r, log_hastings, ll_star, ll_r) {
        Ok(a) => (a, false),
        Err(Error::BothCollapsed) => (0.0, true),
        Err(e) => return Err(e),
    };
    let accepted = row.substream(3).uniform() < accept_prob;
    let (theta_upd, winner) = if accepted {
        (&theta_star, &run_star)
    } else {
        (&theta_r, &run_r)
    };

    let mut pick = row.substream(4);
    let latent_new = match winner {
        _ if end == t => Vec::new(),
        Some(res) if res.collapsed_at.is_none() => res.trajectory(res.sample_index(&mut pick)),
        _ => forward_simulate(model, theta_upd, archive.state(j, t - 1), full, t, &mut pick)?,
    };
    Ok(RowUpdate {
        theta_upd: theta_upd.values().to_vec(),
        theta_star: theta_star.values().to_vec(),
        latent_new,
        accepted,
        collapsed,
        accept_prob,
        loglik_star: ll_star,
        loglik_r: ll_r,
        history_loglik_r,
        history_loglik_star,
    })
}

/// Update every archived draw with `new_data` (the observations after `t`).
pub fn update_run<M: StateSpaceModel>(
    archive: &PosteriorArchive,
    new_data: &Dataset,
    model: &M,
    config: &UpdateConfig,
) -> Result<UpdatedPosterior> {
    let started = Instant::now();
    config.validate()?;
    check_archive(model, archive, new_data)?;
    let full = archive.data.concat(new_data)?;
    check_horizon(model, full.len())?;
    let rows: Vec<RowUpdate> = (0..archive.len())
        .into_par_iter()
        .map(|j| update_row(model, archive, &full, j, j as u64, config))
        .collect::<Result<_>>()?;
    let mut out = UpdatedPosterior {
        param_names: archive.param_names.clone(),
        t: archive.t(),
        t_new: full.len(),
        state_dim: archive.state_dim,
        theta_upd: Vec::with_capacity(rows.len()),
        theta_star: Vec::with_capacity(rows.len()),
        latent_new: Vec::with_capacity(rows.len()),
        accepted: Vec::with_capacity(rows.len()),
        collapsed: Vec::with_capacity(rows.len()),
        accept_prob: Vec::with_capacity(rows.len()),
        loglik_star: Vec::with_capacity(rows.len()),
        loglik_r: Vec::with_capacity(rows.len()),
        history_loglik_r: Vec::with_capacity(rows.len()),
        history_loglik_star: Vec::with_capacity(rows.len()),
        wall_time: 0.0,
    };
    for r in rows {
        out.theta_upd.push(r.theta_upd);
        out.theta_star.push(r.theta_star);
        out.latent_new.push(r.latent_new);
        out.accepted.push(r.accepted);
        out.collapsed.push(r.collapsed);
        out.accept_prob.push(r.accept_prob);
        out.loglik_star.push(r.loglik_star);
        out.loglik_r.push(r.loglik_r);
        out.history_loglik_r.push(r.history_loglik_r);
        out.history_loglik_star.push(r.history_loglik_star);
    }
    out.wall_time = started.elapsed().as_secs_f64();
    Ok(out)
}
