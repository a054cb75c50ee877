//! Random-walk Metropolis samplers: data-augmentation MCMC over parameters
//! and latent states, and particle marginal Metropolis-Hastings.
//!
//! Parameters are always proposed on the unconstrained scale given by
//! [`ParamSpec::transforms`], with the Jacobian included in the target.

use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, LatentTrajectory};
use crate::error::{Error, Result};
use crate::params::{ParamSpec, ParamVector, ThetaSplit};
use crate::rng::RngStream;
use crate::smc::{run_filter, FilterConfig, FilterStart};
use crate::ssm::{check_horizon, latent_log_prior, obs_log_likelihood, StateSpaceModel};

/// Gaussian random-walk proposal `delta * L z` on a subset of coordinates.
#[derive(Clone, Debug)]
pub struct BlockProposal {
    indices: Vec<usize>,
    delta: f64,
    chol: DMatrix<f64>,
}

impl BlockProposal {
    /// `cov` defaults to the identity. It must be symmetric positive definite.
    pub fn new(indices: Vec<usize>, delta: f64, cov: Option<&DMatrix<f64>>) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidConfig(format!("step scale must be positive, got {delta}")));
        }
        let n = indices.len();
        let chol = match cov {
            None => DMatrix::identity(n, n),
            Some(c) => {
                if c.nrows() != n || c.ncols() != n {
                    return Err(Error::ShapeMismatch(format!(
                        "proposal covariance is {}x{}, block has {n} parameters",
                        c.nrows(),
                        c.ncols()
                    )));
                }
                c.clone()
                    .cholesky()
                    .ok_or_else(|| Error::InvalidConfig("proposal covariance is not positive definite".into()))?
                    .l()
            }
        };
        Ok(Self { indices, delta, chol })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Perturb the block coordinates of `values` in place.
    pub fn perturb(&self, values: &mut [f64], rng: &mut RngStream) {
        let n = self.indices.len();
        let z: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        for r in 0..n {
            let step: f64 = (0..=r).map(|c| self.chol[(r, c)] * z[c]).sum();
            values[self.indices[r]] += self.delta * step;
        }
    }
}

/// Hyperparameter block first, then the main block, both centred on the
/// current values.
#[derive(Clone, Debug)]
pub struct TwoStageProposal {
    pub hyper: BlockProposal,
    pub main: BlockProposal,
}

impl TwoStageProposal {
    pub fn new(
        split: &ThetaSplit,
        delta_main: f64,
        delta_hyper: f64,
        cov_main: Option<&DMatrix<f64>>,
        cov_hyper: Option<&DMatrix<f64>>,
    ) -> Result<Self> {
        Ok(Self {
            hyper: BlockProposal::new(split.hyper.clone(), delta_hyper, cov_hyper)?,
            main: BlockProposal::new(split.main.clone(), delta_main, cov_main)?,
        })
    }

    pub fn propose(&self, current: &[f64], rng: &mut RngStream) -> Vec<f64> {
        let mut out = current.to_vec();
        self.hyper.perturb(&mut out, rng);
        self.main.perturb(&mut out, rng);
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub values: Vec<f64>,
    pub log_target: f64,
    pub accepted: bool,
}

/// One Metropolis step on `proposal`'s block with a symmetric proposal.
pub fn rw_block_step<F: Fn(&[f64]) -> f64>(
    current: &[f64],
    current_log_target: f64,
    proposal: &BlockProposal,
    log_target: F,
    rng: &mut RngStream,
) -> Result<StepOutcome> {
    if !current_log_target.is_finite() {
        return Err(Error::NonFiniteTarget);
    }
    let mut cand = current.to_vec();
    proposal.perturb(&mut cand, rng);
    let lt = log_target(&cand);
    let u = rng.uniform();
    if !lt.is_nan() && u.ln() < lt - current_log_target {
        Ok(StepOutcome {
            values: cand,
            log_target: lt,
            accepted: true,
        })
    } else {
        Ok(StepOutcome {
            values: current.to_vec(),
            log_target: current_log_target,
            accepted: false,
        })
    }
}

#[derive(Clone, Debug)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
    pub delta_main: f64,
    pub delta_hyper: f64,
    pub cov_main: Option<DMatrix<f64>>,
    pub cov_hyper: Option<DMatrix<f64>>,
    pub seed: u64,
    /// Starting parameters; defaults to the prior centre plus a small jitter.
    pub init: Option<ParamVector>,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            iterations: 3000,
            burn_in: 1000,
            thin: 1,
            chains: 3,
            delta_main: 0.2,
            delta_hyper: 0.2,
            cov_main: None,
            cov_hyper: None,
            seed: 1,
            init: None,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidConfig(format!(
                "burn-in {} must be below the iteration count {}",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::InvalidConfig("thin must be at least 1".into()));
        }
        if self.chains == 0 {
            return Err(Error::InvalidConfig("at least one chain is required".into()));
        }
        for d in [self.delta_main, self.delta_hyper] {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::InvalidConfig(format!("step scale must be positive, got {d}")));
            }
        }
        Ok(())
    }

    pub fn kept(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }

    fn keeps(&self, iter: usize) -> bool {
        iter >= self.burn_in && (iter - self.burn_in + 1) % self.thin == 0
    }

    fn proposal(&self, split: &ThetaSplit) -> Result<TwoStageProposal> {
        TwoStageProposal::new(
            split,
            self.delta_main,
            self.delta_hyper,
            self.cov_main.as_ref(),
            self.cov_hyper.as_ref(),
        )
    }
}

/// Acceptance rates; `None` for updates that were not performed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Acceptance {
    pub main: Option<f64>,
    pub hyper: Option<f64>,
    pub latent: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Chain {
    pub param_names: Vec<String>,
    /// Kept iterations x parameters, constrained scale.
    pub draws: Vec<Vec<f64>>,
    pub state_dim: usize,
    /// Kept iterations x (T * state_dim), time-major.
    pub latent_draws: Vec<Vec<f64>>,
    pub acceptance: Acceptance,
    pub wall_time: f64,
    pub seed: u64,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// Draws of one parameter.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.param_names.iter().position(|n| n == name)?;
        Some(self.draws.iter().map(|r| r[k]).collect())
    }
}

#[derive(Default)]
struct Counter {
    tried: u64,
    accepted: u64,
}

impl Counter {
    fn record(&mut self, accepted: bool) {
        self.tried += 1;
        self.accepted += accepted as u64;
    }

    fn rate(&self) -> Option<f64> {
        (self.tried > 0).then(|| self.accepted as f64 / self.tried as f64)
    }
}

fn theta_log_target<M: StateSpaceModel>(model: &M, data: &Dataset, x: &LatentTrajectory, eta: &[f64]) -> f64 {
    let spec = model.param_spec();
    let lp = spec.log_prior_unconstrained(eta);
    if lp == f64::NEG_INFINITY || lp.is_nan() {
        return f64::NEG_INFINITY;
    }
    match model.prepare(&spec.from_unconstrained(eta)) {
        Ok(p) => lp + latent_log_prior(model, &p, x) + obs_log_likelihood(model, &p, x, data, 0, data.len()),
        Err(_) => f64::NEG_INFINITY,
    }
}

fn start_eta(spec: &ParamSpec, init: Option<&ParamVector>, rng: &mut RngStream) -> Result<Vec<f64>> {
    match init {
        Some(th) => spec.to_unconstrained(th),
        None => {
            let mut eta = spec.to_unconstrained(&spec.center())?;
            eta.iter_mut().for_each(|e| *e += 0.1 * rng.normal());
            Ok(eta)
        }
    }
}

/// Forward-simulate states consistent with the observations.
fn guided_path<M: StateSpaceModel>(model: &M, p: &M::Prepared, data: &Dataset, rng: &mut RngStream) -> Vec<f64> {
    let d = model.state_dim();
    let n = data.len();
    let mut x = vec![0.0; n * d];
    if n == 0 {
        return x;
    }
    model.guided_init_sample(p, data.row(0), rng, &mut x[..d]);
    for t in 1..n {
        let (done, rest) = x.split_at_mut(t * d);
        model.guided_trans_sample(p, &done[(t - 1) * d..], data.row(t), t, rng, &mut rest[..d]);
    }
    x
}

/// One sweep of single-site Metropolis updates with transition-prior proposals.
fn latent_sweep<M: StateSpaceModel>(
    model: &M,
    p: &M::Prepared,
    data: &Dataset,
    x: &mut [f64],
    rng: &mut RngStream,
    counter: &mut Counter,
) {
    let d = model.state_dim();
    let n = data.len();
    let mut cand = vec![0.0; d];
    for t in 0..n {
        let y = data.row(t);
        if model.factorized() {
            for k in 0..d {
                if let Some(v) = model.fixed_coordinate(y, t, k) {
                    x[t * d + k] = v;
                    continue;
                }
                let proposal = if t == 0 {
                    model.coord_init_sample(p, k, rng)
                } else {
                    model.coord_trans_sample(p, &x[(t - 1) * d..t * d], t, k, rng)
                };
                let old = x[t * d + k];
                let before = coord_terms(model, p, data, x, t, k);
                x[t * d + k] = proposal;
                let after = coord_terms(model, p, data, x, t, k);
                let accept = !after.is_nan() && rng.uniform().ln() < after - before;
                if !accept {
                    x[t * d + k] = old;
                }
                counter.record(accept);
            }
        } else {
            if t == 0 {
                model.init_sample(p, rng, &mut cand);
            } else {
                model.trans_sample(p, &x[(t - 1) * d..t * d], t, rng, &mut cand);
            }
            let before = site_terms(model, p, data, x, t, None);
            let after = site_terms(model, p, data, x, t, Some(&cand));
            let accept = !after.is_nan() && rng.uniform().ln() < after - before;
            if accept {
                x[t * d..(t + 1) * d].copy_from_slice(&cand);
            }
            counter.record(accept);
        }
    }
}

/// Terms of the joint density involving `x_t` other than its own transition.
fn site_terms<M: StateSpaceModel>(
    model: &M,
    p: &M::Prepared,
    data: &Dataset,
    x: &[f64],
    t: usize,
    replace: Option<&[f64]>,
) -> f64 {
    let d = model.state_dim();
    let xt = replace.unwrap_or(&x[t * d..(t + 1) * d]);
    let mut total = model.obs_logpdf(p, data.row(t), xt, t);
    if t + 1 < data.len() {
        total += model.trans_logpdf(p, &x[(t + 1) * d..(t + 2) * d], xt, t + 1);
    }
    total
}

fn coord_terms<M: StateSpaceModel>(model: &M, p: &M::Prepared, data: &Dataset, x: &[f64], t: usize, k: usize) -> f64 {
    let d = model.state_dim();
    let xt = &x[t * d..(t + 1) * d];
    let mut total = model.coord_obs_logpdf(p, data.row(t), xt, t, k);
    if t + 1 < data.len() {
        total += model.coord_trans_logpdf(p, &x[(t + 1) * d..(t + 2) * d], xt, t + 1, k);
    }
    total
}

const INIT_ATTEMPTS: usize = 100;

fn run_chain<M: StateSpaceModel>(model: &M, data: &Dataset, config: &McmcConfig, seed: u64) -> Result<Chain> {
    let started = Instant::now();
    let spec = model.param_spec();
    let proposal = config.proposal(&spec.split())?;
    let mut rng = RngStream::new(seed);
    let d = model.state_dim();

    let mut init = None;
    for _ in 0..INIT_ATTEMPTS {
        let eta = start_eta(spec, config.init.as_ref(), &mut rng)?;
        let Ok(p) = model.prepare(&spec.from_unconstrained(&eta)) else {
            continue;
        };
        let x = LatentTrajectory::new(d, guided_path(model, &p, data, &mut rng))?;
        let lt = theta_log_target(model, data, &x, &eta);
        if lt.is_finite() {
            init = Some((eta, x.values().to_vec()));
            break;
        }
    }
    let (mut eta, mut x) = init.ok_or(Error::NonFiniteTarget)?;

    let (mut c_main, mut c_hyper, mut c_latent) = (Counter::default(), Counter::default(), Counter::default());
    let mut draws = Vec::with_capacity(config.kept());
    let mut latent_draws = Vec::with_capacity(config.kept());
    for iter in 0..config.iterations {
        if d > 0 && !data.is_empty() {
            let p = model.prepare(&spec.from_unconstrained(&eta))?;
            latent_sweep(model, &p, data, &mut x, &mut rng, &mut c_latent);
        }
        let traj = LatentTrajectory::new(d, x)?;
        let mut lt = theta_log_target(model, data, &traj, &eta);
        for (block, counter) in [(&proposal.hyper, &mut c_hyper), (&proposal.main, &mut c_main)] {
            if block.is_empty() {
                continue;
            }
            let out = rw_block_step(&eta, lt, block, |e| theta_log_target(model, data, &traj, e), &mut rng)?;
            counter.record(out.accepted);
            eta = out.values;
            lt = out.log_target;
        }
        x = traj.values().to_vec();
        if config.keeps(iter) {
            draws.push(spec.from_unconstrained(&eta).values().to_vec());
            latent_draws.push(x.clone());
        }
    }
    Ok(Chain {
        param_names: spec.names().to_vec(),
        draws,
        state_dim: d,
        latent_draws,
        acceptance: Acceptance {
            main: c_main.rate(),
            hyper: c_hyper.rate(),
            latent: c_latent.rate(),
        },
        wall_time: started.elapsed().as_secs_f64(),
        seed,
    })
}

/// Data-augmentation MCMC: a latent sweep, then the hyperparameter and main
/// parameter blocks, per iteration. Chain `c` is seeded with `seed + c`.
pub fn run_mcmc<M: StateSpaceModel>(model: &M, data: &Dataset, config: &McmcConfig) -> Result<Vec<Chain>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidConfig("data must contain at least one time point".into()));
    }
    check_horizon(model, data.len())?;
    (0..config.chains)
        .into_par_iter()
        .map(|c| run_chain(model, data, config, config.seed.wrapping_add(c as u64)))
        .collect()
}

fn pmmh_chain<M: StateSpaceModel>(
    model: &M,
    data: &Dataset,
    config: &McmcConfig,
    filter: &FilterConfig,
    seed: u64,
) -> Result<Chain> {
    let started = Instant::now();
    let spec = model.param_spec();
    let proposal = config.proposal(&spec.split())?;
    let root = RngStream::new(seed);
    let mut rng = root.substream(0);
    let d = model.state_dim();

    // log target and a trajectory drawn from the filter at `eta`
    let evaluate = |eta: &[f64], stream: &RngStream| -> Result<Option<(f64, Vec<f64>)>> {
        let lp = spec.log_prior_unconstrained(eta);
        if !lp.is_finite() {
            return Ok(None);
        }
        let Ok(p) = model.prepare(&spec.from_unconstrained(eta)) else {
            return Ok(None);
        };
        let mut frng = stream.substream(0);
        let res = run_filter(model, &p, data, FilterStart::Prior, data.len(), filter, &mut frng)?;
        if res.collapsed_at.is_some() || !res.loglik.is_finite() {
            return Ok(None);
        }
        let mut prng = stream.substream(1);
        let path = res.trajectory(res.sample_index(&mut prng));
        Ok(Some((lp + res.loglik, path)))
    };

    let mut state = None;
    for attempt in 0..INIT_ATTEMPTS {
        let eta = start_eta(spec, config.init.as_ref(), &mut rng)?;
        if let Some((lt, path)) = evaluate(&eta, &root.substream(1_000_000 + attempt as u64))? {
            state = Some((eta, lt, path));
            break;
        }
    }
    let (mut eta, mut lt, mut path) = state.ok_or(Error::NonFiniteTarget)?;

    let mut counter = Counter::default();
    let mut draws = Vec::with_capacity(config.kept());
    let mut latent_draws = Vec::with_capacity(config.kept());
    for iter in 0..config.iterations {
        if !spec.is_empty() {
            let mut step = root.substream(iter as u64 + 1);
            let cand = proposal.propose(&eta, &mut step);
            let eval = evaluate(&cand, &step.substream(0))?;
            let u = step.uniform();
            let accepted = match eval {
                Some((lt_c, path_c)) if u.ln() < lt_c - lt => {
                    eta = cand;
                    lt = lt_c;
                    path = path_c;
                    true
                }
                _ => false,
            };
            counter.record(accepted);
        }
        if config.keeps(iter) {
            draws.push(spec.from_unconstrained(&eta).values().to_vec());
            latent_draws.push(path.clone());
        }
    }
    let rate = counter.rate();
    let split = spec.split();
    Ok(Chain {
        param_names: spec.names().to_vec(),
        draws,
        state_dim: d,
        latent_draws,
        acceptance: Acceptance {
            main: if split.main.is_empty() { None } else { rate },
            hyper: if split.hyper.is_empty() { None } else { rate },
            latent: None,
        },
        wall_time: started.elapsed().as_secs_f64(),
        seed,
    })
}

/// Particle marginal Metropolis-Hastings with a joint two-stage proposal.
/// The latent draw kept with each iteration is one filter path drawn in
/// proportion to the final weights of the accepted filter run.
pub fn run_pmmh<M: StateSpaceModel>(
    model: &M,
    data: &Dataset,
    config: &McmcConfig,
    filter: &FilterConfig,
) -> Result<Vec<Chain>> {
    config.validate()?;
    if filter.particles == 0 {
        return Err(Error::InvalidConfig("particle count must be at least 1".into()));
    }
    if data.is_empty() {
        return Err(Error::InvalidConfig("data must contain at least one time point".into()));
    }
    check_horizon(model, data.len())?;
    (0..config.chains)
        .into_par_iter()
        .map(|c| pmmh_chain(model, data, config, filter, config.seed.wrapping_add(c as u64)))
        .collect()
}
