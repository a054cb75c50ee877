//! The state-space model contract and generic operations on it.
//!
//! Time indices passed to callbacks are zero-based: `init_*` produces the
//! state at index 0, `trans_*(.., t, ..)` moves from index `t - 1` to `t`,
//! and `obs_*(.., t)` concerns the observation row at index `t`.

use crate::dataset::{Covariates, Dataset, LatentTrajectory, Obs};
use crate::error::{Error, Result};
use crate::params::{ParamSpec, ParamVector};
use crate::rng::RngStream;

/// Initial-state, transition and observation densities plus priors.
///
/// Callbacks must be re-entrant: filters and samplers call them from several
/// threads at once. Parameters are resolved by name once per value of
/// `theta` through [`StateSpaceModel::prepare`].
pub trait StateSpaceModel: Send + Sync {
    /// Parameters resolved into whatever form the callbacks need.
    type Prepared: Send + Sync;

    fn model_id(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn param_spec(&self) -> &ParamSpec;
    fn prepare(&self, theta: &ParamVector) -> Result<Self::Prepared>;

    fn init_sample(&self, p: &Self::Prepared, rng: &mut RngStream, out: &mut [f64]);
    fn init_logpdf(&self, p: &Self::Prepared, x: &[f64]) -> f64;
    fn trans_sample(&self, p: &Self::Prepared, prev: &[f64], t: usize, rng: &mut RngStream, out: &mut [f64]);
    fn trans_logpdf(&self, p: &Self::Prepared, x: &[f64], prev: &[f64], t: usize) -> f64;
    fn obs_sample(&self, p: &Self::Prepared, x: &[f64], t: usize, rng: &mut RngStream, out: &mut [f64]);
    /// Missing entries of `y` contribute nothing.
    fn obs_logpdf(&self, p: &Self::Prepared, y: &[Obs], x: &[f64], t: usize) -> f64;

    /// Number of time points the model is defined for, when bounded (e.g. by
    /// the extent of its covariates).
    fn horizon(&self) -> Option<usize> {
        None
    }

    /// Covariates to attach to simulated datasets.
    fn covariates(&self) -> Covariates {
        Covariates::new()
    }

    /// Draw the initial state from a proposal that may look at `y`; returns
    /// `ln p(x) - ln q(x)`. The default proposes from the prior.
    fn guided_init_sample(&self, p: &Self::Prepared, _y: &[Obs], rng: &mut RngStream, out: &mut [f64]) -> f64 {
        self.init_sample(p, rng, out);
        0.0
    }

    /// Transition counterpart of [`StateSpaceModel::guided_init_sample`].
    #[allow(clippy::too_many_arguments)]
    fn guided_trans_sample(
        &self,
        p: &Self::Prepared,
        prev: &[f64],
        _y: &[Obs],
        t: usize,
        rng: &mut RngStream,
        out: &mut [f64],
    ) -> f64 {
        self.trans_sample(p, prev, t, rng, out);
        0.0
    }

    /// Initial-state proposal of the auxiliary filter; returns `ln p(x) - ln q(x)`.
    fn adapted_init_sample(&self, p: &Self::Prepared, y: &[Obs], rng: &mut RngStream, out: &mut [f64]) -> f64 {
        self.guided_init_sample(p, y, rng, out)
    }

    /// Transition proposal of the auxiliary filter, paired with
    /// [`StateSpaceModel::lookahead_logpdf`]. Defaults to the guided proposal.
    #[allow(clippy::too_many_arguments)]
    fn adapted_trans_sample(
        &self,
        p: &Self::Prepared,
        prev: &[f64],
        y: &[Obs],
        t: usize,
        rng: &mut RngStream,
        out: &mut [f64],
    ) -> f64 {
        self.guided_trans_sample(p, prev, y, t, rng, out)
    }

    /// First-stage score of `y` given the previous state for the auxiliary
    /// filter. The constant default turns the auxiliary filter into the
    /// bootstrap filter.
    fn lookahead_logpdf(&self, _p: &Self::Prepared, _y: &[Obs], _prev: &[f64], _t: usize) -> f64 {
        0.0
    }

    /// Whether the state coordinates are conditionally independent given the
    /// previous state, with per-coordinate observation terms. When true the
    /// `coord_*` methods must be overridden with the per-coordinate factors.
    fn factorized(&self) -> bool {
        false
    }

    /// A coordinate whose value is determined by the observations.
    fn fixed_coordinate(&self, _y: &[Obs], _t: usize, _k: usize) -> Option<f64> {
        None
    }

    fn coord_init_sample(&self, p: &Self::Prepared, k: usize, rng: &mut RngStream) -> f64 {
        let mut buf = vec![0.0; self.state_dim()];
        self.init_sample(p, rng, &mut buf);
        buf[k]
    }

    fn coord_trans_sample(&self, p: &Self::Prepared, prev: &[f64], t: usize, k: usize, rng: &mut RngStream) -> f64 {
        let mut buf = vec![0.0; self.state_dim()];
        self.trans_sample(p, prev, t, rng, &mut buf);
        buf[k]
    }

    fn coord_init_logpdf(&self, p: &Self::Prepared, x: &[f64], _k: usize) -> f64 {
        self.init_logpdf(p, x)
    }

    fn coord_trans_logpdf(&self, p: &Self::Prepared, x: &[f64], prev: &[f64], t: usize, _k: usize) -> f64 {
        self.trans_logpdf(p, x, prev, t)
    }

    fn coord_obs_logpdf(&self, p: &Self::Prepared, y: &[Obs], x: &[f64], t: usize, _k: usize) -> f64 {
        self.obs_logpdf(p, y, x, t)
    }
}

/// Forward-simulate `len` time points of states and complete observations.
pub fn simulate_dataset<M: StateSpaceModel>(
    model: &M,
    theta: &ParamVector,
    len: usize,
    seed: u64,
) -> Result<(LatentTrajectory, Dataset)> {
    if len == 0 {
        return Err(Error::InvalidConfig("simulation length must be at least 1".into()));
    }
    check_horizon(model, len)?;
    let p = model.prepare(theta)?;
    let (sd, od) = (model.state_dim(), model.obs_dim());
    let root = RngStream::new(seed);
    let mut state_rng = root.substream(0);
    let mut obs_rng = root.substream(1);
    let mut x = vec![0.0; len * sd];
    let mut y = vec![0.0; len * od];
    model.init_sample(&p, &mut state_rng, &mut x[..sd]);
    for t in 1..len {
        let (done, rest) = x.split_at_mut(t * sd);
        model.trans_sample(&p, &done[(t - 1) * sd..], t, &mut state_rng, &mut rest[..sd]);
    }
    for t in 0..len {
        model.obs_sample(&p, &x[t * sd..(t + 1) * sd], t, &mut obs_rng, &mut y[t * od..(t + 1) * od]);
    }
    let data = Dataset::new(od, y.into_iter().map(Some).collect())?.with_covariates(model.covariates());
    Ok((LatentTrajectory::new(sd, x)?, data))
}

/// Fail when `len` time points exceed what the model is defined for.
pub fn check_horizon<M: StateSpaceModel>(model: &M, len: usize) -> Result<()> {
    match model.horizon() {
        Some(h) if len > h => Err(Error::ShapeMismatch(format!(
            "{len} time points requested, model is defined for {h}"
        ))),
        _ => Ok(()),
    }
}

/// `ln p(x_1 | theta) + sum ln p(x_t | x_{t-1}, theta) + sum ln p(y_t | x_t, theta)`.
pub fn joint_log_density<M: StateSpaceModel>(
    model: &M,
    x: &LatentTrajectory,
    y: &Dataset,
    theta: &ParamVector,
) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: y.len(),
            got: x.len(),
        });
    }
    check_horizon(model, y.len())?;
    let p = model.prepare(theta)?;
    Ok(latent_log_prior(model, &p, x) + obs_log_likelihood(model, &p, x, y, 0, y.len()))
}

/// State-process part of the joint density.
pub fn latent_log_prior<M: StateSpaceModel>(model: &M, p: &M::Prepared, x: &LatentTrajectory) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let mut total = model.init_logpdf(p, x.row(0));
    for t in 1..x.len() {
        total += model.trans_logpdf(p, x.row(t), x.row(t - 1), t);
    }
    total
}

/// `sum_{t in start..end} ln p(y_t | x_t, theta)`.
pub fn obs_log_likelihood<M: StateSpaceModel>(
    model: &M,
    p: &M::Prepared,
    x: &LatentTrajectory,
    y: &Dataset,
    start: usize,
    end: usize,
) -> f64 {
    (start..end).map(|t| model.obs_logpdf(p, y.row(t), x.row(t), t)).sum()
}
