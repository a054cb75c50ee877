//! Bootstrap and auxiliary particle filters.
//!
//! Weights are carried as normalized log-weights. At each step the filter
//! optionally resamples (systematic, on the first-stage weights) when their
//! effective sample size drops below `resample_threshold * M`, then
//! propagates every particle through the model's (possibly guided)
//! transition and reweights by the observation density. The per-step
//! likelihood increment is the log of the weighted particle average, so the
//! exponentiated total is an unbiased likelihood estimate.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::ssm::{check_horizon, StateSpaceModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Bootstrap,
    Auxiliary,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterConfig {
    pub kind: FilterKind,
    pub particles: usize,
    pub resample_threshold: f64,
}

impl FilterConfig {
    pub fn new(kind: FilterKind, particles: usize) -> Self {
        Self {
            kind,
            particles,
            resample_threshold: 0.5,
        }
    }
}

/// `M` particles at one time index.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleEnsemble {
    pub state_dim: usize,
    /// Row-major `M x state_dim`.
    pub states: Vec<f64>,
    /// Normalized log-weights.
    pub log_weights: Vec<f64>,
    /// Index of each particle's parent in the previous ensemble.
    pub ancestors: Vec<usize>,
    pub time: usize,
}

impl ParticleEnsemble {
    /// `particles` identical copies of `state` with equal weights.
    pub fn replicated(state: &[f64], particles: usize, time: usize) -> Self {
        let w = -(particles as f64).ln();
        Self {
            state_dim: state.len(),
            states: state.repeat(particles),
            log_weights: vec![w; particles],
            ancestors: (0..particles).collect(),
            time,
        }
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.states[i * self.state_dim..(i + 1) * self.state_dim]
    }
}

/// `ln sum exp(v)`; `-inf` for empty or all `-inf` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    if max == f64::INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Subtract `ln sum exp(lw)` in place and return it.
fn normalize(lw: &mut [f64]) -> f64 {
    let total = log_sum_exp(lw);
    if total.is_finite() {
        lw.iter_mut().for_each(|w| *w -= total);
    }
    total
}

/// `(sum w)^2 / sum w^2` on max-stabilized weights.
pub fn ess(log_weights: &[f64]) -> Result<f64> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return Err(Error::AllZeroWeights);
    }
    let (mut s1, mut s2) = (0.0, 0.0);
    for &lw in log_weights {
        let w = (lw - max).exp();
        s1 += w;
        s2 += w * w;
    }
    Ok(s1 * s1 / s2)
}

/// Systematic resampling with a single uniform `u` in `[0, 1)`.
///
/// Returns `M` ancestor indices in nondecreasing order; every offspring count
/// `N_i` satisfies `|N_i - M w_i| < 1`.
pub fn systematic_resample(weights: &[f64], u: f64) -> Result<Vec<usize>> {
    let m = weights.len();
    let total: f64 = weights.iter().sum();
    if m == 0 || (total - 1.0).abs() > 1e-9 || weights.iter().any(|w| *w < 0.0 || w.is_nan()) {
        return Err(Error::UnnormalizedWeights(total));
    }
    if !(0.0..1.0).contains(&u) {
        return Err(Error::InvalidConfig(format!("resampling offset {u} outside [0, 1)")));
    }
    let mut out = Vec::with_capacity(m);
    let mut cum = 0.0;
    let mut i = 0;
    // positions (k + u) / M compared against scaled cumulative weights M * sum w
    for k in 0..m {
        let pos = k as f64 + u;
        while i < m - 1 && cum + weights[i] * m as f64 / total <= pos {
            cum += weights[i] * m as f64 / total;
            i += 1;
        }
        out.push(i);
    }
    Ok(out)
}

fn normalized_linear(log_weights: &[f64]) -> Vec<f64> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = log_weights.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Where a filter run begins.
#[derive(Clone, Debug)]
pub enum FilterStart {
    /// Draw the first state from the initial distribution at time index 0.
    Prior,
    /// Continue from an ensemble at time index `ensemble.time`; the first
    /// processed time index is `ensemble.time + 1`.
    Ensemble(ParticleEnsemble),
}

#[derive(Clone, Debug)]
pub struct FilterResult {
    /// Sum of the per-step log likelihood increments.
    pub loglik: f64,
    pub increments: Vec<f64>,
    /// First time index processed by this run.
    pub first_time: usize,
    pub final_ensemble: ParticleEnsemble,
    /// Set when every particle had zero weight at this time index.
    pub collapsed_at: Option<usize>,
    history: Vec<ParticleEnsemble>,
    /// Per-step ESS of the weights after reweighting.
    pub ess_trace: Vec<f64>,
    pub resampled: Vec<bool>,
}

impl FilterResult {
    pub fn steps(&self) -> usize {
        self.history.len()
    }

    /// Path of final particle `i` through the ancestor links, row-major
    /// `steps x state_dim`.
    pub fn trajectory(&self, i: usize) -> Vec<f64> {
        let steps = self.history.len();
        if steps == 0 {
            return Vec::new();
        }
        let d = self.final_ensemble.state_dim;
        let mut out = vec![0.0; steps * d];
        let mut idx = i;
        for s in (0..steps).rev() {
            let e = &self.history[s];
            out[s * d..(s + 1) * d].copy_from_slice(e.particle(idx));
            idx = e.ancestors[idx];
        }
        out
    }

    /// All ancestry-traced paths, `M x steps x state_dim`.
    pub fn trajectories(&self) -> Vec<Vec<f64>> {
        (0..self.final_ensemble.len()).map(|i| self.trajectory(i)).collect()
    }

    /// Ensemble recorded at step `s` (time index `first_time + s`).
    pub fn ensemble(&self, s: usize) -> &ParticleEnsemble {
        &self.history[s]
    }

    /// Draw one final particle index proportionally to the final weights.
    pub fn sample_index(&self, rng: &mut RngStream) -> usize {
        let w = &self.final_ensemble.log_weights;
        if w.iter().all(|v| *v == f64::NEG_INFINITY) {
            return (rng.uniform() * w.len() as f64) as usize % w.len();
        }
        let lin = normalized_linear(w);
        let u = rng.uniform();
        let mut cum = 0.0;
        for (i, p) in lin.iter().enumerate() {
            cum += p;
            if u < cum {
                return i;
            }
        }
        lin.iter().rposition(|p| *p > 0.0).unwrap_or(lin.len() - 1)
    }
}

/// Run a filter over time indices `first..end` of `data`.
///
/// A collapse (all weights zero) stops the run; the result then has
/// `loglik = -inf` and `collapsed_at` set. Use [`bootstrap_filter`] or
/// [`auxiliary_filter`] for the error-returning entry points.
pub fn run_filter<M: StateSpaceModel>(
    model: &M,
    prepared: &M::Prepared,
    data: &Dataset,
    start: FilterStart,
    end: usize,
    config: &FilterConfig,
    rng: &mut RngStream,
) -> Result<FilterResult> {
    let m = config.particles;
    if m == 0 {
        return Err(Error::InvalidConfig("particle count must be at least 1".into()));
    }
    if end > data.len() {
        return Err(Error::LengthMismatch {
            expected: end,
            got: data.len(),
        });
    }
    check_horizon(model, end)?;
    let d = model.state_dim();
    let lookahead = config.kind == FilterKind::Auxiliary;
    let mut history = Vec::new();
    let mut increments = Vec::new();
    let mut ess_trace = Vec::new();
    let mut resampled = Vec::new();

    let (mut current, first) = match start {
        FilterStart::Prior => {
            if end == 0 {
                return Err(Error::InvalidConfig("filter from the prior needs data".into()));
            }
            let y = data.row(0);
            let mut states = vec![0.0; m * d];
            let mut lw = vec![0.0; m];
            for i in 0..m {
                let x = &mut states[i * d..(i + 1) * d];
                let corr = if lookahead {
                    model.adapted_init_sample(prepared, y, rng, x)
                } else {
                    model.guided_init_sample(prepared, y, rng, x)
                };
                lw[i] = corr + model.obs_logpdf(prepared, y, x, 0);
            }
            let total = normalize(&mut lw);
            let inc = total - (m as f64).ln();
            let e = ParticleEnsemble {
                state_dim: d,
                states,
                log_weights: lw,
                ancestors: (0..m).collect(),
                time: 0,
            };
            if inc == f64::NEG_INFINITY || inc.is_nan() {
                return Ok(collapsed(e, history, increments, 0, ess_trace, resampled, 0));
            }
            increments.push(inc);
            ess_trace.push(ess(&e.log_weights)?);
            resampled.push(false);
            history.push(e.clone());
            (e, 1)
        }
        FilterStart::Ensemble(e) => {
            if e.len() != m || e.state_dim != d {
                return Err(Error::ShapeMismatch(format!(
                    "starting ensemble has {} particles of width {}, expected {m} x {d}",
                    e.len(),
                    e.state_dim
                )));
            }
            let t = e.time + 1;
            let mut e = e;
            normalize(&mut e.log_weights);
            (e, t)
        }
    };
    let first_time = if history.is_empty() { first } else { 0 };

    let mut lg = vec![0.0; m];
    let mut lv = vec![0.0; m];
    for t in first..end {
        let y = data.row(t);
        for i in 0..m {
            lg[i] = if lookahead {
                model.lookahead_logpdf(prepared, y, current.particle(i), t)
            } else {
                0.0
            };
            lv[i] = current.log_weights[i] + lg[i];
        }
        let first_stage = log_sum_exp(&lv);
        if first_stage == f64::NEG_INFINITY || first_stage.is_nan() {
            return Ok(collapsed(current, history, increments, t, ess_trace, resampled, first_time));
        }
        let do_resample = ess(&lv)? < config.resample_threshold * m as f64;
        let ancestors = if do_resample {
            systematic_resample(&normalized_linear(&lv), rng.uniform())?
        } else {
            (0..m).collect()
        };
        let mut states = vec![0.0; m * d];
        let mut lw = vec![0.0; m];
        for (k, &a) in ancestors.iter().enumerate() {
            let prev = current.particle(a);
            let x = &mut states[k * d..(k + 1) * d];
            let corr = if lookahead {
                model.adapted_trans_sample(prepared, prev, y, t, rng, x)
            } else {
                model.guided_trans_sample(prepared, prev, y, t, rng, x)
            };
            let incr = corr + model.obs_logpdf(prepared, y, x, t);
            lw[k] = if do_resample {
                incr - lg[a]
            } else {
                current.log_weights[a] + incr
            };
        }
        let total = log_sum_exp(&lw);
        let inc = if do_resample {
            first_stage + total - (m as f64).ln()
        } else {
            total
        };
        normalize(&mut lw);
        let e = ParticleEnsemble {
            state_dim: d,
            states,
            log_weights: lw,
            ancestors,
            time: t,
        };
        if inc == f64::NEG_INFINITY || inc.is_nan() {
            return Ok(collapsed(e, history, increments, t, ess_trace, resampled, first_time));
        }
        increments.push(inc);
        ess_trace.push(ess(&e.log_weights)?);
        resampled.push(do_resample);
        history.push(e.clone());
        current = e;
    }
    Ok(FilterResult {
        loglik: increments.iter().sum(),
        increments,
        first_time,
        final_ensemble: current,
        collapsed_at: None,
        history,
        ess_trace,
        resampled,
    })
}

fn collapsed(
    e: ParticleEnsemble,
    history: Vec<ParticleEnsemble>,
    increments: Vec<f64>,
    t: usize,
    ess_trace: Vec<f64>,
    resampled: Vec<bool>,
    first_time: usize,
) -> FilterResult {
    FilterResult {
        loglik: f64::NEG_INFINITY,
        increments,
        first_time,
        final_ensemble: e,
        collapsed_at: Some(t),
        history,
        ess_trace,
        resampled,
    }
}

fn run_from_prior<M: StateSpaceModel>(
    model: &M,
    theta: &crate::params::ParamVector,
    data: &Dataset,
    config: FilterConfig,
    seed: u64,
) -> Result<FilterResult> {
    let p = model.prepare(theta)?;
    let mut rng = RngStream::new(seed);
    let res = run_filter(model, &p, data, FilterStart::Prior, data.len(), &config, &mut rng)?;
    match res.collapsed_at {
        Some(t) => Err(Error::ParticleCollapse { t }),
        None => Ok(res),
    }
}

pub fn bootstrap_filter<M: StateSpaceModel>(
    model: &M,
    theta: &crate::params::ParamVector,
    data: &Dataset,
    particles: usize,
    seed: u64,
    resample_threshold: f64,
) -> Result<FilterResult> {
    let config = FilterConfig {
        kind: FilterKind::Bootstrap,
        particles,
        resample_threshold,
    };
    run_from_prior(model, theta, data, config, seed)
}

pub fn auxiliary_filter<M: StateSpaceModel>(
    model: &M,
    theta: &crate::params::ParamVector,
    data: &Dataset,
    particles: usize,
    seed: u64,
    resample_threshold: f64,
) -> Result<FilterResult> {
    let config = FilterConfig {
        kind: FilterKind::Auxiliary,
        particles,
        resample_threshold,
    };
    run_from_prior(model, theta, data, config, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ess_closed_forms() {
        assert_eq!(ess(&[0.3; 50]).unwrap(), 50.0);
        let one = [f64::NEG_INFINITY, 2.0, f64::NEG_INFINITY];
        assert_eq!(ess(&one).unwrap(), 1.0);
        let w: Vec<f64> = [1.0f64, 2.0, 3.0, 4.0].iter().map(|v| v.ln()).collect();
        assert!((ess(&w).unwrap() - 100.0 / 30.0).abs() < 1e-12);
        assert!(matches!(ess(&[f64::NEG_INFINITY; 3]), Err(Error::AllZeroWeights)));
    }

    #[test]
    fn systematic_equal_weights_is_identity() {
        for u in [0.0, 0.3, 0.999] {
            let idx = systematic_resample(&[0.2; 5], u).unwrap();
            assert_eq!(idx, vec![0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn systematic_point_mass() {
        let mut w = vec![0.0; 6];
        w[0] = 1.0;
        assert_eq!(systematic_resample(&w, 0.7).unwrap(), vec![0; 6]);
        let mut w = vec![0.0; 4];
        w[3] = 1.0;
        assert_eq!(systematic_resample(&w, 0.0).unwrap(), vec![3; 4]);
    }

    #[test]
    fn unnormalized_weights_rejected() {
        assert!(matches!(
            systematic_resample(&[0.5, 0.6], 0.1),
            Err(Error::UnnormalizedWeights(_))
        ));
    }

    #[test]
    fn offspring_deviation_below_one_for_random_weights() {
        let mut rng = RngStream::new(77);
        for _ in 0..20 {
            let m = 1000;
            let raw: Vec<f64> = (0..m).map(|_| rng.uniform().powi(3)).collect();
            let s: f64 = raw.iter().sum();
            let w: Vec<f64> = raw.iter().map(|v| v / s).collect();
            let idx = systematic_resample(&w, rng.uniform()).unwrap();
            let mut counts = vec![0usize; m];
            idx.iter().for_each(|&i| counts[i] += 1);
            for i in 0..m {
                assert!((counts[i] as f64 - m as f64 * w[i]).abs() < 1.0);
            }
        }
    }

    #[test]
    fn log_sum_exp_handles_infinities() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert!((log_sum_exp(&[0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
        assert!((log_sum_exp(&[-1000.0, -1000.0]) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}
