//! Exact inference for the linear Gaussian model: Kalman prediction-error
//! log-likelihood, Rauch-Tung-Striebel smoothing moments and a grid
//! posterior over `(a, c)`.

use crate::dataset::Dataset;
use crate::distributions::{normal_logpdf, DistSpec};
use crate::error::{Error, Result};

/// Oracle for the unit-variance linear Gaussian model.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LgssmOracle {
    /// First observation loads the state with 1 instead of `c`.
    pub unit_first_loading: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KalmanOutput {
    pub loglik: f64,
    pub pred_means: Vec<f64>,
    pub pred_vars: Vec<f64>,
    pub filt_means: Vec<f64>,
    pub filt_vars: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Smoothed {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

fn observations(y: &Dataset) -> Result<Vec<f64>> {
    y.univariate_values().ok_or(Error::NonUnivariate)
}

impl LgssmOracle {
    fn loading(&self, c: f64, t: usize) -> f64 {
        if t == 0 && self.unit_first_loading {
            1.0
        } else {
            c
        }
    }

    pub fn filter(&self, a: f64, c: f64, y: &Dataset) -> Result<KalmanOutput> {
        let ys = observations(y)?;
        Ok(self.filter_values(a, c, &ys))
    }

    pub fn filter_values(&self, a: f64, c: f64, ys: &[f64]) -> KalmanOutput {
        let n = ys.len();
        let mut out = KalmanOutput {
            loglik: 0.0,
            pred_means: Vec::with_capacity(n),
            pred_vars: Vec::with_capacity(n),
            filt_means: Vec::with_capacity(n),
            filt_vars: Vec::with_capacity(n),
        };
        let (mut m, mut p) = (0.0, 0.0);
        for (t, &yt) in ys.iter().enumerate() {
            let (mp, pp) = if t == 0 { (a, 1.0) } else { (a * m, a * a * p + 1.0) };
            let h = self.loading(c, t);
            let s = h * h * pp + 1.0;
            let v = yt - h * mp;
            out.loglik += normal_logpdf(v, 0.0, s.sqrt());
            let k = pp * h / s;
            m = mp + k * v;
            p = pp * (1.0 - k * h);
            out.pred_means.push(mp);
            out.pred_vars.push(pp);
            out.filt_means.push(m);
            out.filt_vars.push(p);
        }
        out
    }

    pub fn loglik(&self, a: f64, c: f64, y: &Dataset) -> Result<f64> {
        Ok(self.filter(a, c, y)?.loglik)
    }

    pub fn smoother(&self, a: f64, c: f64, y: &Dataset) -> Result<Smoothed> {
        let ys = observations(y)?;
        Ok(self.smoother_values(a, c, &ys))
    }

    pub fn smoother_values(&self, a: f64, c: f64, ys: &[f64]) -> Smoothed {
        let f = self.filter_values(a, c, ys);
        let n = ys.len();
        let mut means = f.filt_means.clone();
        let mut variances = f.filt_vars.clone();
        for t in (0..n.saturating_sub(1)).rev() {
            let gain = f.filt_vars[t] * a / f.pred_vars[t + 1];
            means[t] = f.filt_means[t] + gain * (means[t + 1] - f.pred_means[t + 1]);
            variances[t] = f.filt_vars[t] + gain * gain * (variances[t + 1] - f.pred_vars[t + 1]);
        }
        Smoothed { means, variances }
    }

    pub fn grid_posterior(
        &self,
        y: &Dataset,
        a_grid: &[f64],
        c_grid: &[f64],
        prior: GridPrior,
    ) -> Result<GridPosterior> {
        let ys = observations(y)?;
        let mut logp = Vec::with_capacity(a_grid.len() * c_grid.len());
        for &a in a_grid {
            for &c in c_grid {
                let lp = match prior {
                    GridPrior::Flat => 0.0,
                    GridPrior::Densities(pa, pc) => pa.log_density(a)? + pc.log_density(c)?,
                };
                logp.push(lp + self.filter_values(a, c, &ys).loglik);
            }
        }
        let max = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = logp.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        Ok(GridPosterior {
            a_grid: a_grid.to_vec(),
            c_grid: c_grid.to_vec(),
            probs,
            oracle: *self,
            observations: ys,
        })
    }
}

pub fn kalman_loglik(a: f64, c: f64, y: &Dataset) -> Result<f64> {
    LgssmOracle::default().loglik(a, c, y)
}

pub fn kalman_smoother(a: f64, c: f64, y: &Dataset) -> Result<Smoothed> {
    LgssmOracle::default().smoother(a, c, y)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GridPrior {
    Flat,
    Densities(DistSpec, DistSpec),
}

/// Normalized posterior table over `a_grid x c_grid` (row-major in `a`).
#[derive(Clone, Debug)]
pub struct GridPosterior {
    pub a_grid: Vec<f64>,
    pub c_grid: Vec<f64>,
    pub probs: Vec<f64>,
    oracle: LgssmOracle,
    observations: Vec<f64>,
}

impl GridPosterior {
    pub fn prob(&self, ia: usize, ic: usize) -> f64 {
        self.probs[ia * self.c_grid.len() + ic]
    }

    fn expect(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        let nc = self.c_grid.len();
        self.probs
            .iter()
            .enumerate()
            .map(|(k, p)| p * f(self.a_grid[k / nc], self.c_grid[k % nc]))
            .sum()
    }

    pub fn mean_a(&self) -> f64 {
        self.expect(|a, _| a)
    }

    pub fn mean_c(&self) -> f64 {
        self.expect(|_, c| c)
    }

    pub fn sd_a(&self) -> f64 {
        let m = self.mean_a();
        self.expect(|a, _| (a - m) * (a - m)).sqrt()
    }

    pub fn sd_c(&self) -> f64 {
        let m = self.mean_c();
        self.expect(|_, c| (c - m) * (c - m)).sqrt()
    }

    /// `E[x_t | y]` with the parameters integrated over the grid.
    pub fn latent_means(&self) -> Vec<f64> {
        let n = self.observations.len();
        let nc = self.c_grid.len();
        let mut out = vec![0.0; n];
        for (k, &p) in self.probs.iter().enumerate() {
            if p < 1e-300 {
                continue;
            }
            let s = self
                .oracle
                .smoother_values(self.a_grid[k / nc], self.c_grid[k % nc], &self.observations);
            for (o, m) in out.iter_mut().zip(&s.means) {
                *o += p * m;
            }
        }
        out
    }
}

/// `n` evenly spaced points covering `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}
