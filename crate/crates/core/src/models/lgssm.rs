//! Linear Gaussian state-space model with unit variances:
//!
//! ```text
//! x_1 ~ N(a, 1)
//! x_t ~ N(a x_{t-1}, 1)
//! y_t ~ N(c x_t, 1)
//! ```
//!
//! with `a, c ~ Normal(0, 10)`. Setting `unit_first_loading` replaces the
//! loading of the first observation by 1, i.e. `y_1 ~ N(x_1, 1)`.

use crate::dataset::Obs;
use crate::distributions::{normal_logpdf, DistSpec};
use crate::error::Result;
use crate::params::{Block, ParamDef, ParamSpec, ParamVector, Prior};
use crate::rng::RngStream;
use crate::ssm::StateSpaceModel;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LgssmConfig {
    /// State autoregression used for simulation.
    pub a: f64,
    /// Observation loading used for simulation.
    pub c: f64,
    pub unit_first_loading: bool,
}

impl Default for LgssmConfig {
    fn default() -> Self {
        Self {
            a: 0.5,
            c: 1.0,
            unit_first_loading: false,
        }
    }
}

impl LgssmConfig {
    pub fn truth(&self) -> ParamVector {
        ParamVector::from_pairs(&[("a", self.a), ("c", self.c)])
    }
}

#[derive(Clone, Debug)]
pub struct Lgssm {
    spec: ParamSpec,
    unit_first_loading: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct LgssmParams {
    pub a: f64,
    pub c: f64,
}

pub fn make_lgssm(config: &LgssmConfig) -> Lgssm {
    let prior = Prior::Fixed(DistSpec::Normal { mean: 0.0, sd: 10.0 });
    let spec = ParamSpec::new(vec![
        ParamDef::new("a", prior.clone(), Block::Main),
        ParamDef::new("c", prior, Block::Main),
    ])
    .expect("static parameter declarations are valid");
    Lgssm {
        spec,
        unit_first_loading: config.unit_first_loading,
    }
}

impl Lgssm {
    pub fn unit_first_loading(&self) -> bool {
        self.unit_first_loading
    }

    /// Replace the parameter declarations, e.g. with a reordered copy.
    pub fn with_param_spec(mut self, spec: ParamSpec) -> Self {
        self.spec = spec;
        self
    }

    fn loading(&self, p: &LgssmParams, t: usize) -> f64 {
        if t == 0 && self.unit_first_loading {
            1.0
        } else {
            p.c
        }
    }
}

impl StateSpaceModel for Lgssm {
    type Prepared = LgssmParams;

    fn model_id(&self) -> &str {
        "lgssm"
    }

    fn state_dim(&self) -> usize {
        1
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn param_spec(&self) -> &ParamSpec {
        &self.spec
    }

    fn prepare(&self, theta: &ParamVector) -> Result<LgssmParams> {
        Ok(LgssmParams {
            a: theta.require("a")?,
            c: theta.require("c")?,
        })
    }

    fn init_sample(&self, p: &LgssmParams, rng: &mut RngStream, out: &mut [f64]) {
        out[0] = p.a + rng.normal();
    }

    fn init_logpdf(&self, p: &LgssmParams, x: &[f64]) -> f64 {
        normal_logpdf(x[0], p.a, 1.0)
    }

    fn trans_sample(&self, p: &LgssmParams, prev: &[f64], _t: usize, rng: &mut RngStream, out: &mut [f64]) {
        out[0] = p.a * prev[0] + rng.normal();
    }

    fn trans_logpdf(&self, p: &LgssmParams, x: &[f64], prev: &[f64], _t: usize) -> f64 {
        normal_logpdf(x[0], p.a * prev[0], 1.0)
    }

    fn obs_sample(&self, p: &LgssmParams, x: &[f64], t: usize, rng: &mut RngStream, out: &mut [f64]) {
        out[0] = self.loading(p, t) * x[0] + rng.normal();
    }

    fn obs_logpdf(&self, p: &LgssmParams, y: &[Obs], x: &[f64], t: usize) -> f64 {
        match y[0] {
            Some(v) => normal_logpdf(v, self.loading(p, t) * x[0], 1.0),
            None => 0.0,
        }
    }

    /// Observation density at the transition mean `a x_{t-1}`.
    fn lookahead_logpdf(&self, p: &LgssmParams, y: &[Obs], prev: &[f64], t: usize) -> f64 {
        match y[0] {
            Some(v) => normal_logpdf(v, self.loading(p, t) * p.a * prev[0], 1.0),
            None => 0.0,
        }
    }
}
