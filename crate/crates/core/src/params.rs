//! Named parameter vectors, priors and the hyperparameter split.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::distributions::DistSpec;
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Proposal block a parameter belongs to. `Hyper` parameters are proposed
/// first, the remaining `Main` block conditionally on them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Main,
    Hyper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prior {
    Fixed(DistSpec),
    /// `Normal(mean, sd)` where `sd` is the current value of another parameter.
    NormalWithSdParam { mean: f64, sd_param: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamDef {
    pub name: String,
    pub prior: Prior,
    pub block: Block,
}

impl ParamDef {
    pub fn new(name: &str, prior: Prior, block: Block) -> Self {
        Self {
            name: name.to_string(),
            prior,
            block,
        }
    }
}

/// Bijection between a parameter's support and the real line.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Transform {
    Identity,
    /// `theta = lower + exp(eta)`
    LogShift { lower: f64 },
    /// `theta = upper - exp(eta)`
    NegLogShift { upper: f64 },
    /// `theta = lower + (upper - lower) * logistic(eta)`
    Logit { lower: f64, upper: f64 },
}

impl Transform {
    fn for_support(lower: f64, upper: f64) -> Self {
        match (lower.is_finite(), upper.is_finite()) {
            (false, false) => Transform::Identity,
            (true, false) => Transform::LogShift { lower },
            (false, true) => Transform::NegLogShift { upper },
            (true, true) => Transform::Logit { lower, upper },
        }
    }

    pub fn to_unconstrained(&self, theta: f64) -> f64 {
        match *self {
            Transform::Identity => theta,
            Transform::LogShift { lower } => (theta - lower).ln(),
            Transform::NegLogShift { upper } => (upper - theta).ln(),
            Transform::Logit { lower, upper } => {
                let u = (theta - lower) / (upper - lower);
                (u / (1.0 - u)).ln()
            }
        }
    }

    pub fn to_constrained(&self, eta: f64) -> f64 {
        match *self {
            Transform::Identity => eta,
            Transform::LogShift { lower } => lower + eta.exp(),
            Transform::NegLogShift { upper } => upper - eta.exp(),
            Transform::Logit { lower, upper } => lower + (upper - lower) * logistic(eta),
        }
    }

    /// `ln |d theta / d eta|`
    pub fn log_jacobian(&self, eta: f64) -> f64 {
        match *self {
            Transform::Identity => 0.0,
            Transform::LogShift { .. } | Transform::NegLogShift { .. } => eta,
            Transform::Logit { lower, upper } => {
                // ln(s (1 - s)) = -softplus(-eta) - softplus(eta)
                (upper - lower).ln() - softplus(-eta) - softplus(eta)
            }
        }
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// A parameter vector whose entries are addressed by name.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    names: Arc<Vec<String>>,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if names.len() != values.len() {
            return Err(Error::LengthMismatch {
                expected: names.len(),
                got: values.len(),
            });
        }
        Ok(Self {
            names: Arc::new(names),
            values,
        })
    }

    pub fn from_pairs(pairs: &[(&str, f64)]) -> Self {
        Self {
            names: Arc::new(pairs.iter().map(|(n, _)| n.to_string()).collect()),
            values: pairs.iter().map(|(_, v)| *v).collect(),
        }
    }

    pub(crate) fn with_names(names: Arc<Vec<String>>, values: Vec<f64>) -> Self {
        debug_assert_eq!(names.len(), values.len());
        Self { names, values }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }

    /// Look up `name`, failing with `ParamMismatch` when absent.
    pub fn require(&self, name: &str) -> Result<f64> {
        self.get(name)
            .ok_or_else(|| Error::ParamMismatch(format!("missing parameter `{name}`")))
    }
}

/// Partition of parameter indices (in `ParamSpec` order) into the two
/// proposal blocks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ThetaSplit {
    pub main: Vec<usize>,
    pub hyper: Vec<usize>,
}

impl ThetaSplit {
    pub fn single_block(n: usize) -> Self {
        Self {
            main: (0..n).collect(),
            hyper: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.main.len() + self.hyper.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered parameter declarations of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    defs: Vec<ParamDef>,
    names: Arc<Vec<String>>,
    index: HashMap<String, usize>,
    transforms: Vec<Transform>,
}

impl ParamSpec {
    pub fn new(defs: Vec<ParamDef>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, d) in defs.iter().enumerate() {
            if index.insert(d.name.clone(), i).is_some() {
                return Err(Error::ParamMismatch(format!("duplicate parameter `{}`", d.name)));
            }
        }
        let mut transforms = Vec::with_capacity(defs.len());
        for d in &defs {
            match &d.prior {
                Prior::Fixed(spec) => {
                    spec.validate()?;
                    if spec.is_discrete() {
                        return Err(Error::InvalidParams(format!(
                            "parameter `{}` has a discrete prior",
                            d.name
                        )));
                    }
                    let (lo, hi) = spec.support();
                    transforms.push(Transform::for_support(lo, hi));
                }
                Prior::NormalWithSdParam { sd_param, .. } => {
                    let Some(&j) = index.get(sd_param) else {
                        return Err(Error::ParamMismatch(format!(
                            "`{}` refers to unknown scale parameter `{sd_param}`",
                            d.name
                        )));
                    };
                    if matches!(defs[j].prior, Prior::NormalWithSdParam { .. }) {
                        return Err(Error::ParamMismatch(format!(
                            "scale parameter `{sd_param}` must have a fixed prior"
                        )));
                    }
                    transforms.push(Transform::Identity);
                }
            }
        }
        let names = Arc::new(defs.iter().map(|d| d.name.clone()).collect());
        Ok(Self {
            defs,
            names,
            index,
            transforms,
        })
    }

    pub fn defs(&self) -> &[ParamDef] {
        &self.defs
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.defs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.defs.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn transforms(&self) -> &[Transform] {
        &self.transforms
    }

    pub fn split(&self) -> ThetaSplit {
        let mut split = ThetaSplit {
            main: Vec::new(),
            hyper: Vec::new(),
        };
        for (i, d) in self.defs.iter().enumerate() {
            match d.block {
                Block::Main => split.main.push(i),
                Block::Hyper => split.hyper.push(i),
            }
        }
        split
    }

    /// Same declarations, listed in `order`.
    pub fn reordered(&self, order: &[&str]) -> Result<Self> {
        if order.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                got: order.len(),
            });
        }
        let defs = order
            .iter()
            .map(|n| {
                self.index_of(n)
                    .map(|i| self.defs[i].clone())
                    .ok_or_else(|| Error::ParamMismatch(format!("unknown parameter `{n}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(defs)
    }

    /// Values of `theta` rearranged into this spec's order.
    pub fn align(&self, theta: &ParamVector) -> Result<ParamVector> {
        if theta.names().len() == self.len()
            && theta.names().iter().zip(self.names.iter()).all(|(a, b)| a == b)
        {
            return Ok(ParamVector::with_names(Arc::clone(&self.names), theta.values.clone()));
        }
        if theta.len() != self.len() {
            return Err(Error::ParamMismatch(format!(
                "expected {} parameters, got {}",
                self.len(),
                theta.len()
            )));
        }
        let values = self
            .names
            .iter()
            .map(|n| theta.require(n))
            .collect::<Result<Vec<_>>>()?;
        Ok(ParamVector::with_names(Arc::clone(&self.names), values))
    }

    pub fn vector(&self, values: Vec<f64>) -> Result<ParamVector> {
        if values.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                got: values.len(),
            });
        }
        Ok(ParamVector::with_names(Arc::clone(&self.names), values))
    }

    fn prior_at(&self, i: usize, values: &[f64]) -> Result<DistSpec> {
        match &self.defs[i].prior {
            Prior::Fixed(spec) => Ok(*spec),
            Prior::NormalWithSdParam { mean, sd_param } => {
                let sd = values[self.index[sd_param]];
                Ok(DistSpec::Normal { mean: *mean, sd })
            }
        }
    }

    /// `ln p(theta)`; parameters are matched by name.
    pub fn log_prior(&self, theta: &ParamVector) -> Result<f64> {
        let aligned = self.align(theta)?;
        Ok(self.log_prior_values(aligned.values()))
    }

    /// `ln p(theta)` for values already in spec order. A hyperparameter that
    /// leaves its support makes the dependent density `-inf`.
    pub fn log_prior_values(&self, values: &[f64]) -> f64 {
        let mut total = 0.0;
        for (i, &v) in values.iter().enumerate() {
            let lp = match self.prior_at(i, values) {
                Ok(spec) => spec.log_density(v).unwrap_or(f64::NEG_INFINITY),
                Err(_) => f64::NEG_INFINITY,
            };
            total += lp;
            if total == f64::NEG_INFINITY {
                return total;
            }
        }
        total
    }

    pub fn sample_prior(&self, rng: &mut RngStream) -> Result<ParamVector> {
        let mut values = vec![f64::NAN; self.len()];
        for (i, d) in self.defs.iter().enumerate() {
            if let Prior::Fixed(spec) = d.prior {
                values[i] = spec.sample(rng)?;
            }
        }
        for i in 0..self.len() {
            if values[i].is_nan() {
                values[i] = self.prior_at(i, &values)?.sample(rng)?;
            }
        }
        self.vector(values)
    }

    /// A deterministic central point of the prior, used to start chains.
    pub fn center(&self) -> ParamVector {
        let mut values = vec![0.0; self.len()];
        for (i, d) in self.defs.iter().enumerate() {
            values[i] = match d.prior {
                Prior::Fixed(DistSpec::Normal { mean, .. }) => mean,
                Prior::Fixed(DistSpec::Uniform { lower, upper }) => 0.5 * (lower + upper),
                Prior::Fixed(DistSpec::HalfNormal { sd }) => sd * (2.0 / std::f64::consts::PI).sqrt(),
                Prior::Fixed(DistSpec::TruncatedNormal { mean, sd, lower, upper }) => {
                    let m = mean.clamp(lower, upper);
                    if m == lower || m == upper {
                        let inward = if upper.is_finite() && m == upper { -1.0 } else { 1.0 };
                        let span = if lower.is_finite() && upper.is_finite() {
                            0.5 * (upper - lower)
                        } else {
                            sd
                        };
                        m + inward * span.min(sd)
                    } else {
                        m
                    }
                }
                Prior::Fixed(_) => 0.0,
                Prior::NormalWithSdParam { mean, .. } => mean,
            };
        }
        ParamVector::with_names(Arc::clone(&self.names), values)
    }

    pub fn to_unconstrained(&self, theta: &ParamVector) -> Result<Vec<f64>> {
        let aligned = self.align(theta)?;
        Ok(aligned
            .values()
            .iter()
            .zip(&self.transforms)
            .map(|(&v, tr)| tr.to_unconstrained(v))
            .collect())
    }

    pub fn from_unconstrained(&self, eta: &[f64]) -> ParamVector {
        let values = eta
            .iter()
            .zip(&self.transforms)
            .map(|(&e, tr)| tr.to_constrained(e))
            .collect();
        ParamVector::with_names(Arc::clone(&self.names), values)
    }

    /// `ln p(theta(eta)) + ln |J(eta)|`, the prior density on the unconstrained scale.
    pub fn log_prior_unconstrained(&self, eta: &[f64]) -> f64 {
        let theta = self.from_unconstrained(eta);
        let jac: f64 = eta
            .iter()
            .zip(&self.transforms)
            .map(|(&e, tr)| tr.log_jacobian(e))
            .sum();
        self.log_prior_values(theta.values()) + jac
    }
}
