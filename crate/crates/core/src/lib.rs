//! State-space models, particle filters, MCMC, and sequential posterior
//! updating from a stored archive of reduced-data draws.

pub mod dataset;
pub mod diagnostics;
pub mod distributions;
pub mod error;
pub mod mcmc;
pub mod models;
pub mod oracle;
pub mod params;
pub mod rng;
pub mod smc;
pub mod ssm;
pub mod updater;

pub use dataset::{Covariates, Dataset, LatentTrajectory, Obs};
pub use distributions::DistSpec;
pub use error::{Error, Result};
pub use params::{Block, ParamDef, ParamSpec, ParamVector, Prior, Transform};
pub use rng::RngStream;
pub use ssm::StateSpaceModel;
