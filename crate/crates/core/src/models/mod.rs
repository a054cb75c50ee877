//! Built-in models.

pub mod lgssm;
pub mod occupancy;

pub use lgssm::{make_lgssm, Lgssm, LgssmConfig, LgssmParams};
pub use occupancy::{
    make_occupancy, read_occupancy_csv, simulate_covariates, write_occupancy_csv, Occupancy,
    OccupancyConfig, OccupancyCovariates,
};
