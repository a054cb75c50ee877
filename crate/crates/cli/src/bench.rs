//! Desk-scale replication of the two simulation studies.

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, ValueEnum};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use ssmup::dataset::fmt_f64;
use ssmup::diagnostics::{
    correlation, mean, median, posterior_realised_occupancy, realised_occupancy_path, write_report_csv, ReportRow,
};
use ssmup::mcmc::{run_mcmc, run_pmmh, McmcConfig};
use ssmup::models::{make_lgssm, make_occupancy, simulate_covariates, LgssmConfig, OccupancyConfig};
use ssmup::smc::{FilterConfig, FilterKind};
use ssmup::ssm::simulate_dataset;
use ssmup::updater::{update_run, PosteriorArchive, UpdateConfig};

use crate::error::{CliError, CliResult};
use crate::update::filter_label;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Scenario {
    Sim1,
    Sim2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Scale {
    Desk,
}

#[derive(Args, Clone, Debug)]
pub struct BenchArgs {
    #[arg(long, value_enum)]
    pub scenario: Scenario,
    #[arg(long, value_enum, default_value = "desk")]
    pub scale: Scale,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Override the number of replicates.
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Override the MCMC iterations per chain (burn-in is a third).
    #[arg(long)]
    pub iters: Option<usize>,
    /// Directory for metrics.csv and timing.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Settings shared by both scenarios.
#[derive(Clone, Debug)]
pub struct BenchSettings {
    pub seed: u64,
    pub replicates: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
}

/// One timed update.
#[derive(Clone, Debug, PartialEq)]
pub struct TimingRow {
    pub replicate: usize,
    pub t: usize,
    pub filter: FilterKind,
    pub particles: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default)]
pub struct BenchOutput {
    /// Per-replicate metrics followed by medians over replicates.
    pub metrics: Vec<ReportRow>,
    pub timing: Vec<TimingRow>,
}

impl BenchOutput {
    pub fn value(&self, metric: &str, model: &str, replicate: &str) -> Option<f64> {
        self.metrics
            .iter()
            .find(|r| r.metric == metric && r.model == model && r.replicate == replicate)
            .and_then(|r| r.value)
    }
}

pub const SIM1_LEN: usize = 20;
pub const SIM1_T: [usize; 3] = [5, 10, 19];
pub const SIM2_SITES: usize = 50;
pub const SIM2_VISITS: usize = 3;
pub const SIM2_LEN: usize = 18;
pub const SIM2_T: [usize; 2] = [11, 13];
pub const SIM2_M: [usize; 4] = [10, 25, 50, 100];

pub fn sim1_settings(seed: u64) -> BenchSettings {
    BenchSettings {
        seed,
        replicates: 20,
        iterations: 3000,
        burn_in: 1000,
        thin: 4,
        chains: 3,
    }
}

pub fn sim2_settings(seed: u64) -> BenchSettings {
    BenchSettings {
        seed,
        replicates: 1,
        iterations: 3000,
        burn_in: 1000,
        thin: 10,
        chains: 3,
    }
}

/// Proposal for the LGSSM particle sampler: wide in `c` so chains cross
/// between the two sign modes.
pub fn lgssm_pmmh_config(s: &BenchSettings, seed: u64) -> McmcConfig {
    McmcConfig {
        iterations: s.iterations,
        burn_in: s.burn_in,
        thin: s.thin,
        chains: s.chains,
        delta_main: 1.0,
        cov_main: Some(DMatrix::from_diagonal(&DVector::from_vec(vec![0.0625, 2.25]))),
        seed,
        ..Default::default()
    }
}

fn pooled_mean(a: &PosteriorArchive, k: usize) -> f64 {
    mean(&a.theta.iter().map(|r| r[k]).collect::<Vec<_>>())
}

/// LGSSM: full fit on `1..20` against reduced fits at `t = 5, 10, 19`
/// updated with both filters.
pub fn sim1(s: &BenchSettings) -> CliResult<BenchOutput> {
    let cfg = LgssmConfig::default();
    let model = make_lgssm(&cfg);
    let truth = cfg.truth();
    let per_rep: Vec<BenchOutput> = (0..s.replicates)
        .into_par_iter()
        .map(|rep| -> CliResult<BenchOutput> {
            let seed = s.seed + rep as u64;
            let (_, data) = simulate_dataset(&model, &truth, SIM1_LEN, seed)?;
            let filter = FilterConfig::new(FilterKind::Auxiliary, 100);
            let mut out = BenchOutput::default();
            let rep_name = rep.to_string();
            let record = |label: &str, a: &PosteriorArchive, out: &mut BenchOutput| {
                for (k, name) in a.param_names.iter().enumerate() {
                    let bias = pooled_mean(a, k) - truth.values()[k];
                    out.metrics.push(ReportRow::new(&format!("bias_{name}"), label, &rep_name, Some(bias)));
                }
            };
            let full = run_pmmh(&model, &data, &lgssm_pmmh_config(s, seed), &filter)?;
            record("full", &PosteriorArchive::from_chains(&full, "lgssm", &data, None)?, &mut out);
            for t in SIM1_T {
                let reduced = data.truncated(t);
                let chains = run_pmmh(&model, &reduced, &lgssm_pmmh_config(s, seed), &filter)?;
                let archive = PosteriorArchive::from_chains(&chains, "lgssm", &reduced, None)?;
                record(&format!("reduced_t{t}"), &archive, &mut out);
                for kind in [FilterKind::Bootstrap, FilterKind::Auxiliary] {
                    let config = UpdateConfig {
                        particles: 100,
                        filter: kind,
                        seed,
                        ..Default::default()
                    };
                    let started = Instant::now();
                    let up = update_run(&archive, &data.slice(t, SIM1_LEN), &model, &config)?;
                    out.timing.push(TimingRow {
                        replicate: rep,
                        t,
                        filter: kind,
                        particles: 100,
                        seconds: started.elapsed().as_secs_f64(),
                    });
                    let updated = up.to_archive(&archive, &data, None)?;
                    record(&format!("{}_t{t}", filter_label(kind)), &updated, &mut out);
                }
            }
            Ok(out)
        })
        .collect::<CliResult<_>>()?;
    Ok(combine(per_rep))
}

/// Occupancy: full fit on `1..18`, reduced fits at `t = 11, 13`, updates at
/// every particle count with both filters. Realised occupancy is compared
/// over the years after `t`.
pub fn sim2(s: &BenchSettings) -> CliResult<BenchOutput> {
    let per_rep: Vec<BenchOutput> = (0..s.replicates)
        .into_par_iter()
        .map(|rep| -> CliResult<BenchOutput> {
            let seed = s.seed + rep as u64;
            let cov = simulate_covariates(SIM2_SITES, SIM2_VISITS, SIM2_LEN, seed);
            let model = make_occupancy(&OccupancyConfig::new(cov))?;
            let theta = OccupancyConfig::simulation_parameters(seed);
            let (x, data) = simulate_dataset(&model, &theta, SIM2_LEN, seed)?;
            let truth_psi = realised_occupancy_path(x.values(), SIM2_SITES)?;
            let config = McmcConfig {
                iterations: s.iterations,
                burn_in: s.burn_in,
                thin: s.thin,
                chains: s.chains,
                seed,
                ..Default::default()
            };
            let mut out = BenchOutput::default();
            let rep_name = rep.to_string();
            let full = run_mcmc(&model, &data, &config)?;
            let full = PosteriorArchive::from_chains(&full, "occupancy", &data, None)?;
            let full_psi = posterior_realised_occupancy(&full.latents, SIM2_SITES)?;
            for t in SIM2_T {
                let window = t..SIM2_LEN;
                let push_psi = |label: String, psi: &[f64], out: &mut BenchOutput| {
                    let r = correlation(&psi[window.clone()], &truth_psi[window.clone()]).ok();
                    let bias = mean(&psi[window.clone()]) - mean(&truth_psi[window.clone()]);
                    out.metrics.push(ReportRow::new("psi_corr", &label, &rep_name, r));
                    out.metrics.push(ReportRow::new("psi_bias", &label, &rep_name, Some(100.0 * bias)));
                };
                push_psi(format!("full_t{t}"), &full_psi, &mut out);
                let reduced = data.truncated(t);
                let chains = run_mcmc(&model, &reduced, &config)?;
                let archive = PosteriorArchive::from_chains(&chains, "occupancy", &reduced, None)?;
                for m in SIM2_M {
                    for kind in [FilterKind::Bootstrap, FilterKind::Auxiliary] {
                        let uc = UpdateConfig {
                            particles: m,
                            filter: kind,
                            seed,
                            ..Default::default()
                        };
                        let started = Instant::now();
                        let up = update_run(&archive, &data.slice(t, SIM2_LEN), &model, &uc)?;
                        out.timing.push(TimingRow {
                            replicate: rep,
                            t,
                            filter: kind,
                            particles: m,
                            seconds: started.elapsed().as_secs_f64(),
                        });
                        let updated = up.to_archive(&archive, &data, None)?;
                        let psi = posterior_realised_occupancy(&updated.latents, SIM2_SITES)?;
                        push_psi(format!("{}_t{t}_m{m}", filter_label(kind)), &psi, &mut out);
                    }
                }
            }
            Ok(out)
        })
        .collect::<CliResult<_>>()?;
    Ok(combine(per_rep))
}

fn combine(parts: Vec<BenchOutput>) -> BenchOutput {
    let mut out = BenchOutput::default();
    for p in parts {
        out.metrics.extend(p.metrics);
        out.timing.extend(p.timing);
    }
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in &out.metrics {
        let k = (r.metric.clone(), r.model.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    for (metric, model) in keys {
        let vals: Vec<f64> = out
            .metrics
            .iter()
            .filter(|r| r.metric == metric && r.model == model)
            .filter_map(|r| r.value)
            .collect();
        let abs: Vec<f64> = vals.iter().map(|v| v.abs()).collect();
        out.metrics.push(ReportRow::new(&metric, &model, "median", median(&vals)));
        out.metrics.push(ReportRow::new(&metric, &model, "median_abs", median(&abs)));
    }
    out
}

pub fn cmd_bench(args: &BenchArgs) -> CliResult<()> {
    let mut settings = match args.scenario {
        Scenario::Sim1 => sim1_settings(args.seed),
        Scenario::Sim2 => sim2_settings(args.seed),
    };
    if let Some(r) = args.replicates {
        settings.replicates = r;
    }
    if let Some(i) = args.iters {
        settings.iterations = i;
        settings.burn_in = i / 3;
        settings.thin = settings.thin.min(((i - i / 3) / 50).max(1));
    }
    if settings.replicates == 0 || settings.iterations < 3 {
        return Err(CliError::usage("need at least one replicate and three iterations"));
    }
    let out = match args.scenario {
        Scenario::Sim1 => sim1(&settings)?,
        Scenario::Sim2 => sim2(&settings)?,
    };
    let medians: Vec<ReportRow> = out.metrics.iter().filter(|r| r.replicate == "median").cloned().collect();
    let mut table = Vec::new();
    write_report_csv(&medians, &mut table)?;
    println!("{}", String::from_utf8_lossy(&table));
    let timing = timing_csv(&out.timing);
    println!("{timing}");
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        let mut bytes = Vec::new();
        write_report_csv(&out.metrics, &mut bytes)?;
        fs::write(dir.join("metrics.csv"), bytes)?;
        fs::write(dir.join("timing.csv"), timing)?;
    }
    Ok(())
}

fn timing_csv(rows: &[TimingRow]) -> String {
    let mut s = String::from("replicate,t,filter,particles,seconds\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.replicate,
            r.t,
            filter_label(r.filter),
            r.particles,
            fmt_f64(r.seconds)
        ));
    }
    s
}
