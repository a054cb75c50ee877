use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use ssmup::diagnostics::{
    bias_latent, bias_theta, efficiency, ess_chain, mcse, mean, median, occupancy_corr_bias,
    posterior_realised_occupancy, realised_occupancy_path, write_report_csv, write_report_json, ReportRow,
};
use ssmup::updater::PosteriorArchive;

use crate::error::{CliError, CliResult};
use crate::io::{read_json, read_truth, Truth};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Bias,
    Mcse,
    Ess,
    Efficiency,
    Occupancy,
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s.trim() {
            "bias" => Metric::Bias,
            "mcse" => Metric::Mcse,
            "ess" => Metric::Ess,
            "efficiency" => Metric::Efficiency,
            "occupancy" => Metric::Occupancy,
            other => return Err(format!("unknown metric `{other}`")),
        })
    }
}

#[derive(Args, Clone, Debug)]
pub struct ReportArgs {
    /// Archive directories written by `fit` or `update`.
    #[arg(long, num_args = 1.., required = true)]
    pub runs: Vec<PathBuf>,
    /// truth.csv from `simulate`: one shared file or one per run.
    #[arg(long, num_args = 1..)]
    pub truth: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "bias,mcse,ess,efficiency")]
    pub metrics: Vec<Metric>,
    /// First year (1-based) of the realised-occupancy comparison window.
    #[arg(long, default_value_t = 1)]
    pub from_year: usize,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

struct Run {
    label: String,
    replicate: String,
    archive: PosteriorArchive,
    wall_time: Option<f64>,
}

fn load_run(dir: &Path) -> CliResult<Run> {
    let archive = PosteriorArchive::load(dir).map_err(CliError::archive)?;
    let report = dir.join("run_report.json");
    let label = if report.exists() {
        read_json(&report)?["label"].as_str().unwrap_or("run").to_string()
    } else {
        "run".to_string()
    };
    let timing = dir.join("timing.json");
    let wall_time = if timing.exists() {
        read_json(&timing)?["wall_time"].as_f64()
    } else {
        None
    };
    let replicate = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    Ok(Run {
        label,
        replicate,
        archive,
        wall_time,
    })
}

pub fn report_rows(args: &ReportArgs) -> CliResult<Vec<ReportRow>> {
    let runs: Vec<Run> = args.runs.iter().map(|d| load_run(d)).collect::<CliResult<_>>()?;
    let model_id = &runs[0].archive.model_id;
    if runs.iter().any(|r| &r.archive.model_id != model_id) {
        return Err(CliError::usage("runs do not share a model"));
    }
    let needs_truth = args.metrics.iter().any(|m| matches!(m, Metric::Bias | Metric::Occupancy));
    if needs_truth && args.truth.is_empty() {
        return Err(CliError::usage("--truth is required for bias and occupancy metrics"));
    }
    if args.truth.len() > 1 && args.truth.len() != runs.len() {
        return Err(CliError::usage("give one --truth file, or one per run"));
    }
    if args.metrics.contains(&Metric::Occupancy) && model_id != "occupancy" {
        return Err(CliError::usage("occupancy metrics need an occupancy model"));
    }
    if args.from_year == 0 {
        return Err(CliError::usage("--from-year is 1-based"));
    }
    let truths: Vec<Truth> = args.truth.iter().map(|p| read_truth(p)).collect::<CliResult<_>>()?;

    let mut rows = Vec::new();
    for (i, run) in runs.iter().enumerate() {
        let truth = truths.get(if truths.len() == 1 { 0 } else { i });
        run_rows(run, truth, args, &mut rows)?;
    }
    rows.extend(medians(&rows));
    Ok(rows)
}

fn run_rows(run: &Run, truth: Option<&Truth>, args: &ReportArgs, rows: &mut Vec<ReportRow>) -> CliResult<()> {
    let a = &run.archive;
    let mut push = |metric: String, value: Option<f64>| rows.push(ReportRow::new(&metric, &run.label, &run.replicate, value));
    let column = |k: usize| a.theta.iter().map(|r| r[k]).collect::<Vec<f64>>();
    for metric in &args.metrics {
        match metric {
            Metric::Bias => {
                let truth = truth.expect("checked above");
                for (k, name) in a.param_names.iter().enumerate() {
                    if let Some(v) = truth.params.get(name) {
                        push(format!("bias_{name}"), Some(bias_theta(mean(&column(k)), *v)));
                    }
                }
                let width = a.t() * a.state_dim;
                if truth.states.len() >= width && width > 0 {
                    push("bias_x".into(), Some(bias_latent(&latent_means(a), &truth.states[..width])?));
                }
            }
            Metric::Mcse => {
                for (k, name) in a.param_names.iter().enumerate() {
                    push(format!("mcse_{name}"), mcse(&column(k)).ok());
                }
            }
            Metric::Ess => {
                for (k, name) in a.param_names.iter().enumerate() {
                    push(format!("ess_{name}"), ess_chain(&column(k)).ok());
                }
            }
            Metric::Efficiency => {
                for (k, name) in a.param_names.iter().enumerate() {
                    let v = run.wall_time.and_then(|w| efficiency(&column(k), w).ok());
                    push(format!("efficiency_{name}"), v);
                }
            }
            Metric::Occupancy => {
                let sites = a.state_dim;
                let psi = posterior_realised_occupancy(&a.latents, sites)?;
                for (t, v) in psi.iter().enumerate() {
                    push(format!("psi_{}", t + 1), Some(*v));
                }
                let truth = truth.expect("checked above");
                let truth_psi = realised_occupancy_path(&truth.states, sites)?;
                let (lo, hi) = (args.from_year - 1, psi.len().min(truth_psi.len()));
                if hi > lo {
                    match occupancy_corr_bias(&psi[lo..hi], &truth_psi[lo..hi]) {
                        Ok((r, b)) => {
                            push("psi_corr".into(), Some(r));
                            push("psi_bias".into(), Some(b));
                        }
                        Err(_) => {
                            push("psi_corr".into(), None);
                            push("psi_bias".into(), Some((psi[hi - 1] - truth_psi[hi - 1]) * 100.0));
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

fn latent_means(a: &PosteriorArchive) -> Vec<f64> {
    let n = a.len() as f64;
    let mut m = vec![0.0; a.latents.first().map_or(0, |r| r.len())];
    for row in &a.latents {
        for (acc, v) in m.iter_mut().zip(row) {
            *acc += v;
        }
    }
    m.iter().map(|v| v / n).collect()
}

/// Median over replicates of every (metric, model) pair, in order of first appearance.
fn medians(rows: &[ReportRow]) -> Vec<ReportRow> {
    let mut keys: Vec<(&str, &str)> = Vec::new();
    for r in rows {
        let k = (r.metric.as_str(), r.model.as_str());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(metric, model)| {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.metric == metric && r.model == model)
                .filter_map(|r| r.value)
                .collect();
            ReportRow::new(metric, model, "median", median(&vals))
        })
        .collect()
}

pub fn cmd_report(args: &ReportArgs) -> CliResult<()> {
    let rows = report_rows(args)?;
    let mut bytes = Vec::new();
    match args.format {
        Format::Csv => write_report_csv(&rows, &mut bytes)?,
        Format::Json => write_report_json(&rows, &mut bytes)?,
    }
    match &args.out {
        Some(p) => fs::write(p, bytes)?,
        None => {
            use std::io::Write;
            std::io::stdout().write_all(&bytes)?;
        }
    }
    Ok(())
}
