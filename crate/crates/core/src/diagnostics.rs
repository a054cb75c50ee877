//! Posterior summaries: bias, effective sample size, Monte Carlo standard
//! error, sampling efficiency and realised occupancy.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::fmt_f64;
use crate::error::{Error, Result};

const MIN_DRAWS: usize = 10;

pub fn bias_theta(estimate: f64, truth: f64) -> f64 {
    estimate - truth
}

/// Mean of `x_hat - x`.
pub fn bias_latent(x_hat: &[f64], x: &[f64]) -> Result<f64> {
    if x_hat.len() != x.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            got: x_hat.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::TooFewDraws { min: 1, got: 0 });
    }
    Ok(x_hat.iter().zip(x).map(|(a, b)| a - b).sum::<f64>() / x.len() as f64)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample variance with divisor `n - 1`.
pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
}

/// Median; `None` for an empty slice.
pub fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    Some(if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) })
}

/// Effective sample size by Geyer's initial positive sequence: the
/// autocorrelation sum is truncated at the first pair `rho_{2k} + rho_{2k+1}`
/// that is not positive. A constant series has ESS `n`.
pub fn ess_chain(draws: &[f64]) -> Result<f64> {
    let n = draws.len();
    if n < MIN_DRAWS {
        return Err(Error::TooFewDraws { min: MIN_DRAWS, got: n });
    }
    let m = mean(draws);
    let centred: Vec<f64> = draws.iter().map(|x| x - m).collect();
    let autocov = |lag: usize| centred[..n - lag].iter().zip(&centred[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    let c0 = autocov(0);
    if c0 == 0.0 {
        return Ok(n as f64);
    }
    let mut tau = -1.0;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = (autocov(lag) + autocov(lag + 1)) / c0;
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    Ok(n as f64 / tau)
}

/// `sd(draws) / sqrt(ESS)`.
pub fn mcse(draws: &[f64]) -> Result<f64> {
    let ess = ess_chain(draws)?;
    let var = variance(draws);
    if var == 0.0 {
        return Ok(0.0);
    }
    Ok((var / ess).sqrt())
}

/// Effective draws per second.
pub fn efficiency(draws: &[f64], wall_time: f64) -> Result<f64> {
    if !(wall_time > 0.0) {
        return Err(Error::InvalidConfig(format!("wall time must be positive, got {wall_time}")));
    }
    Ok(ess_chain(draws)? / wall_time)
}

/// Fraction of occupied sites per year from `z[site][year]`.
pub fn realised_occupancy(z: &[Vec<f64>]) -> Result<Vec<f64>> {
    let r = z.len();
    if r == 0 {
        return Err(Error::ShapeMismatch("no sites".into()));
    }
    let years = z[0].len();
    if z.iter().any(|row| row.len() != years) {
        return Err(Error::ShapeMismatch("ragged occupancy matrix".into()));
    }
    if z.iter().flatten().any(|v| *v != 0.0 && *v != 1.0) {
        return Err(Error::NonBinary);
    }
    Ok((0..years).map(|t| z.iter().map(|row| row[t]).sum::<f64>() / r as f64).collect())
}

/// Realised occupancy from a time-major state path (`years x sites`).
pub fn realised_occupancy_path(path: &[f64], sites: usize) -> Result<Vec<f64>> {
    if sites == 0 || path.len() % sites != 0 {
        return Err(Error::ShapeMismatch(format!("{} entries do not form rows of {sites} sites", path.len())));
    }
    if path.iter().any(|v| *v != 0.0 && *v != 1.0) {
        return Err(Error::NonBinary);
    }
    Ok(path.chunks(sites).map(|row| row.iter().sum::<f64>() / sites as f64).collect())
}

/// Posterior mean of the realised occupancy series over draws of
/// time-major state paths.
pub fn posterior_realised_occupancy(paths: &[Vec<f64>], sites: usize) -> Result<Vec<f64>> {
    let first = paths.first().ok_or(Error::TooFewDraws { min: 1, got: 0 })?;
    let mut total = vec![0.0; first.len() / sites.max(1)];
    for p in paths {
        let series = realised_occupancy_path(p, sites)?;
        if series.len() != total.len() {
            return Err(Error::ShapeMismatch("paths differ in length".into()));
        }
        total.iter_mut().zip(series).for_each(|(t, s)| *t += s);
    }
    Ok(total.into_iter().map(|t| t / paths.len() as f64).collect())
}

/// Pearson correlation.
pub fn correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::TooFewDraws { min: 2, got: a.len() });
    }
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Correlation over the window and the final-year bias in percent,
/// `(psi_hat_T - psi_T) * 100`.
pub fn occupancy_corr_bias(psi_hat: &[f64], psi_true: &[f64]) -> Result<(f64, f64)> {
    let r = correlation(psi_hat, psi_true)?;
    let last = psi_hat.len() - 1;
    Ok((r, (psi_hat[last] - psi_true[last]) * 100.0))
}

/// One line of a long-format report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub metric: String,
    pub model: String,
    pub replicate: String,
    /// `None` when the metric is undefined (e.g. zero variance).
    pub value: Option<f64>,
}

impl ReportRow {
    pub fn new(metric: &str, model: &str, replicate: &str, value: Option<f64>) -> Self {
        Self {
            metric: metric.into(),
            model: model.into(),
            replicate: replicate.into(),
            value,
        }
    }
}

/// `metric,model,replicate,value` with empty value fields for missing metrics.
pub fn write_report_csv<W: Write>(rows: &[ReportRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["metric", "model", "replicate", "value"])?;
    for r in rows {
        let v = r.value.map(fmt_f64).unwrap_or_default();
        w.write_record([r.metric.as_str(), r.model.as_str(), r.replicate.as_str(), v.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_report_json<W: Write>(rows: &[ReportRow], mut writer: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut writer, rows)?;
    writer.write_all(b"\n")?;
    Ok(())
}

/// Trace table `iteration,<names>` for external plotting.
pub fn write_trace_csv<W: Write>(names: &[String], draws: &[Vec<f64>], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["iteration".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (i, row) in draws.iter().enumerate() {
        if row.len() != names.len() {
            return Err(Error::LengthMismatch {
                expected: names.len(),
                got: row.len(),
            });
        }
        let mut rec = vec![(i + 1).to_string()];
        rec.extend(row.iter().map(|v| fmt_f64(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn bias_values() {
        assert_eq!(bias_theta(0.5, 0.5), 0.0);
        assert!((bias_theta(0.6, 0.5) - 0.1).abs() < 1e-15);
        let x = [1.0, -2.0, 3.5];
        assert_eq!(bias_latent(&x, &x).unwrap(), 0.0);
        let shifted: Vec<f64> = x.iter().map(|v| v + 1.0).collect();
        assert!((bias_latent(&shifted, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(bias_latent(&x, &x[..2]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn ess_of_iid_draws_is_close_to_n() {
        let mut rng = RngStream::new(1);
        let draws: Vec<f64> = (0..100_000).map(|_| rng.normal()).collect();
        let r = ess_chain(&draws).unwrap() / draws.len() as f64;
        assert!((0.9..=1.1).contains(&r), "{r}");
    }

    #[test]
    fn ess_of_ar1_matches_integrated_autocorrelation() {
        let rho: f64 = 0.9;
        let n = 100_000;
        let expected = (1.0 - rho) / (1.0 + rho);
        // spread of the estimator over independent replicate series
        let ratios: Vec<f64> = (0..20)
            .map(|s| {
                let mut rng = RngStream::new(100 + s);
                let mut x = rng.normal() / (1.0 - rho * rho).sqrt();
                let draws: Vec<f64> = (0..n)
                    .map(|_| {
                        x = rho * x + rng.normal();
                        x
                    })
                    .collect();
                ess_chain(&draws).unwrap() / n as f64
            })
            .collect();
        let se = (variance(&ratios)).sqrt();
        assert!((ratios[0] - expected).abs() < 3.0 * se, "{} vs {expected} (se {se})", ratios[0]);
        assert!((mean(&ratios) - expected).abs() < 3.0 * se);
    }

    #[test]
    fn constant_series_convention() {
        let c = vec![2.5; 50];
        assert_eq!(ess_chain(&c).unwrap(), 50.0);
        assert_eq!(mcse(&c).unwrap(), 0.0);
        assert!(matches!(ess_chain(&c[..9]), Err(Error::TooFewDraws { min: 10, got: 9 })));
    }

    #[test]
    fn mcse_scales_with_constant() {
        let mut rng = RngStream::new(3);
        let draws: Vec<f64> = (0..1000).map(|_| rng.normal()).collect();
        let base = mcse(&draws).unwrap();
        for c in [2.0, -0.5, 4.0, -8.0] {
            let scaled: Vec<f64> = draws.iter().map(|v| c * v).collect();
            assert_eq!(mcse(&scaled).unwrap(), c.abs() * base);
        }
    }

    #[test]
    fn efficiency_divides_by_time() {
        let mut rng = RngStream::new(4);
        let draws: Vec<f64> = (0..500).map(|_| rng.normal()).collect();
        assert_eq!(efficiency(&draws, 2.0).unwrap(), ess_chain(&draws).unwrap() / 2.0);
        assert!(efficiency(&draws, 0.0).is_err());
    }

    #[test]
    fn occupancy_series() {
        assert_eq!(realised_occupancy(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap(), vec![1.0, 1.0]);
        let z = vec![vec![1.0], vec![1.0], vec![0.0], vec![0.0]];
        assert_eq!(realised_occupancy(&z).unwrap(), vec![0.5]);
        assert!(matches!(realised_occupancy(&[vec![0.5]]), Err(Error::NonBinary)));
        assert_eq!(realised_occupancy_path(&[1.0, 0.0, 1.0, 1.0], 2).unwrap(), vec![0.5, 1.0]);
        let paths = vec![vec![1.0, 0.0, 1.0, 1.0], vec![0.0, 0.0, 1.0, 0.0]];
        assert_eq!(posterior_realised_occupancy(&paths, 2).unwrap(), vec![0.25, 0.75]);
    }

    #[test]
    fn correlation_and_bias() {
        let psi = [0.2, 0.5, 0.4, 0.9];
        assert_eq!(occupancy_corr_bias(&psi, &psi).unwrap(), (1.0, 0.0));
        let flipped: Vec<f64> = psi.iter().map(|p| 1.0 - p).collect();
        let (r, _) = occupancy_corr_bias(&flipped, &psi).unwrap();
        assert!((r + 1.0).abs() < 1e-12);
        assert!(matches!(occupancy_corr_bias(&[0.3, 0.3], &[0.1, 0.2]), Err(Error::ZeroVariance)));
        let (_, b) = occupancy_corr_bias(&[0.1, 0.55], &[0.2, 0.5]).unwrap();
        assert!((b - 5.0).abs() < 1e-9);
    }

    #[test]
    fn median_is_order_invariant() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn report_csv_leaves_missing_values_empty() {
        let rows = vec![
            ReportRow::new("bias_a", "full", "1", Some(0.25)),
            ReportRow::new("corr", "full", "1", None),
        ];
        let mut out = Vec::new();
        write_report_csv(&rows, &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "metric,model,replicate,value\nbias_a,full,1,0.25\ncorr,full,1,\n"
        );
    }
}
