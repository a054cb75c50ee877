//! Sampling and log-density evaluation for the distribution families used by
//! the built-in models and their priors.

use std::f64::consts::SQRT_2;

use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StatrsNormal};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::rng::RngStream;

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// A fully parameterized distribution.
///
/// `HalfNormal { sd }` is the zero-mean normal truncated to `[0, inf)` and is
/// evaluated through the truncated-normal code path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DistSpec {
    Normal { mean: f64, sd: f64 },
    TruncatedNormal { mean: f64, sd: f64, lower: f64, upper: f64 },
    HalfNormal { sd: f64 },
    Uniform { lower: f64, upper: f64 },
    Bernoulli { p: f64 },
    Binomial { trials: u64, p: f64 },
    Poisson { rate: f64 },
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParams(msg.into())
}

impl DistSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DistSpec::Normal { mean, sd } => {
                if !mean.is_finite() || !(sd > 0.0) || !sd.is_finite() {
                    return Err(invalid(format!("normal(mean={mean}, sd={sd})")));
                }
            }
            DistSpec::TruncatedNormal { mean, sd, lower, upper } => {
                if !mean.is_finite() || !(sd > 0.0) || !sd.is_finite() || !(lower < upper) {
                    return Err(invalid(format!(
                        "truncated_normal(mean={mean}, sd={sd}, lower={lower}, upper={upper})"
                    )));
                }
            }
            DistSpec::HalfNormal { sd } => {
                if !(sd > 0.0) || !sd.is_finite() {
                    return Err(invalid(format!("half_normal(sd={sd})")));
                }
            }
            DistSpec::Uniform { lower, upper } => {
                // lower == upper is accepted as a point mass
                if !lower.is_finite() || !upper.is_finite() || lower > upper {
                    return Err(invalid(format!("uniform(lower={lower}, upper={upper})")));
                }
            }
            DistSpec::Bernoulli { p } | DistSpec::Binomial { p, .. } => {
                if !(0.0..=1.0).contains(&p) {
                    return Err(invalid(format!("probability {p} outside [0, 1]")));
                }
            }
            DistSpec::Poisson { rate } => {
                if !(rate >= 0.0) || !rate.is_finite() {
                    return Err(invalid(format!("poisson(rate={rate})")));
                }
            }
        }
        Ok(())
    }

    /// Truncated-normal view of the continuous normal-type families.
    fn truncated_parts(&self) -> Option<(f64, f64, f64, f64)> {
        match *self {
            DistSpec::TruncatedNormal { mean, sd, lower, upper } => Some((mean, sd, lower, upper)),
            DistSpec::HalfNormal { sd } => Some((0.0, sd, 0.0, f64::INFINITY)),
            _ => None,
        }
    }

    pub fn sample(&self, rng: &mut RngStream) -> Result<f64> {
        self.validate()?;
        let value = match *self {
            DistSpec::Normal { mean, sd } => mean + sd * rng.normal(),
            DistSpec::TruncatedNormal { .. } | DistSpec::HalfNormal { .. } => {
                let (mean, sd, lower, upper) = self.truncated_parts().unwrap();
                let z = sample_std_truncated((lower - mean) / sd, (upper - mean) / sd, rng);
                (mean + sd * z).clamp(lower, upper)
            }
            DistSpec::Uniform { lower, upper } => {
                if lower == upper {
                    lower
                } else {
                    lower + (upper - lower) * rng.uniform()
                }
            }
            DistSpec::Bernoulli { p } => {
                if rng.bernoulli(p) {
                    1.0
                } else {
                    0.0
                }
            }
            DistSpec::Binomial { trials, p } => Binomial::new(trials, p)
                .map_err(|e| invalid(e.to_string()))?
                .sample(rng) as f64,
            DistSpec::Poisson { rate } => {
                if rate == 0.0 {
                    0.0
                } else {
                    Poisson::new(rate).map_err(|e| invalid(e.to_string()))?.sample(rng)
                }
            }
        };
        Ok(value)
    }

    /// `log f(value)`; `-inf` outside the support, never NaN.
    pub fn log_density(&self, value: f64) -> Result<f64> {
        self.validate()?;
        if value.is_nan() {
            return Ok(f64::NEG_INFINITY);
        }
        let lp = match *self {
            DistSpec::Normal { mean, sd } => normal_logpdf(value, mean, sd),
            DistSpec::TruncatedNormal { .. } | DistSpec::HalfNormal { .. } => {
                let (mean, sd, lower, upper) = self.truncated_parts().unwrap();
                if value < lower || value > upper {
                    f64::NEG_INFINITY
                } else {
                    normal_logpdf(value, mean, sd)
                        - log_std_normal_mass((lower - mean) / sd, (upper - mean) / sd)
                }
            }
            DistSpec::Uniform { lower, upper } => {
                if value < lower || value > upper {
                    f64::NEG_INFINITY
                } else if lower == upper {
                    0.0
                } else {
                    -(upper - lower).ln()
                }
            }
            DistSpec::Bernoulli { p } => {
                if value == 1.0 {
                    p.ln()
                } else if value == 0.0 {
                    (1.0 - p).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            DistSpec::Binomial { trials, p } => {
                if value < 0.0 || value > trials as f64 || value.fract() != 0.0 {
                    f64::NEG_INFINITY
                } else {
                    let n = trials as f64;
                    let k = value;
                    ln_choose(n, k) + xlogy(k, p) + xlogy(n - k, 1.0 - p)
                }
            }
            DistSpec::Poisson { rate } => {
                if value < 0.0 || value.fract() != 0.0 || !value.is_finite() {
                    f64::NEG_INFINITY
                } else {
                    xlogy(value, rate) - rate - ln_gamma(value + 1.0)
                }
            }
        };
        Ok(lp)
    }

    pub fn is_discrete(&self) -> bool {
        matches!(
            self,
            DistSpec::Bernoulli { .. } | DistSpec::Binomial { .. } | DistSpec::Poisson { .. }
        )
    }

    /// Closed interval containing the support.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            DistSpec::Normal { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            DistSpec::TruncatedNormal { lower, upper, .. } => (lower, upper),
            DistSpec::HalfNormal { .. } => (0.0, f64::INFINITY),
            DistSpec::Uniform { lower, upper } => (lower, upper),
            DistSpec::Bernoulli { .. } => (0.0, 1.0),
            DistSpec::Binomial { trials, .. } => (0.0, trials as f64),
            DistSpec::Poisson { .. } => (0.0, f64::INFINITY),
        }
    }
}

/// `x * ln(y)` with the convention `0 * ln(0) = 0`.
fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

fn ln_choose(n: f64, k: f64) -> f64 {
    ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0)
}

pub fn normal_logpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -LN_SQRT_2PI - sd.ln() - 0.5 * z * z
}

/// Standard normal upper-tail probability `P(Z > x)`.
fn std_normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

/// `ln P(a <= Z <= b)` for a standard normal `Z`, evaluated on the tail
/// that keeps the difference away from cancellation.
pub(crate) fn log_std_normal_mass(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        let hi = std_normal_sf(a);
        let lo = std_normal_sf(b);
        (hi - lo).ln()
    } else if b <= 0.0 {
        log_std_normal_mass(-b, -a)
    } else {
        // straddles zero: 1 - P(Z < a) - P(Z > b)
        (1.0 - std_normal_sf(-a) - std_normal_sf(b)).ln()
    }
}

/// Draw from a standard normal restricted to `[a, b]`.
fn sample_std_truncated(a: f64, b: f64, rng: &mut RngStream) -> f64 {
    let mass = log_std_normal_mass(a, b).exp();
    if mass >= 0.3 {
        loop {
            let z = rng.normal();
            if z >= a && z <= b {
                return z;
            }
        }
    }
    if a >= 0.0 {
        // inverse survival function on the upper tail
        let std = StatrsNormal::standard();
        let (sa, sb) = (std_normal_sf(a), std_normal_sf(b));
        loop {
            let u = sb + (sa - sb) * rng.uniform();
            if u > 0.0 {
                let z = -std.inverse_cdf(u);
                if z.is_finite() {
                    return z.clamp(a, b);
                }
            }
            if sa <= f64::MIN_POSITIVE {
                // beyond double precision tail: exponential rejection
                return robert_tail(a, b, rng);
            }
        }
    }
    if b <= 0.0 {
        return -sample_std_truncated(-b, -a, rng);
    }
    // narrow interval around zero
    loop {
        let z = a + (b - a) * rng.uniform();
        if rng.uniform() < (-0.5 * z * z).exp() {
            return z;
        }
    }
}

/// Exponential-proposal rejection sampler for far tails `[a, b]`, `a > 0`.
fn robert_tail(a: f64, b: f64, rng: &mut RngStream) -> f64 {
    let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let z = a - (1.0 - rng.uniform()).ln() / lambda;
        if z <= b && rng.uniform() < (-0.5 * (z - lambda) * (z - lambda)).exp() {
            return z;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp(spec: DistSpec, x: f64) -> f64 {
        spec.log_density(x).unwrap()
    }

    #[test]
    fn degenerate_and_point_masses() {
        let mut rng = RngStream::new(1);
        assert_eq!(DistSpec::Uniform { lower: 0.0, upper: 0.0 }.sample(&mut rng).unwrap(), 0.0);
        for _ in 0..100 {
            assert_eq!(DistSpec::Bernoulli { p: 1.0 }.sample(&mut rng).unwrap(), 1.0);
        }
    }

    #[test]
    fn closed_form_values() {
        let v = lp(DistSpec::Normal { mean: 0.0, sd: 1.0 }, 0.0);
        assert!((v + 0.918_938_53).abs() < 1e-8);
        assert!((v + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
        assert_eq!(lp(DistSpec::Bernoulli { p: 0.25 }, 1.0), 0.25f64.ln());
    }

    #[test]
    fn binomial_enumeration_sums_to_one() {
        for p in [0.1, 0.5, 0.9] {
            let spec = DistSpec::Binomial { trials: 3, p };
            let total: f64 = (0..=3).map(|k| lp(spec, k as f64).exp()).sum();
            assert!((total - 1.0).abs() < 1e-12, "p={p} total={total}");
        }
    }

    #[test]
    fn discrete_families_normalize() {
        let specs = [
            DistSpec::Bernoulli { p: 0.3 },
            DistSpec::Binomial { trials: 40, p: 0.37 },
            DistSpec::Binomial { trials: 5, p: 0.0 },
            DistSpec::Poisson { rate: 4.5 },
            DistSpec::Poisson { rate: 0.0 },
        ];
        for spec in specs {
            let mut total = 0.0;
            let mut k = 0.0;
            // Poisson support truncated once cumulative mass exceeds 1 - 1e-12
            while total < 1.0 - 1e-12 && k <= 1000.0 {
                total += lp(spec, k).exp();
                k += 1.0;
                if let DistSpec::Bernoulli { .. } = spec {
                    if k > 1.0 {
                        break;
                    }
                }
                if let DistSpec::Binomial { trials, .. } = spec {
                    if k > trials as f64 {
                        break;
                    }
                }
            }
            assert!((total - 1.0).abs() < 1e-10, "{spec:?}: {total}");
        }
    }

    fn trapezoid(spec: DistSpec, lo: f64, hi: f64, n: usize) -> f64 {
        let h = (hi - lo) / n as f64;
        let f = |x: f64| lp(spec, x).exp();
        let mut acc = 0.5 * (f(lo) + f(hi));
        for i in 1..n {
            acc += f(lo + i as f64 * h);
        }
        acc * h
    }

    #[test]
    fn continuous_families_integrate_to_one() {
        let n = 200_000;
        let normal = DistSpec::Normal { mean: 1.5, sd: 2.0 };
        assert!((trapezoid(normal, 1.5 - 12.0, 1.5 + 12.0, n) - 1.0).abs() < 1e-6);
        let tn = DistSpec::TruncatedNormal { mean: 0.0, sd: 1.0, lower: -0.5, upper: 2.0 };
        assert!((trapezoid(tn, -0.5, 2.0, n) - 1.0).abs() < 1e-6);
        let half = DistSpec::HalfNormal { sd: 3.0 };
        assert!((trapezoid(half, 0.0, 18.0, n) - 1.0).abs() < 1e-6);
        let tail = DistSpec::TruncatedNormal { mean: 0.0, sd: 1.0, lower: 3.0, upper: 9.0 };
        assert!((trapezoid(tail, 3.0, 9.0, n) - 1.0).abs() < 1e-6);
        let uni = DistSpec::Uniform { lower: 0.001, upper: 1.0 };
        assert!((trapezoid(uni, 0.001, 1.0, n) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn half_normal_matches_truncated_at_zero() {
        let half = DistSpec::HalfNormal { sd: 2.0 };
        let tn = DistSpec::TruncatedNormal { mean: 0.0, sd: 2.0, lower: 0.0, upper: f64::INFINITY };
        for x in [0.0, 0.3, 1.0, 5.0] {
            assert!((lp(half, x) - lp(tn, x)).abs() < 1e-14);
        }
        assert_eq!(lp(half, -0.1), f64::NEG_INFINITY);
    }

    #[test]
    fn truncated_normal_mean_matches_quadrature() {
        let spec = DistSpec::TruncatedNormal {
            mean: 0.0,
            sd: 10.0,
            lower: 0.001,
            upper: f64::INFINITY,
        };
        // quadrature oracle for the mean and second moment over [0.001, 120]
        let (lo, hi, n) = (0.001, 120.0, 400_000);
        let h = (hi - lo) / n as f64;
        let (mut m1, mut m2) = (0.0, 0.0);
        for i in 0..=n {
            let x = lo + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            let f = lp(spec, x).exp();
            m1 += w * x * f;
            m2 += w * x * x * f;
        }
        m1 *= h;
        m2 *= h;
        let sd = (m2 - m1 * m1).sqrt();
        let mut rng = RngStream::new(2024);
        let draws = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..draws {
            let x = spec.sample(&mut rng).unwrap();
            assert!(x >= 0.001);
            sum += x;
        }
        let mean = sum / draws as f64;
        let se = sd / (draws as f64).sqrt();
        assert!((mean - m1).abs() < 3.0 * se, "mean={mean} oracle={m1} se={se}");
    }

    #[test]
    fn far_tail_sampling_stays_in_support() {
        let spec = DistSpec::TruncatedNormal { mean: 0.0, sd: 1.0, lower: 40.0, upper: f64::INFINITY };
        let mut rng = RngStream::new(9);
        for _ in 0..1000 {
            let x = spec.sample(&mut rng).unwrap();
            assert!(x >= 40.0 && lp(spec, x) > f64::NEG_INFINITY);
        }
        let neg = DistSpec::TruncatedNormal { mean: 0.0, sd: 1.0, lower: -7.0, upper: -5.0 };
        for _ in 0..1000 {
            let x = neg.sample(&mut rng).unwrap();
            assert!((-7.0..=-5.0).contains(&x));
        }
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(DistSpec::Normal { mean: 0.0, sd: 0.0 }.validate().is_err());
        assert!(DistSpec::Uniform { lower: 1.0, upper: 0.0 }.validate().is_err());
        assert!(DistSpec::Bernoulli { p: 1.5 }.log_density(1.0).is_err());
        assert!(DistSpec::Poisson { rate: -1.0 }.sample(&mut RngStream::new(0)).is_err());
        assert!(DistSpec::TruncatedNormal { mean: 0.0, sd: 1.0, lower: 1.0, upper: 1.0 }
            .validate()
            .is_err());
    }

    #[test]
    fn outside_support_is_neg_inf_not_nan() {
        assert_eq!(lp(DistSpec::Binomial { trials: 3, p: 0.5 }, 4.0), f64::NEG_INFINITY);
        assert_eq!(lp(DistSpec::Poisson { rate: 2.0 }, 1.5), f64::NEG_INFINITY);
        assert_eq!(lp(DistSpec::Normal { mean: 0.0, sd: 1.0 }, f64::NAN), f64::NEG_INFINITY);
        assert_eq!(lp(DistSpec::Bernoulli { p: 0.0 }, 1.0), f64::NEG_INFINITY);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn any_spec() -> impl Strategy<Value = DistSpec> {
            prop_oneof![
                (-5.0..5.0f64, 0.1..5.0f64).prop_map(|(mean, sd)| DistSpec::Normal { mean, sd }),
                (-2.0..2.0f64, 0.1..5.0f64, -3.0..3.0f64, 0.01..4.0f64).prop_map(
                    |(mean, sd, lower, w)| DistSpec::TruncatedNormal { mean, sd, lower, upper: lower + w }
                ),
                (0.1..5.0f64).prop_map(|sd| DistSpec::HalfNormal { sd }),
                (-3.0..3.0f64, 0.0..3.0f64)
                    .prop_map(|(lower, w)| DistSpec::Uniform { lower, upper: lower + w }),
                (0.0..=1.0f64).prop_map(|p| DistSpec::Bernoulli { p }),
                (0u64..30, 0.0..=1.0f64).prop_map(|(trials, p)| DistSpec::Binomial { trials, p }),
                (0.0..20.0f64).prop_map(|rate| DistSpec::Poisson { rate }),
            ]
        }

        proptest! {
            #[test]
            fn sampled_values_have_positive_density(spec in any_spec(), seed in any::<u64>()) {
                let mut rng = RngStream::new(seed);
                let x = spec.sample(&mut rng).unwrap();
                let (lo, hi) = spec.support();
                prop_assert!(x >= lo && x <= hi);
                let l = spec.log_density(x).unwrap();
                prop_assert!(l > f64::NEG_INFINITY && !l.is_nan());
            }

            #[test]
            fn sampling_is_deterministic(spec in any_spec(), seed in any::<u64>()) {
                let a = spec.sample(&mut RngStream::new(seed)).unwrap();
                let b = spec.sample(&mut RngStream::new(seed)).unwrap();
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
