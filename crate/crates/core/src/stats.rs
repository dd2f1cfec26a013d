//! Chi-square tail probabilities and normal quantiles.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("degrees of freedom must be >= 1, got {0}")]
    DegreesOfFreedom(usize),
    #[error("chi-square statistic must be finite and >= 0, got {0}")]
    Statistic(f64),
    #[error("probability {0} outside (0, 1)")]
    Probability(f64),
}

const EPS: f64 = 1e-16;
const MAX_ITER: usize = 100_000;

/// Series for the regularized lower incomplete gamma `P(a, x)`, for `x < a + 1`.
fn lower_gamma_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * EPS {
            break;
        }
    }
    (sum.ln() - x + a * x.ln() - ln_gamma(a)).exp()
}

/// Modified Lentz continued fraction for the regularized upper incomplete
/// gamma `Q(a, x)`, for `x >= a + 1`.
fn upper_gamma_fraction(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Regularized upper incomplete gamma function `Q(a, x)`.
pub fn upper_regularized_gamma(a: f64, x: f64) -> f64 {
    debug_assert!(a > 0.0 && x >= 0.0);
    if x == 0.0 {
        1.0
    } else if x < a + 1.0 {
        1.0 - lower_gamma_series(a, x)
    } else {
        upper_gamma_fraction(a, x)
    }
}

/// Upper-tail probability of the chi-square distribution with `df` degrees
/// of freedom.
pub fn chi_square_sf(x: f64, df: usize) -> Result<f64, StatsError> {
    if df == 0 {
        return Err(StatsError::DegreesOfFreedom(df));
    }
    if !(x >= 0.0) || !x.is_finite() {
        return Err(StatsError::Statistic(x));
    }
    Ok(upper_regularized_gamma(df as f64 / 2.0, x / 2.0).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrtResult {
    pub stat: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Likelihood-ratio statistic `2 (ll_larger - ll_smaller)` referred to a
/// chi-square with `df` degrees of freedom. Negative statistics from
/// optimizer noise are floored at zero; `df = 0` compares a model with
/// itself and gives `p = 1`.
pub fn likelihood_ratio_test(ll_smaller: f64, ll_larger: f64, df: usize) -> Result<LrtResult, StatsError> {
    let stat = (2.0 * (ll_larger - ll_smaller)).max(0.0);
    let p_value = if df == 0 { 1.0 } else { chi_square_sf(stat, df)? };
    Ok(LrtResult { stat, df, p_value })
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> Result<f64, StatsError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(StatsError::Probability(p));
    }
    Ok(Normal::standard().inverse_cdf(p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::function::erf::erfc;

    /// Closed form for even df: the Poisson(x/2) cdf at df/2 - 1.
    fn even_df_oracle(x: f64, df: usize) -> f64 {
        let lambda = x / 2.0;
        let k = df / 2;
        let mut term = (-lambda).exp();
        let mut sum = term;
        for j in 1..k {
            term *= lambda / j as f64;
            sum += term;
        }
        sum
    }

    /// Closed form for df = 1: `erfc(sqrt(x/2))`.
    fn one_df_oracle(x: f64) -> f64 {
        erfc((x / 2.0).sqrt())
    }

    #[test]
    fn spot_values() {
        assert_eq!(chi_square_sf(0.0, 1).unwrap(), 1.0);
        assert_eq!(chi_square_sf(0.0, 17).unwrap(), 1.0);
        assert!((chi_square_sf(3.841, 1).unwrap() - 0.05).abs() < 1e-3);
        assert!((chi_square_sf(4.0, 1).unwrap() - 0.0455).abs() < 1e-3);
        assert!((chi_square_sf(4.0, 1).unwrap() - 0.04550026389635842).abs() < 1e-12);
    }

    #[test]
    fn matches_closed_forms() {
        for &x in &[1e-6, 0.01, 0.5, 1.0, 2.0, 3.841, 7.5, 15.0, 40.0, 100.0, 250.0, 400.0] {
            assert!((chi_square_sf(x, 1).unwrap() - one_df_oracle(x)).abs() < 1e-10, "x={x}");
            for df in (2..=200).step_by(2) {
                let got = chi_square_sf(x, df).unwrap();
                let want = even_df_oracle(x, df);
                assert!((got - want).abs() < 1e-10, "x={x} df={df}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn odd_df_recurrence() {
        // Q(a+1, y) = Q(a, y) + y^a e^-y / Gamma(a+1)
        for &x in &[0.3, 2.0, 9.0, 60.0, 180.0] {
            let y = x / 2.0;
            let mut expected = one_df_oracle(x);
            for df in (3..=199).step_by(2) {
                let a = (df - 2) as f64 / 2.0;
                expected += (a * y.ln() - y - ln_gamma(a + 1.0)).exp();
                let got = chi_square_sf(x, df).unwrap();
                assert!((got - expected).abs() < 1e-10, "x={x} df={df}");
            }
        }
    }

    #[test]
    fn invalid_inputs() {
        assert_eq!(chi_square_sf(1.0, 0), Err(StatsError::DegreesOfFreedom(0)));
        assert!(chi_square_sf(-1.0, 2).is_err());
        assert!(chi_square_sf(f64::NAN, 2).is_err());
        assert!(normal_quantile(1.0).is_err());
    }

    #[test]
    fn normal_quantile_values() {
        assert!((normal_quantile(0.975).unwrap() - 1.959963984540054).abs() < 1e-9);
        assert!(normal_quantile(0.5).unwrap().abs() < 1e-12);
    }
}
