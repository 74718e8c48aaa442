//! Digamma and log-gamma.
//!
//! Both use the standard approach for positive arguments: shift the argument
//! upward with the recurrence until the asymptotic (Stirling) series is
//! accurate, then evaluate the series.

use crate::{Error, Result};

const SHIFT_THRESHOLD: f64 = 10.0;

/// Digamma function for `x > 0`, absolute accuracy better than 1e-12.
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!(
            "digamma requires a finite x > 0, got {x}"
        )));
    }
    Ok(digamma_unchecked(x))
}

/// Digamma without the domain check. Callers guarantee `x > 0`.
#[inline]
pub fn digamma_unchecked(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < SHIFT_THRESHOLD {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Bernoulli terms B_2n / (2n x^2n) for n = 1..7.
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2
                                        * (1.0 / 132.0
                                            - inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
    acc + x.ln() - 0.5 * inv - series
}

/// Natural log of the gamma function for `x > 0`.
#[inline]
pub fn ln_gamma(mut x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let mut acc = 0.0;
    while x < SHIFT_THRESHOLD {
        acc -= x.ln();
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Stirling series with B_2n / (2n (2n-1) x^(2n-1)).
    let series = inv
        * (1.0 / 12.0
            - inv2
                * (1.0 / 360.0
                    - inv2
                        * (1.0 / 1260.0
                            - inv2
                                * (1.0 / 1680.0
                                    - inv2 * (1.0 / 1188.0 - inv2 * (691.0 / 360360.0))))));
    acc + (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln() + series
}

/// Log of the multivariate beta function, `sum ln Γ(a_i) - ln Γ(sum a_i)`.
pub fn ln_beta(a: &[f64]) -> f64 {
    let total: f64 = a.iter().sum();
    a.iter().map(|&v| ln_gamma(v)).sum::<f64>() - ln_gamma(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    const EULER: f64 = 0.577_215_664_901_532_9;

    // Reference: psi(x) = -gamma + sum_{n>=0} (1/(n+1) - 1/(n+x)), summed to
    // 1e7 terms with the tail approximated by its integral.
    fn digamma_series(x: f64) -> f64 {
        let n_terms = 10_000_000usize;
        let mut s = 0.0;
        for n in (0..n_terms).rev() {
            let n = n as f64;
            s += 1.0 / (n + 1.0) - 1.0 / (n + x);
        }
        let n = n_terms as f64;
        // tail: sum_{n>=N} (x-1)/((n+1)(n+x)) ~ (x-1)/(N + x/2)
        -EULER + s + (x - 1.0) / (n + 0.5 * (x + 1.0))
    }

    #[test]
    fn known_values() {
        assert!((digamma(1.0).unwrap() + EULER).abs() < 1e-13);
        assert!((digamma(2.0).unwrap() - (1.0 - EULER)).abs() < 1e-13);
        let half = -EULER - 2.0 * std::f64::consts::LN_2;
        assert!((digamma(0.5).unwrap() - half).abs() < 1e-13);
        assert!((digamma(0.5).unwrap() + 1.963_510_026_021_423_5).abs() < 1e-12);
    }

    #[test]
    fn matches_series_reference() {
        for &x in &[0.01, 0.3, 1.7, 4.2, 9.99, 10.0, 33.3] {
            let got = digamma(x).unwrap();
            let want = digamma_series(x);
            assert!((got - want).abs() < 1e-10, "x={x}: {got} vs {want}");
        }
    }

    #[test]
    fn recurrence_holds() {
        for &x in &[1e-4, 0.2, 0.9, 3.0, 12.5, 150.0] {
            let lhs = digamma(x + 1.0).unwrap();
            let rhs = digamma(x).unwrap() + 1.0 / x;
            assert!((lhs - rhs).abs() < 1e-10 * rhs.abs().max(1.0));
        }
    }

    #[test]
    fn rejects_nonpositive() {
        assert!(digamma(0.0).is_err());
        assert!(digamma(-1.5).is_err());
        assert!(digamma(f64::NAN).is_err());
    }

    #[test]
    fn ln_gamma_against_statrs() {
        for &x in &[1e-3, 0.5, 1.0, 2.0, 3.7, 10.0, 55.5, 1e4] {
            let want = statrs::function::gamma::ln_gamma(x);
            assert!(
                (ln_gamma(x) - want).abs() < 1e-11 * want.abs().max(1.0),
                "x={x}"
            );
        }
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-13);
    }

    #[test]
    fn digamma_against_statrs() {
        for &x in &[1e-3, 0.25, 1.5, 7.0, 250.0] {
            let want = statrs::function::gamma::digamma(x);
            assert!((digamma(x).unwrap() - want).abs() < 1e-10, "x={x}");
        }
    }
}
