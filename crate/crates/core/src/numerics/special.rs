//! Error function and normal CDF with full relative accuracy in the tails.
//!
//! The far tail is evaluated in the log domain through the continued
//! fraction sqrt(pi)*exp(x^2)*erfc(x) = 1/(x + (1/2)/(x + (2/2)/(x + ...))),
//! which stays O(1/x) and never underflows, so probabilities like 1e-199
//! come out with ~1e-15 relative error instead of collapsing to 0 or 1.

const SQRT_PI: f64 = 1.772453850905516;
const FRAC_2_SQRT_PI: f64 = 2.0 / SQRT_PI;
const SERIES_CUTOFF: f64 = 1.5;

/// Maclaurin series for erf, used below the continued-fraction cutoff.
fn erf_series(x: f64) -> f64 {
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let mut n = 1.0;
    loop {
        term *= -x2 / n;
        let contrib = term / (2.0 * n + 1.0);
        sum += contrib;
        if contrib.abs() < 1e-18 * sum.abs().max(1e-300) {
            break;
        }
        n += 1.0;
        if n > 200.0 {
            break;
        }
    }
    FRAC_2_SQRT_PI * sum
}

/// Evaluates the A&S 7.1.14 continued fraction by backward recurrence;
/// returns sqrt(pi)*exp(x^2)*erfc(x), valid for x >= cutoff.
fn erfc_cf_scaled(x: f64) -> f64 {
    let depth = if x >= 8.0 { 40 } else { 300 };
    let mut f = 0.0;
    for k in (1..=depth).rev() {
        f = (k as f64 / 2.0) / (x + f);
    }
    1.0 / (x + f)
}

/// ln(erfc(x)); exact in the far tail where erfc itself would underflow.
pub fn ln_erfc(x: f64) -> f64 {
    if x < SERIES_CUTOFF {
        erfc(x).ln()
    } else {
        -x * x - SQRT_PI.ln() + erfc_cf_scaled(x).ln()
    }
}

pub fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        2.0 - erfc(-x)
    } else if x < SERIES_CUTOFF {
        1.0 - erf_series(x)
    } else {
        (-x * x).exp() / SQRT_PI * erfc_cf_scaled(x)
    }
}

pub fn erf(x: f64) -> f64 {
    if x.abs() < SERIES_CUTOFF {
        erf_series(x)
    } else if x > 0.0 {
        1.0 - erfc(x)
    } else {
        erfc(-x) - 1.0
    }
}

/// Standard normal CDF, accurate in both tails.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// ln of the standard normal CDF; usable far beyond where the CDF underflows.
pub fn ln_std_normal_cdf(x: f64) -> f64 {
    if x >= 0.0 {
        std_normal_cdf(x).ln()
    } else {
        (0.5f64).ln() + ln_erfc(-x / std::f64::consts::SQRT_2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values computed with 60-digit arithmetic (mpmath) before
    // this module was written.
    const ERFC_REF: &[(f64, f64)] = &[
        (0.1, 0.88753708398171511),
        (0.5, 0.47950012218695346),
        (1.234, 0.080960583042331584),
        (2.0, 0.0046777349810472658),
        (3.5, 7.4309837234141275e-7),
        (5.5, 7.3578479179743981e-15),
        (8.0, 1.1224297172982927e-29),
        (10.4257, 3.3543631513481692e-49),
        (14.744, 1.4875712867491561e-96),
        (21.25, 2.0534521584449841e-198),
        (26.5, 2.2109076642637343e-307),
    ];

    const PHI_REF: &[(f64, f64)] = &[
        (-0.5, 0.3085375387259869),
        (-3.0, 0.0013498980316300945),
        (-14.744, 1.6813186919987416e-49),
        (-20.6474, 5.1508432239795751e-95),
        (-30.06, 8.0800329749827976e-199),
    ];

    #[test]
    fn erfc_matches_high_precision_reference() {
        for &(x, want) in ERFC_REF {
            let got = erfc(x);
            let rel = (got - want).abs() / want;
            assert!(rel < 1e-12, "erfc({x}): got {got}, want {want}, rel {rel}");
        }
    }

    #[test]
    fn normal_cdf_matches_reference_in_tails() {
        for &(x, want) in PHI_REF {
            let got = std_normal_cdf(x);
            let rel = (got - want).abs() / want;
            assert!(rel < 1e-12, "Phi({x}): got {got}, want {want}, rel {rel}");
        }
    }

    #[test]
    fn ln_cdf_consistent_with_cdf() {
        for x in [-30.06, -14.744, -3.0, -0.5, 0.0, 1.0, 4.0] {
            let direct = std_normal_cdf(x).ln();
            let logged = ln_std_normal_cdf(x);
            assert!(
                (direct - logged).abs() < 1e-10 * logged.abs().max(1.0),
                "x={x}: {direct} vs {logged}"
            );
        }
        // Far past the underflow point the log form still works.
        let ll = ln_std_normal_cdf(-60.0);
        assert!(ll < -1700.0 && ll.is_finite());
    }

    #[test]
    fn erf_is_odd_and_bounded() {
        for x in [0.0, 0.3, 1.0, 1.49, 1.51, 2.5, 6.0] {
            assert!((erf(x) + erf(-x)).abs() < 1e-15);
            assert!(erf(x) <= 1.0 && erf(x) >= -1.0);
        }
        assert!((erfc(-2.0) - (2.0 - erfc(2.0))).abs() < 1e-15);
    }
}
