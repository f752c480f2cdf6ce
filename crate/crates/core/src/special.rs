//! Scalar special functions shared by the sampler, the accountant and the bounds.

use core::f64::consts::{FRAC_1_SQRT_2, PI};

/// Values of `1 - Φ` below this are reported as exactly zero.
pub const TAIL_FLOOR: f64 = 1e-300;

/// `ln(1 - Φ(x))` for the standard normal CDF `Φ`, accurate in the far tail.
pub fn log_normal_sf(x: f64) -> f64 {
    if x < 35.0 {
        return libm::log(0.5 * libm::erfc(x * FRAC_1_SQRT_2));
    }
    // Mills-ratio asymptotic series; the dropped term is below 1e-12 relative at x = 35.
    let x2 = x * x;
    let inv = 1.0 / x2;
    let series = 1.0 - inv * (1.0 - 3.0 * inv * (1.0 - 5.0 * inv * (1.0 - 7.0 * inv)));
    -0.5 * x2 - libm::log(x) - 0.5 * libm::log(2.0 * PI) + libm::log(series)
}

/// `1 - Φ(x)`, clamped to zero below [`TAIL_FLOOR`].
pub fn normal_sf(x: f64) -> f64 {
    let v = libm::exp(log_normal_sf(x));
    if v < TAIL_FLOOR {
        0.0
    } else {
        v
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    normal_sf(-x)
}

/// `ln(a + b)` given `ln a` and `ln b`.
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + libm::log1p(libm::exp(lo - hi))
}

/// `ln Σ exp(xᵢ)`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !hi.is_finite() {
        return hi;
    }
    hi + libm::log(xs.iter().map(|&x| libm::exp(x - hi)).sum::<f64>())
}

/// `ln(eˣ - 1)` for `x > 0` without overflow.
pub fn ln_expm1(x: f64) -> f64 {
    if x > 40.0 {
        x + libm::log1p(-libm::exp(-x))
    } else {
        libm::log(libm::expm1(x))
    }
}

/// `⌈log₂ x⌉` for `x ≥ 1`.
pub fn ceil_log2(x: u128) -> u32 {
    debug_assert!(x >= 1);
    if x <= 1 {
        0
    } else {
        128 - (x - 1).leading_zeros()
    }
}

/// Log of a sum of lattice terms `Σ_z exp(log_term(z))`, expanded outward from
/// `center`.
///
/// Every `z` with `|z - round(center)| ≤ min_radius` is included; past that the
/// expansion stops in each direction as soon as a term falls below `1e-20` of
/// the running sum. `log_term` must be unimodal around `center`.
pub fn truncated_log_sum(center: f64, min_radius: i64, log_term: impl Fn(i64) -> f64) -> f64 {
    let cutoff = libm::log(1e-20_f64);
    let c = libm::round(center) as i64;
    let mut acc = log_term(c);
    for dir in [1_i64, -1] {
        let mut r = 1_i64;
        loop {
            let t = log_term(c + dir * r);
            if r > min_radius && t < acc + cutoff {
                break;
            }
            acc = log_add(acc, t);
            r += 1;
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_tail_reference_values() {
        assert!((normal_sf(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_sf(1.0) - 0.158_655_253_931_457_05).abs() < 1e-15);
        assert!((normal_cdf(1.959_963_984_540_054) - 0.975).abs() < 1e-14);
        // mpmath: log(ncdf(-40)) = -804.608442013754...
        assert!((log_normal_sf(40.0) + 804.608_442_013_754).abs() < 1e-9);
        // both sides of the series switch-over (mpmath references)
        assert!((log_normal_sf(34.99) / -616.624_865_971_591_2 - 1.0).abs() < 1e-12);
        assert!((log_normal_sf(35.0) / -616.975_101_261_922_5 - 1.0).abs() < 1e-12);
        assert_eq!(normal_sf(1e4), 0.0);
    }

    #[test]
    fn log_sum_helpers() {
        let v = log_sum_exp(&[0.0, 0.0]);
        assert!((v - libm::log(2f64)).abs() < 1e-15);
        assert!((log_add(1000.0, 1000.0) - (1000.0 + libm::log(2f64))).abs() < 1e-12);
        assert_eq!(log_add(f64::NEG_INFINITY, 3.0), 3.0);
        assert!((ln_expm1(1.0) - libm::log(libm::exp(1f64) - 1.0)).abs() < 1e-15);
        assert!((ln_expm1(500.0) - 500.0).abs() < 1e-12);
    }

    #[test]
    fn ceil_log2_edges() {
        assert_eq!(ceil_log2(1), 0);
        assert_eq!(ceil_log2(2), 1);
        assert_eq!(ceil_log2(3), 2);
        assert_eq!(ceil_log2(2048), 11);
        assert_eq!(ceil_log2(2551), 12);
    }

    #[test]
    fn truncated_sum_of_unit_gaussian() {
        // mpmath: Σ_z exp(-z²/2) = 2.5066282880429055...
        let s = libm::exp(truncated_log_sum(0.0, 20, |z| -((z * z) as f64) / 2.0));
        assert!((s - 2.506_628_288_042_905_5).abs() < 1e-14);
    }
}
