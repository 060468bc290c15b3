//! Log-gamma, digamma and trigamma for positive real arguments.
//!
//! All three use the same scheme: the recurrence Γ(x+1) = xΓ(x) shifts the
//! argument up to at least [`ASYMPTOTIC_THRESHOLD`], where a truncated
//! Stirling-type asymptotic series is accurate to better than `f64` rounding.
//!
//! Arguments outside `[1e-300, 1e300]` (or non-finite) are rejected with
//! [`SpecialError::Domain`]; no valid model state reaches them.

use thiserror::Error;

use crate::scalar::Real;

/// Arguments are shifted up to this value before the asymptotic series is used.
pub const ASYMPTOTIC_THRESHOLD: f64 = 10.0;

const MIN_ARGUMENT: f64 = 1e-300;
const MAX_ARGUMENT: f64 = 1e300;

/// ½·ln(2π)
const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_8;

/// B₂ₖ / (2k(2k−1)) for k = 1..8, the Stirling series coefficients of ln Γ.
const LN_GAMMA_SERIES: [f64; 8] = [
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360_360.0,
    1.0 / 156.0,
    -3617.0 / 122_400.0,
];

/// B₂ₖ / (2k) for k = 1..7, subtracted from ln z − 1/(2z) in ψ(z).
const DIGAMMA_SERIES: [f64; 7] = [
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32_760.0,
    1.0 / 12.0,
];

/// B₂ₖ for k = 1..7, the odd-power coefficients of ψ′(z) beyond 1/z + 1/(2z²).
const TRIGAMMA_SERIES: [f64; 7] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
];

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum SpecialError {
    #[error("{function}: argument {x} outside the supported domain [1e-300, 1e300]")]
    Domain { function: &'static str, x: f64 },
    #[error("{function}: result overflows at argument {x}")]
    Overflow { function: &'static str, x: f64 },
}

fn check_domain<T: Real>(function: &'static str, x: T) -> Result<(), SpecialError> {
    let lo = T::lit(MIN_ARGUMENT).max(T::min_positive_value());
    let hi = T::lit(MAX_ARGUMENT).min(T::max_value());
    if !x.is_finite() || x < lo || x > hi {
        return Err(SpecialError::Domain {
            function,
            x: x.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(())
}

/// Evaluates Σ coeffs[k] · w^k for k = 0.. by Horner's rule.
#[inline]
fn horner<T: Real>(coeffs: &[f64], w: T) -> T {
    coeffs
        .iter()
        .rev()
        .fold(T::zero(), |acc, &c| acc * w + T::lit(c))
}

/// Natural log of the gamma function, ln Γ(x), for x > 0.
pub fn log_gamma<T: Real>(x: T) -> Result<T, SpecialError> {
    check_domain("log_gamma", x)?;
    if x == T::one() || x == T::lit(2.0) {
        return Ok(T::zero());
    }
    let threshold = T::lit(ASYMPTOTIC_THRESHOLD);
    let mut z = x;
    let mut shift = T::one();
    while z < threshold {
        shift = shift * z;
        z = z + T::one();
    }
    let half = T::lit(0.5);
    let inv = z.recip();
    let series = horner(&LN_GAMMA_SERIES, inv * inv) * inv;
    let stirling = (z - half) * z.ln() - z + T::lit(HALF_LN_TWO_PI) + series;
    Ok(stirling - shift.ln())
}

/// Digamma ψ(x) = d/dx ln Γ(x), for x > 0.
pub fn digamma<T: Real>(x: T) -> Result<T, SpecialError> {
    check_domain("digamma", x)?;
    let threshold = T::lit(ASYMPTOTIC_THRESHOLD);
    let mut z = x;
    let mut reciprocal_sum = T::zero();
    while z < threshold {
        reciprocal_sum = reciprocal_sum + z.recip();
        z = z + T::one();
    }
    let inv = z.recip();
    let inv2 = inv * inv;
    let asymptotic = z.ln() - T::lit(0.5) * inv - horner(&DIGAMMA_SERIES, inv2) * inv2;
    Ok(asymptotic - reciprocal_sum)
}

/// Trigamma ψ′(x), for x > 0.
pub fn trigamma<T: Real>(x: T) -> Result<T, SpecialError> {
    check_domain("trigamma", x)?;
    let threshold = T::lit(ASYMPTOTIC_THRESHOLD);
    let mut z = x;
    let mut square_sum = T::zero();
    while z < threshold {
        square_sum = square_sum + (z * z).recip();
        z = z + T::one();
    }
    let inv = z.recip();
    let inv2 = inv * inv;
    let asymptotic = inv + T::lit(0.5) * inv2 + horner(&TRIGAMMA_SERIES, inv2) * inv2 * inv;
    let value = asymptotic + square_sum;
    if !value.is_finite() {
        return Err(SpecialError::Overflow {
            function: "trigamma",
            x: x.as_f64(),
        });
    }
    Ok(value)
}

/// ln Σ exp(values), stabilised by the running maximum. Empty input gives −∞.
pub fn log_sum_exp<T: Real>(values: &[T]) -> T {
    let max = values
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    if !max.is_finite() {
        return max;
    }
    let sum: T = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}
