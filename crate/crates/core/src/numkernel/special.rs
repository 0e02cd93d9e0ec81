//! Gamma-family special functions on the positive half-line.
//!
//! The unchecked functions return NaN outside their domain so they can sit in
//! inner loops; the `*_checked` variants report a [`Error::Domain`] instead.

use std::f64::consts::PI;

use crate::error::{Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Below this argument the recurrences shift `x` upward before the
/// asymptotic series is applied.
const ASYMPTOTIC_MIN: f64 = 10.0;

/// ln Γ(x) for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    if !(x > 0.0) || x.is_nan() {
        return f64::NAN;
    }
    if x.is_infinite() {
        return f64::INFINITY;
    }
    if x == 1.0 || x == 2.0 {
        return 0.0;
    }
    if x >= ASYMPTOTIC_MIN {
        return stirling(x);
    }
    // ln Γ(x) = ln Γ(x + n) - ln(x (x+1) ... (x+n-1))
    let mut shifted = x;
    let mut product = 1.0;
    while shifted < ASYMPTOTIC_MIN {
        product *= shifted;
        shifted += 1.0;
    }
    stirling(shifted) - product.ln()
}

fn stirling(x: f64) -> f64 {
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv
        * (1.0 / 12.0
            + inv2
                * (-1.0 / 360.0
                    + inv2
                        * (1.0 / 1260.0
                            + inv2
                                * (-1.0 / 1680.0
                                    + inv2 * (1.0 / 1188.0 + inv2 * (-691.0 / 360_360.0 + inv2 / 156.0))))));
    (x - 0.5) * x.ln() - x + HALF_LN_2PI + series
}

/// Digamma ψ(x) = d/dx ln Γ(x) for x > 0.
pub fn digamma(x: f64) -> f64 {
    if !(x > 0.0) || x.is_nan() {
        return f64::NAN;
    }
    if x.is_infinite() {
        return f64::INFINITY;
    }
    let mut acc = 0.0;
    let mut z = x;
    while z < ASYMPTOTIC_MIN {
        acc -= 1.0 / z;
        z += 1.0;
    }
    let inv2 = 1.0 / (z * z);
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32_760.0 - inv2 / 12.0))))));
    acc + z.ln() - 0.5 / z - series
}

/// Trigamma ψ′(x) for x > 0.
pub fn trigamma(x: f64) -> f64 {
    if !(x > 0.0) || x.is_nan() {
        return f64::NAN;
    }
    if x.is_infinite() {
        return 0.0;
    }
    let mut acc = 0.0;
    let mut z = x;
    while z < ASYMPTOTIC_MIN {
        acc += 1.0 / (z * z);
        z += 1.0;
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    let series = inv
        + 0.5 * inv2
        + inv
            * inv2
            * (1.0 / 6.0
                - inv2
                    * (1.0 / 30.0
                        - inv2
                            * (1.0 / 42.0
                                - inv2 * (1.0 / 30.0 - inv2 * (5.0 / 66.0 - inv2 * (691.0 / 2730.0 - inv2 * 7.0 / 6.0))))));
    acc + series
}

/// Inverse of the digamma function on (0, ∞): returns x with ψ(x) = y.
pub fn inv_digamma(y: f64) -> f64 {
    if y.is_nan() {
        return f64::NAN;
    }
    // Starting point from Minka's fixed-point note.
    let mut x = if y >= -2.22 {
        y.exp() + 0.5
    } else {
        -1.0 / (y + 0.577_215_664_901_532_9)
    };
    for _ in 0..100 {
        let step = (digamma(x) - y) / trigamma(x);
        let mut next = x - step;
        if next <= 0.0 {
            next = 0.5 * x;
        }
        let done = (next - x).abs() <= 1e-15 * x.max(1e-300);
        x = next;
        if done {
            break;
        }
    }
    x
}

/// ln Γ_d(a), the log multivariate gamma function.
pub fn ln_multigamma(a: f64, d: usize) -> f64 {
    let df = d as f64;
    let mut acc = 0.25 * df * (df - 1.0) * PI.ln();
    for i in 1..=d {
        acc += ln_gamma(a + 0.5 * (1.0 - i as f64));
    }
    acc
}

fn check(function: &'static str, x: f64, value: f64) -> Result<f64> {
    if x > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Domain { function, x })
    }
}

pub fn ln_gamma_checked(x: f64) -> Result<f64> {
    check("ln_gamma", x, ln_gamma(x))
}

pub fn digamma_checked(x: f64) -> Result<f64> {
    check("digamma", x, digamma(x))
}

pub fn trigamma_checked(x: f64) -> Result<f64> {
    check("trigamma", x, trigamma(x))
}
