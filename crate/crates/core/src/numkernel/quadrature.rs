//! One-dimensional quadrature on finite intervals.
//!
//! [`gauss_kronrod`] is the production integrator: globally adaptive
//! 7/15-point Gauss–Kronrod bisection. [`step_halving`] is a deliberately
//! different route (composite Simpson with repeated halving of the step) used
//! to cross-check it.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const KRONROD_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const KRONROD_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
// Gauss weights for the odd Kronrod nodes (indices 1, 3, 5, 7).
const GAUSS_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * KRONROD_WEIGHTS[7];
    let mut gauss = fc * GAUSS_WEIGHTS[3];
    for (i, (&x, &w)) in KRONROD_NODES.iter().zip(KRONROD_WEIGHTS.iter()).take(7).enumerate() {
        let pair = f(center - half * x) + f(center + half * x);
        kronrod += w * pair;
        if i % 2 == 1 {
            gauss += GAUSS_WEIGHTS[i / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Globally adaptive Gauss–Kronrod integration of `f` over `[a, b]`.
///
/// Stops when the summed error estimate falls below
/// `max(abs_tol, rel_tol * |value|)`.
pub fn gauss_kronrod<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
    max_segments: usize,
) -> Result<QuadResult> {
    if !(a.is_finite() && b.is_finite()) || b < a {
        return Err(Error::Validation(format!("bad integration interval [{a}, {b}]")));
    }
    if a == b {
        return Ok(QuadResult { value: 0.0, error: 0.0, evaluations: 0 });
    }
    let (value, error) = kronrod15(&f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Segment { a, b, value, error });
    let mut total = value;
    let mut total_error = error;
    let mut evaluations = 15;
    while total_error > abs_tol.max(rel_tol * total.abs()) {
        if heap.len() >= max_segments {
            return Err(Error::Numerical(format!(
                "quadrature did not converge on [{a}, {b}]: value {total}, error {total_error}"
            )));
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        let (lv, le) = kronrod15(&f, worst.a, mid);
        let (rv, re) = kronrod15(&f, mid, worst.b);
        evaluations += 30;
        total += lv + rv - worst.value;
        total_error += le + re - worst.error;
        heap.push(Segment { a: worst.a, b: mid, value: lv, error: le });
        heap.push(Segment { a: mid, b: worst.b, value: rv, error: re });
        if !total.is_finite() {
            return Err(Error::Numerical("non-finite integrand".into()));
        }
    }
    // Re-sum to shed the drift of the running updates.
    let value: f64 = heap.iter().map(|s| s.value).sum();
    let error: f64 = heap.iter().map(|s| s.error).sum();
    Ok(QuadResult { value, error, evaluations })
}

/// Composite Simpson's rule, halving the step until two successive estimates
/// agree to `rel_tol`.
pub fn step_halving<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64, max_levels: u32) -> Result<QuadResult> {
    if !(a.is_finite() && b.is_finite()) || b < a {
        return Err(Error::Validation(format!("bad integration interval [{a}, {b}]")));
    }
    let mut n = 16usize;
    let h = (b - a) / n as f64;
    // Keep endpoint, even-node and odd-node sums separately so every level reuses
    // the previous samples.
    let ends = f(a) + f(b);
    let mut evens: f64 = (1..n / 2).map(|i| f(a + 2.0 * i as f64 * h)).sum();
    let mut odds: f64 = (0..n / 2).map(|i| f(a + (2 * i + 1) as f64 * h)).sum();
    let mut evaluations = n + 1;
    let mut previous = h / 3.0 * (ends + 2.0 * evens + 4.0 * odds);
    for _ in 0..max_levels {
        n *= 2;
        let h = (b - a) / n as f64;
        evens += odds;
        odds = (0..n / 2).map(|i| f(a + (2 * i + 1) as f64 * h)).sum();
        evaluations += n / 2;
        let current = h / 3.0 * (ends + 2.0 * evens + 4.0 * odds);
        let diff = (current - previous).abs();
        if diff <= rel_tol * current.abs() {
            return Ok(QuadResult { value: current, error: diff, evaluations });
        }
        previous = current;
    }
    Err(Error::Numerical(format!(
        "step halving did not reach relative tolerance {rel_tol} on [{a}, {b}]"
    )))
}
