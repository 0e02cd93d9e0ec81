//! The posterior over the Gamma shape parameter α:
//!
//! ```text
//! q(α) = p^(α-1) / (M Γ(α)^r),   α > 0
//! ```
//!
//! It is not a standard family, so its normalizer comes from quadrature and its
//! moments from a Tierney–Kadane Laplace ratio or self-normalized importance
//! sampling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;

use super::density::GammaParams;
use super::quadrature::gauss_kronrod;
use super::special::{digamma, inv_digamma, ln_gamma, trigamma};
use crate::error::{Error, Result};

/// Points at which the unnormalized density must already be decreasing before
/// a p > 1 posterior is integrated.
const TAIL_PROBES: [f64; 3] = [10.0, 100.0, 1000.0];

/// Number of Laplace standard deviations that must clear the sign-change zone
/// of ln Γ before the Laplace route is trusted for E[ln Γ(α)].
const ZONE_SIGMAS: f64 = 6.0;
/// ln Γ(α) changes sign at α = 1 and α = 2; this is that zone, widened.
pub const LN_GAMMA_SIGN_ZONE: (f64, f64) = (0.9, 2.1);

pub const DEFAULT_IS_DRAWS: usize = 10_000;
const NEWTON_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaPosterior {
    log_p: f64,
    r: f64,
}

impl AlphaPosterior {
    pub fn new(log_p: f64, r: f64) -> Result<Self> {
        if !log_p.is_finite() {
            return Err(Error::Domain { function: "AlphaPosterior(log p)", x: log_p });
        }
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::Domain { function: "AlphaPosterior(r)", x: r });
        }
        Ok(Self { log_p, r })
    }

    pub fn from_p(p: f64, r: f64) -> Result<Self> {
        if !(p > 0.0) {
            return Err(Error::Domain { function: "AlphaPosterior(p)", x: p });
        }
        Self::new(p.ln(), r)
    }

    pub fn log_p(&self) -> f64 {
        self.log_p
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    /// (α − 1) ln p − r ln Γ(α). NaN for α ≤ 0.
    pub fn log_density_unnorm(&self, alpha: f64) -> f64 {
        if alpha <= 0.0 {
            return f64::NAN;
        }
        (alpha - 1.0) * self.log_p - self.r * ln_gamma(alpha)
    }

    pub fn log_density_unnorm_checked(&self, alpha: f64) -> Result<f64> {
        let v = self.log_density_unnorm(alpha);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Domain { function: "alpha_log_density_unnorm", x: alpha })
        }
    }

    /// The unique maximizer ψ⁻¹(ln p / r) of the density.
    pub fn mode(&self) -> f64 {
        inv_digamma(self.log_p / self.r)
    }

    /// Empirical decay check for p > 1, where propriety is not guaranteed:
    /// the density must be strictly decreasing across α = 10, 100, 1000.
    pub fn tail_test(&self) -> bool {
        TAIL_PROBES
            .windows(2)
            .all(|w| self.log_density_unnorm(w[1]) < self.log_density_unnorm(w[0]))
    }

    /// ln M, where M = ∫₀^∞ p^(α−1) / Γ(α)^r dα.
    ///
    /// The integral is taken in t = ln α, where the integrand decays
    /// exponentially at both ends, and split at the mode.
    pub fn log_normalizer(&self) -> Result<f64> {
        self.log_normalizer_at(log::Level::Warn)
    }

    /// As [`log_normalizer`](Self::log_normalizer), reporting p > 1 at `level`.
    /// Posteriors inside a fit have p > 1 routinely.
    pub fn log_normalizer_at(&self, level: log::Level) -> Result<f64> {
        if self.log_p > 0.0 {
            let passes = self.tail_test();
            log::log!(
                level,
                "alpha normalizer with p = {:.6e} > 1 (r = {}): tail test {}",
                self.log_p.exp(),
                self.r,
                if passes { "passed" } else { "failed" }
            );
            if !passes {
                return Err(Error::Divergent { p: self.log_p.exp(), r: self.r });
            }
        }
        let log_h = |t: f64| self.log_density_unnorm(t.exp()) + t;
        let x0 = self.mode();
        let t0 = x0.ln();
        let sigma_t = (1.0 / (self.r * trigamma(x0))).sqrt() / x0;
        let base_step = sigma_t.clamp(1e-4, 0.5);

        let mut reference = log_h(t0);
        let mut t_hi = t0;
        let mut step = base_step;
        loop {
            t_hi += step;
            let v = log_h(t_hi);
            if v > reference {
                reference = v;
            } else if v < reference - 60.0 {
                break;
            }
            step *= 1.3;
            if t_hi > 60.0 {
                return Err(Error::Divergent { p: self.log_p.exp(), r: self.r });
            }
        }
        let mut t_lo = t0;
        let mut step = base_step;
        loop {
            t_lo -= step;
            let v = log_h(t_lo);
            if v > reference {
                reference = v;
            } else if v < reference - 60.0 {
                break;
            }
            step *= 1.3;
            if t_lo < -700.0 {
                return Err(Error::Numerical("alpha normalizer lower tail does not decay".into()));
            }
        }
        let integrand = |t: f64| (log_h(t) - reference).exp();
        let lower = gauss_kronrod(integrand, t_lo, t0, 1e-12, 0.0, 4000)?;
        let upper = gauss_kronrod(integrand, t0, t_hi, 1e-12, 0.0, 4000)?;
        let total = lower.value + upper.value;
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Numerical(format!("alpha normalizer integral {total}")));
        }
        Ok(reference + total.ln())
    }

    pub fn normalizer(&self) -> Result<f64> {
        Ok(self.log_normalizer()?.exp())
    }

    /// Newton minimization of φ(α) = −ln f(α) − ln g(α), safeguarded by
    /// backtracking and positivity. Returns (minimizer, φ″ at it).
    fn minimize<G: PositiveFn + ?Sized>(&self, g: &G, scale: f64) -> Result<(f64, f64)> {
        let phi = |a: f64| (-self.log_density_unnorm(a) - g.ln_value(a)) / scale;
        let grad = |a: f64| (-self.log_p + self.r * digamma(a) - g.ln_grad(a)) / scale;
        let hess = |a: f64| (self.r * trigamma(a) - g.ln_hess(a)) / scale;

        let mut a = g.start(self.mode());
        let mut value = phi(a);
        for _ in 0..NEWTON_MAX_ITER {
            let gr = grad(a);
            let h = hess(a);
            // fall back to a scaled gradient step where the curvature is not positive
            let mut step = if h > 0.0 { -gr / h } else { -gr.signum() * 0.1 * a };
            let mut next = a + step;
            let mut next_value = f64::INFINITY;
            for _ in 0..60 {
                if next > 0.0 {
                    next_value = phi(next);
                    if next_value.is_finite() && next_value <= value + 1e-15 * value.abs() {
                        break;
                    }
                }
                step *= 0.5;
                next = a + step;
            }
            if !next_value.is_finite() {
                break;
            }
            let moved = (next - a).abs();
            a = next;
            value = next_value;
            if moved <= 1e-13 * a.max(1e-300) || grad(a).abs() <= 1e-14 * (1.0 + self.r) / scale {
                let h = hess(a);
                if h > 0.0 && h.is_finite() {
                    return Ok((a, h));
                }
                break;
            }
        }
        Err(Error::Estimator(format!(
            "Newton search for the Laplace mode did not converge (ln p = {}, r = {})",
            self.log_p, self.r
        )))
    }

    /// Tierney–Kadane estimate of E[g(α)] for a strictly positive g, with
    /// l₁ = −n⁻¹ ln(g f), l₂ = −n⁻¹ ln f.
    pub fn laplace_expectation<G: PositiveFn + ?Sized>(&self, g: &G, n: u32) -> Result<LaplaceEstimate> {
        if n == 0 {
            return Err(Error::Validation("Laplace order n must be positive".into()));
        }
        let n = n as f64;
        let (mode, h2) = self.minimize(&Unit, n)?;
        let (mode_g, h1) = self.minimize(g, n)?;
        if g.ln_value(mode_g).is_nan() {
            return Err(Error::Estimator("g is not positive at the Laplace mode".into()));
        }
        let l1 = (-self.log_density_unnorm(mode_g) - g.ln_value(mode_g)) / n;
        let l2 = -self.log_density_unnorm(mode) / n;
        let value = (h2 / h1).sqrt() * (-n * (l1 - l2)).exp();
        if !value.is_finite() {
            return Err(Error::Estimator(format!("Laplace estimate is {value}")));
        }
        // σ of the Gaussian approximation of q(α) itself
        let sigma = (1.0 / (n * h2)).sqrt();
        Ok(LaplaceEstimate { value, mode, sigma })
    }

    /// Self-normalized importance sampling estimate of E[g(α)] with a Gamma proposal.
    pub fn importance_expectation<G: Fn(f64) -> f64>(
        &self,
        g: G,
        proposal: GammaParams,
        draws: usize,
        seed: u64,
    ) -> Result<IsEstimate> {
        self.importance_expectation_lg(|a, _| g(a), proposal, draws, seed)
    }

    /// As [`importance_expectation`](Self::importance_expectation), with g
    /// also handed ln Γ(α), which the weights need anyway.
    fn importance_expectation_lg<G: Fn(f64, f64) -> f64>(
        &self,
        g: G,
        proposal: GammaParams,
        draws: usize,
        seed: u64,
    ) -> Result<IsEstimate> {
        if draws < 2 {
            return Err(Error::Validation("importance sampling needs at least two draws".into()));
        }
        let sampler = proposal.sampler();
        let proposal_const = proposal.shape * proposal.rate.ln() - ln_gamma(proposal.shape);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut log_w = Vec::with_capacity(draws);
        let mut values = Vec::with_capacity(draws);
        for _ in 0..draws {
            let a: f64 = sampler.sample(&mut rng);
            if a <= 0.0 {
                // underflow of the proposal draw: a zero-weight sample
                log_w.push(f64::NEG_INFINITY);
                values.push(0.0);
                continue;
            }
            let lg = ln_gamma(a);
            let log_target = (a - 1.0) * self.log_p - self.r * lg;
            let log_proposal = proposal_const + (proposal.shape - 1.0) * a.ln() - proposal.rate * a;
            log_w.push(log_target - log_proposal);
            values.push(g(a, lg));
        }
        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::UnreliableEstimate { ess: 0.0, draws });
        }
        let w: Vec<f64> = log_w.iter().map(|lw| (lw - max).exp()).collect();
        let sum_w: f64 = w.iter().sum();
        let sum_w2: f64 = w.iter().map(|x| x * x).sum();
        let value = w.iter().zip(&values).map(|(w, v)| w * v).sum::<f64>() / sum_w;
        let spread: f64 = w.iter().zip(&values).map(|(w, v)| (w * (v - value)).powi(2)).sum();
        let ess = sum_w * sum_w / sum_w2;
        if ess < 0.01 * draws as f64 {
            return Err(Error::UnreliableEstimate { ess, draws });
        }
        Ok(IsEstimate { value, std_error: spread.sqrt() / sum_w, ess })
    }

    /// E[α] and E[ln Γ(α)], choosing the estimator for each.
    pub fn moments(&self, draws: usize, seed: u64) -> Result<AlphaMoments> {
        let laplace_alpha = self.laplace_expectation(&Identity, 1);
        let (e_alpha, mode, sigma) = match laplace_alpha {
            Ok(est) => (est.value, est.mode, est.sigma),
            Err(err) => {
                log::warn!("Laplace E[alpha] failed ({err}); using importance sampling");
                let mode = self.mode();
                let sigma = (1.0 / (self.r * trigamma(mode))).sqrt();
                let proposal = GammaParams::from_moments(mode, 2.0 * sigma * sigma)?;
                let est = self.importance_expectation(|a| a, proposal, draws, seed ^ 0x5151)?;
                (est.value, mode, sigma)
            }
        };
        let lo = mode - ZONE_SIGMAS * sigma;
        let hi = mode + ZONE_SIGMAS * sigma;
        let clear_of_zone = (lo > 0.0 && hi < LN_GAMMA_SIGN_ZONE.0) || lo > LN_GAMMA_SIGN_ZONE.1;
        if clear_of_zone {
            if let Ok(est) = self.laplace_expectation(&LnGamma, 1) {
                return Ok(AlphaMoments {
                    e_alpha,
                    e_ln_gamma: est.value,
                    route: MomentRoute::Laplace,
                    std_error: 0.0,
                });
            }
        }
        let proposal = GammaParams::from_moments(e_alpha, 2.0 * sigma * sigma)?;
        let est = self.importance_expectation_lg(|_, lg| lg, proposal, draws, seed)?;
        Ok(AlphaMoments {
            e_alpha,
            e_ln_gamma: est.value,
            route: MomentRoute::ImportanceSampling,
            std_error: est.std_error,
        })
    }
}

/// A strictly positive function described through ln g and its first two
/// derivatives.
pub trait PositiveFn {
    fn ln_value(&self, alpha: f64) -> f64;
    fn ln_grad(&self, alpha: f64) -> f64;
    fn ln_hess(&self, alpha: f64) -> f64;
    /// Newton starting point given the mode of the density.
    fn start(&self, mode: f64) -> f64 {
        mode
    }
}

/// g ≡ 1.
struct Unit;
impl PositiveFn for Unit {
    fn ln_value(&self, _: f64) -> f64 {
        0.0
    }
    fn ln_grad(&self, _: f64) -> f64 {
        0.0
    }
    fn ln_hess(&self, _: f64) -> f64 {
        0.0
    }
}

/// g ≡ c, c > 0.
#[derive(Debug, Clone, Copy)]
pub struct Constant(pub f64);
impl PositiveFn for Constant {
    fn ln_value(&self, _: f64) -> f64 {
        self.0.ln()
    }
    fn ln_grad(&self, _: f64) -> f64 {
        0.0
    }
    fn ln_hess(&self, _: f64) -> f64 {
        0.0
    }
}

/// g(α) = α.
#[derive(Debug, Clone, Copy)]
pub struct Identity;
impl PositiveFn for Identity {
    fn ln_value(&self, a: f64) -> f64 {
        a.ln()
    }
    fn ln_grad(&self, a: f64) -> f64 {
        1.0 / a
    }
    fn ln_hess(&self, a: f64) -> f64 {
        -1.0 / (a * a)
    }
}

/// g(α) = ln Γ(α); positive only for α < 1 or α > 2.
#[derive(Debug, Clone, Copy)]
pub struct LnGamma;
impl PositiveFn for LnGamma {
    fn ln_value(&self, a: f64) -> f64 {
        let v = ln_gamma(a);
        if v > 0.0 {
            v.ln()
        } else {
            f64::NAN
        }
    }
    fn ln_grad(&self, a: f64) -> f64 {
        digamma(a) / ln_gamma(a)
    }
    fn ln_hess(&self, a: f64) -> f64 {
        let v = ln_gamma(a);
        let d = digamma(a);
        (trigamma(a) * v - d * d) / (v * v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceEstimate {
    pub value: f64,
    /// Mode of the density itself.
    pub mode: f64,
    /// Standard deviation of the Gaussian approximation at that mode.
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsEstimate {
    pub value: f64,
    pub std_error: f64,
    pub ess: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentRoute {
    Laplace,
    ImportanceSampling,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaMoments {
    pub e_alpha: f64,
    pub e_ln_gamma: f64,
    pub route: MomentRoute,
    /// Standard error of `e_ln_gamma`; zero on the Laplace route.
    pub std_error: f64,
}
