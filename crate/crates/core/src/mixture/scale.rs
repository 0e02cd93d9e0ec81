//! The three scale models: random (α, β) for the GSMM, a deterministic ν for
//! the SMM, and u ≡ 1 for the Gaussian reference.

use crate::error::{Error, Result};
use crate::numkernel::alpha::{AlphaPosterior, MomentRoute};
use crate::numkernel::special::{digamma, ln_gamma};

use super::cluster::Cluster;

/// Expectations under q(α_k) q(β_k) that enter the E-step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalePrior {
    pub e_alpha: f64,
    pub e_ln_gamma_alpha: f64,
    pub e_beta: f64,
    pub e_log_beta: f64,
}

impl ScalePrior {
    /// u ~ G(ν/2, ν/2).
    pub fn student(nu: f64) -> Self {
        let h = nu / 2.0;
        Self { e_alpha: h, e_ln_gamma_alpha: ln_gamma(h), e_beta: h, e_log_beta: h.ln() }
    }
}

/// q(α_k) ∝ p̃^(α−1) / Γ(α)^r̃ and q(β_k) = G(s̃, q̃), with cached moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalePosterior {
    pub log_p: f64,
    pub r: f64,
    pub q: f64,
    pub s: f64,
    pub e_alpha: f64,
    pub e_ln_gamma_alpha: f64,
    pub e_beta: f64,
    pub e_log_beta: f64,
    pub alpha_route: MomentRoute,
    pub alpha_std_error: f64,
}

impl ScalePosterior {
    pub fn new(log_p: f64, r: f64, q: f64, s: f64, draws: usize, seed: u64) -> Result<Self> {
        let mut out = Self {
            log_p,
            r,
            q,
            s,
            e_alpha: f64::NAN,
            e_ln_gamma_alpha: f64::NAN,
            e_beta: f64::NAN,
            e_log_beta: f64::NAN,
            alpha_route: MomentRoute::Laplace,
            alpha_std_error: 0.0,
        };
        out.refresh_alpha(draws, seed)?;
        out.refresh_beta()?;
        Ok(out)
    }

    pub fn alpha_posterior(&self) -> Result<AlphaPosterior> {
        AlphaPosterior::new(self.log_p, self.r)
    }

    pub(crate) fn refresh_alpha(&mut self, draws: usize, seed: u64) -> Result<()> {
        let m = self.alpha_posterior()?.moments(draws, seed)?;
        self.e_alpha = m.e_alpha;
        self.e_ln_gamma_alpha = m.e_ln_gamma;
        self.alpha_route = m.route;
        self.alpha_std_error = m.std_error;
        Ok(())
    }

    pub(crate) fn refresh_beta(&mut self) -> Result<()> {
        if !(self.q > 0.0 && self.s > 0.0) {
            return Err(Error::Numerical(format!("beta posterior G({}, {}) is improper", self.s, self.q)));
        }
        self.e_beta = self.s / self.q;
        self.e_log_beta = digamma(self.s) - self.q.ln();
        Ok(())
    }

    pub fn scale_prior(&self) -> ScalePrior {
        ScalePrior {
            e_alpha: self.e_alpha,
            e_ln_gamma_alpha: self.e_ln_gamma_alpha,
            e_beta: self.e_beta,
            e_log_beta: self.e_log_beta,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PosteriorState {
    pub clusters: Vec<Cluster>,
    pub scales: Vec<ScalePosterior>,
    /// Seed of the importance sampler; cluster k uses a fixed child of it on
    /// every iteration.
    pub is_seed: u64,
    pub is_draws: usize,
}

impl PosteriorState {
    pub fn k(&self) -> usize {
        self.clusters.len()
    }

    pub fn dim(&self) -> usize {
        self.clusters.first().map_or(0, |c| c.dim())
    }

    pub fn scale_priors(&self) -> Vec<ScalePrior> {
        self.scales.iter().map(|s| s.scale_prior()).collect()
    }

    pub(crate) fn cluster_is_seed(&self, k: usize) -> u64 {
        crate::seed::child_seed(self.is_seed, &[k as u64])
    }
}

pub const NU_BOUNDS: (f64, f64) = (0.1, 200.0);

#[derive(Debug, Clone)]
pub struct SmmState {
    pub clusters: Vec<Cluster>,
    pub nu: Vec<f64>,
}

impl SmmState {
    pub fn k(&self) -> usize {
        self.clusters.len()
    }

    pub fn dim(&self) -> usize {
        self.clusters.first().map_or(0, |c| c.dim())
    }

    /// Same Gaussian block as a GSMM state, with ν_k = 2 E[α_k].
    pub fn from_gsmm(state: &PosteriorState) -> Self {
        let nu = state.scales.iter().map(|s| (2.0 * s.e_alpha).clamp(NU_BOUNDS.0, NU_BOUNDS.1)).collect();
        Self { clusters: state.clusters.clone(), nu }
    }

    pub fn scale_priors(&self) -> Vec<ScalePrior> {
        self.nu.iter().map(|&nu| ScalePrior::student(nu)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct GmmState {
    pub clusters: Vec<Cluster>,
}

impl GmmState {
    pub fn from_gsmm(state: &PosteriorState) -> Self {
        Self { clusters: state.clusters.clone() }
    }
}

/// Root of ln(ν/2) + 1 − ψ(ν/2) + (δ̄ − ω̄)/π̄ on [`NU_BOUNDS`], by bisection.
///
/// Returns the root and whether it had to be clamped to a bound.
pub fn solve_nu(pi_bar: f64, omega_bar: f64, delta_bar: f64) -> (f64, bool) {
    let c = (delta_bar - omega_bar) / pi_bar;
    let g = |nu: f64| (nu / 2.0).ln() + 1.0 - digamma(nu / 2.0) + c;
    let (mut lo, mut hi) = NU_BOUNDS;
    // g is strictly decreasing in ν
    if !(g(lo) > 0.0) {
        return (lo, true);
    }
    if !(g(hi) < 0.0) {
        return (hi, true);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi {
            break;
        }
    }
    (0.5 * (lo + hi), false)
}
