//! One component's Dirichlet / Normal-inverse-Wishart posterior block.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numkernel::density::{ln_det, mahalanobis_sq_diff, spd_cholesky, Chol};
use crate::numkernel::special::digamma;

/// q(μ, Σ) = N(μ | μ̃, Σ/η̃) IW(Σ | γ̃, Σ̃), together with the Dirichlet count κ̃
/// and the moments every step reads.
#[derive(Debug, Clone)]
pub struct Cluster {
    pub kappa: f64,
    pub eta: f64,
    pub mu: DVector<f64>,
    pub gamma: f64,
    pub sigma: DMatrix<f64>,
    /// E[ln a_k]; set by [`refresh_log_weights`] since it needs every κ̃.
    pub e_log_a: f64,
    /// E[ln |Σ_k|].
    pub e_log_det_sigma: f64,
    pub ln_det_sigma: f64,
    chol: Chol,
}

impl Cluster {
    pub fn new(kappa: f64, eta: f64, mu: DVector<f64>, gamma: f64, sigma: DMatrix<f64>) -> Result<Self> {
        let d = mu.len();
        for (name, v) in [("kappa", kappa), ("eta", eta)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("cluster {name} must be positive, got {v}")));
            }
        }
        if !(gamma > d as f64 - 1.0) {
            return Err(Error::Validation(format!("cluster gamma {gamma} must exceed d - 1")));
        }
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite cluster mean".into()));
        }
        let chol = spd_cholesky(&sigma)?;
        let ln_det_sigma = ln_det(&chol);
        let e_log_det_sigma = ln_det_sigma
            - (1..=d).map(|i| digamma((gamma + 1.0 - i as f64) / 2.0)).sum::<f64>()
            - d as f64 * std::f64::consts::LN_2;
        Ok(Self { kappa, eta, mu, gamma, sigma, e_log_a: 0.0, e_log_det_sigma, ln_det_sigma, chol })
    }

    /// As [`new`](Self::new), retrying once with a small diagonal jitter when Σ̃
    /// fails to factor.
    pub(crate) fn new_with_jitter(
        kappa: f64,
        eta: f64,
        mu: DVector<f64>,
        gamma: f64,
        sigma: DMatrix<f64>,
    ) -> Result<Self> {
        match Self::new(kappa, eta, mu.clone(), gamma, sigma.clone()) {
            Err(Error::NotPositiveDefinite(msg)) => {
                let d = sigma.nrows();
                let jitter = 1e-6 * (sigma.trace().abs() / d as f64).max(1.0);
                log::warn!("posterior scale matrix not SPD ({msg}); retrying with jitter {jitter:e}");
                Self::new(kappa, eta, mu, gamma, sigma + DMatrix::identity(d, d) * jitter)
            }
            other => other,
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn chol(&self) -> &Chol {
        &self.chol
    }

    /// E[(x − μ)ᵀ Σ⁻¹ (x − μ)] = γ̃ (x − μ̃)ᵀ Σ̃⁻¹ (x − μ̃) + d / η̃.
    pub fn expected_mahalanobis(&self, x: &DVector<f64>) -> f64 {
        self.gamma * mahalanobis_sq_diff(&(x - &self.mu), &self.chol) + self.dim() as f64 / self.eta
    }

    /// E[Σ⁻¹] = γ̃ Σ̃⁻¹.
    pub fn expected_precision(&self) -> DMatrix<f64> {
        self.chol.inverse() * self.gamma
    }

    /// tr(A Σ̃⁻¹).
    pub(crate) fn trace_against_inverse(&self, a: &DMatrix<f64>) -> f64 {
        self.chol.solve(a).trace()
    }
}

/// E[ln a_k] = ψ(κ̃_k) − ψ(Σ κ̃).
pub(crate) fn refresh_log_weights(clusters: &mut [Cluster]) {
    let total: f64 = clusters.iter().map(|c| c.kappa).sum();
    let psi_total = digamma(total);
    for c in clusters.iter_mut() {
        c.e_log_a = digamma(c.kappa) - psi_total;
    }
}
