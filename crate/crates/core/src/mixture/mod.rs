//! Variational Bayes for the generalized Student-t mixture (GSMM), plus the
//! Student-t mixture with deterministic degrees of freedom (SMM) and a plain
//! Gaussian mixture used as a reference.
//!
//! All three share the Dirichlet / Normal-inverse-Wishart block over
//! (a, μ, Σ) and differ only in the prior on the scale variables u_nk.

mod cluster;
mod elbo;
mod estep;
mod fit;
mod mstep;
mod scale;

pub use cluster::Cluster;
pub(crate) use cluster::refresh_log_weights as refresh_cluster_weights;
pub use elbo::{elbo, ElboTerms};
pub use estep::{e_step, predict};
pub use fit::{fit_gmm, fit_gmm_from, fit_gsmm, fit_gsmm_from, fit_smm, fit_smm_from, init_random, FitReport, VbModel};
pub use mstep::{accumulate_stats, alpha_step, beta_step, m_step};
pub use scale::{solve_nu, GmmState, PosteriorState, ScalePosterior, ScalePrior, SmmState, NU_BOUNDS};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::numkernel::alpha::DEFAULT_IS_DRAWS;

/// Clusters whose mean responsibility falls below this are held at the prior.
pub const EMPTY_CLUSTER_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Priors {
    pub kappa0: f64,
    pub eta0: f64,
    pub mu0: DVector<f64>,
    pub gamma0: f64,
    pub sigma0: DMatrix<f64>,
    pub p0: f64,
    pub q0: f64,
    pub r0: f64,
    pub s0: f64,
}

impl Priors {
    /// Weak defaults centred on the data mean.
    pub fn default_for(data: &FeatureMatrix) -> Self {
        let d = data.dim();
        Self {
            kappa0: 1.0,
            eta0: 1.0,
            mu0: if data.is_empty() { DVector::zeros(d) } else { data.mean() },
            gamma0: d as f64 + 2.0,
            sigma0: DMatrix::identity(d, d),
            p0: 0.9,
            q0: 0.1,
            r0: 1.0,
            s0: 0.1,
        }
    }

    pub fn dim(&self) -> usize {
        self.mu0.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let positive = [
            ("kappa0", self.kappa0),
            ("eta0", self.eta0),
            ("q0", self.q0),
            ("r0", self.r0),
            ("s0", self.s0),
            ("p0", self.p0),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("{name} must be positive, got {v}")));
            }
        }
        if self.p0 > 1.0 {
            return Err(Error::Validation(format!("p0 must not exceed 1, got {}", self.p0)));
        }
        if !(self.gamma0 > d as f64 - 1.0) {
            return Err(Error::Validation(format!("gamma0 must exceed d - 1 = {}, got {}", d as f64 - 1.0, self.gamma0)));
        }
        if self.sigma0.shape() != (d, d) {
            return Err(Error::Shape {
                expected: format!("{d}x{d} sigma0"),
                got: format!("{}x{}", self.sigma0.nrows(), self.sigma0.ncols()),
            });
        }
        if (&self.sigma0 - self.sigma0.transpose()).amax() > 1e-12 * self.sigma0.amax().max(1.0) {
            return Err(Error::Validation("sigma0 must be symmetric".into()));
        }
        crate::numkernel::spd_cholesky(&self.sigma0)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Stop when |L(t) − L(t−1)| falls below this.
    pub tol: f64,
    pub seed: u64,
    pub is_draws: usize,
    /// Tolerated relative ELBO decrease per iteration.
    pub elbo_slack: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_iter: 500, tol: 1e-8, seed: 0, is_draws: DEFAULT_IS_DRAWS, elbo_slack: 1e-6 }
    }
}

/// N × K posterior assignment probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    pub r: DMatrix<f64>,
}

impl Responsibilities {
    pub fn n(&self) -> usize {
        self.r.nrows()
    }

    pub fn k(&self) -> usize {
        self.r.ncols()
    }

    /// Row argmax, lowest index on ties.
    pub fn hard_assignments(&self) -> Vec<usize> {
        self.r
            .row_iter()
            .map(|row| {
                let mut best = 0;
                for (k, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }

    pub fn max_row_sum_error(&self) -> f64 {
        self.r.row_iter().map(|row| (row.sum() - 1.0).abs()).fold(0.0, f64::max)
    }
}

/// Posterior moments of the scale variables given their assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleMoments {
    pub e_u: DMatrix<f64>,
    pub e_log_u: DMatrix<f64>,
    /// Shape and rate of q(u_nk | z_nk = 1). Both are 1 for the Gaussian
    /// reference model, where u ≡ 1.
    pub alpha: DMatrix<f64>,
    pub beta: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    pub n: usize,
    pub pi_bar: Vec<f64>,
    pub omega_bar: Vec<f64>,
    pub delta_bar: Vec<f64>,
    pub mu_x: Vec<DVector<f64>>,
    /// Scale-weighted scatter around `mu_x`, normalized by N ω̄.
    pub sigma_x: Vec<DMatrix<f64>>,
    pub empty: Vec<bool>,
}

impl SufficientStats {
    pub fn k(&self) -> usize {
        self.pi_bar.len()
    }

    /// N π̄_k, or zero for a cluster held at its prior.
    pub(crate) fn n_pi(&self, k: usize) -> f64 {
        if self.empty[k] {
            0.0
        } else {
            self.n as f64 * self.pi_bar[k]
        }
    }

    pub(crate) fn n_omega(&self, k: usize) -> f64 {
        self.n as f64 * self.omega_bar[k]
    }

    pub(crate) fn n_delta(&self, k: usize) -> f64 {
        self.n as f64 * self.delta_bar[k]
    }
}

pub(crate) fn check_data(data: &FeatureMatrix, d: usize) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Validation("empty feature matrix".into()));
    }
    if data.dim() != d {
        return Err(Error::Shape { expected: format!("dimension {d}"), got: format!("dimension {}", data.dim()) });
    }
    Ok(())
}
