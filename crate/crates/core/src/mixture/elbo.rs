//! The evidence lower bound, split into named terms for diagnostics.

use std::f64::consts::{LN_2, PI};

use super::cluster::Cluster;
use super::scale::{PosteriorState, ScalePosterior, ScalePrior};
use super::{Priors, Responsibilities, ScaleMoments};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::numkernel::alpha::AlphaPosterior;
use crate::numkernel::density::{ln_det, spd_cholesky};
use crate::numkernel::special::{ln_gamma, ln_multigamma};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ElboTerms {
    /// E[ln p(X | U, Z, Θ)].
    pub likelihood: f64,
    /// E[ln p(Z | a)] − E[ln q(Z)].
    pub assignments: f64,
    /// E[ln p(U | Z, α, β)] − E[ln q(U | Z)].
    pub scales: f64,
    /// E[ln p(a)] − E[ln q(a)].
    pub weights: f64,
    /// E[ln p(μ, Σ)] − E[ln q(μ, Σ)].
    pub normal_wishart: f64,
    /// E[ln p(α, β)] − E[ln q(α, β)].
    pub alpha_beta: f64,
}

impl ElboTerms {
    pub fn total(&self) -> f64 {
        self.likelihood + self.assignments + self.scales + self.weights + self.normal_wishart + self.alpha_beta
    }

    pub(crate) fn checked_total(&self) -> Result<f64> {
        let named = [
            ("likelihood", self.likelihood),
            ("assignments", self.assignments),
            ("scales", self.scales),
            ("weights", self.weights),
            ("normal_wishart", self.normal_wishart),
            ("alpha_beta", self.alpha_beta),
        ];
        for (name, v) in named {
            if !v.is_finite() {
                return Err(Error::Numerical(format!("ELBO term {name} is {v}")));
            }
        }
        Ok(self.total())
    }
}

pub fn elbo(
    data: &FeatureMatrix,
    state: &PosteriorState,
    resp: &Responsibilities,
    scales: &ScaleMoments,
    priors: &Priors,
) -> Result<f64> {
    let mut terms = shared_terms(data, &state.clusters, Some(&state.scale_priors()), resp, scales, priors)?;
    terms.alpha_beta = alpha_beta_terms(&state.scales, priors)?;
    terms.checked_total()
}

/// Everything except the (α, β) block.
pub(crate) fn shared_terms(
    data: &FeatureMatrix,
    clusters: &[Cluster],
    scale_priors: Option<&[ScalePrior]>,
    resp: &Responsibilities,
    scales: &ScaleMoments,
    priors: &Priors,
) -> Result<ElboTerms> {
    let d = priors.dim();
    let df = d as f64;
    let ln_2pi = (2.0 * PI).ln();
    let mut t = ElboTerms::default();

    for (k, c) in clusters.iter().enumerate() {
        for (n, x) in data.rows.iter().enumerate() {
            let r = resp.r[(n, k)];
            if r == 0.0 {
                continue;
            }
            let e_u = scales.e_u[(n, k)];
            let e_log_u = scales.e_log_u[(n, k)];
            let e_d = c.expected_mahalanobis(x);
            t.likelihood += r * (0.5 * df * e_log_u - 0.5 * df * ln_2pi - 0.5 * c.e_log_det_sigma - 0.5 * e_u * e_d);
            t.assignments += r * (c.e_log_a - r.ln());
            if let Some(sp) = scale_priors {
                let p = &sp[k];
                let (a, b) = (scales.alpha[(n, k)], scales.beta[(n, k)]);
                let log_prior =
                    p.e_alpha * p.e_log_beta - p.e_ln_gamma_alpha + (p.e_alpha - 1.0) * e_log_u - p.e_beta * e_u;
                let neg_entropy = a * b.ln() - ln_gamma(a) + (a - 1.0) * e_log_u - b * e_u;
                t.scales += r * (log_prior - neg_entropy);
            }
        }
    }

    let k_total = clusters.len() as f64;
    let kappa_sum: f64 = clusters.iter().map(|c| c.kappa).sum();
    t.weights = ln_gamma(k_total * priors.kappa0) - k_total * ln_gamma(priors.kappa0) - ln_gamma(kappa_sum)
        + clusters
            .iter()
            .map(|c| (priors.kappa0 - c.kappa) * c.e_log_a + ln_gamma(c.kappa))
            .sum::<f64>();

    let ln_c0 = ln_c_iw(priors.gamma0, ln_det(&spd_cholesky(&priors.sigma0)?), d);
    for c in clusters {
        let diff = &c.mu - &priors.mu0;
        let e_quad = c.gamma * crate::numkernel::density::mahalanobis_sq_diff(&diff, c.chol()) + df / c.eta;
        let normal = 0.5 * df * (priors.eta0 / c.eta).ln() - 0.5 * priors.eta0 * e_quad + 0.5 * df;
        let wishart = ln_c0 - ln_c_iw(c.gamma, c.ln_det_sigma, d) + 0.5 * (c.gamma - priors.gamma0) * c.e_log_det_sigma
            - 0.5 * c.gamma * c.trace_against_inverse(&priors.sigma0)
            + 0.5 * df * c.gamma;
        t.normal_wishart += normal + wishart;
    }
    Ok(t)
}

/// ln of the inverse-Wishart normalizing constant, from ln |S|.
fn ln_c_iw(gamma: f64, ln_det_s: f64, d: usize) -> f64 {
    0.5 * gamma * ln_det_s - 0.5 * d as f64 * gamma * LN_2 - ln_multigamma(gamma / 2.0, d)
}

pub(crate) fn alpha_beta_terms(scales: &[ScalePosterior], priors: &Priors) -> Result<f64> {
    let ln_m0 = AlphaPosterior::from_p(priors.p0, priors.r0)?.log_normalizer_at(log::Level::Debug)?;
    let beta_prior_const = priors.s0 * priors.q0.ln() - ln_gamma(priors.s0);
    let mut total = 0.0;
    for s in scales {
        let ln_m = s.alpha_posterior()?.log_normalizer_at(log::Level::Debug)?;
        let alpha = ln_m - ln_m0 + (s.e_alpha - 1.0) * (priors.p0.ln() - s.log_p) + (s.r - priors.r0) * s.e_ln_gamma_alpha;
        let beta = beta_prior_const + (priors.s0 - 1.0) * s.e_log_beta - priors.q0 * s.e_beta
            - (s.s * s.q.ln() - ln_gamma(s.s) + (s.s - 1.0) * s.e_log_beta - s.s);
        total += alpha + beta;
    }
    Ok(total)
}
