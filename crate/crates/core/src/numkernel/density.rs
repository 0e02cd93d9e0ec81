//! Multivariate Student-t densities and their Gaussian-Gamma building blocks.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use super::special::ln_gamma;
use crate::error::{Error, Result};

pub type Chol = Cholesky<f64, Dyn>;

/// Cholesky factorization of a symmetric positive-definite matrix.
pub fn spd_cholesky(sigma: &DMatrix<f64>) -> Result<Chol> {
    if !sigma.is_square() {
        return Err(Error::Shape {
            expected: "square matrix".into(),
            got: format!("{}x{}", sigma.nrows(), sigma.ncols()),
        });
    }
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite("non-finite entry".into()));
    }
    Cholesky::new(sigma.clone()).ok_or_else(|| {
        Error::NotPositiveDefinite(format!("{}x{} factorization failed", sigma.nrows(), sigma.ncols()))
    })
}

/// ln |Σ| from the Cholesky factor of Σ.
pub fn ln_det(chol: &Chol) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// (x − μ)ᵀ Σ⁻¹ (x − μ), via a triangular solve against the Cholesky factor of Σ.
pub fn mahalanobis_sq(x: &DVector<f64>, mu: &DVector<f64>, chol: &Chol) -> f64 {
    let diff = x - mu;
    mahalanobis_sq_diff(&diff, chol)
}

pub(crate) fn mahalanobis_sq_diff(diff: &DVector<f64>, chol: &Chol) -> f64 {
    let l = chol.l_dirty();
    let d = diff.len();
    // forward substitution on L y = diff, reading only the lower triangle
    let mut y = vec![0.0; d];
    let mut acc = 0.0;
    for i in 0..d {
        let mut v = diff[i];
        for (j, yj) in y.iter().enumerate().take(i) {
            v -= l[(i, j)] * yj;
        }
        v /= l[(i, i)];
        y[i] = v;
        acc += v * v;
    }
    acc
}

fn check_dims(x: &DVector<f64>, mu: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<()> {
    if x.len() != mu.len() || sigma.nrows() != mu.len() {
        return Err(Error::Shape {
            expected: format!("dimension {}", mu.len()),
            got: format!("x: {}, sigma: {}x{}", x.len(), sigma.nrows(), sigma.ncols()),
        });
    }
    Ok(())
}

/// Log density of the multivariate Student-t with `nu` degrees of freedom.
pub fn student_t_logpdf(x: &DVector<f64>, mu: &DVector<f64>, sigma: &DMatrix<f64>, nu: f64) -> Result<f64> {
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::Domain { function: "student_t_logpdf", x: nu });
    }
    check_dims(x, mu, sigma)?;
    let chol = spd_cholesky(sigma)?;
    let d = mu.len() as f64;
    let dist = mahalanobis_sq(x, mu, &chol);
    let log_norm = ln_gamma(0.5 * (d + nu)) - ln_gamma(0.5 * nu) - 0.5 * d * (nu * PI).ln();
    Ok(log_norm - 0.5 * ln_det(&chol) - 0.5 * (d + nu) * (dist / nu).ln_1p())
}

/// Log density of the Student-t parameterized by a Gamma(α, β) scale mixture.
///
/// With α = β = ν/2 this is exactly [`student_t_logpdf`].
pub fn gen_student_t_logpdf(
    x: &DVector<f64>,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    alpha: f64,
    beta: f64,
) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Domain { function: "gen_student_t_logpdf(alpha)", x: alpha });
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Domain { function: "gen_student_t_logpdf(beta)", x: beta });
    }
    check_dims(x, mu, sigma)?;
    let chol = spd_cholesky(sigma)?;
    let d = mu.len() as f64;
    let dist = mahalanobis_sq(x, mu, &chol);
    let shape = alpha + 0.5 * d;
    let log_norm = ln_gamma(shape) - ln_gamma(alpha) - 0.5 * d * (2.0 * beta * PI).ln();
    Ok(log_norm - 0.5 * ln_det(&chol) - shape * (dist / (2.0 * beta)).ln_1p())
}

pub fn gaussian_logpdf(x: &DVector<f64>, mu: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    check_dims(x, mu, sigma)?;
    let chol = spd_cholesky(sigma)?;
    let d = mu.len() as f64;
    Ok(-0.5 * (d * (2.0 * PI).ln() + ln_det(&chol) + mahalanobis_sq(x, mu, &chol)))
}

/// Gamma distribution in shape/rate form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaParams {
    pub shape: f64,
    pub rate: f64,
}

impl GammaParams {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        if !(shape > 0.0 && shape.is_finite()) {
            return Err(Error::Domain { function: "GammaParams(shape)", x: shape });
        }
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::Domain { function: "GammaParams(rate)", x: rate });
        }
        Ok(Self { shape, rate })
    }

    /// Moment-matched Gamma with the given mean and variance.
    pub fn from_moments(mean: f64, variance: f64) -> Result<Self> {
        Self::new(mean * mean / variance, mean / variance)
    }

    pub fn ln_pdf(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return f64::NEG_INFINITY;
        }
        self.shape * self.rate.ln() - ln_gamma(self.shape) + (self.shape - 1.0) * u.ln() - self.rate * u
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn variance(&self) -> f64 {
        self.shape / (self.rate * self.rate)
    }

    pub fn sampler(&self) -> Gamma<f64> {
        Gamma::new(self.shape, 1.0 / self.rate).expect("validated gamma parameters")
    }
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// Monte Carlo evaluation of ∫ N(x | μ, Σ/u) Gamma(u | ν/2, ν/2) du.
///
/// Exists to check the scale-mixture representation of the Student-t; it is not
/// used by the inference code.
pub fn gaussian_gamma_marginal_check(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    nu: f64,
    x: &DVector<f64>,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n_samples < 2 {
        return Err(Error::Validation("need at least two Monte Carlo draws".into()));
    }
    check_dims(x, mu, sigma)?;
    let mixing = GammaParams::new(0.5 * nu, 0.5 * nu)?;
    let chol = spd_cholesky(sigma)?;
    let d = mu.len() as f64;
    let dist = mahalanobis_sq(x, mu, &chol);
    let base = -0.5 * (d * (2.0 * PI).ln() + ln_det(&chol));
    let sampler = mixing.sampler();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n_samples {
        let u: f64 = sampler.sample(&mut rng);
        // N(x | μ, Σ/u) = u^{d/2} N(x | μ, Σ) evaluated with the scaled distance
        let v = (base + 0.5 * d * u.ln() - 0.5 * u * dist).exp();
        sum += v;
        sum_sq += v * v;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0);
    Ok(McEstimate { value: mean, std_error: (var / n).sqrt() })
}
