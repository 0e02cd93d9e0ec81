//! Numerical kernels: special functions, quadrature, Student-t densities and
//! the α-posterior estimators.

pub mod alpha;
pub mod density;
pub mod quadrature;
pub mod special;

pub use alpha::{AlphaMoments, AlphaPosterior, Constant, Identity, LnGamma, MomentRoute, PositiveFn};
pub use density::{
    gaussian_gamma_marginal_check, gen_student_t_logpdf, mahalanobis_sq, spd_cholesky, student_t_logpdf,
    GammaParams, McEstimate,
};
pub use special::{digamma, inv_digamma, ln_gamma, trigamma};
