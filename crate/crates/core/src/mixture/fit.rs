//! Initialization and the coordinate-ascent loop.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::cluster::{refresh_log_weights, Cluster};
use super::elbo::{alpha_beta_terms, shared_terms};
use super::estep::e_step_core;
use super::mstep::{accumulate_stats, alpha_step, beta_step, update_clusters};
use super::scale::{solve_nu, GmmState, PosteriorState, ScalePosterior, ScalePrior, SmmState};
use super::{check_data, FitOptions, Priors, Responsibilities, ScaleMoments, SufficientStats};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::numkernel::density::spd_cholesky;

/// A variational posterior the generic loop can drive.
pub trait VbModel: Clone + Send + Sync {
    fn clusters(&self) -> &[Cluster];
    /// `None` means u ≡ 1.
    fn scale_priors(&self) -> Option<Vec<ScalePrior>>;
    /// Every parameter update that follows the E-step.
    fn update(&mut self, stats: &SufficientStats, priors: &Priors) -> Result<Vec<String>>;
    /// ELBO terms beyond the shared ones.
    fn extra_elbo(&self, priors: &Priors) -> Result<f64>;
}

impl VbModel for PosteriorState {
    fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    fn scale_priors(&self) -> Option<Vec<ScalePrior>> {
        Some(PosteriorState::scale_priors(self))
    }

    fn update(&mut self, stats: &SufficientStats, priors: &Priors) -> Result<Vec<String>> {
        self.clusters = update_clusters(stats, priors)?;
        *self = beta_step(stats, priors, &alpha_step(stats, priors, self)?)?;
        Ok(Vec::new())
    }

    fn extra_elbo(&self, priors: &Priors) -> Result<f64> {
        alpha_beta_terms(&self.scales, priors)
    }
}

impl VbModel for SmmState {
    fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    fn scale_priors(&self) -> Option<Vec<ScalePrior>> {
        Some(SmmState::scale_priors(self))
    }

    fn update(&mut self, stats: &SufficientStats, priors: &Priors) -> Result<Vec<String>> {
        self.clusters = update_clusters(stats, priors)?;
        let mut warnings = Vec::new();
        for k in 0..self.nu.len() {
            if stats.empty[k] {
                continue;
            }
            let (nu, clamped) = solve_nu(stats.pi_bar[k], stats.omega_bar[k], stats.delta_bar[k]);
            if clamped {
                let msg = format!("degrees of freedom of cluster {k} clamped to {nu}");
                log::warn!("{msg}");
                warnings.push(msg);
            }
            self.nu[k] = nu;
        }
        Ok(warnings)
    }

    fn extra_elbo(&self, _: &Priors) -> Result<f64> {
        Ok(0.0)
    }
}

impl VbModel for GmmState {
    fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    fn scale_priors(&self) -> Option<Vec<ScalePrior>> {
        None
    }

    fn update(&mut self, stats: &SufficientStats, priors: &Priors) -> Result<Vec<String>> {
        self.clusters = update_clusters(stats, priors)?;
        Ok(Vec::new())
    }

    fn extra_elbo(&self, _: &Priors) -> Result<f64> {
        Ok(0.0)
    }
}

#[derive(Debug, Clone)]
pub struct FitReport<S> {
    pub elbo_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub final_state: S,
    pub responsibilities: Responsibilities,
    pub scales: ScaleMoments,
    pub warnings: Vec<String>,
}

impl<S> FitReport<S> {
    pub fn final_elbo(&self) -> f64 {
        self.elbo_trace.last().copied().unwrap_or(f64::NAN)
    }
}

/// Random responsibilities, cluster centres drawn around the data, unit
/// expected covariances and the (α, β) block at its prior.
pub fn init_random(
    data: &FeatureMatrix,
    k: usize,
    priors: &Priors,
    seed: u64,
) -> Result<(PosteriorState, Responsibilities)> {
    priors.validate()?;
    let d = priors.dim();
    check_data(data, d)?;
    let n = data.len();
    if k == 0 || n < k {
        return Err(Error::Validation(format!("need 1 <= K <= N, got K = {k}, N = {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = DMatrix::from_fn(n, k, |_, _| rng.random::<f64>());
    for mut row in r.row_iter_mut() {
        let s = row.sum();
        if s > 0.0 {
            row /= s;
        } else {
            row.fill(1.0 / k as f64);
        }
    }
    let resp = Responsibilities { r };

    let mean = data.mean();
    let mut cov = data.covariance();
    let chol = match spd_cholesky(&cov) {
        Ok(c) => c,
        Err(_) => {
            log::warn!("data covariance is degenerate; adding 1e-6 jitter for centre draws");
            cov += DMatrix::identity(d, d) * 1e-6;
            spd_cholesky(&cov)?
        }
    };
    let l = chol.l();
    let mut clusters = Vec::with_capacity(k);
    for j in 0..k {
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mu = &mean + &l * z;
        let count: f64 = resp.r.column(j).sum();
        let gamma = priors.gamma0 + count;
        clusters.push(Cluster::new(
            priors.kappa0 + count,
            priors.eta0 + count,
            mu,
            gamma,
            DMatrix::identity(d, d) * gamma,
        )?);
    }
    refresh_log_weights(&mut clusters);

    let is_seed = crate::seed::splitmix64(seed ^ 0xA1FA_5EED);
    let mut state = PosteriorState { clusters, scales: Vec::with_capacity(k), is_seed, is_draws: 0 };
    state.is_draws = crate::numkernel::alpha::DEFAULT_IS_DRAWS;
    for j in 0..k {
        state.scales.push(ScalePosterior::new(
            priors.p0.ln(),
            priors.r0,
            priors.q0,
            priors.s0,
            state.is_draws,
            state.cluster_is_seed(j),
        )?);
    }
    Ok((state, resp))
}

pub fn fit_gsmm(data: &FeatureMatrix, k: usize, priors: &Priors, opts: &FitOptions) -> Result<FitReport<PosteriorState>> {
    let (state, _) = init_random(data, k, priors, opts.seed)?;
    fit_gsmm_from(data, state, priors, opts)
}

pub fn fit_gsmm_from(
    data: &FeatureMatrix,
    mut state: PosteriorState,
    priors: &Priors,
    opts: &FitOptions,
) -> Result<FitReport<PosteriorState>> {
    if state.is_draws != opts.is_draws {
        state.is_draws = opts.is_draws;
        for k in 0..state.k() {
            let seed = state.cluster_is_seed(k);
            state.scales[k].refresh_alpha(opts.is_draws, seed)?;
        }
    }
    run_vb(data, state, priors, opts)
}

pub fn fit_smm(data: &FeatureMatrix, k: usize, priors: &Priors, opts: &FitOptions) -> Result<FitReport<SmmState>> {
    let (state, _) = init_random(data, k, priors, opts.seed)?;
    fit_smm_from(data, SmmState::from_gsmm(&state), priors, opts)
}

pub fn fit_smm_from(data: &FeatureMatrix, state: SmmState, priors: &Priors, opts: &FitOptions) -> Result<FitReport<SmmState>> {
    run_vb(data, state, priors, opts)
}

/// Variational Gaussian mixture; the u ≡ 1 reference.
pub fn fit_gmm(data: &FeatureMatrix, k: usize, priors: &Priors, opts: &FitOptions) -> Result<FitReport<GmmState>> {
    let (state, _) = init_random(data, k, priors, opts.seed)?;
    fit_gmm_from(data, GmmState::from_gsmm(&state), priors, opts)
}

pub fn fit_gmm_from(data: &FeatureMatrix, state: GmmState, priors: &Priors, opts: &FitOptions) -> Result<FitReport<GmmState>> {
    run_vb(data, state, priors, opts)
}

fn run_vb<S: VbModel>(data: &FeatureMatrix, mut state: S, priors: &Priors, opts: &FitOptions) -> Result<FitReport<S>> {
    priors.validate()?;
    check_data(data, priors.dim())?;
    if state.clusters().is_empty() || data.len() < state.clusters().len() {
        return Err(Error::Validation(format!(
            "need 1 <= K <= N, got K = {}, N = {}",
            state.clusters().len(),
            data.len()
        )));
    }
    if opts.max_iter == 0 {
        return Err(Error::Config("max_iter must be at least 1".into()));
    }
    let mut trace: Vec<f64> = Vec::new();
    let mut warnings = Vec::new();
    let mut converged = false;
    for iteration in 1..=opts.max_iter {
        let sp = state.scale_priors();
        let (resp, scales) = e_step_core(data, state.clusters(), sp.as_deref())?;
        let stats = accumulate_stats(data, &resp, &scales, priors)?;
        warnings.extend(state.update(&stats, priors)?);
        let sp = state.scale_priors();
        let mut terms = shared_terms(data, state.clusters(), sp.as_deref(), &resp, &scales, priors)?;
        terms.alpha_beta = state.extra_elbo(priors)?;
        let value = terms.checked_total()?;
        if let Some(&previous) = trace.last() {
            let previous: f64 = previous;
            if value < previous - opts.elbo_slack * previous.abs() {
                return Err(Error::ElboDecrease { iteration, previous, current: value });
            }
            trace.push(value);
            if (value - previous).abs() < opts.tol {
                converged = true;
                break;
            }
        } else {
            trace.push(value);
        }
    }
    if !converged {
        let msg = format!("no convergence within {} iterations", opts.max_iter);
        log::info!("{msg}");
        warnings.push(msg);
    }
    // reported assignments are those of the final parameters
    let sp = state.scale_priors();
    let (responsibilities, scales) = e_step_core(data, state.clusters(), sp.as_deref())?;
    Ok(FitReport { iterations: trace.len(), elbo_trace: trace, converged, final_state: state, responsibilities, scales, warnings })
}
