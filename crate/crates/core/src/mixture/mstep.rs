//! Sufficient statistics and the conjugate parameter updates.

use nalgebra::{DMatrix, DVector};

use super::cluster::{refresh_log_weights, Cluster};
use super::scale::PosteriorState;
use super::{check_data, Priors, Responsibilities, ScaleMoments, SufficientStats, EMPTY_CLUSTER_THRESHOLD};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

pub fn accumulate_stats(
    data: &FeatureMatrix,
    resp: &Responsibilities,
    scales: &ScaleMoments,
    priors: &Priors,
) -> Result<SufficientStats> {
    let n = data.len();
    let k_total = resp.k();
    let d = priors.dim();
    check_data(data, d)?;
    if resp.n() != n || scales.e_u.shape() != resp.r.shape() || scales.e_log_u.shape() != resp.r.shape() {
        return Err(Error::Shape {
            expected: format!("{n}x{k_total} responsibilities and scale moments"),
            got: format!("{}x{} / {:?}", resp.n(), resp.k(), scales.e_u.shape()),
        });
    }
    let nf = n as f64;
    let mut stats = SufficientStats {
        n,
        pi_bar: vec![0.0; k_total],
        omega_bar: vec![0.0; k_total],
        delta_bar: vec![0.0; k_total],
        mu_x: vec![priors.mu0.clone(); k_total],
        sigma_x: vec![DMatrix::zeros(d, d); k_total],
        empty: vec![false; k_total],
    };
    for k in 0..k_total {
        let mut sum_r = 0.0;
        let mut sum_w = 0.0;
        let mut sum_rl = 0.0;
        let mut sum_wx = DVector::zeros(d);
        for (i, x) in data.rows.iter().enumerate() {
            let r = resp.r[(i, k)];
            let w = r * scales.e_u[(i, k)];
            sum_r += r;
            sum_w += w;
            if r > 0.0 {
                sum_rl += r * scales.e_log_u[(i, k)];
            }
            sum_wx.axpy(w, x, 1.0);
        }
        stats.pi_bar[k] = sum_r / nf;
        if stats.pi_bar[k] < EMPTY_CLUSTER_THRESHOLD || !(sum_w > 0.0) {
            stats.empty[k] = true;
            continue;
        }
        stats.omega_bar[k] = sum_w / nf;
        stats.delta_bar[k] = sum_rl / nf;
        let mean = sum_wx / sum_w;
        let mut scatter = DMatrix::zeros(d, d);
        for (i, x) in data.rows.iter().enumerate() {
            let w = resp.r[(i, k)] * scales.e_u[(i, k)];
            let c = x - &mean;
            scatter.syger(w, &c, &c, 1.0);
        }
        scatter /= sum_w;
        scatter.fill_upper_triangle_with_lower_triangle();
        stats.mu_x[k] = mean;
        stats.sigma_x[k] = scatter;
    }
    Ok(stats)
}

/// Dirichlet / Normal-inverse-Wishart updates shared by every scale model.
pub(crate) fn update_clusters(stats: &SufficientStats, priors: &Priors) -> Result<Vec<Cluster>> {
    let mut clusters = (0..stats.k())
        .map(|k| {
            let n_pi = stats.n_pi(k);
            let n_omega = stats.n_omega(k);
            let kappa = priors.kappa0 + stats.n as f64 * stats.pi_bar[k];
            let eta = priors.eta0 + n_omega;
            let mu = (&priors.mu0 * priors.eta0 + &stats.mu_x[k] * n_omega) / eta;
            let gamma = priors.gamma0 + n_pi;
            let diff = &stats.mu_x[k] - &priors.mu0;
            let mut sigma = &priors.sigma0 + &stats.sigma_x[k] * n_omega;
            sigma.syger(n_omega * priors.eta0 / eta, &diff, &diff, 1.0);
            sigma.fill_upper_triangle_with_lower_triangle();
            Cluster::new_with_jitter(kappa, eta, mu, gamma, sigma)
        })
        .collect::<Result<Vec<_>>>()?;
    refresh_log_weights(&mut clusters);
    Ok(clusters)
}

pub fn m_step(stats: &SufficientStats, priors: &Priors, state: &PosteriorState) -> Result<PosteriorState> {
    check_k(stats, state.k())?;
    Ok(PosteriorState { clusters: update_clusters(stats, priors)?, ..state.clone() })
}

/// ln p̃ = ln p0 + Nδ̄ + Nπ̄ E[ln β], r̃ = r0 + Nπ̄; α moments re-estimated.
pub fn alpha_step(stats: &SufficientStats, priors: &Priors, state: &PosteriorState) -> Result<PosteriorState> {
    check_k(stats, state.k())?;
    let mut next = state.clone();
    for (k, s) in next.scales.iter_mut().enumerate() {
        let n_pi = stats.n_pi(k);
        let log_p = priors.p0.ln() + stats.n_delta(k) + n_pi * s.e_log_beta;
        let r = priors.r0 + n_pi;
        let unchanged = (log_p - s.log_p).abs() <= 1e-12 * log_p.abs().max(1.0) && (r - s.r).abs() <= 1e-12 * r;
        s.log_p = log_p;
        s.r = r;
        if !unchanged || !s.e_alpha.is_finite() {
            s.refresh_alpha(state.is_draws, state.cluster_is_seed(k))?;
        }
    }
    Ok(next)
}

/// q̃ = q0 + Nω̄, s̃ = s0 + Nπ̄ E[α].
pub fn beta_step(stats: &SufficientStats, priors: &Priors, state: &PosteriorState) -> Result<PosteriorState> {
    check_k(stats, state.k())?;
    let mut next = state.clone();
    for (k, s) in next.scales.iter_mut().enumerate() {
        s.q = priors.q0 + stats.n_omega(k);
        s.s = priors.s0 + stats.n_pi(k) * s.e_alpha;
        s.refresh_beta()?;
    }
    Ok(next)
}

fn check_k(stats: &SufficientStats, k: usize) -> Result<()> {
    if stats.k() != k {
        return Err(Error::Shape { expected: format!("{k} clusters"), got: format!("{}", stats.k()) });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::mixture::scale::ScalePosterior;
    use crate::numkernel::special::digamma;

    fn data(rows: &[&[f64]]) -> FeatureMatrix {
        FeatureMatrix::new(rows.iter().map(|r| DVector::from_column_slice(r)).collect(), None).unwrap()
    }

    fn unit_scales(n: usize, k: usize) -> ScaleMoments {
        ScaleMoments {
            e_u: DMatrix::from_element(n, k, 1.0),
            e_log_u: DMatrix::zeros(n, k),
            alpha: DMatrix::from_element(n, k, 1.0),
            beta: DMatrix::from_element(n, k, 1.0),
        }
    }

    fn priors(d: usize) -> Priors {
        Priors {
            kappa0: 1.0,
            eta0: 1.0,
            mu0: DVector::zeros(d),
            gamma0: d as f64 + 2.0,
            sigma0: DMatrix::identity(d, d),
            p0: 0.9,
            q0: 0.1,
            r0: 1.0,
            s0: 0.1,
        }
    }

    fn state(k: usize, d: usize) -> PosteriorState {
        let p = priors(d);
        let clusters = (0..k)
            .map(|_| Cluster::new(1.0, 1.0, DVector::zeros(d), d as f64 + 2.0, DMatrix::identity(d, d)).unwrap())
            .collect();
        let scales = (0..k)
            .map(|_| ScalePosterior::new(p.p0.ln(), p.r0, p.q0, p.s0, 2000, 1).unwrap())
            .collect();
        PosteriorState { clusters, scales, is_seed: 3, is_draws: 2000 }
    }

    #[test]
    fn full_mass_unit_scale_gives_sample_mean() {
        let x = data(&[&[1.0, 2.0], &[3.0, -1.0], &[5.0, 0.5]]);
        let resp = Responsibilities { r: DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]) };
        let s = accumulate_stats(&x, &resp, &unit_scales(3, 2), &priors(2)).unwrap();
        assert_eq!(s.mu_x[0], DVector::from_column_slice(&[3.0, 0.5]));
        assert!(s.empty[1] && !s.empty[0]);
        assert_eq!(s.mu_x[1], priors(2).mu0);
        assert_eq!(s.sigma_x[1], DMatrix::zeros(2, 2));
    }

    /// Independent double loop over the statistic definitions.
    #[test]
    fn stats_match_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (n, k, d) = (7, 3, 2);
        let rows: Vec<DVector<f64>> = (0..n).map(|_| DVector::from_fn(d, |_, _| rng.random_range(-3.0..3.0))).collect();
        let x = FeatureMatrix::new(rows.clone(), None).unwrap();
        let mut r = DMatrix::from_fn(n, k, |_, _| rng.random_range(0.01..1.0));
        for mut row in r.row_iter_mut() {
            let s = row.sum();
            row /= s;
        }
        let e_u = DMatrix::from_fn(n, k, |_, _| rng.random_range(0.2..3.0));
        let e_log_u = DMatrix::from_fn(n, k, |_, _| rng.random_range(-2.0..1.0));
        let scales = ScaleMoments { e_u: e_u.clone(), e_log_u: e_log_u.clone(), alpha: e_u.clone(), beta: e_u.clone() };
        let stats = accumulate_stats(&x, &Responsibilities { r: r.clone() }, &scales, &priors(d)).unwrap();
        for kk in 0..k {
            let (mut pi, mut om, mut de) = (0.0, 0.0, 0.0);
            let mut mu = [0.0; 2];
            for i in 0..n {
                pi += r[(i, kk)];
                om += r[(i, kk)] * e_u[(i, kk)];
                de += r[(i, kk)] * e_log_u[(i, kk)];
                for j in 0..d {
                    mu[j] += r[(i, kk)] * e_u[(i, kk)] * rows[i][j];
                }
            }
            for m in mu.iter_mut() {
                *m /= om;
            }
            let mut sig = [[0.0; 2]; 2];
            for i in 0..n {
                for a in 0..d {
                    for b in 0..d {
                        sig[a][b] += r[(i, kk)] * e_u[(i, kk)] * (rows[i][a] - mu[a]) * (rows[i][b] - mu[b]) / om;
                    }
                }
            }
            assert!((stats.pi_bar[kk] - pi / n as f64).abs() < 1e-12);
            assert!((stats.omega_bar[kk] - om / n as f64).abs() < 1e-12);
            assert!((stats.delta_bar[kk] - de / n as f64).abs() < 1e-12);
            for a in 0..d {
                assert!((stats.mu_x[kk][a] - mu[a]).abs() < 1e-12);
                for b in 0..d {
                    assert!((stats.sigma_x[kk][(a, b)] - sig[a][b]).abs() < 1e-12);
                }
            }
        }
        assert!((stats.pi_bar.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    fn empty_stats(k: usize, d: usize) -> SufficientStats {
        SufficientStats {
            n: 10,
            pi_bar: vec![0.0; k],
            omega_bar: vec![0.0; k],
            delta_bar: vec![0.0; k],
            mu_x: vec![DVector::zeros(d); k],
            sigma_x: vec![DMatrix::zeros(d, d); k],
            empty: vec![true; k],
        }
    }

    #[test]
    fn no_data_leaves_prior() {
        let p = Priors { mu0: DVector::from_column_slice(&[0.5, -1.0]), ..priors(2) };
        let st = state(2, 2);
        let stats = empty_stats(2, 2);
        let next = beta_step(&stats, &p, &alpha_step(&stats, &p, &m_step(&stats, &p, &st).unwrap()).unwrap()).unwrap();
        for c in &next.clusters {
            assert_eq!((c.kappa, c.eta, c.gamma), (p.kappa0, p.eta0, p.gamma0));
            assert_eq!(c.mu, p.mu0);
            assert_eq!(c.sigma, p.sigma0);
        }
        for s in &next.scales {
            assert_eq!((s.log_p, s.r, s.q, s.s), (p.p0.ln(), p.r0, p.q0, p.s0));
            assert_eq!(s.e_beta, s.s / s.q);
            assert_eq!(s.e_log_beta, digamma(s.s) - s.q.ln());
        }
    }

    #[test]
    fn single_point_halves_toward_prior_mean() {
        let x = data(&[&[4.0, -2.0]]);
        let resp = Responsibilities { r: DMatrix::from_element(1, 1, 1.0) };
        let p = priors(2);
        let stats = accumulate_stats(&x, &resp, &unit_scales(1, 1), &p).unwrap();
        let next = m_step(&stats, &p, &state(1, 2)).unwrap();
        assert_eq!(next.clusters[0].mu, DVector::from_column_slice(&[2.0, -1.0]));
        assert_eq!(next.clusters[0].kappa, 2.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn posterior_scale_stays_spd(
            seed in any::<u64>(),
            n in 1usize..30,
            k in 1usize..4,
            d in 1usize..5,
            spread in 0.01f64..100.0,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<DVector<f64>> =
                (0..n).map(|_| DVector::from_fn(d, |_, _| spread * rng.random_range(-1.0..1.0))).collect();
            let x = FeatureMatrix::new(rows, None).unwrap();
            let mut r = DMatrix::from_fn(n, k, |_, _| rng.random_range(0.0..1.0f64).powi(4));
            for mut row in r.row_iter_mut() {
                let s = row.sum();
                if s > 0.0 { row /= s; } else { row[0] = 1.0; }
            }
            let e_u = DMatrix::from_fn(n, k, |_, _| rng.random_range(0.05..5.0));
            let scales = ScaleMoments { e_u: e_u.clone(), e_log_u: e_u.map(f64::ln), alpha: e_u.clone(), beta: e_u };
            let p = priors(d);
            let stats = accumulate_stats(&x, &Responsibilities { r }, &scales, &p).unwrap();
            let next = m_step(&stats, &p, &state(k, d)).unwrap();
            let total: f64 = next.clusters.iter().map(|c| c.kappa).sum();
            prop_assert!((total - (k as f64 * p.kappa0 + n as f64)).abs() < 1e-9);
            for c in &next.clusters {
                prop_assert!((&c.sigma - c.sigma.transpose()).amax() == 0.0);
                prop_assert!(nalgebra::Cholesky::new(c.sigma.clone()).is_some());
            }
        }
    }
}
