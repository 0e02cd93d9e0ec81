mod common;

use common::{blobs, blobs_with_outliers, centre_error, centres_3};
use gsmm::eval::{accuracy, map_clusters_to_classes, LabeledPrediction};
use gsmm::features::FeatureMatrix;
use gsmm::mixture::{
    e_step, fit_gmm, fit_gmm_from, fit_gsmm, fit_gsmm_from, fit_smm, fit_smm_from, init_random, predict, FitOptions,
    GmmState, Priors, SmmState,
};
use gsmm::numkernel::ln_gamma;
use nalgebra::DVector;

fn means<'a>(clusters: impl Iterator<Item = &'a gsmm::mixture::Cluster>) -> Vec<DVector<f64>> {
    clusters.map(|c| c.mu.clone()).collect()
}

fn two_centres() -> Vec<DVector<f64>> {
    vec![DVector::from_column_slice(&[-5.0, 0.0]), DVector::from_column_slice(&[5.0, 0.0])]
}

#[test]
fn separated_pair_is_classified_perfectly() {
    let data = blobs(&two_centres(), 200, None, 7);
    let priors = Priors::default_for(&data);
    let labels = data.labels.clone().unwrap();
    let mut perfect = 0;
    for seed in 0..50 {
        let opts = FitOptions { seed, max_iter: 300, ..Default::default() };
        let fit = fit_gsmm(&data, 2, &priors, &opts).unwrap();
        let pred = LabeledPrediction::new(labels.clone(), &fit.responsibilities).unwrap();
        let mapping = map_clusters_to_classes(&pred, 2).unwrap();
        if accuracy(&pred, &mapping) == 1.0 {
            perfect += 1;
        }
    }
    assert!(perfect >= 45, "perfect in only {perfect}/50 seeds");
}

#[test]
fn outliers_pull_gaussian_means_but_not_gsmm() {
    let truth = two_centres();
    let mut gsmm_ok = 0;
    for seed in 0..5 {
        let data = blobs_with_outliers(&truth, 200, 0.1, 20.0, 100 + seed);
        let priors = Priors::default_for(&data);
        let opts = FitOptions { seed, ..Default::default() };
        let (init, _) = init_random(&data, 2, &priors, seed).unwrap();
        let g = fit_gsmm_from(&data, init.clone(), &priors, &opts).unwrap();
        let n = fit_gmm_from(&data, GmmState::from_gsmm(&init), &priors, &opts).unwrap();
        let eg = centre_error(&means(g.final_state.clusters.iter()), &truth);
        let en = centre_error(&means(n.final_state.clusters.iter()), &truth);
        assert!(eg <= en, "seed {seed}: gsmm {eg} vs gaussian {en}");
        if eg < 0.3 {
            gsmm_ok += 1;
        }
    }
    assert!(gsmm_ok >= 4, "gsmm means within 0.3 in {gsmm_ok}/5 datasets");
}

#[test]
fn single_component_recovers_location() {
    let centre = vec![DVector::from_column_slice(&[2.0, -1.0])];
    let data = blobs(&centre, 500, Some(3.0), 3);
    let priors = Priors::default_for(&data);
    let gauss = fit_gmm(&data, 1, &priors, &FitOptions::default()).unwrap();
    assert!(gauss.converged && gauss.iterations <= 5, "{} iterations", gauss.iterations);

    // the α/β ridge makes the GSMM slow to settle; it still gets there
    let opts = FitOptions { max_iter: 5000, ..Default::default() };
    let fit = fit_gsmm(&data, 1, &priors, &opts).unwrap();
    assert!(fit.converged);
    assert!((&fit.final_state.clusters[0].mu - &centre[0]).norm() < 0.15);
    assert!(fit.responsibilities.r.iter().all(|&r| (r - 1.0).abs() < 1e-15));
}

#[test]
fn heavy_tails_give_small_alpha() {
    let centre = vec![DVector::from_column_slice(&[0.0, 0.0])];
    let data = blobs(&centre, 2000, Some(3.0), 11);
    let priors = Priors::default_for(&data);
    let opts = FitOptions { max_iter: 300, ..Default::default() };
    let fit = fit_gsmm(&data, 1, &priors, &opts).unwrap();
    let a = fit.final_state.scales[0].e_alpha;
    assert!((1.0..=2.5).contains(&a), "E[alpha] = {a}");
}

#[test]
fn smm_recovers_degrees_of_freedom() {
    let centre = vec![DVector::from_column_slice(&[0.0, 0.0])];
    let data = blobs(&centre, 2000, Some(5.0), 5);
    let priors = Priors::default_for(&data);
    let fit = fit_smm(&data, 1, &priors, &FitOptions::default()).unwrap();
    let nu = fit.final_state.nu[0];
    assert!((3.0..=8.0).contains(&nu), "nu = {nu}");
}

#[test]
fn predict_reproduces_training_responsibilities() {
    let data = blobs(&centres_3(), 300, Some(5.0), 21);
    let priors = Priors::default_for(&data);
    let opts = FitOptions { seed: 4, max_iter: 200, ..Default::default() };
    let fit = fit_gsmm(&data, 3, &priors, &opts).unwrap();
    let again = predict(&fit.final_state, &data).unwrap();
    assert!((&again.r - &fit.responsibilities.r).amax() < 1e-10);
    assert!(again.max_row_sum_error() < 1e-12);

    let at_means = FeatureMatrix::new(means(fit.final_state.clusters.iter()), None).unwrap();
    let r = predict(&fit.final_state, &at_means).unwrap();
    for k in 0..3 {
        assert!(r.r[(k, k)] > 0.99, "{}", r.r);
    }

    let smm = fit_smm(&data, 3, &priors, &opts).unwrap();
    let again = predict(&smm.final_state, &data).unwrap();
    assert!((&again.r - &smm.responsibilities.r).amax() < 1e-10);
}

#[test]
fn gsmm_pinned_at_half_nu_is_the_smm() {
    let data = blobs(&centres_3(), 150, Some(4.0), 2);
    let priors = Priors::default_for(&data);
    let (mut state, _) = init_random(&data, 3, &priors, 9).unwrap();
    let nus = [0.7, 3.0, 25.0];
    for (s, &nu) in state.scales.iter_mut().zip(&nus) {
        let h = nu / 2.0;
        s.e_alpha = h;
        s.e_ln_gamma_alpha = ln_gamma(h);
        s.e_beta = h;
        s.e_log_beta = h.ln();
    }
    let smm = SmmState { clusters: state.clusters.clone(), nu: nus.to_vec() };
    let (rg, _) = e_step(&data, &state).unwrap();
    let rs = predict(&smm, &data).unwrap();
    assert!((&rg.r - &rs.r).amax() < 1e-10);
}

#[test]
fn same_initialization_gives_same_gaussian_block_start() {
    let data = blobs(&centres_3(), 150, None, 8);
    let priors = Priors::default_for(&data);
    let (init, _) = init_random(&data, 3, &priors, 1).unwrap();
    let smm = SmmState::from_gsmm(&init);
    for (a, b) in init.clusters.iter().zip(&smm.clusters) {
        assert_eq!(a.mu, b.mu);
        assert_eq!(a.sigma, b.sigma);
        assert_eq!(a.kappa, b.kappa);
    }
    // one iteration from that start: both runs see the same first E-step only
    // through their scale moments, which agree when ν = 2 E[α] = 2 E[β]
    let opts = FitOptions { max_iter: 1, ..Default::default() };
    let g = fit_gsmm_from(&data, init.clone(), &priors, &opts).unwrap();
    let s = fit_smm_from(&data, smm, &priors, &opts).unwrap();
    assert_eq!(g.iterations, 1);
    assert_eq!(s.iterations, 1);
}

#[test]
fn fits_are_deterministic_under_seed() {
    let data = blobs_with_outliers(&centres_3(), 300, 0.1, 20.0, 5);
    let priors = Priors::default_for(&data);
    let opts = FitOptions { seed: 12, max_iter: 100, ..Default::default() };
    let a = fit_gsmm(&data, 3, &priors, &opts).unwrap();
    let b = fit_gsmm(&data, 3, &priors, &opts).unwrap();
    assert_eq!(a.elbo_trace, b.elbo_trace);
    assert_eq!(a.responsibilities.r, b.responsibilities.r);
    let c = fit_gsmm(&data, 3, &priors, &FitOptions { seed: 13, ..opts }).unwrap();
    assert_ne!(a.elbo_trace, c.elbo_trace);
}

#[test]
fn initialization_properties() {
    let data = blobs(&centres_3(), 90, None, 4);
    let priors = Priors::default_for(&data);
    let (s1, r1) = init_random(&data, 4, &priors, 77).unwrap();
    let (s2, r2) = init_random(&data, 4, &priors, 77).unwrap();
    assert_eq!(r1.r, r2.r);
    assert_eq!(means(s1.clusters.iter()), means(s2.clusters.iter()));
    assert!(r1.max_row_sum_error() < 1e-12);
    assert!(r1.r.iter().all(|&v| v > 0.0 && v < 1.0));
    let total: f64 = s1.clusters.iter().map(|c| c.kappa).sum();
    assert!((total - (4.0 * priors.kappa0 + 90.0)).abs() < 1e-9);

    let (_, one) = init_random(&data, 1, &priors, 1).unwrap();
    assert!(one.r.iter().all(|&v| v == 1.0));
}

#[test]
fn elbo_never_decreases_on_heavy_tails() {
    let data = blobs(&centres_3(), 300, Some(3.0), 31);
    let priors = Priors::default_for(&data);
    for seed in 0..3 {
        let fit = fit_gsmm(&data, 3, &priors, &FitOptions { seed, max_iter: 200, ..Default::default() }).unwrap();
        for w in fit.elbo_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-6 * w[0].abs());
        }
    }
}
