//! Acceptance criteria, one test each. Every test prints a single
//! `criterion N: PASS|FAIL` line straight to stderr so it survives output
//! capture, then asserts.

mod common;

use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use common::{blobs, blobs_with_outliers, centre_error, centres_3};
use gsmm::eval::{accuracy, adjusted_rand_index, cross_entropy_loss, map_clusters_to_classes, ClusterMapping, LabeledPrediction};
use gsmm::experiment::{run_experiment, ExperimentConfig, ExperimentReport, ModelKind, Mode, ModelOutcome};
use gsmm::features::FeatureMatrix;
use gsmm::mixture::{fit_gsmm_from, fit_gmm_from, init_random, FitOptions, GmmState, Priors, Responsibilities};
use gsmm::numkernel::alpha::{AlphaPosterior, MomentRoute};
use gsmm::numkernel::quadrature::{gauss_kronrod, step_halving};
use gsmm::numkernel::{
    digamma, gaussian_gamma_marginal_check, gen_student_t_logpdf, ln_gamma, student_t_logpdf, Identity,
};
use gsmm::waveform::ModulationKind;
use gsmm::Error;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: u32, pass: bool, elapsed: Duration, limit: Duration, detail: &str) {
    let in_time = elapsed <= limit;
    let ok = pass && in_time;
    let line = format!(
        "criterion {n}: {} ({detail}; {:.1} s of {} s allowed)\n",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {n}: {detail}");
    assert!(in_time, "criterion {n}: took {elapsed:?}, limit {limit:?}");
}

fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(d, d) * 0.5
}

fn random_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.random_range(-scale..scale))
}

#[test]
fn criterion_01_reduction_identity() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let nus = [0.5, 1.0, 3.0, 10.0, 50.0];
    let dims = [1, 2, 6];
    let mut worst: f64 = 0.0;
    for i in 0..300 {
        let d = dims[i % 3];
        let nu = nus[(i / 3) % 5];
        let sigma = random_spd(&mut rng, d);
        let mu = random_vec(&mut rng, d, 3.0);
        let x = random_vec(&mut rng, d, 6.0);
        let a = gen_student_t_logpdf(&x, &mu, &sigma, nu / 2.0, nu / 2.0).unwrap();
        let b = student_t_logpdf(&x, &mu, &sigma, nu).unwrap();
        worst = worst.max((a - b).abs());
    }
    report(1, worst <= 1e-12, start.elapsed(), Duration::from_secs(1), &format!("max |difference| {worst:.2e} over 300 cases"));
}

#[test]
fn criterion_02_marginalization() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_z: f64 = 0.0;
    for i in 0..20 {
        let d = 1 + i % 3;
        let nu = [1.0, 3.0, 8.0, 30.0][i % 4];
        let sigma = random_spd(&mut rng, d);
        let mu = random_vec(&mut rng, d, 2.0);
        let x = random_vec(&mut rng, d, 3.0);
        let mc = gaussian_gamma_marginal_check(&mu, &sigma, nu, &x, 100_000, 1000 + i as u64).unwrap();
        let exact = student_t_logpdf(&x, &mu, &sigma, nu).unwrap().exp();
        worst_z = worst_z.max((mc.value - exact).abs() / mc.std_error);
    }
    report(2, worst_z <= 3.0, start.elapsed(), Duration::from_secs(30), &format!("worst deviation {worst_z:.2} standard errors at 20 points"));
}

/// ∫ p^(α−1)/Γ(α)^r dα in t = ln α by step halving, relative to the density at the mode.
fn step_halving_normalizer(post: &AlphaPosterior) -> (f64, bool) {
    let t0 = post.mode().ln();
    let peak = post.log_density_unnorm(post.mode()) + t0;
    let f = |t: f64| (post.log_density_unnorm(t.exp()) + t - peak).exp();
    // widen until both ends are negligible
    let (mut lo, mut hi) = (t0 - 1.0, t0 + 1.0);
    while f(lo) > 1e-30 {
        lo -= 1.0;
    }
    while f(hi) > 1e-30 {
        hi += 0.5;
    }
    match step_halving(f, lo, hi, 1e-10, 30) {
        Ok(q) => (peak + q.value.ln(), true),
        Err(_) => (f64::NAN, false),
    }
}

#[test]
fn criterion_03_alpha_normalizer() {
    let start = Instant::now();
    let pairs: Vec<(f64, f64)> = [0.05, 0.3, 0.7, 0.95, 1.0]
        .iter()
        .flat_map(|&p| [0.2, 1.0, 5.0, 50.0].iter().map(move |&r| (p, r)))
        .collect();
    let mut worst_rel: f64 = 0.0;
    let mut worst_mode: f64 = 0.0;
    let mut all_converged = true;
    for &(p, r) in &pairs {
        let post = AlphaPosterior::from_p(p, r).unwrap();
        let ln_m = post.log_normalizer().unwrap();
        let (ln_sh, ok) = step_halving_normalizer(&post);
        all_converged &= ok;
        worst_rel = worst_rel.max(((ln_m - ln_sh).exp() - 1.0).abs());
        // independent root of ln p − r ψ(α) = 0 by bisection
        let g = |a: f64| p.ln() - r * digamma(a);
        let (mut a, mut b) = (1e-12, 1e6);
        for _ in 0..300 {
            let m = 0.5 * (a + b);
            if g(m) > 0.0 {
                a = m;
            } else {
                b = m;
            }
        }
        let root = 0.5 * (a + b);
        worst_mode = worst_mode.max((post.mode() - root).abs() / root);
    }
    let divergent = matches!(AlphaPosterior::from_p(1.5, 0.1).unwrap().log_normalizer(), Err(Error::Divergent { .. }));
    let pass = all_converged && worst_rel < 1e-8 && worst_mode < 1e-8 && divergent;
    report(
        3,
        pass,
        start.elapsed(),
        Duration::from_secs(5),
        &format!(
            "20 pairs, max relative gap to step halving {worst_rel:.1e}, mode error {worst_mode:.1e}, (1.5, 0.1) divergent: {divergent}"
        ),
    );
}

/// E[g(α)] by adaptive quadrature in t = ln α.
fn quadrature_expectation(post: &AlphaPosterior, g: impl Fn(f64) -> f64) -> f64 {
    let t0 = post.mode().ln();
    let peak = post.log_density_unnorm(post.mode()) + t0;
    let w = |t: f64| (post.log_density_unnorm(t.exp()) + t - peak).exp();
    let (mut lo, mut hi) = (t0 - 0.5, t0 + 0.5);
    while w(lo) > 1e-40 {
        lo -= 0.5;
    }
    while w(hi) > 1e-40 {
        hi += 0.25;
    }
    let num = gauss_kronrod(|t| w(t) * g(t.exp()), lo, hi, 1e-13, 1e-300, 10_000).unwrap().value;
    let den = gauss_kronrod(w, lo, hi, 1e-13, 1e-300, 10_000).unwrap().value;
    num / den
}

#[test]
fn criterion_04_estimator_accuracy() {
    let start = Instant::now();
    let mut worst_alpha: f64 = 0.0;
    let mut worst_lg: f64 = 0.0;
    let mut notes = Vec::new();
    for &r in &[2.0, 20.0, 500.0] {
        for &mode in &[1.46, 3.0, 10.0] {
            let post = AlphaPosterior::new(r * digamma(mode), r).unwrap();
            let oracle_a = quadrature_expectation(&post, |a| a);
            let oracle_lg = quadrature_expectation(&post, ln_gamma);
            let lap = post.laplace_expectation(&Identity, 1).unwrap();
            worst_alpha = worst_alpha.max((lap.value - oracle_a).abs() / oracle_a);
            let m = post.moments(10_000, 17).unwrap();
            let err = (m.e_ln_gamma - oracle_lg).abs();
            // Laplace route reports no standard error; hold it to 1 %
            let score = match m.route {
                MomentRoute::ImportanceSampling => err / (3.0 * m.std_error),
                MomentRoute::Laplace => err / (0.01 * oracle_lg.abs()),
            };
            if score > 1.0 {
                notes.push(format!("(r {r}, mode {mode}) {:?} off by {err:.2e}", m.route));
            }
            worst_lg = worst_lg.max(score);
        }
    }
    let pass = worst_alpha <= 0.01 && worst_lg <= 1.0;
    report(
        4,
        pass,
        start.elapsed(),
        Duration::from_secs(30),
        &format!(
            "3x3 grid, worst Laplace E[alpha] error {:.3} %, worst E[lnGamma] error {worst_lg:.2} of tolerance{}",
            100.0 * worst_alpha,
            if notes.is_empty() { String::new() } else { format!("; {}", notes.join(", ")) }
        ),
    );
}

fn synthetic_sets() -> Vec<(&'static str, FeatureMatrix)> {
    let c = centres_3();
    vec![
        ("gaussian", blobs(&c, 300, None, 501)),
        ("student-t", blobs(&c, 300, Some(3.0), 502)),
        ("outliers", blobs_with_outliers(&c, 300, 0.1, 20.0, 503)),
    ]
}

#[test]
fn criterion_05_elbo_monotone() {
    let start = Instant::now();
    let mut violations = 0;
    let mut errors = Vec::new();
    let mut converged = 0;
    let mut bad_final = 0;
    let mut fits = 0;
    for (name, data) in synthetic_sets() {
        let priors = Priors::default_for(&data);
        for seed in 0..50u64 {
            fits += 1;
            // the fit itself aborts on a decrease beyond the slack
            let (init, _) = init_random(&data, 3, &priors, seed).unwrap();
            let opts = FitOptions { seed, ..Default::default() };
            match fit_gsmm_from(&data, init, &priors, &opts) {
                Ok(fit) => {
                    violations += fit.elbo_trace.windows(2).filter(|w| w[1] < w[0] - 1e-6 * w[0].abs()).count();
                    if fit.converged {
                        converged += 1;
                        let n = fit.elbo_trace.len();
                        if n >= 2 && (fit.elbo_trace[n - 1] - fit.elbo_trace[n - 2]).abs() >= 1e-8 {
                            bad_final += 1;
                        }
                    }
                }
                Err(e) => errors.push(format!("{name} seed {seed}: {e}")),
            }
        }
    }
    let pass = violations == 0 && errors.is_empty() && bad_final == 0;
    report(
        5,
        pass,
        start.elapsed(),
        Duration::from_secs(120),
        &format!(
            "{fits} fits, {violations} decreasing steps, {} aborted, {converged} converged with {bad_final} final steps >= 1e-8{}",
            errors.len(),
            if errors.is_empty() { String::new() } else { format!("; {}", errors.join("; ")) }
        ),
    );
}

#[test]
fn criterion_06_robustness_ordering() {
    let start = Instant::now();
    let truth = centres_3();
    let mut wins = 0;
    let mut worst_gap: f64 = 0.0;
    for seed in 0..20u64 {
        let data = blobs_with_outliers(&truth, 300, 0.1, 20.0, 600 + seed);
        let priors = Priors::default_for(&data);
        let (init, _) = init_random(&data, 3, &priors, seed).unwrap();
        let opts = FitOptions { seed, ..Default::default() };
        let g = fit_gsmm_from(&data, init.clone(), &priors, &opts).unwrap();
        let n = fit_gmm_from(&data, GmmState::from_gsmm(&init), &priors, &opts).unwrap();
        let mu = |c: &[gsmm::mixture::Cluster]| c.iter().map(|c| c.mu.clone()).collect::<Vec<_>>();
        let eg = centre_error(&mu(&g.final_state.clusters), &truth);
        let en = centre_error(&mu(&n.final_state.clusters), &truth);
        if eg <= en {
            wins += 1;
        } else {
            worst_gap = worst_gap.max(eg - en);
        }
    }
    report(6, wins >= 16, start.elapsed(), Duration::from_secs(120), &format!("GSMM error <= Gaussian error in {wins}/20 seeds, largest shortfall {worst_gap:.3}"));
}

struct Shared {
    report: ExperimentReport,
    elapsed: Duration,
}

fn classification_run() -> &'static Shared {
    static RUN: OnceLock<Shared> = OnceLock::new();
    RUN.get_or_init(|| {
        let start = Instant::now();
        let config = ExperimentConfig { snr_db: vec![-10.0, -15.0], repetitions: 20, ..Default::default() };
        let report = run_experiment(&config).unwrap();
        Shared { report, elapsed: start.elapsed() }
    })
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[test]
fn criterion_07_classification_direction() {
    let run = classification_run();
    let r = &run.report;
    let acc = |si, m| mean(&r.values(si, m, |o: &ModelOutcome| o.accuracy));
    let cel = |si, m| mean(&r.values(si, m, |o: &ModelOutcome| o.cross_entropy));
    let (g10, s10) = (acc(0, ModelKind::Gsmm), acc(0, ModelKind::Smm));
    let (gc, sc) = (cel(0, ModelKind::Gsmm), cel(0, ModelKind::Smm));
    let (g15, s15) = (acc(1, ModelKind::Gsmm), acc(1, ModelKind::Smm));
    let complete = r.failed_fraction() == 0.0;
    let pass = complete && g10 >= s10 && gc <= sc && g15 - s15 >= 0.1;
    report(
        7,
        pass,
        run.elapsed,
        Duration::from_secs(1800),
        &format!(
            "-10 dB Acc {g10:.4} vs {s10:.4}, CEL {gc:.3} vs {sc:.3}; -15 dB Acc {g15:.4} vs {s15:.4} (GSMM vs SMM, M = 20)"
        ),
    );
}

#[test]
fn criterion_08_confusion_structure() {
    let run = classification_run();
    let r = &run.report;
    let row = r.row(-10.0, ModelKind::Gsmm).unwrap();
    let mods = &r.config.modulations;
    let fm_own: Vec<(ModulationKind, f64)> = mods
        .iter()
        .enumerate()
        .filter(|(_, k)| k.is_frequency_modulated())
        .map(|(i, &k)| (k, row.confusion[(i, i)]))
        .collect();
    let mut best_pair = (ModulationKind::P1, ModulationKind::P1, 0.0);
    for (i, a) in mods.iter().enumerate().filter(|(_, k)| !k.is_frequency_modulated()) {
        for (j, b) in mods.iter().enumerate().filter(|(_, k)| !k.is_frequency_modulated()) {
            if i != j && row.confusion[(i, j)] > best_pair.2 {
                best_pair = (*a, *b, row.confusion[(i, j)]);
            }
        }
    }
    let pass = fm_own.len() == 3 && fm_own.iter().all(|(_, v)| *v >= 0.8) && best_pair.2 >= 0.2;
    let own: Vec<String> = fm_own.iter().map(|(k, v)| format!("{k} {:.1} %", 100.0 * v)).collect();
    report(
        8,
        pass,
        run.elapsed,
        Duration::from_secs(1800),
        &format!("FM own-row mass {}; largest PM cross-confusion {} -> {} {:.1} %", own.join(", "), best_pair.0, best_pair.1, 100.0 * best_pair.2),
    );
}

#[test]
fn criterion_09_clustering_direction() {
    let start = Instant::now();
    let config = ExperimentConfig {
        snr_db: vec![-10.0],
        repetitions: 20,
        mode: Mode::Clustering,
        clusters: Some(15),
        ..Default::default()
    };
    let r = run_experiment(&config).unwrap();
    let g = mean(&r.values(0, ModelKind::Gsmm, |o| o.ari));
    let s = mean(&r.values(0, ModelKind::Smm, |o| o.ari));
    let pass = r.failed_fraction() == 0.0 && g >= s;
    report(9, pass, start.elapsed(), Duration::from_secs(1800), &format!("L0 = 15 at -10 dB, mean ARI GSMM {g:.4} vs SMM {s:.4} (M = 20)"));
}

/// Pair-counting ARI straight from the definition.
fn ari_by_pairs(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let (mut both, mut only_a, mut only_b, mut neither) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => both += 1.0,
                (true, false) => only_a += 1.0,
                (false, true) => only_b += 1.0,
                (false, false) => neither += 1.0,
            }
        }
    }
    let total = both + only_a + only_b + neither;
    let expected = (both + only_a) * (both + only_b) / total;
    let max = 0.5 * ((both + only_a) + (both + only_b));
    if max == expected {
        return 1.0;
    }
    (both - expected) / (max - expected)
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn criterion_10_metric_oracles() {
    let start = Instant::now();
    let mut failures = Vec::new();

    let ari_cases: [(&[usize], &[usize]); 5] = [
        (&[0, 0, 1, 1], &[1, 1, 0, 0]),
        (&[0, 0, 0, 1, 1, 1], &[0, 0, 1, 1, 2, 2]),
        (&[0, 1, 2, 0, 1, 2, 0, 1], &[0, 0, 0, 1, 1, 1, 2, 2]),
        (&[0, 0, 1, 1, 2, 2, 3, 3, 3], &[0, 0, 1, 2, 2, 2, 3, 3, 0]),
        (&[0, 0, 0, 0], &[0, 0, 0, 0]),
    ];
    for (a, b) in ari_cases {
        let got = adjusted_rand_index(a, b).unwrap();
        let want = ari_by_pairs(a, b);
        if (got - want).abs() > 1e-12 {
            failures.push(format!("ARI {a:?} {b:?}: {got} vs {want}"));
        }
    }

    // accuracy against exhaustive search over cluster → class bijections
    let hard_cases: [(&[usize], &[usize], usize); 4] = [
        (&[0, 0, 1, 1, 2, 2], &[2, 2, 0, 0, 1, 1], 3),
        (&[0, 0, 0, 1, 1, 2, 2, 2], &[1, 1, 0, 0, 0, 2, 2, 1], 3),
        (&[0, 1, 2, 3, 0, 1, 2, 3, 3], &[3, 2, 1, 0, 3, 2, 0, 0, 1], 4),
        (&[0, 0, 1, 1, 1, 0], &[1, 0, 0, 0, 1, 1], 2),
    ];
    for (labels, assign, k) in hard_cases {
        let pred = LabeledPrediction::from_hard(labels.to_vec(), assign.to_vec(), k).unwrap();
        let got = accuracy(&pred, &map_clusters_to_classes(&pred, k).unwrap());
        let best = permutations(k)
            .into_iter()
            .map(|perm| labels.iter().zip(assign).filter(|(l, a)| perm[**a] == **l).count())
            .max()
            .unwrap() as f64
            / labels.len() as f64;
        if got != best {
            failures.push(format!("accuracy {labels:?} {assign:?}: {got} vs {best}"));
        }
    }

    // cross-entropy by hand: identity mapping, −(ln 0.7 + ln 0.4 + ln 0.9) / 3
    let resp = Responsibilities { r: DMatrix::from_row_slice(3, 2, &[0.7, 0.3, 0.6, 0.4, 0.1, 0.9]) };
    let pred = LabeledPrediction::new(vec![0, 1, 1], &resp).unwrap();
    let cel = cross_entropy_loss(&pred, &ClusterMapping::identity(2));
    let by_hand = -(0.7f64.ln() + 0.4f64.ln() + 0.9f64.ln()) / 3.0;
    if (cel - by_hand).abs() > 1e-15 {
        failures.push(format!("CEL {cel} vs {by_hand}"));
    }
    // a zero responsibility is floored at 1e-12
    let resp = Responsibilities { r: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 0.5]) };
    let pred = LabeledPrediction::new(vec![1, 1], &resp).unwrap();
    let cel = cross_entropy_loss(&pred, &ClusterMapping::identity(2));
    let by_hand = -(1e-12f64.ln() + 0.5f64.ln()) / 2.0;
    if (cel - by_hand).abs() > 1e-12 {
        failures.push(format!("floored CEL {cel} vs {by_hand}"));
    }

    report(
        10,
        failures.is_empty(),
        start.elapsed(),
        Duration::from_secs(1),
        &if failures.is_empty() { "5 ARI, 4 mapping and 2 CEL cases exact".to_string() } else { failures.join("; ") },
    );
}
