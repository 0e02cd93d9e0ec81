#![allow(dead_code)]

use gsmm::features::FeatureMatrix;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

pub fn centres_3() -> Vec<DVector<f64>> {
    vec![
        DVector::from_column_slice(&[-5.0, 0.0]),
        DVector::from_column_slice(&[5.0, 0.0]),
        DVector::from_column_slice(&[0.0, 7.0]),
    ]
}

/// Equal-sized unit-covariance clusters; `nu = None` gives Gaussians,
/// otherwise multivariate Student-t with that many degrees of freedom.
pub fn blobs(centres: &[DVector<f64>], n: usize, nu: Option<f64>, seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = centres[0].len();
    let k = centres.len();
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % k;
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let scale = match nu {
            Some(nu) => {
                let u: f64 = Gamma::new(nu / 2.0, 2.0 / nu).unwrap().sample(&mut rng);
                1.0 / u.sqrt()
            }
            None => 1.0,
        };
        rows.push(&centres[c] + z * scale);
        labels.push(c);
    }
    FeatureMatrix::new(rows, Some(labels)).unwrap()
}

/// Gaussian blobs where a fraction of the rows are replaced by uniform
/// outliers on a box `spread` times wider than the blob layout. Outliers keep
/// the label of the row they replace.
pub fn blobs_with_outliers(centres: &[DVector<f64>], n: usize, fraction: f64, spread: f64, seed: u64) -> FeatureMatrix {
    let mut fm = blobs(centres, n, None, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0D15_EA5E);
    let n_out = (fraction * n as f64).round() as usize;
    let d = centres[0].len();
    for i in 0..n_out {
        let idx = (i * n) / n_out;
        fm.rows[idx] = DVector::from_fn(d, |_, _| rng.random_range(-spread..spread));
    }
    fm
}

/// Largest distance between each true centre and its nearest fitted mean.
pub fn centre_error(fitted: &[DVector<f64>], truth: &[DVector<f64>]) -> f64 {
    truth
        .iter()
        .map(|t| fitted.iter().map(|f| (f - t).norm()).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}
