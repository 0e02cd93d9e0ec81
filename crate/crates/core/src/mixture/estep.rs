//! Responsibilities and scale moments.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::cluster::Cluster;
use super::fit::VbModel;
use super::scale::{PosteriorState, ScalePrior};
use super::{check_data, Responsibilities, ScaleMoments};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::numkernel::special::{digamma, ln_gamma};

pub fn e_step(data: &FeatureMatrix, state: &PosteriorState) -> Result<(Responsibilities, ScaleMoments)> {
    e_step_core(data, &state.clusters, Some(&state.scale_priors()))
}

/// Responsibilities of any fitted model on new rows; the state is not touched.
pub fn predict<S: VbModel>(state: &S, data: &FeatureMatrix) -> Result<Responsibilities> {
    let priors = state.scale_priors();
    Ok(e_step_core(data, state.clusters(), priors.as_deref())?.0)
}

struct RowResult {
    r: Vec<f64>,
    e_u: Vec<f64>,
    e_log_u: Vec<f64>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

/// `scale_priors = None` is the Gaussian model, u ≡ 1.
pub(crate) fn e_step_core(
    data: &FeatureMatrix,
    clusters: &[Cluster],
    scale_priors: Option<&[ScalePrior]>,
) -> Result<(Responsibilities, ScaleMoments)> {
    let k_total = clusters.len();
    let d = clusters.first().map(|c| c.dim()).ok_or_else(|| Error::Validation("no clusters".into()))?;
    check_data(data, d)?;
    if let Some(sp) = scale_priors {
        if sp.len() != k_total {
            return Err(Error::Shape { expected: format!("{k_total} scale priors"), got: format!("{}", sp.len()) });
        }
    }
    let half_d = d as f64 / 2.0;
    let base: Vec<f64> = clusters
        .iter()
        .map(|c| c.e_log_a - 0.5 * c.e_log_det_sigma - half_d * (2.0 * PI).ln())
        .collect();
    let gamma_terms: Option<Vec<(f64, f64)>> = scale_priors.map(|sp| {
        sp.iter()
            .map(|p| {
                let a = p.e_alpha + half_d;
                (a, p.e_alpha * p.e_log_beta - p.e_ln_gamma_alpha + ln_gamma(a))
            })
            .collect()
    });

    let rows: Vec<RowResult> = data
        .rows
        .par_iter()
        .enumerate()
        .map(|(n, x)| {
            let mut row = RowResult {
                r: vec![0.0; k_total],
                e_u: vec![1.0; k_total],
                e_log_u: vec![0.0; k_total],
                alpha: vec![1.0; k_total],
                beta: vec![1.0; k_total],
            };
            for (k, c) in clusters.iter().enumerate() {
                let ed = c.expected_mahalanobis(x);
                let log_rho = match (&gamma_terms, scale_priors) {
                    (Some(gt), Some(sp)) => {
                        let (a, constant) = gt[k];
                        let b = sp[k].e_beta + 0.5 * ed;
                        row.alpha[k] = a;
                        row.beta[k] = b;
                        row.e_u[k] = a / b;
                        row.e_log_u[k] = digamma(a) - b.ln();
                        base[k] + constant - a * b.ln()
                    }
                    _ => base[k] - 0.5 * ed,
                };
                if !log_rho.is_finite() {
                    return Err(Error::Numerical(format!("log responsibility not finite at (n={n}, k={k})")));
                }
                row.r[k] = log_rho;
            }
            let max = row.r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.r.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.r.iter_mut() {
                *v /= sum;
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;

    let n = rows.len();
    let pick = |f: fn(&RowResult) -> &Vec<f64>| DMatrix::from_fn(n, k_total, |i, k| f(&rows[i])[k]);
    let resp = Responsibilities { r: pick(|r| &r.r) };
    let scales = ScaleMoments {
        e_u: pick(|r| &r.e_u),
        e_log_u: pick(|r| &r.e_log_u),
        alpha: pick(|r| &r.alpha),
        beta: pick(|r| &r.beta),
    };
    Ok((resp, scales))
}
