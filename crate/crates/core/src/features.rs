//! Magnitude spectrograms, PCA and the feature matrices fed to the mixtures.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::waveform::{ComplexEnvelope, ModulationKind};

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    /// Frequency bins × time frames.
    pub magnitudes: DMatrix<f64>,
    pub window_len: usize,
    pub hop: usize,
}

impl Spectrogram {
    /// Row-major flattening (all frames of bin 0, then bin 1, ...).
    pub fn flatten(&self) -> Vec<f64> {
        let (rows, cols) = self.magnitudes.shape();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            out.extend(self.magnitudes.row(r).iter());
        }
        out
    }
}

pub fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (len - 1) as f64).cos())
        .collect()
}

/// |STFT| with a Hamming window.
pub fn stft_magnitude(samples: &[Complex64], window_len: usize, hop: usize) -> Result<Spectrogram> {
    if window_len == 0 || hop == 0 {
        return Err(Error::Config("window length and hop must be positive".into()));
    }
    if window_len > samples.len() {
        return Err(Error::Shape {
            expected: format!("signal of at least {window_len} samples"),
            got: format!("{} samples", samples.len()),
        });
    }
    let frames = (samples.len() - window_len) / hop + 1;
    let window = hamming(window_len);
    let fft = FftPlanner::new().plan_fft_forward(window_len);
    let mut magnitudes = DMatrix::zeros(window_len, frames);
    let mut buf = vec![Complex64::new(0.0, 0.0); window_len];
    for f in 0..frames {
        let start = f * hop;
        for (b, (s, w)) in buf.iter_mut().zip(samples[start..start + window_len].iter().zip(&window)) {
            *b = s * w;
        }
        fft.process(&mut buf);
        for (k, v) in buf.iter().enumerate() {
            magnitudes[(k, f)] = v.norm();
        }
    }
    Ok(Spectrogram { magnitudes, window_len, hop })
}

pub fn envelope_spectrogram(envelope: &ComplexEnvelope, window_len: usize, hop: usize) -> Result<Spectrogram> {
    stft_magnitude(&envelope.samples, window_len, hop)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: DVector<f64>,
    /// D × d, orthonormal columns.
    pub basis: DMatrix<f64>,
    pub explained_variance: DVector<f64>,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.basis.ncols()
    }

    /// basisᵀ (x − mean) for every row of `data`.
    pub fn project(&self, data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if data.ncols() != self.input_dim() {
            return Err(Error::Shape {
                expected: format!("{} columns", self.input_dim()),
                got: format!("{} columns", data.ncols()),
            });
        }
        let mut centered = data.clone();
        for mut row in centered.row_iter_mut() {
            row -= self.mean.transpose();
        }
        Ok(centered * &self.basis)
    }

    pub fn reconstruct(&self, scores: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = scores * self.basis.transpose();
        for mut row in out.row_iter_mut() {
            row += self.mean.transpose();
        }
        out
    }
}

/// Principal components of the rows of `data` (N × D).
///
/// Eigen-decomposes the D × D covariance when D ≤ N and the N × N Gram matrix
/// otherwise. Each basis column is signed so its largest-magnitude entry is
/// positive.
pub fn pca_fit(data: &DMatrix<f64>, d: usize) -> Result<PcaModel> {
    let (n, dim) = data.shape();
    if n < 2 {
        return Err(Error::Validation(format!("PCA needs at least two rows, got {n}")));
    }
    if d == 0 || d > n.min(dim) {
        return Err(Error::Validation(format!("target dimension {d} outside [1, {}]", n.min(dim))));
    }
    let mean = data.row_mean().transpose();
    let mut centered = data.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let denom = (n - 1) as f64;

    let (mut basis, variances) = if dim <= n {
        let cov = centered.transpose() * &centered / denom;
        let (values, vectors) = sorted_eigen(cov);
        (vectors.columns(0, d).into_owned(), values.rows(0, d).into_owned())
    } else {
        let gram = &centered * centered.transpose() / denom;
        let (values, vectors) = sorted_eigen(gram);
        let mut basis = DMatrix::zeros(dim, d);
        let scale_floor = 1e-12 * values[0].abs().max(f64::MIN_POSITIVE);
        for j in 0..d {
            if values[j] > scale_floor {
                let col = centered.transpose() * vectors.column(j) / (denom * values[j]).sqrt();
                basis.set_column(j, &col);
            }
        }
        (basis, values.rows(0, d).into_owned())
    };
    orthonormalize(&mut basis);
    for mut col in basis.column_iter_mut() {
        let (imax, _) = col.iter().enumerate().fold((0, 0.0f64), |best, (i, v)| {
            if v.abs() > best.1 {
                (i, v.abs())
            } else {
                best
            }
        });
        if col[imax] < 0.0 {
            col.neg_mut();
        }
    }
    let explained_variance = variances.map(|v| v.max(0.0));
    Ok(PcaModel { mean, basis, explained_variance })
}

fn sorted_eigen(sym: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_columns(&order.iter().map(|&i| eig.eigenvectors.column(i)).collect::<Vec<_>>());
    (values, vectors)
}

/// Modified Gram–Schmidt, twice; columns that vanish are replaced by the
/// first canonical direction orthogonal to the others.
fn orthonormalize(basis: &mut DMatrix<f64>) {
    let (dim, d) = basis.shape();
    let mut next_canonical = 0;
    for j in 0..d {
        for _ in 0..2 {
            for i in 0..j {
                let proj = basis.column(i).dot(&basis.column(j));
                let ci = basis.column(i).into_owned();
                basis.column_mut(j).axpy(-proj, &ci, 1.0);
            }
        }
        let mut norm = basis.column(j).norm();
        while norm < 1e-8 && next_canonical < dim {
            let mut e = DVector::zeros(dim);
            e[next_canonical] = 1.0;
            next_canonical += 1;
            for i in 0..j {
                let proj = basis.column(i).dot(&e);
                e.axpy(-proj, &basis.column(i).into_owned(), 1.0);
            }
            basis.set_column(j, &e);
            norm = basis.column(j).norm();
        }
        basis.column_mut(j).scale_mut(1.0 / norm);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: Vec<DVector<f64>>,
    pub labels: Option<Vec<usize>>,
    pub provenance: String,
}

impl FeatureMatrix {
    pub fn new(rows: Vec<DVector<f64>>, labels: Option<Vec<usize>>) -> Result<Self> {
        let fm = Self { rows, labels, provenance: String::new() };
        fm.validate()?;
        Ok(fm)
    }

    pub fn from_matrix(data: &DMatrix<f64>, labels: Option<Vec<usize>>) -> Result<Self> {
        Self::new(data.row_iter().map(|r| r.transpose()).collect(), labels)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.rows.iter().any(|r| r.len() != d) {
            return Err(Error::Shape { expected: format!("rows of length {d}"), got: "ragged rows".into() });
        }
        if self.rows.iter().any(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(Error::Validation("feature rows must be finite".into()));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.rows.len() {
                return Err(Error::Shape {
                    expected: format!("{} labels", self.rows.len()),
                    got: format!("{}", labels.len()),
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, |r| r.len())
    }

    pub fn n_classes(&self) -> usize {
        self.labels.as_ref().and_then(|l| l.iter().max()).map_or(0, |m| m + 1)
    }

    pub fn mean(&self) -> DVector<f64> {
        let mut acc = DVector::zeros(self.dim());
        for r in &self.rows {
            acc += r;
        }
        acc / self.len() as f64
    }

    /// Sample covariance with the N − 1 denominator.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mean = self.mean();
        let d = self.dim();
        let mut acc = DMatrix::zeros(d, d);
        for r in &self.rows {
            let c = r - &mean;
            acc.syger(1.0, &c, &c, 1.0);
        }
        acc / (self.len().max(2) - 1) as f64
    }

    /// Column-wise z-scoring; constant columns are only centered.
    pub fn standardized(&self) -> FeatureMatrix {
        let mean = self.mean();
        let sd = self.covariance().diagonal().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 });
        let rows = self.rows.iter().map(|r| (r - &mean).component_div(&sd)).collect();
        FeatureMatrix { rows, labels: self.labels.clone(), provenance: self.provenance.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureConfig {
    pub window_len: usize,
    pub hop: usize,
    pub dim: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { window_len: 64, hop: 16, dim: 6 }
    }
}

/// Distinct modulation kinds of a batch, in canonical order; labels index into it.
pub fn class_list(envelopes: &[ComplexEnvelope]) -> Vec<ModulationKind> {
    let mut kinds: Vec<ModulationKind> = envelopes.iter().map(|e| e.label).collect();
    kinds.sort();
    kinds.dedup();
    kinds
}

/// Flattened spectrograms of a batch, one row per envelope.
pub fn spectrogram_matrix(envelopes: &[ComplexEnvelope], window_len: usize, hop: usize) -> Result<DMatrix<f64>> {
    let first = envelopes.first().ok_or_else(|| Error::Validation("no envelopes to featurize".into()))?;
    let len = first.samples.len();
    if envelopes.iter().any(|e| e.samples.len() != len) {
        return Err(Error::Shape { expected: format!("envelopes of {len} samples"), got: "mixed lengths".into() });
    }
    let flat: Vec<Vec<f64>> = envelopes
        .iter()
        .map(|e| envelope_spectrogram(e, window_len, hop).map(|s| s.flatten()))
        .collect::<Result<_>>()?;
    let dim = flat[0].len();
    Ok(DMatrix::from_fn(flat.len(), dim, |i, j| flat[i][j]))
}

/// Spectrogram → PCA (fitted on this batch) → projection; labels index into
/// [`class_list`] of the batch.
pub fn featurize_pipeline(envelopes: &[ComplexEnvelope], config: &FeatureConfig) -> Result<(FeatureMatrix, PcaModel)> {
    let data = spectrogram_matrix(envelopes, config.window_len, config.hop)?;
    let model = if data.nrows() == 1 {
        if config.dim == 0 || config.dim > data.ncols() {
            return Err(Error::Validation(format!("target dimension {} out of range", config.dim)));
        }
        // a lone observation is its own mean; any orthonormal basis will do
        PcaModel {
            mean: data.row(0).transpose(),
            basis: DMatrix::identity(data.ncols(), config.dim),
            explained_variance: DVector::zeros(config.dim),
        }
    } else {
        pca_fit(&data, config.dim)?
    };
    let scores = model.project(&data)?;
    let classes = class_list(envelopes);
    let labels = envelopes
        .iter()
        .map(|e| classes.iter().position(|&k| k == e.label).expect("label in class list"))
        .collect();
    let mut features = FeatureMatrix::from_matrix(&scores, Some(labels))?;
    let names: Vec<&str> = classes.iter().map(|k| k.name()).collect();
    features.provenance = format!(
        "stft window={} hop={} pca d={} classes={}",
        config.window_len,
        config.hop,
        config.dim,
        names.join(";")
    );
    Ok((features, model))
}
