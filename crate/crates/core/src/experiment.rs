//! Seeded simulate → featurize → fit → evaluate repetitions over an SNR grid.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::{
    accuracy, adjusted_rand_index, confusion_matrix, cross_entropy_loss, map_clusters_to_classes, LabeledPrediction,
};
use crate::features::{featurize_pipeline, FeatureConfig, FeatureMatrix};
use crate::mixture::{
    fit_gsmm_from, fit_smm_from, init_random, FitOptions, FitReport, Priors, Responsibilities, SmmState,
};
use crate::seed::child_seed;
use crate::waveform::{add_awgn, envelope, ComplexEnvelope, ModulationKind, ModulationSpec, PulseConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    Gsmm,
    Smm,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Gsmm => "gsmm",
            ModelKind::Smm => "smm",
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gsmm" => Ok(ModelKind::Gsmm),
            "smm" => Ok(ModelKind::Smm),
            other => Err(Error::Config(format!("unknown model `{other}` (gsmm|smm)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// K = number of classes; accuracy and cross-entropy.
    Classification,
    /// K = L0 > number of classes; adjusted Rand index.
    Clustering,
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "classification" => Ok(Mode::Classification),
            "clustering" => Ok(Mode::Clustering),
            other => Err(Error::Config(format!("unknown mode `{other}` (classification|clustering)"))),
        }
    }
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Classification => "classification",
            Mode::Clustering => "clustering",
        }
    }
}

/// Rescaling applied to PCA scores before fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scaling {
    None,
    /// One factor for all columns: unit mean variance.
    Global,
    /// Per-column z-scores.
    Columns,
}

impl FromStr for Scaling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(Scaling::None),
            "global" => Ok(Scaling::Global),
            "columns" => Ok(Scaling::Columns),
            other => Err(Error::Config(format!("unknown scaling `{other}` (none|global|columns)"))),
        }
    }
}

impl Scaling {
    pub fn name(self) -> &'static str {
        match self {
            Scaling::None => "none",
            Scaling::Global => "global",
            Scaling::Columns => "columns",
        }
    }

    pub fn apply(self, fm: &FeatureMatrix) -> FeatureMatrix {
        match self {
            Scaling::None => fm.clone(),
            Scaling::Columns => fm.standardized(),
            Scaling::Global => {
                let mean = fm.mean();
                let var = fm.covariance().trace() / fm.dim() as f64;
                let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
                let rows = fm.rows.iter().map(|r| (r - &mean) / sd).collect();
                FeatureMatrix { rows, labels: fm.labels.clone(), provenance: fm.provenance.clone() }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub modulations: Vec<ModulationKind>,
    pub barker_length: usize,
    /// Code length of Frank, P1, P2 (must be a square), P3, P4 and Zadoff.
    pub polyphase_length: usize,
    pub zadoff_r: i64,
    pub zadoff_q: i64,
    pub costas: Vec<usize>,
    pub chirp_sign: f64,
    pub snr_db: Vec<f64>,
    pub signals_per_class: usize,
    pub pulse: PulseConfig,
    pub features: FeatureConfig,
    pub scaling: Scaling,
    pub mode: Mode,
    pub models: Vec<ModelKind>,
    /// K (classification) or L0 (clustering); `None` means the number of
    /// classes, or 15 when clustering.
    pub clusters: Option<usize>,
    pub repetitions: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub is_draws: usize,
    pub master_seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            modulations: ModulationKind::ALL.to_vec(),
            barker_length: 13,
            polyphase_length: 64,
            zadoff_r: 7,
            zadoff_q: 32,
            costas: crate::waveform::DEFAULT_COSTAS.to_vec(),
            chirp_sign: 1.0,
            snr_db: vec![-10.0],
            signals_per_class: 100,
            pulse: PulseConfig::default(),
            features: FeatureConfig::default(),
            scaling: Scaling::Global,
            mode: Mode::Classification,
            models: vec![ModelKind::Gsmm, ModelKind::Smm],
            clusters: None,
            repetitions: 20,
            tol: 1e-8,
            max_iter: 500,
            is_draws: crate::numkernel::alpha::DEFAULT_IS_DRAWS,
            master_seed: 0,
            output_dir: PathBuf::from("results"),
        }
    }
}

fn list<T: ToString>(items: &[T]) -> String {
    format!("[{}]", items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", "))
}

fn parse_list<T: FromStr>(line: usize, key: &str, v: &str) -> Result<Vec<T>> {
    let inner = v
        .trim()
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| Error::Parse { line, message: format!("`{key}` must be a list `[a, b, ...]`") })?;
    if inner.trim().is_empty() {
        return Ok(Vec::new());
    }
    inner
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Parse { line, message: format!("bad `{key}` entry `{}`", s.trim()) })
        })
        .collect()
}

fn parse_one<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::Parse { line, message: format!("bad value `{}` for `{key}`", v.trim()) })
}

impl ExperimentConfig {
    pub fn n_classes(&self) -> usize {
        self.modulations.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.unwrap_or(match self.mode {
            Mode::Classification => self.n_classes(),
            Mode::Clustering => 15,
        })
    }

    pub fn spec(&self, kind: ModulationKind) -> ModulationSpec {
        let mut spec = ModulationSpec::standard(kind);
        spec.chirp_sign = self.chirp_sign;
        spec.zadoff_r = self.zadoff_r;
        spec.zadoff_q = self.zadoff_q;
        match kind {
            ModulationKind::Barker => spec.code_length = self.barker_length,
            ModulationKind::Costas => {
                spec.code_length = self.costas.len();
                spec.costas_sequence = self.costas.clone();
            }
            ModulationKind::Lfm | ModulationKind::Qfm => {}
            _ => {
                spec.code_length = self.polyphase_length;
                spec.square_side = (self.polyphase_length as f64).sqrt().round() as usize;
            }
        }
        spec
    }

    pub fn validate(&self) -> Result<()> {
        if self.modulations.is_empty() {
            return Err(Error::Config("modulation list is empty".into()));
        }
        let mut seen = self.modulations.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.modulations.len() {
            return Err(Error::Config("modulation list has duplicates".into()));
        }
        if self.snr_db.is_empty() || self.snr_db.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("snr_db must be a non-empty list of finite values".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if self.models.is_empty() {
            return Err(Error::Config("no models selected".into()));
        }
        if self.signals_per_class == 0 {
            return Err(Error::Config("signals_per_class must be positive".into()));
        }
        let n = self.signals_per_class * self.n_classes();
        let k = self.n_clusters();
        if k == 0 || k > n {
            return Err(Error::Config(format!("cluster count {k} outside [1, {n}]")));
        }
        if self.features.dim == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 || self.is_draws < 2 {
            return Err(Error::Config("tol, max_iter and is_draws must be positive".into()));
        }
        self.pulse.validate()?;
        for &kind in &self.modulations {
            self.spec(kind).validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let names: Vec<&str> = self.modulations.iter().map(|k| k.name()).collect();
        let models: Vec<&str> = self.models.iter().map(|m| m.name()).collect();
        let _ = writeln!(out, "modulations = {}", list(&names));
        let _ = writeln!(out, "barker_length = {}", self.barker_length);
        let _ = writeln!(out, "polyphase_length = {}", self.polyphase_length);
        let _ = writeln!(out, "zadoff_r = {}", self.zadoff_r);
        let _ = writeln!(out, "zadoff_q = {}", self.zadoff_q);
        let _ = writeln!(out, "costas = {}", list(&self.costas));
        let _ = writeln!(out, "chirp_sign = {:?}", self.chirp_sign);
        let _ = writeln!(out, "snr_db = {}", list(&self.snr_db.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>()));
        let _ = writeln!(out, "signals_per_class = {}", self.signals_per_class);
        let _ = writeln!(out, "sample_rate = {:?}", self.pulse.sample_rate);
        let _ = writeln!(out, "duration = {:?}", self.pulse.duration);
        match self.pulse.bandwidth {
            Some(b) => {
                let _ = writeln!(out, "bandwidth = {b:?}");
            }
            None => out.push_str("bandwidth = none\n"),
        }
        let _ = writeln!(out, "carrier = {:?}", self.pulse.carrier);
        let _ = writeln!(out, "window = {}", self.features.window_len);
        let _ = writeln!(out, "hop = {}", self.features.hop);
        let _ = writeln!(out, "dim = {}", self.features.dim);
        let _ = writeln!(out, "scaling = {}", self.scaling.name());
        let _ = writeln!(out, "mode = {}", self.mode.name());
        let _ = writeln!(out, "models = {}", list(&models));
        match self.clusters {
            Some(k) => {
                let _ = writeln!(out, "clusters = {k}");
            }
            None => out.push_str("clusters = auto\n"),
        }
        let _ = writeln!(out, "repetitions = {}", self.repetitions);
        let _ = writeln!(out, "tol = {:?}", self.tol);
        let _ = writeln!(out, "max_iter = {}", self.max_iter);
        let _ = writeln!(out, "is_draws = {}", self.is_draws);
        let _ = writeln!(out, "master_seed = {}", self.master_seed);
        let _ = writeln!(out, "output_dir = {}", self.output_dir.display());
        out
    }

    /// Parses `key = value` lines over the defaults; `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::Parse { line, message: format!("expected `key = value`, got `{content}`") })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "modulations" => c.modulations = parse_list(line, key, value)?,
                "barker_length" => c.barker_length = parse_one(line, key, value)?,
                "polyphase_length" => c.polyphase_length = parse_one(line, key, value)?,
                "zadoff_r" => c.zadoff_r = parse_one(line, key, value)?,
                "zadoff_q" => c.zadoff_q = parse_one(line, key, value)?,
                "costas" => c.costas = parse_list(line, key, value)?,
                "chirp_sign" => c.chirp_sign = parse_one(line, key, value)?,
                "snr_db" => c.snr_db = parse_list(line, key, value)?,
                "signals_per_class" => c.signals_per_class = parse_one(line, key, value)?,
                "sample_rate" => c.pulse.sample_rate = parse_one(line, key, value)?,
                "duration" => c.pulse.duration = parse_one(line, key, value)?,
                "bandwidth" => {
                    c.pulse.bandwidth =
                        if value.eq_ignore_ascii_case("none") { None } else { Some(parse_one(line, key, value)?) }
                }
                "carrier" => c.pulse.carrier = parse_one(line, key, value)?,
                "window" => c.features.window_len = parse_one(line, key, value)?,
                "hop" => c.features.hop = parse_one(line, key, value)?,
                "dim" => c.features.dim = parse_one(line, key, value)?,
                "scaling" => c.scaling = parse_one(line, key, value)?,
                "mode" => c.mode = parse_one(line, key, value)?,
                "models" => c.models = parse_list(line, key, value)?,
                "model" => c.models = vec![parse_one(line, key, value)?],
                "clusters" => {
                    c.clusters = if value.eq_ignore_ascii_case("auto") { None } else { Some(parse_one(line, key, value)?) }
                }
                "repetitions" => c.repetitions = parse_one(line, key, value)?,
                "tol" => c.tol = parse_one(line, key, value)?,
                "max_iter" => c.max_iter = parse_one(line, key, value)?,
                "is_draws" => c.is_draws = parse_one(line, key, value)?,
                "master_seed" => c.master_seed = parse_one(line, key, value)?,
                "output_dir" => c.output_dir = PathBuf::from(value),
                other => return Err(Error::Parse { line, message: format!("unknown key `{other}`") }),
            }
        }
        Ok(c)
    }
}

/// Noisy envelopes of every class, `signals_per_class` each, class-major.
pub fn simulate_batch(config: &ExperimentConfig, snr_db: f64, seed: u64) -> Result<Vec<ComplexEnvelope>> {
    let mut out = Vec::with_capacity(config.signals_per_class * config.n_classes());
    for (c, &kind) in config.modulations.iter().enumerate() {
        let clean = envelope(&config.spec(kind), &config.pulse)?;
        for j in 0..config.signals_per_class {
            let noise_seed = child_seed(seed, &[c as u64, j as u64]);
            let mut noisy = add_awgn(&clean, snr_db, noise_seed)?;
            noisy.config.seed = noise_seed;
            out.push(noisy);
        }
    }
    Ok(out)
}

/// Feature rows for one repetition, labelled by position in `config.modulations`.
pub fn featurize_batch(config: &ExperimentConfig, envelopes: &[ComplexEnvelope]) -> Result<FeatureMatrix> {
    let (mut fm, _) = featurize_pipeline(envelopes, &config.features)?;
    fm.labels = Some(
        envelopes
            .iter()
            .map(|e| config.modulations.iter().position(|&k| k == e.label).expect("simulated from the list"))
            .collect(),
    );
    Ok(config.scaling.apply(&fm))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutcome {
    pub accuracy: f64,
    pub cross_entropy: f64,
    pub ari: f64,
    /// Row-normalized, true class × predicted class.
    pub confusion: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub final_elbo: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepetitionResult {
    pub snr_index: usize,
    pub repetition: usize,
    pub seed: u64,
    pub outcomes: BTreeMap<ModelKind, std::result::Result<ModelOutcome, String>>,
}

pub fn evaluate_fit(labels: &[usize], resp: &Responsibilities, n_classes: usize) -> Result<(f64, f64, f64, DMatrix<f64>)> {
    let pred = LabeledPrediction::new(labels.to_vec(), resp)?;
    let mapping = map_clusters_to_classes(&pred, n_classes)?;
    Ok((
        accuracy(&pred, &mapping),
        cross_entropy_loss(&pred, &mapping),
        adjusted_rand_index(labels, &pred.hard_assignments)?,
        confusion_matrix(&pred, &mapping, n_classes),
    ))
}

fn outcome<S>(report: &FitReport<S>, labels: &[usize], n_classes: usize) -> Result<ModelOutcome> {
    let (accuracy, cross_entropy, ari, confusion) = evaluate_fit(labels, &report.responsibilities, n_classes)?;
    Ok(ModelOutcome {
        accuracy,
        cross_entropy,
        ari,
        confusion,
        iterations: report.iterations,
        converged: report.converged,
        final_elbo: report.final_elbo(),
    })
}

/// One (SNR, repetition) cell. Both models start from the same draw.
pub fn run_repetition(config: &ExperimentConfig, snr_index: usize, repetition: usize) -> RepetitionResult {
    let seed = child_seed(config.master_seed, &[snr_index as u64, repetition as u64]);
    let mut outcomes = BTreeMap::new();
    let prepared = (|| -> Result<_> {
        let envelopes = simulate_batch(config, config.snr_db[snr_index], child_seed(seed, &[0]))?;
        let data = featurize_batch(config, &envelopes)?;
        let priors = Priors::default_for(&data);
        let (init, _) = init_random(&data, config.n_clusters(), &priors, child_seed(seed, &[1]))?;
        Ok((data, priors, init))
    })();
    let (data, priors, init) = match prepared {
        Ok(p) => p,
        Err(e) => {
            for &m in &config.models {
                outcomes.insert(m, Err(e.to_string()));
            }
            return RepetitionResult { snr_index, repetition, seed, outcomes };
        }
    };
    let labels = data.labels.clone().expect("labelled batch");
    let opts = FitOptions {
        max_iter: config.max_iter,
        tol: config.tol,
        seed: child_seed(seed, &[2]),
        is_draws: config.is_draws,
        ..Default::default()
    };
    for &m in &config.models {
        let result = match m {
            ModelKind::Gsmm => fit_gsmm_from(&data, init.clone(), &priors, &opts)
                .and_then(|r| outcome(&r, &labels, config.n_classes())),
            ModelKind::Smm => fit_smm_from(&data, SmmState::from_gsmm(&init), &priors, &opts)
                .and_then(|r| outcome(&r, &labels, config.n_classes())),
        };
        if let Err(e) = &result {
            log::warn!("snr {} rep {repetition} {}: {e}", config.snr_db[snr_index], m.name());
        }
        outcomes.insert(m, result.map_err(|e| e.to_string()));
    }
    RepetitionResult { snr_index, repetition, seed, outcomes }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Sample mean and (n − 1) standard deviation; NaN when empty.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub snr_db: f64,
    pub model: ModelKind,
    pub succeeded: usize,
    pub failed: usize,
    pub not_converged: usize,
    pub accuracy: MeanStd,
    pub cross_entropy: MeanStd,
    pub ari: MeanStd,
    pub confusion: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub repetitions: Vec<RepetitionResult>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentReport {
    pub fn failed_fraction(&self) -> f64 {
        let total = self.repetitions.len() * self.config.models.len();
        let failed: usize = self.summary.iter().map(|s| s.failed).sum();
        failed as f64 / total.max(1) as f64
    }

    pub fn row(&self, snr_db: f64, model: ModelKind) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.snr_db == snr_db && r.model == model)
    }

    /// Per-repetition values of one metric for one model at one SNR (failed
    /// repetitions skipped).
    pub fn values(&self, snr_index: usize, model: ModelKind, metric: fn(&ModelOutcome) -> f64) -> Vec<f64> {
        self.repetitions
            .iter()
            .filter(|r| r.snr_index == snr_index)
            .filter_map(|r| r.outcomes.get(&model).and_then(|o| o.as_ref().ok()).map(metric))
            .collect()
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "snr_db,model,succeeded,failed,not_converged,acc_mean,acc_std,cel_mean,cel_std,ari_mean,ari_std\n",
        );
        for r in &self.summary {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                r.snr_db,
                r.model.name(),
                r.succeeded,
                r.failed,
                r.not_converged,
                r.accuracy.mean,
                r.accuracy.std,
                r.cross_entropy.mean,
                r.cross_entropy.std,
                r.ari.mean,
                r.ari.std
            );
        }
        out
    }

    pub fn repetitions_csv(&self) -> String {
        let mut out = String::from("snr_db,repetition,seed,model,status,acc,cel,ari,iterations,converged,final_elbo\n");
        for rep in &self.repetitions {
            for (m, o) in &rep.outcomes {
                let snr = self.config.snr_db[rep.snr_index];
                match o {
                    Ok(o) => {
                        let _ = writeln!(
                            out,
                            "{snr},{},{},{},ok,{:.6},{:.6},{:.6},{},{},{:.10e}",
                            rep.repetition,
                            rep.seed,
                            m.name(),
                            o.accuracy,
                            o.cross_entropy,
                            o.ari,
                            o.iterations,
                            o.converged as u8,
                            o.final_elbo
                        );
                    }
                    Err(e) => {
                        let _ = writeln!(
                            out,
                            "{snr},{},{},{},\"failed: {}\",,,,,,",
                            rep.repetition,
                            rep.seed,
                            m.name(),
                            e.replace('"', "'")
                        );
                    }
                }
            }
        }
        out
    }

    /// Aligned text tables: metrics per SNR and model, then mean confusion matrices.
    pub fn summary_text(&self) -> String {
        let c = &self.config;
        let mut out = format!(
            "{} experiment: {} classes, K = {}, {} signals/class, {} repetitions, d = {}\n\n",
            c.mode.name(),
            c.n_classes(),
            c.n_clusters(),
            c.signals_per_class,
            c.repetitions,
            c.features.dim
        );
        let _ = writeln!(
            out,
            "{:>8}  {:<5} {:>4} {:>6} {:>8}  {:>17}  {:>17}  {:>17}",
            "SNR(dB)", "model", "ok", "failed", "no-conv", "Acc mean (std)", "CEL mean (std)", "ARI mean (std)"
        );
        for r in &self.summary {
            let _ = writeln!(
                out,
                "{:>8}  {:<5} {:>4} {:>6} {:>8}  {:>8.4} ({:.4})  {:>8.4} ({:.4})  {:>8.4} ({:.4})",
                r.snr_db,
                r.model.name(),
                r.succeeded,
                r.failed,
                r.not_converged,
                r.accuracy.mean,
                r.accuracy.std,
                r.cross_entropy.mean,
                r.cross_entropy.std,
                r.ari.mean,
                r.ari.std
            );
        }
        for r in &self.summary {
            let _ = writeln!(out, "\nmean confusion (%), {} at {} dB; rows true, columns predicted", r.model.name(), r.snr_db);
            let _ = write!(out, "{:>8}", "");
            for k in &c.modulations {
                let _ = write!(out, "{:>8}", k.name());
            }
            out.push('\n');
            for (i, k) in c.modulations.iter().enumerate() {
                let _ = write!(out, "{:>8}", k.name());
                for j in 0..c.n_classes() {
                    let _ = write!(out, "{:>8.1}", 100.0 * r.confusion[(i, j)]);
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn confusion_csv(&self, row: &SummaryRow) -> String {
        let names: Vec<&str> = self.config.modulations.iter().map(|k| k.name()).collect();
        let mut out = format!("true\\predicted,{}\n", names.join(","));
        for (i, name) in names.iter().enumerate() {
            let vals: Vec<String> = (0..names.len()).map(|j| format!("{:.6}", row.confusion[(i, j)])).collect();
            let _ = writeln!(out, "{name},{}", vals.join(","));
        }
        out
    }

    /// Writes config, summaries, per-repetition rows and confusion matrices.
    pub fn write(&self, dir: &Path) -> Result<()> {
        use crate::io::write_text;
        write_text(&dir.join("config.txt"), &self.config.to_text())?;
        write_text(&dir.join("summary.csv"), &self.summary_csv())?;
        write_text(&dir.join("summary.txt"), &self.summary_text())?;
        write_text(&dir.join("repetitions.csv"), &self.repetitions_csv())?;
        for r in &self.summary {
            let name = format!("confusion_{}_{}dB.csv", r.model.name(), r.snr_db);
            write_text(&dir.join(name), &self.confusion_csv(r))?;
        }
        Ok(())
    }
}

fn summarize(config: &ExperimentConfig, reps: &[RepetitionResult]) -> Vec<SummaryRow> {
    let c = config.n_classes();
    let mut rows = Vec::new();
    for (si, &snr) in config.snr_db.iter().enumerate() {
        for &m in &config.models {
            let outcomes: Vec<&std::result::Result<ModelOutcome, String>> =
                reps.iter().filter(|r| r.snr_index == si).filter_map(|r| r.outcomes.get(&m)).collect();
            let ok: Vec<&ModelOutcome> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
            let pick = |f: fn(&ModelOutcome) -> f64| MeanStd::of(&ok.iter().map(|o| f(o)).collect::<Vec<_>>());
            let mut confusion = DMatrix::zeros(c, c);
            for o in &ok {
                confusion += &o.confusion;
            }
            if !ok.is_empty() {
                confusion /= ok.len() as f64;
            }
            rows.push(SummaryRow {
                snr_db: snr,
                model: m,
                succeeded: ok.len(),
                failed: outcomes.len() - ok.len(),
                not_converged: ok.iter().filter(|o| !o.converged).count(),
                accuracy: pick(|o| o.accuracy),
                cross_entropy: pick(|o| o.cross_entropy),
                ari: pick(|o| o.ari),
                confusion,
            });
        }
    }
    rows
}

/// Runs every (SNR, repetition) cell, in parallel, and merges the results in
/// index order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let cells: Vec<(usize, usize)> =
        (0..config.snr_db.len()).flat_map(|s| (0..config.repetitions).map(move |m| (s, m))).collect();
    let repetitions: Vec<RepetitionResult> =
        cells.par_iter().map(|&(s, m)| run_repetition(config, s, m)).collect();
    let summary = summarize(config, &repetitions);
    Ok(ExperimentReport { config: config.clone(), repetitions, summary })
}

/// Mass of row `class` in a confusion matrix that lands on `other`.
pub fn confusion_mass(confusion: &DMatrix<f64>, class: usize, other: usize) -> f64 {
    confusion[(class, other)]
}

/// Centre of each class in feature space; handy for scatter diagnostics.
pub fn class_means(fm: &FeatureMatrix) -> Vec<DVector<f64>> {
    let labels = fm.labels.as_deref().unwrap_or(&[]);
    let c = fm.n_classes();
    let mut sums = vec![DVector::zeros(fm.dim()); c];
    let mut counts = vec![0usize; c];
    for (row, &l) in fm.rows.iter().zip(labels) {
        sums[l] += row;
        counts[l] += 1;
    }
    sums.into_iter().zip(counts).map(|(s, n)| s / n.max(1) as f64).collect()
}
