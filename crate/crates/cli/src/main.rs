use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gsmm::eval::{accuracy, adjusted_rand_index, confusion_matrix, cross_entropy_loss, map_clusters_to_classes, LabeledPrediction};
use gsmm::experiment::{featurize_batch, run_experiment, simulate_batch, ExperimentConfig, ModelKind};
use gsmm::features::FeatureMatrix;
use gsmm::io::{self, SavedModel};
use gsmm::mixture::{fit_gsmm, fit_smm, predict, FitOptions, Priors, Responsibilities};
use gsmm::{Error, Result};

#[derive(Parser)]
#[command(name = "gsmm", version, about = "Generalized Student-t mixtures for LPI radar waveform classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config file (`key = value`); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// SNR in dB; repeat or comma-separate for a grid.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr: Vec<f64>,
    /// Number of mixture components (K, or L0 when clustering).
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_parser = parse_model)]
    model: Option<ModelKind>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long = "max-iter")]
    max_iter: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate noisy envelopes of every configured class, one file each.
    Simulate(Common),
    /// STFT + PCA features from envelope files (or a fresh simulation when none given).
    Featurize {
        #[command(flatten)]
        common: Common,
        /// Envelope files written by `simulate`.
        inputs: Vec<PathBuf>,
    },
    /// Fit a mixture to a feature file.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        features: PathBuf,
    },
    /// Responsibilities of a saved model on a feature file.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        features: PathBuf,
        #[arg(long = "model-file")]
        model_file: PathBuf,
    },
    /// Accuracy, cross-entropy and ARI of a saved model on labelled features.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        features: PathBuf,
        #[arg(long = "model-file")]
        model_file: PathBuf,
    },
    /// Seeded repetitions over the SNR grid, both models from shared initializations.
    Experiment(Common),
}

fn parse_model(s: &str) -> std::result::Result<ModelKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl Common {
    fn experiment_config(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::from_text(&io::read_text(p)?)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            c.master_seed = s;
        }
        if !self.snr.is_empty() {
            c.snr_db = self.snr.clone();
        }
        if self.k.is_some() {
            c.clusters = self.k;
        }
        if let Some(m) = self.model {
            c.models = vec![m];
        }
        if let Some(t) = self.tol {
            c.tol = t;
        }
        if let Some(m) = self.max_iter {
            c.max_iter = m;
        }
        if let Some(o) = &self.out {
            c.output_dir = o.clone();
        }
        c.validate()?;
        Ok(c)
    }

    fn out_dir(&self, config: &ExperimentConfig) -> PathBuf {
        self.out.clone().unwrap_or_else(|| config.output_dir.clone())
    }
}

fn simulate(common: &Common) -> Result<()> {
    let c = common.experiment_config()?;
    let out = common.out_dir(&c);
    for (i, &snr) in c.snr_db.iter().enumerate() {
        let batch = simulate_batch(&c, snr, gsmm::seed::child_seed(c.master_seed, &[i as u64]))?;
        for (j, env) in batch.iter().enumerate() {
            let name = format!("{}dB_{}_{:04}.txt", snr, env.label.name(), j % c.signals_per_class);
            io::write_text(&out.join(name), &io::envelope_to_string(env))?;
        }
        log::info!("{} envelopes at {snr} dB written to {}", batch.len(), out.display());
    }
    Ok(())
}

fn featurize(common: &Common, inputs: &[PathBuf]) -> Result<()> {
    let c = common.experiment_config()?;
    let out = common.out_dir(&c);
    let (fm, pca) = if inputs.is_empty() {
        if c.snr_db.len() != 1 {
            return Err(Error::Config("featurize without inputs needs a single --snr".into()));
        }
        let batch = simulate_batch(&c, c.snr_db[0], gsmm::seed::child_seed(c.master_seed, &[0]))?;
        let fm = featurize_batch(&c, &batch)?;
        let (_, pca) = gsmm::features::featurize_pipeline(&batch, &c.features)?;
        (fm, pca)
    } else {
        let envs = inputs
            .iter()
            .map(|p| io::envelope_from_str(&io::read_text(p)?))
            .collect::<Result<Vec<_>>>()?;
        let (fm, pca) = gsmm::features::featurize_pipeline(&envs, &c.features)?;
        (c.scaling.apply(&fm), pca)
    };
    io::save_features(&out.join("features.txt"), &fm)?;
    io::write_text(&out.join("pca.txt"), &io::pca_to_string(&pca))?;
    log::info!("{} x {} features written to {}", fm.len(), fm.dim(), out.display());
    Ok(())
}

fn fit_options(c: &ExperimentConfig) -> FitOptions {
    FitOptions { max_iter: c.max_iter, tol: c.tol, seed: c.master_seed, is_draws: c.is_draws, ..Default::default() }
}

fn fit(common: &Common, features: &Path) -> Result<()> {
    let c = common.experiment_config()?;
    let out = common.out_dir(&c);
    let data = io::load_features(features)?;
    let priors = Priors::default_for(&data);
    let k = common.k.unwrap_or_else(|| data.n_classes().max(1));
    let opts = fit_options(&c);
    let model = *c.models.first().expect("validated");
    let (saved, trace, warnings, converged, iterations) = match model {
        ModelKind::Gsmm => {
            let r = fit_gsmm(&data, k, &priors, &opts)?;
            (SavedModel::Gsmm(r.final_state, priors), r.elbo_trace, r.warnings, r.converged, r.iterations)
        }
        ModelKind::Smm => {
            let r = fit_smm(&data, k, &priors, &opts)?;
            (SavedModel::Smm(r.final_state, priors), r.elbo_trace, r.warnings, r.converged, r.iterations)
        }
    };
    for w in &warnings {
        log::warn!("{w}");
    }
    io::save_model(&out.join("model.txt"), &saved)?;
    let mut csv = String::from("iteration,elbo\n");
    for (i, l) in trace.iter().enumerate() {
        let _ = writeln!(csv, "{},{:.16e}", i + 1, l);
    }
    io::write_text(&out.join("elbo.csv"), &csv)?;
    println!(
        "{} K={k}: {} after {iterations} iterations, ELBO {:.6}",
        model.name(),
        if converged { "converged" } else { "stopped at max-iter" },
        trace.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn responsibilities(model: &SavedModel, data: &FeatureMatrix) -> Result<Responsibilities> {
    match model {
        SavedModel::Gsmm(s, _) => predict(s, data),
        SavedModel::Smm(s, _) => predict(s, data),
    }
}

fn predict_cmd(common: &Common, features: &Path, model_file: &Path) -> Result<()> {
    let data = io::load_features(features)?;
    let resp = responsibilities(&io::load_model(model_file)?, &data)?;
    let k = resp.k();
    let mut csv: String = (0..k).map(|j| format!("r{j},")).collect();
    csv.push_str("cluster\n");
    for (i, a) in resp.hard_assignments().iter().enumerate() {
        for j in 0..k {
            let _ = write!(csv, "{:.16e},", resp.r[(i, j)]);
        }
        let _ = writeln!(csv, "{a}");
    }
    match &common.out {
        Some(dir) => io::write_text(&dir.join("responsibilities.csv"), &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn evaluate(common: &Common, features: &Path, model_file: &Path) -> Result<()> {
    let data = io::load_features(features)?;
    let labels = data
        .labels
        .clone()
        .ok_or_else(|| Error::Validation("evaluate needs labelled features".into()))?;
    let resp = responsibilities(&io::load_model(model_file)?, &data)?;
    let c = data.n_classes();
    let pred = LabeledPrediction::new(labels.clone(), &resp)?;
    let mapping = map_clusters_to_classes(&pred, c)?;
    let conf = confusion_matrix(&pred, &mapping, c);
    let mut text = format!(
        "accuracy = {:.6}\ncross_entropy = {:.6}\nari = {:.6}\nconfusion (rows true, columns predicted)\n",
        accuracy(&pred, &mapping),
        cross_entropy_loss(&pred, &mapping),
        adjusted_rand_index(&labels, &pred.hard_assignments)?
    );
    for i in 0..c {
        let row: Vec<String> = (0..c).map(|j| format!("{:.4}", conf[(i, j)])).collect();
        let _ = writeln!(text, "{}", row.join(","));
    }
    if let Some(dir) = &common.out {
        io::write_text(&dir.join("evaluation.txt"), &text)?;
    }
    print!("{text}");
    Ok(())
}

/// Exit 4 when more than a tenth of the fits failed.
fn experiment(common: &Common) -> Result<ExitCode> {
    let c = common.experiment_config()?;
    let out = common.out_dir(&c);
    let report = run_experiment(&c)?;
    report.write(&out)?;
    print!("{}", report.summary_text());
    let failed = report.failed_fraction();
    if failed > 0.1 {
        log::error!("{:.1}% of fits failed; see repetitions.csv", 100.0 * failed);
        return Ok(ExitCode::from(4));
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Simulate(c) => simulate(c)?,
        Command::Featurize { common, inputs } => featurize(common, inputs)?,
        Command::Fit { common, features } => fit(common, features)?,
        Command::Predict { common, features, model_file } => predict_cmd(common, features, model_file)?,
        Command::Evaluate { common, features, model_file } => evaluate(common, features, model_file)?,
        Command::Experiment(c) => return experiment(c),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
