//! Plain-text persistence. Reals are written with 17 significant digits, so
//! every value reads back bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, PcaModel};
use crate::mixture::{Cluster, PosteriorState, Priors, ScalePosterior, SmmState};
use crate::numkernel::alpha::MomentRoute;
use crate::waveform::{ComplexEnvelope, ModulationKind, PulseConfig};

fn real(v: f64) -> String {
    format!("{v:.16e}")
}

fn reals<'a>(vs: impl IntoIterator<Item = &'a f64>) -> String {
    vs.into_iter().map(|v| real(*v)).collect::<Vec<_>>().join(" ")
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

/// Line cursor with 1-based numbering for error messages.
struct Lines<'a> {
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self { iter: text.lines().enumerate(), last: 0 }
    }

    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        match self.iter.next() {
            Some((i, l)) => {
                self.last = i + 1;
                Ok((i + 1, l.trim_end_matches('\r')))
            }
            None => Err(parse_err(self.last + 1, "unexpected end of file")),
        }
    }

    /// Next line, which must read `key v1 v2 ...`; returns the values.
    fn keyed(&mut self, key: &str) -> Result<(usize, Vec<&'a str>)> {
        let (n, line) = self.next_line()?;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some(k) if k == key => Ok((n, parts.collect())),
            Some(k) => Err(parse_err(n, format!("expected `{key}`, found `{k}`"))),
            None => Err(parse_err(n, format!("expected `{key}`, found an empty line"))),
        }
    }

    fn scalar(&mut self, key: &str) -> Result<f64> {
        let (n, v) = self.keyed(key)?;
        if v.len() != 1 {
            return Err(parse_err(n, format!("`{key}` takes one value, got {}", v.len())));
        }
        parse_f64(n, v[0])
    }

    fn count(&mut self, key: &str) -> Result<u64> {
        let (n, v) = self.keyed(key)?;
        if v.len() != 1 {
            return Err(parse_err(n, format!("`{key}` takes one value, got {}", v.len())));
        }
        v[0].parse().map_err(|_| parse_err(n, format!("`{}` is not a non-negative integer", v[0])))
    }

    fn vector(&mut self, key: &str, len: usize) -> Result<Vec<f64>> {
        let (n, v) = self.keyed(key)?;
        if v.len() != len {
            return Err(parse_err(n, format!("`{key}` needs {len} values, got {}", v.len())));
        }
        v.iter().map(|s| parse_f64(n, s)).collect()
    }

    fn end(&mut self) -> Result<()> {
        for (i, l) in self.iter.by_ref() {
            if !l.trim().is_empty() {
                return Err(parse_err(i + 1, "trailing content"));
            }
        }
        Ok(())
    }
}

fn parse_f64(line: usize, s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| parse_err(line, format!("`{s}` is not a number")))
}

fn check_version(lines: &mut Lines, expected: &str) -> Result<()> {
    let (n, header) = lines.next_line()?;
    let header = header.trim();
    let kind = expected.split_whitespace().next().unwrap_or_default();
    if header == expected {
        Ok(())
    } else if header.split_whitespace().next() == Some(kind) {
        Err(Error::Version { expected: expected.into(), found: header.into() })
    } else {
        Err(parse_err(n, format!("expected header `{expected}`, found `{header}`")))
    }
}

// ---- feature matrices ----

pub fn features_to_string(fm: &FeatureMatrix) -> String {
    let mut out = format!("# d={} n={} labeled={}\n", fm.dim(), fm.len(), fm.labels.is_some() as u8);
    if !fm.provenance.is_empty() {
        let _ = writeln!(out, "# provenance={}", fm.provenance.replace('\n', " "));
    }
    for (i, row) in fm.rows.iter().enumerate() {
        let mut line = row.iter().map(|v| real(*v)).collect::<Vec<_>>().join(",");
        if let Some(labels) = &fm.labels {
            let _ = write!(line, ",{}", labels[i]);
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}

pub fn features_from_str(text: &str) -> Result<FeatureMatrix> {
    let mut lines = Lines::new(text);
    let (n0, header) = lines.next_line()?;
    let fields = header
        .strip_prefix('#')
        .ok_or_else(|| parse_err(n0, "missing `# d=.. n=.. labeled=..` header"))?;
    let mut d = None;
    let mut n = None;
    let mut labeled = None;
    for f in fields.split_whitespace() {
        let (k, v) = f.split_once('=').ok_or_else(|| parse_err(n0, format!("bad header field `{f}`")))?;
        let v: usize = v.parse().map_err(|_| parse_err(n0, format!("bad header value `{f}`")))?;
        match k {
            "d" => d = Some(v),
            "n" => n = Some(v),
            "labeled" => labeled = Some(v),
            _ => return Err(parse_err(n0, format!("unknown header field `{k}`"))),
        }
    }
    let (d, n, labeled) = match (d, n, labeled) {
        (Some(d), Some(n), Some(l @ (0 | 1))) => (d, n, l == 1),
        _ => return Err(parse_err(n0, "header needs d, n and labeled=0|1")),
    };
    let mut provenance = String::new();
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (i, line) in lines.iter.by_ref() {
        let lineno = i + 1;
        lines.last = lineno;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(p) = rest.trim().strip_prefix("provenance=") {
                provenance = p.to_string();
            }
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        let want = d + labeled as usize;
        if parts.len() != want {
            return Err(parse_err(lineno, format!("expected {want} fields, got {}", parts.len())));
        }
        let values: Vec<f64> = parts[..d].iter().map(|s| parse_f64(lineno, s)).collect::<Result<_>>()?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(lineno, "non-finite feature value"));
        }
        rows.push(DVector::from_vec(values));
        if labeled {
            let l = parts[d].trim();
            labels.push(l.parse().map_err(|_| parse_err(lineno, format!("`{l}` is not a label")))?);
        }
    }
    if rows.len() != n {
        return Err(parse_err(lines.last + 1, format!("header promises {n} rows, found {}", rows.len())));
    }
    let mut fm = FeatureMatrix::new(rows, labeled.then_some(labels))?;
    fm.provenance = provenance;
    Ok(fm)
}

// ---- PCA ----

pub fn pca_to_string(m: &PcaModel) -> String {
    let mut out = String::from("pca v1\n");
    let _ = writeln!(out, "dims {} {}", m.input_dim(), m.output_dim());
    let _ = writeln!(out, "mean {}", reals(m.mean.iter()));
    let _ = writeln!(out, "variance {}", reals(m.explained_variance.iter()));
    for col in m.basis.column_iter() {
        let _ = writeln!(out, "basis {}", reals(col.iter()));
    }
    out
}

pub fn pca_from_str(text: &str) -> Result<PcaModel> {
    let mut lines = Lines::new(text);
    check_version(&mut lines, "pca v1")?;
    let (n, dims) = lines.keyed("dims")?;
    if dims.len() != 2 {
        return Err(parse_err(n, "`dims` takes two values"));
    }
    let big_d: usize = dims[0].parse().map_err(|_| parse_err(n, "bad input dimension"))?;
    let d: usize = dims[1].parse().map_err(|_| parse_err(n, "bad output dimension"))?;
    let mean = DVector::from_vec(lines.vector("mean", big_d)?);
    let explained_variance = DVector::from_vec(lines.vector("variance", d)?);
    let mut basis = DMatrix::zeros(big_d, d);
    for j in 0..d {
        basis.set_column(j, &DVector::from_vec(lines.vector("basis", big_d)?));
    }
    lines.end()?;
    Ok(PcaModel { mean, basis, explained_variance })
}

// ---- mixture models ----

fn write_cluster(out: &mut String, c: &Cluster) {
    let _ = writeln!(out, "kappa {}", real(c.kappa));
    let _ = writeln!(out, "eta {}", real(c.eta));
    let _ = writeln!(out, "gamma {}", real(c.gamma));
    let _ = writeln!(out, "mu {}", reals(c.mu.iter()));
    let _ = writeln!(out, "sigma {}", reals(c.sigma.transpose().iter()));
}

fn read_cluster(lines: &mut Lines, d: usize) -> Result<Cluster> {
    let kappa = lines.scalar("kappa")?;
    let eta = lines.scalar("eta")?;
    let gamma = lines.scalar("gamma")?;
    let mu = DVector::from_vec(lines.vector("mu", d)?);
    let line = lines.last + 1;
    let sigma = DMatrix::from_row_slice(d, d, &lines.vector("sigma", d * d)?);
    Cluster::new(kappa, eta, mu, gamma, sigma).map_err(|e| parse_err(line, e.to_string()))
}

fn write_priors(out: &mut String, p: &Priors) {
    out.push_str("priors\n");
    let _ = writeln!(out, "kappa0 {}", real(p.kappa0));
    let _ = writeln!(out, "eta0 {}", real(p.eta0));
    let _ = writeln!(out, "mu0 {}", reals(p.mu0.iter()));
    let _ = writeln!(out, "gamma0 {}", real(p.gamma0));
    let _ = writeln!(out, "sigma0 {}", reals(p.sigma0.transpose().iter()));
    for (k, v) in [("p0", p.p0), ("q0", p.q0), ("r0", p.r0), ("s0", p.s0)] {
        let _ = writeln!(out, "{k} {}", real(v));
    }
}

fn read_priors(lines: &mut Lines, d: usize) -> Result<Priors> {
    lines.keyed("priors")?;
    let p = Priors {
        kappa0: lines.scalar("kappa0")?,
        eta0: lines.scalar("eta0")?,
        mu0: DVector::from_vec(lines.vector("mu0", d)?),
        gamma0: lines.scalar("gamma0")?,
        sigma0: DMatrix::from_row_slice(d, d, &lines.vector("sigma0", d * d)?),
        p0: lines.scalar("p0")?,
        q0: lines.scalar("q0")?,
        r0: lines.scalar("r0")?,
        s0: lines.scalar("s0")?,
    };
    let line = lines.last;
    p.validate().map_err(|e| parse_err(line, e.to_string()))?;
    Ok(p)
}

fn read_dims(lines: &mut Lines) -> Result<(usize, usize)> {
    let k = lines.count("k")? as usize;
    let d = lines.count("d")? as usize;
    if k == 0 || d == 0 {
        return Err(parse_err(lines.last, "k and d must be positive"));
    }
    Ok((k, d))
}

pub fn gsmm_to_string(state: &PosteriorState, priors: &Priors) -> String {
    let mut out = String::from("gsmm v1\n");
    let _ = writeln!(out, "k {}\nd {}", state.k(), state.dim());
    let _ = writeln!(out, "is_seed {}\nis_draws {}", state.is_seed, state.is_draws);
    for (k, (c, s)) in state.clusters.iter().zip(&state.scales).enumerate() {
        let _ = writeln!(out, "cluster {k}");
        write_cluster(&mut out, c);
        for (key, v) in [
            ("log_p", s.log_p),
            ("r", s.r),
            ("q", s.q),
            ("s", s.s),
            ("e_alpha", s.e_alpha),
            ("e_ln_gamma_alpha", s.e_ln_gamma_alpha),
            ("alpha_std_error", s.alpha_std_error),
        ] {
            let _ = writeln!(out, "{key} {}", real(v));
        }
        let route = match s.alpha_route {
            MomentRoute::Laplace => 0.0,
            MomentRoute::ImportanceSampling => 1.0,
        };
        let _ = writeln!(out, "alpha_route {}", real(route));
    }
    write_priors(&mut out, priors);
    out
}

pub fn gsmm_from_str(text: &str) -> Result<(PosteriorState, Priors)> {
    let mut lines = Lines::new(text);
    check_version(&mut lines, "gsmm v1")?;
    let (k, d) = read_dims(&mut lines)?;
    let is_seed = lines.count("is_seed")?;
    let is_draws = lines.count("is_draws")? as usize;
    let mut clusters = Vec::with_capacity(k);
    let mut scales = Vec::with_capacity(k);
    for j in 0..k {
        let (n, idx) = lines.keyed("cluster")?;
        if idx != [j.to_string().as_str()] {
            return Err(parse_err(n, format!("expected cluster {j}")));
        }
        clusters.push(read_cluster(&mut lines, d)?);
        let log_p = lines.scalar("log_p")?;
        let r = lines.scalar("r")?;
        let q = lines.scalar("q")?;
        let s = lines.scalar("s")?;
        let e_alpha = lines.scalar("e_alpha")?;
        let e_ln_gamma_alpha = lines.scalar("e_ln_gamma_alpha")?;
        let alpha_std_error = lines.scalar("alpha_std_error")?;
        let route = lines.scalar("alpha_route")?;
        let line = lines.last;
        if !(r > 0.0 && q > 0.0 && s > 0.0 && log_p.is_finite()) {
            return Err(parse_err(line, "(alpha, beta) posterior parameters out of range"));
        }
        let mut sp = ScalePosterior {
            log_p,
            r,
            q,
            s,
            e_alpha,
            e_ln_gamma_alpha,
            e_beta: f64::NAN,
            e_log_beta: f64::NAN,
            alpha_route: if route == 0.0 { MomentRoute::Laplace } else { MomentRoute::ImportanceSampling },
            alpha_std_error,
        };
        sp.e_beta = s / q;
        sp.e_log_beta = crate::numkernel::digamma(s) - q.ln();
        scales.push(sp);
    }
    let priors = read_priors(&mut lines, d)?;
    lines.end()?;
    crate::mixture::refresh_cluster_weights(&mut clusters);
    Ok((PosteriorState { clusters, scales, is_seed, is_draws }, priors))
}

pub fn smm_to_string(state: &SmmState, priors: &Priors) -> String {
    let mut out = String::from("smm v1\n");
    let _ = writeln!(out, "k {}\nd {}", state.k(), state.dim());
    for (k, (c, nu)) in state.clusters.iter().zip(&state.nu).enumerate() {
        let _ = writeln!(out, "cluster {k}");
        write_cluster(&mut out, c);
        let _ = writeln!(out, "nu {}", real(*nu));
    }
    write_priors(&mut out, priors);
    out
}

pub fn smm_from_str(text: &str) -> Result<(SmmState, Priors)> {
    let mut lines = Lines::new(text);
    check_version(&mut lines, "smm v1")?;
    let (k, d) = read_dims(&mut lines)?;
    let mut clusters = Vec::with_capacity(k);
    let mut nu = Vec::with_capacity(k);
    for j in 0..k {
        let (n, idx) = lines.keyed("cluster")?;
        if idx != [j.to_string().as_str()] {
            return Err(parse_err(n, format!("expected cluster {j}")));
        }
        clusters.push(read_cluster(&mut lines, d)?);
        let v = lines.scalar("nu")?;
        if !(v > 0.0) {
            return Err(parse_err(lines.last, "nu must be positive"));
        }
        nu.push(v);
    }
    let priors = read_priors(&mut lines, d)?;
    lines.end()?;
    crate::mixture::refresh_cluster_weights(&mut clusters);
    Ok((SmmState { clusters, nu }, priors))
}

/// Either kind of saved mixture.
#[derive(Debug, Clone)]
pub enum SavedModel {
    Gsmm(PosteriorState, Priors),
    Smm(SmmState, Priors),
}

pub fn model_from_str(text: &str) -> Result<SavedModel> {
    let first = text.lines().next().unwrap_or("").trim();
    match first.split_whitespace().next() {
        Some("gsmm") => gsmm_from_str(text).map(|(s, p)| SavedModel::Gsmm(s, p)),
        Some("smm") => smm_from_str(text).map(|(s, p)| SavedModel::Smm(s, p)),
        _ => Err(parse_err(1, format!("expected `gsmm v1` or `smm v1`, found `{first}`"))),
    }
}

// ---- envelopes ----

pub fn envelope_to_string(env: &ComplexEnvelope) -> String {
    let mut out = String::from("kind,fs,T,snr_db,seed\n");
    let snr = env.snr_db.map_or_else(|| "none".to_string(), real);
    let _ = writeln!(
        out,
        "{},{},{},{},{}",
        env.label,
        real(env.config.sample_rate),
        real(env.config.duration),
        snr,
        env.config.seed
    );
    for s in &env.samples {
        let _ = writeln!(out, "{},{}", real(s.re), real(s.im));
    }
    out
}

pub fn envelope_from_str(text: &str) -> Result<ComplexEnvelope> {
    let mut lines = Lines::new(text);
    let (n, header) = lines.next_line()?;
    if header.trim() != "kind,fs,T,snr_db,seed" {
        return Err(parse_err(n, "expected header `kind,fs,T,snr_db,seed`"));
    }
    let (n, meta) = lines.next_line()?;
    let f: Vec<&str> = meta.split(',').map(str::trim).collect();
    if f.len() != 5 {
        return Err(parse_err(n, format!("expected 5 metadata fields, got {}", f.len())));
    }
    let label: ModulationKind = f[0].parse().map_err(|_| parse_err(n, format!("unknown modulation `{}`", f[0])))?;
    let config = PulseConfig {
        sample_rate: parse_f64(n, f[1])?,
        duration: parse_f64(n, f[2])?,
        seed: f[4].parse().map_err(|_| parse_err(n, "bad seed"))?,
        ..PulseConfig::default()
    };
    let snr_db = if f[3] == "none" { None } else { Some(parse_f64(n, f[3])?) };
    let mut samples = Vec::new();
    for (i, line) in lines.iter.by_ref() {
        if line.trim().is_empty() {
            continue;
        }
        let (re, im) = line.split_once(',').ok_or_else(|| parse_err(i + 1, "expected `re,im`"))?;
        samples.push(Complex64::new(parse_f64(i + 1, re)?, parse_f64(i + 1, im)?));
    }
    Ok(ComplexEnvelope { samples, config, label, snr_db })
}

// ---- files ----

pub fn read_text(path: &Path) -> Result<String> {
    Ok(std::fs::read_to_string(path)?)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(std::fs::write(path, text)?)
}

pub fn load_features(path: &Path) -> Result<FeatureMatrix> {
    features_from_str(&read_text(path)?)
}

pub fn save_features(path: &Path, fm: &FeatureMatrix) -> Result<()> {
    write_text(path, &features_to_string(fm))
}

pub fn load_model(path: &Path) -> Result<SavedModel> {
    model_from_str(&read_text(path)?)
}

pub fn save_model(path: &Path, model: &SavedModel) -> Result<()> {
    let text = match model {
        SavedModel::Gsmm(s, p) => gsmm_to_string(s, p),
        SavedModel::Smm(s, p) => smm_to_string(s, p),
    };
    write_text(path, &text)
}
