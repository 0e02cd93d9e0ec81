//! Complex-envelope simulation of LPI pulse-compression waveforms.
//!
//! Envelopes are generated at baseband; the carrier is kept as metadata only.
//! Every noiseless envelope is normalized to unit energy Σ|u|²Δt = 1.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModulationKind {
    Lfm,
    Qfm,
    Costas,
    Barker,
    Frank,
    P1,
    P2,
    Zadoff,
    P3,
    P4,
}

impl ModulationKind {
    pub const ALL: [ModulationKind; 10] = [
        ModulationKind::Lfm,
        ModulationKind::Qfm,
        ModulationKind::Costas,
        ModulationKind::Barker,
        ModulationKind::Frank,
        ModulationKind::P1,
        ModulationKind::P2,
        ModulationKind::Zadoff,
        ModulationKind::P3,
        ModulationKind::P4,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModulationKind::Lfm => "LFM",
            ModulationKind::Qfm => "QFM",
            ModulationKind::Costas => "Costas",
            ModulationKind::Barker => "Barker",
            ModulationKind::Frank => "Frank",
            ModulationKind::P1 => "P1",
            ModulationKind::P2 => "P2",
            ModulationKind::Zadoff => "Zadoff",
            ModulationKind::P3 => "P3",
            ModulationKind::P4 => "P4",
        }
    }

    /// Frequency-modulated families (as opposed to phase codes).
    pub fn is_frequency_modulated(self) -> bool {
        matches!(self, ModulationKind::Lfm | ModulationKind::Qfm | ModulationKind::Costas)
    }
}

impl fmt::Display for ModulationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModulationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModulationKind::ALL
            .iter()
            .copied()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown modulation `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseConfig {
    /// Hz
    pub sample_rate: f64,
    /// Pulse duration T in seconds.
    pub duration: f64,
    /// Swept bandwidth B in Hz, used by the FM codes.
    pub bandwidth: Option<f64>,
    /// Carrier f0 in Hz; metadata only.
    pub carrier: f64,
    pub seed: u64,
}

impl Default for PulseConfig {
    /// 100 MHz sampling of a 5 µs pulse (500 samples) with a 25 MHz sweep.
    fn default() -> Self {
        Self {
            sample_rate: 100e6,
            duration: 5e-6,
            bandwidth: Some(25e6),
            carrier: 5e9,
            seed: 0,
        }
    }
}

impl PulseConfig {
    pub fn n_samples(&self) -> usize {
        (self.sample_rate * self.duration).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(Error::Config(format!("sample rate must be positive, got {}", self.sample_rate)));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::Config(format!("duration must be positive, got {}", self.duration)));
        }
        if self.n_samples() < 2 {
            return Err(Error::Config("pulse must contain at least two samples".into()));
        }
        if let Some(b) = self.bandwidth {
            if !(b > 0.0) {
                return Err(Error::Config(format!("bandwidth must be positive, got {b}")));
            }
            if b >= 0.5 * self.sample_rate {
                return Err(Error::Aliasing { bandwidth: b, sample_rate: self.sample_rate });
            }
        }
        Ok(())
    }

    fn time(&self, i: usize) -> f64 {
        i as f64 / self.sample_rate
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModulationSpec {
    pub kind: ModulationKind,
    /// Code length M for phase codes and Costas.
    pub code_length: usize,
    /// Side L of the Frank/P1/P2 matrix, M = L².
    pub square_side: usize,
    pub zadoff_r: i64,
    pub zadoff_q: i64,
    pub costas_sequence: Vec<usize>,
    /// Sign of the chirp rates k and k1.
    pub chirp_sign: f64,
}

/// Welch-constructed Costas sequence of length 7.
pub const DEFAULT_COSTAS: [usize; 7] = [4, 7, 1, 6, 5, 2, 3];

impl ModulationSpec {
    /// Code parameters used throughout the experiments: Barker-13, 64-element
    /// polyphase codes, Zadoff r = 7, q = 32, Costas M = 7.
    pub fn standard(kind: ModulationKind) -> Self {
        let mut spec = Self {
            kind,
            code_length: 64,
            square_side: 8,
            zadoff_r: 7,
            zadoff_q: 32,
            costas_sequence: Vec::new(),
            chirp_sign: 1.0,
        };
        match kind {
            ModulationKind::Barker => spec.code_length = 13,
            ModulationKind::Costas => {
                spec.code_length = DEFAULT_COSTAS.len();
                spec.costas_sequence = DEFAULT_COSTAS.to_vec();
            }
            _ => {}
        }
        spec
    }

    pub fn validate(&self) -> Result<()> {
        if self.chirp_sign != 1.0 && self.chirp_sign != -1.0 {
            return Err(Error::Validation(format!("chirp sign must be ±1, got {}", self.chirp_sign)));
        }
        let m = self.code_length;
        match self.kind {
            ModulationKind::Lfm | ModulationKind::Qfm => Ok(()),
            ModulationKind::Costas => {
                if self.costas_sequence.len() != m {
                    return Err(Error::Validation(format!(
                        "Costas sequence has {} entries for M = {m}",
                        self.costas_sequence.len()
                    )));
                }
                validate_costas(&self.costas_sequence)
            }
            ModulationKind::Barker => {
                if barker_bits(m).is_none() {
                    return Err(Error::Validation(format!("no Barker code of length {m}")));
                }
                Ok(())
            }
            ModulationKind::Frank | ModulationKind::P1 | ModulationKind::P2 => {
                if self.square_side == 0 || self.square_side * self.square_side != m {
                    return Err(Error::Validation(format!(
                        "{} needs M = L², got M = {m}, L = {}",
                        self.kind, self.square_side
                    )));
                }
                Ok(())
            }
            ModulationKind::Zadoff => {
                if m == 0 {
                    return Err(Error::Validation("Zadoff code length must be positive".into()));
                }
                if gcd(self.zadoff_r.unsigned_abs(), m as u64) != 1 {
                    return Err(Error::Validation(format!(
                        "Zadoff r = {} is not coprime with M = {m}",
                        self.zadoff_r
                    )));
                }
                if self.zadoff_q < 0 || self.zadoff_q > m as i64 {
                    return Err(Error::Validation(format!("Zadoff q = {} outside [0, {m}]", self.zadoff_q)));
                }
                Ok(())
            }
            ModulationKind::P3 | ModulationKind::P4 => {
                if m == 0 {
                    return Err(Error::Validation("code length must be positive".into()));
                }
                Ok(())
            }
        }
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Binary Barker sequences; where two exist the first listed is used.
fn barker_bits(m: usize) -> Option<&'static str> {
    Some(match m {
        2 => "11",
        3 => "110",
        4 => "1110",
        5 => "11101",
        7 => "1110010",
        11 => "11100010010",
        13 => "1111100110101",
        _ => return None,
    })
}

/// Checks that `seq` is a permutation of 1..=M whose difference vectors
/// (j − i, f_j − f_i), i < j, are pairwise distinct.
pub fn validate_costas(seq: &[usize]) -> Result<()> {
    let m = seq.len();
    if m == 0 {
        return Err(Error::Validation("empty Costas sequence".into()));
    }
    let mut seen = vec![false; m + 1];
    for &f in seq {
        if f == 0 || f > m || seen[f] {
            return Err(Error::Validation(format!("{seq:?} is not a permutation of 1..={m}")));
        }
        seen[f] = true;
    }
    // Distinct vectors per row of the difference triangle.
    for lag in 1..m {
        let mut diffs: Vec<i64> = (0..m - lag).map(|i| seq[i + lag] as i64 - seq[i] as i64).collect();
        diffs.sort_unstable();
        if diffs.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Validation(format!("{seq:?} violates the Costas property at lag {lag}")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseCode {
    pub phases: Vec<f64>,
}

/// Phase sequence of a phase-coded modulation.
pub fn phase_code(spec: &ModulationSpec) -> Result<PhaseCode> {
    spec.validate()?;
    let m = spec.code_length;
    let phases: Vec<f64> = match spec.kind {
        ModulationKind::Barker => barker_bits(m)
            .expect("validated length")
            .bytes()
            .map(|b| if b == b'1' { 0.0 } else { PI })
            .collect(),
        ModulationKind::Frank | ModulationKind::P1 | ModulationKind::P2 => {
            let l = spec.square_side;
            let lf = l as f64;
            let mut out = Vec::with_capacity(m);
            // rows i, columns j, both 1-based; rows are concatenated
            for i in 1..=l {
                for j in 1..=l {
                    let (fi, fj) = (i as f64, j as f64);
                    out.push(match spec.kind {
                        ModulationKind::Frank => 2.0 * PI / lf * (fi - 1.0) * (fj - 1.0),
                        ModulationKind::P1 => -PI / lf * (lf - 2.0 * fj - 1.0) * ((fj - 1.0) * lf + (fi - 1.0)),
                        _ => (0.5 * PI * (lf - 1.0) / lf - PI / lf * (fi - 1.0)) * (lf + 1.0 - 2.0 * fj),
                    });
                }
            }
            out
        }
        ModulationKind::Zadoff => {
            let mf = m as f64;
            let (r, q) = (spec.zadoff_r as f64, spec.zadoff_q as f64);
            (1..=m)
                .map(|k| {
                    let kf = k as f64;
                    2.0 * PI / mf * (kf - 1.0) * (r * (mf - 1.0 - kf) / 2.0 - q)
                })
                .collect()
        }
        ModulationKind::P3 => (1..=m).map(|k| 0.5 * PI * ((k - 1) as f64).powi(2)).collect(),
        ModulationKind::P4 => (1..=m)
            .map(|k| {
                let k1 = (k - 1) as f64;
                0.5 * PI * k1 * k1 - PI * k1
            })
            .collect(),
        other => {
            return Err(Error::Validation(format!("{other} is not a phase code")));
        }
    };
    Ok(PhaseCode { phases })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexEnvelope {
    pub samples: Vec<Complex64>,
    pub config: PulseConfig,
    pub label: ModulationKind,
    /// SNR of the injected noise, if any.
    pub snr_db: Option<f64>,
}

impl ComplexEnvelope {
    /// Σ|u|² Δt.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.config.sample_rate
    }

    /// Sample variance (1/N) Σ |u − ū|².
    pub fn variance(&self) -> f64 {
        variance(&self.samples)
    }
}

fn variance(samples: &[Complex64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<Complex64>() / n;
    samples.iter().map(|s| (s - mean).norm_sqr()).sum::<f64>() / n
}

/// Linear or quadratic FM chirp: phase π k t² (+ π k1 t³), k = ±B/T, k1 = ±2B/(3T²).
pub fn fm_envelope(kind: ModulationKind, config: &PulseConfig, chirp_sign: f64) -> Result<ComplexEnvelope> {
    config.validate()?;
    let bandwidth = config
        .bandwidth
        .ok_or_else(|| Error::Config(format!("{kind} requires a bandwidth")))?;
    if chirp_sign != 1.0 && chirp_sign != -1.0 {
        return Err(Error::Validation(format!("chirp sign must be ±1, got {chirp_sign}")));
    }
    let t_len = config.duration;
    let k = chirp_sign * bandwidth / t_len;
    let k1 = match kind {
        ModulationKind::Lfm => 0.0,
        ModulationKind::Qfm => chirp_sign * 2.0 * bandwidth / (3.0 * t_len * t_len),
        other => return Err(Error::Validation(format!("{other} is not an FM chirp"))),
    };
    let amp = 1.0 / t_len.sqrt();
    let samples = (0..config.n_samples())
        .map(|i| {
            let t = config.time(i);
            Complex64::from_polar(amp, PI * (k * t * t + k1 * t * t * t))
        })
        .collect();
    Ok(ComplexEnvelope { samples, config: *config, label: kind, snr_db: None })
}

/// Costas frequency-hop envelope: slice m of width t_b = T/M carries frequency f_m / t_b.
pub fn costas_envelope(config: &PulseConfig, sequence: &[usize]) -> Result<ComplexEnvelope> {
    config.validate()?;
    validate_costas(sequence)?;
    let n = config.n_samples();
    let m = sequence.len();
    if n < m {
        return Err(Error::Resolution(format!("{n} samples cannot hold {m} Costas slices")));
    }
    let t_b = config.duration / m as f64;
    let amp = 1.0 / config.duration.sqrt();
    let samples = (0..n)
        .map(|i| {
            let slot = (i * m / n).min(m - 1);
            let local = config.time(i) - slot as f64 * t_b;
            Complex64::from_polar(amp, 2.0 * PI * sequence[slot] as f64 / t_b * local)
        })
        .collect();
    Ok(ComplexEnvelope { samples, config: *config, label: ModulationKind::Costas, snr_db: None })
}

/// Piecewise-constant envelope with bit m carrying phase ψ_m.
pub fn phase_envelope(code: &PhaseCode, config: &PulseConfig, label: ModulationKind) -> Result<ComplexEnvelope> {
    config.validate()?;
    let m = code.phases.len();
    if m == 0 || code.phases.iter().any(|p| !p.is_finite()) {
        return Err(Error::Validation("phase code must be non-empty and finite".into()));
    }
    let n = config.n_samples();
    if n < m {
        return Err(Error::Resolution(format!("{n} samples cannot hold {m} code bits")));
    }
    let amp = 1.0 / config.duration.sqrt();
    let samples = (0..n)
        .map(|i| Complex64::from_polar(amp, code.phases[(i * m / n).min(m - 1)]))
        .collect();
    Ok(ComplexEnvelope { samples, config: *config, label, snr_db: None })
}

/// Noiseless envelope for any modulation.
pub fn envelope(spec: &ModulationSpec, config: &PulseConfig) -> Result<ComplexEnvelope> {
    spec.validate()?;
    match spec.kind {
        ModulationKind::Lfm | ModulationKind::Qfm => fm_envelope(spec.kind, config, spec.chirp_sign),
        ModulationKind::Costas => costas_envelope(config, &spec.costas_sequence),
        kind => phase_envelope(&phase_code(spec)?, config, kind),
    }
}

/// Adds circular complex Gaussian noise with variance σs² · 10^(−snr/10).
pub fn add_awgn(envelope: &ComplexEnvelope, snr_db: f64, seed: u64) -> Result<ComplexEnvelope> {
    if !snr_db.is_finite() {
        return Err(Error::Config(format!("SNR must be finite, got {snr_db}")));
    }
    let signal_var = envelope.variance();
    let power = envelope.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / envelope.samples.len() as f64;
    // round-off leaves a constant envelope with a variance near 1e-16 of its power
    if !(signal_var > 1e-12 * power) {
        return Err(Error::DegenerateSignal("signal variance is zero".into()));
    }
    let noise_var = signal_var * 10f64.powf(-snr_db / 10.0);
    let sd = (0.5 * noise_var).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = envelope
        .samples
        .iter()
        .map(|s| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            s + Complex64::new(sd * re, sd * im)
        })
        .collect();
    Ok(ComplexEnvelope { samples, snr_db: Some(snr_db), ..envelope.clone() })
}
