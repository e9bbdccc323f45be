//! Control-sequence descriptions and their time-domain sensitivity traces.
//!
//! Four families are supported:
//!
//! - **CPMG-N**: `N` equally spaced π pulses. The sensitivity is `+1` up to
//!   the first pulse at `tau_free`, then flips sign every `2·tau_free`, and the
//!   last segment is again `tau_free` long, so `duration = 2·N·tau_free`.
//! - **Hahn echo**: CPMG with a single pulse.
//! - **DYSCO**: continuous sinusoidal sensitivity `a·sin(2π·f₀·t)`, optionally
//!   quantized to a staircase with `quant_steps` levels per period.
//! - **gDYSCO**: DYSCO multiplied by a Gaussian envelope centred on the
//!   middle of the sequence, `exp(−(t − T/2)² / 2σ²)`, with `σ = T/6` unless
//!   set explicitly.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Safety factor used to turn "f_max ≪ f_Rabi" style bounds into numbers.
pub const DEFAULT_BANDWIDTH_MARGIN: f64 = 10.0;

/// Minimum number of samples per fastest sequence feature.
pub const MIN_SAMPLES_PER_FEATURE: f64 = 20.0;

const REL_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Cpmg,
    Hahn,
    Dysco,
    Gdysco,
}

impl Family {
    pub fn is_pulsed(self) -> bool {
        matches!(self, Family::Cpmg | Family::Hahn)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Family::Cpmg => "cpmg",
            Family::Hahn => "hahn",
            Family::Dysco => "dysco",
            Family::Gdysco => "gdysco",
        };
        f.write_str(s)
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cpmg" => Ok(Family::Cpmg),
            "hahn" | "echo" => Ok(Family::Hahn),
            "dysco" => Ok(Family::Dysco),
            "gdysco" => Ok(Family::Gdysco),
            other => Err(Error::input(format!("unknown sequence family `{other}`"))),
        }
    }
}

fn unit_amplitude() -> f64 {
    1.0
}

/// Declarative description of a control sequence.
///
/// Times are in seconds, `mod_frequency` in Hz. Fields that do not apply to
/// a family are ignored (and default to zero when deserialized).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSpec {
    pub family: Family,
    #[serde(default)]
    pub n_pulses: u32,
    #[serde(default)]
    pub tau_free: f64,
    pub duration: f64,
    #[serde(default)]
    pub mod_frequency: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope_sigma: Option<f64>,
    #[serde(default)]
    pub quant_steps: u32,
    /// Modulation amplitude. The gain values quoted for DYSCO and gDYSCO
    /// correspond to `1.0`; multiply by [`CONTINUOUS_DRIVE_CONTRAST`] to model
    /// the reduced contrast of continuous driving.
    #[serde(default = "unit_amplitude")]
    pub amplitude: f64,
}

/// Reduction of the maximal sensitivity under continuous driving.
pub const CONTINUOUS_DRIVE_CONTRAST: f64 = 2.0 / std::f64::consts::PI;

impl SequenceSpec {
    pub fn cpmg(n_pulses: u32, tau_free: f64) -> Self {
        SequenceSpec {
            family: Family::Cpmg,
            n_pulses,
            tau_free,
            duration: 2.0 * n_pulses as f64 * tau_free,
            mod_frequency: 0.0,
            envelope_sigma: None,
            quant_steps: 0,
            amplitude: 1.0,
        }
    }

    pub fn cpmg_with_duration(n_pulses: u32, duration: f64) -> Self {
        let tau_free = if n_pulses > 0 { duration / (2.0 * n_pulses as f64) } else { 0.0 };
        SequenceSpec { tau_free, duration, ..SequenceSpec::cpmg(n_pulses, 0.0) }
    }

    pub fn hahn(tau_free: f64) -> Self {
        SequenceSpec { family: Family::Hahn, ..SequenceSpec::cpmg(1, tau_free) }
    }

    pub fn dysco(mod_frequency: f64, duration: f64) -> Self {
        SequenceSpec {
            family: Family::Dysco,
            n_pulses: 0,
            tau_free: 0.0,
            duration,
            mod_frequency,
            envelope_sigma: None,
            quant_steps: 0,
            amplitude: 1.0,
        }
    }

    pub fn gdysco(mod_frequency: f64, duration: f64) -> Self {
        SequenceSpec { family: Family::Gdysco, ..SequenceSpec::dysco(mod_frequency, duration) }
    }

    pub fn with_quant_steps(mut self, steps: u32) -> Self {
        self.quant_steps = steps;
        self
    }

    pub fn with_amplitude(mut self, amplitude: f64) -> Self {
        self.amplitude = amplitude;
        self
    }

    pub fn with_envelope_sigma(mut self, sigma: f64) -> Self {
        self.envelope_sigma = Some(sigma);
        self
    }

    pub fn with_mod_frequency(mut self, f0: f64) -> Self {
        self.mod_frequency = f0;
        self
    }

    /// Same sequence with a new total duration. For pulsed families the pulse
    /// count is kept and `tau_free` rescaled.
    pub fn with_duration(mut self, duration: f64) -> Self {
        self.duration = duration;
        if self.family.is_pulsed() {
            let n = self.pulses().max(1) as f64;
            self.tau_free = duration / (2.0 * n);
        }
        self
    }

    /// Number of π pulses (one for Hahn echo, zero for continuous families).
    pub fn pulses(&self) -> u32 {
        match self.family {
            Family::Hahn => 1,
            Family::Cpmg => self.n_pulses,
            _ => 0,
        }
    }

    /// Envelope width of gDYSCO, defaulting to `duration / 6`.
    pub fn sigma(&self) -> f64 {
        self.envelope_sigma.unwrap_or(self.duration / 6.0)
    }

    /// Highest frequency that the trace has to resolve, Hz.
    pub fn feature_frequency(&self) -> f64 {
        match self.family {
            Family::Cpmg | Family::Hahn => 1.0 / (2.0 * self.tau_free),
            Family::Dysco | Family::Gdysco => {
                if self.quant_steps > 0 {
                    // at least a few samples per quantization step
                    self.mod_frequency.max(self.mod_frequency * self.quant_steps as f64 / 5.0)
                } else {
                    self.mod_frequency
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::spec(format!("duration must be positive, got {}", self.duration)));
        }
        if !(self.amplitude > 0.0 && self.amplitude <= 1.0) {
            return Err(Error::spec(format!("amplitude must lie in (0, 1], got {}", self.amplitude)));
        }
        match self.family {
            Family::Cpmg | Family::Hahn => {
                if self.family == Family::Hahn && self.n_pulses > 1 {
                    return Err(Error::spec("hahn echo has exactly one pulse"));
                }
                let n = self.pulses();
                if n == 0 {
                    return Err(Error::spec("n_pulses must be positive"));
                }
                if !(self.tau_free.is_finite() && self.tau_free > 0.0) {
                    return Err(Error::spec(format!("tau_free must be positive, got {}", self.tau_free)));
                }
                let expected = 2.0 * n as f64 * self.tau_free;
                if (self.duration - expected).abs() > REL_EPS * expected {
                    return Err(Error::spec(format!(
                        "duration = 2·n_pulses·tau_free violated: {} != {}",
                        self.duration, expected
                    )));
                }
            }
            Family::Dysco | Family::Gdysco => {
                if !(self.mod_frequency.is_finite() && self.mod_frequency > 0.0) {
                    return Err(Error::spec(format!(
                        "mod_frequency must be positive, got {}",
                        self.mod_frequency
                    )));
                }
                if self.mod_frequency * self.duration < 1.0 - REL_EPS {
                    return Err(Error::spec(format!(
                        "mod_frequency·duration ≥ 1 violated: {} Hz × {} s",
                        self.mod_frequency, self.duration
                    )));
                }
                if self.family == Family::Gdysco {
                    let sigma = self.sigma();
                    if !(sigma.is_finite() && sigma > 0.0) {
                        return Err(Error::spec(format!("envelope_sigma must be positive, got {sigma}")));
                    }
                    if self.duration < 6.0 * sigma * (1.0 - REL_EPS) {
                        return Err(Error::spec(format!(
                            "duration ≥ 6·envelope_sigma violated: {} < 6 × {}",
                            self.duration, sigma
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Exact sensitivity at time `t` (zero outside `[0, duration]`).
    ///
    /// Pulsed traces are right-continuous: the value at a pulse instant is the
    /// value after the flip.
    pub fn sensitivity(&self, t: f64) -> f64 {
        if t < 0.0 || t > self.duration {
            return 0.0;
        }
        match self.family {
            Family::Cpmg | Family::Hahn => {
                let n = self.pulses() as f64;
                let flips = if t < self.tau_free {
                    0.0
                } else {
                    (((t / self.tau_free - 1.0) / 2.0).floor() + 1.0).min(n)
                };
                if flips as u64 % 2 == 0 {
                    1.0
                } else {
                    -1.0
                }
            }
            Family::Dysco | Family::Gdysco => {
                let at = if self.quant_steps > 0 {
                    let step = 1.0 / (self.quant_steps as f64 * self.mod_frequency);
                    ((t / step).floor() + 0.5) * step
                } else {
                    t
                };
                self.continuous_value(at)
            }
        }
    }

    fn continuous_value(&self, t: f64) -> f64 {
        let carrier = self.amplitude * (2.0 * std::f64::consts::PI * self.mod_frequency * t).sin();
        if self.family == Family::Gdysco {
            let sigma = self.sigma();
            let x = t - 0.5 * self.duration;
            carrier * (-x * x / (2.0 * sigma * sigma)).exp()
        } else {
            carrier
        }
    }

    /// Breakpoints and levels of a piecewise-constant sensitivity, when the
    /// sequence is one (pulsed, or quantized DYSCO).
    pub fn steps(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        match self.family {
            Family::Cpmg | Family::Hahn => {
                let n = self.pulses() as usize;
                let mut edges = Vec::with_capacity(n + 2);
                edges.push(0.0);
                for j in 0..n {
                    edges.push(self.tau_free * (2 * j + 1) as f64);
                }
                edges.push(self.duration);
                let levels = (0..=n).map(|j| if j % 2 == 0 { 1.0 } else { -1.0 }).collect();
                Some((edges, levels))
            }
            Family::Dysco | Family::Gdysco if self.quant_steps > 0 => {
                let step = 1.0 / (self.quant_steps as f64 * self.mod_frequency);
                let count = (self.duration / step - REL_EPS).ceil().max(1.0) as usize;
                let mut edges: Vec<f64> = (0..count).map(|k| k as f64 * step).collect();
                edges.push(self.duration);
                let levels = (0..count).map(|k| self.continuous_value((k as f64 + 0.5) * step)).collect();
                Some((edges, levels))
            }
            _ => None,
        }
    }
}

/// How samples of a trace are joined between sample instants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// Sample `i` holds on `[t_i, t_{i+1})`.
    Hold,
    /// Local cubic interpolation through neighbouring samples.
    Smooth,
}

/// Uniformly sampled sensitivity function `s(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityTrace {
    times: Vec<f64>,
    values: Vec<f64>,
    duration: f64,
    interpolation: Interpolation,
}

impl SensitivityTrace {
    /// Builds a trace from raw samples, rejecting non-uniform spacing and
    /// values outside `[−1, 1]`.
    pub fn from_samples(times: Vec<f64>, values: Vec<f64>, interpolation: Interpolation) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::input("times and values differ in length"));
        }
        if times.len() < 4 {
            return Err(Error::input("a trace needs at least four samples"));
        }
        if times[0] != 0.0 {
            return Err(Error::input("trace must start at t = 0"));
        }
        let m = times.len() - 1;
        let duration = times[m];
        let dt = duration / m as f64;
        if !(dt > 0.0) {
            return Err(Error::input("trace duration must be positive"));
        }
        for (i, &t) in times.iter().enumerate() {
            if (t - i as f64 * dt).abs() > 1e-6 * dt {
                return Err(Error::input(format!("non-uniform sampling at index {i}")));
            }
        }
        if let Some(v) = values.iter().find(|v| !(v.abs() <= 1.0)) {
            return Err(Error::input(format!("sensitivity {v} outside [-1, 1]")));
        }
        Ok(SensitivityTrace { times, values, duration, interpolation })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    pub fn dt(&self) -> f64 {
        self.duration / (self.times.len() - 1) as f64
    }

    pub fn sample_rate(&self) -> f64 {
        1.0 / self.dt()
    }

    /// Time average of `s(t)²` over the trace.
    pub fn mean_square(&self) -> f64 {
        let m = self.values.len() - 1;
        let sum: f64 = match self.interpolation {
            Interpolation::Hold => self.values[..m].iter().map(|v| v * v).sum(),
            Interpolation::Smooth => {
                let inner: f64 = self.values[1..m].iter().map(|v| v * v).sum();
                inner + 0.5 * (self.values[0].powi(2) + self.values[m].powi(2))
            }
        };
        sum / m as f64
    }

    /// Number of sign changes between consecutive non-zero samples.
    pub fn sign_flips(&self) -> usize {
        let mut flips = 0;
        let mut last = 0.0f64;
        for &v in &self.values {
            if v != 0.0 {
                if last != 0.0 && v.signum() != last.signum() {
                    flips += 1;
                }
                last = v;
            }
        }
        flips
    }

    /// Length of the shortest run of identical consecutive samples, seconds.
    pub fn shortest_run(&self) -> f64 {
        let m = self.values.len() - 1;
        let mut shortest = usize::MAX;
        let mut run = 1;
        for i in 1..m {
            if self.values[i] == self.values[i - 1] {
                run += 1;
            } else {
                shortest = shortest.min(run);
                run = 1;
            }
        }
        shortest = shortest.min(run);
        shortest as f64 * self.dt()
    }

    /// Two-column CSV with a `time_s,sensitivity` header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_s,sensitivity\n");
        for (t, v) in self.times.iter().zip(&self.values) {
            out.push_str(&format!("{t},{v}\n"));
        }
        out
    }
}

/// Renders a sequence into a uniformly sampled trace.
///
/// `sample_rate` is a lower bound: for pulsed sequences the number of samples
/// is rounded up so every π pulse falls exactly on a sample instant.
pub fn build_trace(spec: &SequenceSpec, sample_rate: f64) -> Result<SensitivityTrace> {
    spec.validate()?;
    let required = MIN_SAMPLES_PER_FEATURE * spec.feature_frequency();
    if !(sample_rate >= required * (1.0 - REL_EPS)) {
        return Err(Error::Sampling { rate: sample_rate, required });
    }
    let mut m = ((spec.duration * sample_rate) * (1.0 - REL_EPS)).ceil().max(4.0) as usize;
    let n = spec.pulses() as usize;
    if spec.family.is_pulsed() {
        m = m.div_ceil(2 * n) * 2 * n;
    }
    let times: Vec<f64> = (0..=m).map(|i| spec.duration * i as f64 / m as f64).collect();
    let (values, interpolation) = if spec.family.is_pulsed() {
        let per_tau = m / (2 * n);
        let values = (0..=m)
            .map(|i| {
                let flips = if i < per_tau { 0 } else { ((i - per_tau) / (2 * per_tau) + 1).min(n) };
                if flips % 2 == 0 {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect();
        (values, Interpolation::Hold)
    } else {
        let values = times.iter().map(|&t| spec.sensitivity(t)).collect();
        let interp = if spec.quant_steps > 0 { Interpolation::Hold } else { Interpolation::Smooth };
        (values, interp)
    };
    Ok(SensitivityTrace { times, values, duration: spec.duration, interpolation })
}

/// Accessible band and resolution of a sequence, all in Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthReport {
    pub f_min: f64,
    /// `None` when no finite bound applies (ideal continuous modulation).
    pub f_max: Option<f64>,
    pub fwhm: f64,
    pub note: String,
}

pub fn bandwidth_report(spec: &SequenceSpec, f_rabi: f64, t2_echo: Option<f64>) -> Result<BandwidthReport> {
    bandwidth_report_with_margin(spec, f_rabi, t2_echo, DEFAULT_BANDWIDTH_MARGIN)
}

/// Bandwidth bounds with an explicit safety factor for the `≪` conditions.
pub fn bandwidth_report_with_margin(
    spec: &SequenceSpec,
    f_rabi: f64,
    t2_echo: Option<f64>,
    margin: f64,
) -> Result<BandwidthReport> {
    spec.validate()?;
    if !(f_rabi > 0.0 && f_rabi.is_finite()) {
        return Err(Error::input("rabi frequency must be positive"));
    }
    if !(margin >= 1.0) {
        return Err(Error::input("bandwidth margin must be at least 1"));
    }
    let t = spec.duration;
    match spec.family {
        Family::Cpmg | Family::Hahn => {
            let t2 = t2_echo
                .filter(|v| *v > 0.0 && v.is_finite())
                .ok_or_else(|| Error::input("pulsed sequences need a positive Hahn-echo T2"))?;
            Ok(BandwidthReport {
                f_min: 1.0 / (2.0 * t2),
                f_max: Some(f_rabi / margin),
                fwhm: 0.89 / t,
                note: format!(
                    "f_min = 1/(2·T2echo); f_max = f_rabi/{margin} from 2·tau_free ≫ tau_pi"
                ),
            })
        }
        Family::Dysco | Family::Gdysco => {
            let fwhm = if spec.family == Family::Gdysco {
                std::f64::consts::LN_2.sqrt() / (std::f64::consts::PI * spec.sigma())
            } else {
                0.884 / t
            };
            let (f_max, note) = if spec.quant_steps == 0 {
                (None, "f_min = 1/duration; f_max unbounded by quantization (ideal continuous sine)".to_string())
            } else {
                (
                    Some(f_rabi / (2.0 * spec.quant_steps as f64 * margin)),
                    format!("f_min = 1/duration; f_max = f_rabi/(2·n·{margin}) from sine quantization"),
                )
            };
            Ok(BandwidthReport { f_min: 1.0 / t, f_max, fwhm, note })
        }
    }
}
