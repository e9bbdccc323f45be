//! Synthesize, reconstruct and compare: the simulation study that checks
//! how well each method recovers a known spectrum.

use std::f64::consts::PI;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::filters::{linspace, logspace};
use crate::fitting::{fit_gaussian_peak, FitResult};
use crate::forward::{add_measurement_noise, synth_cpmg_family, synth_dysco_sweep, Sampling};
use crate::noise::{Component, NoiseSpectrum};
use crate::optim::NmConfig;
use crate::reconstruct::{cpmg_sd, direct_extract, AnalyticFf, Method, ReconstructedSpectrum, SdConfig};
use crate::sequences::SequenceSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoundtripConfig {
    /// Standard deviation of the additive coherence noise.
    pub epsilon: f64,
    pub seed: u64,
    pub n_list: Vec<u32>,
    pub times_per_n: usize,
    /// Shortest total time per pulse, seconds.
    pub t_min_per_pulse: f64,
    pub t_max: f64,
    pub dysco_duration: f64,
    /// Modulation-frequency sweep, Hz: `(low, high, points)`.
    pub sweep: (f64, f64, usize),
    /// Gaussian fit window for the SD spectrum, Hz.
    pub sd_window: (f64, f64),
    /// Gaussian fit window for the direct spectra, Hz.
    pub direct_window: (f64, f64),
    pub sd: SdConfig,
}

impl Default for RoundtripConfig {
    fn default() -> Self {
        RoundtripConfig {
            epsilon: 0.0,
            seed: 0,
            n_list: vec![1, 2, 4, 8, 16, 32, 64],
            times_per_n: 80,
            t_min_per_pulse: 0.3e-6,
            t_max: 3e-3,
            dysco_duration: 200e-6,
            sweep: (30e3, 100e3, 141),
            sd_window: (20e3, 200e3),
            direct_window: (35e3, 95e3),
            sd: SdConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: Method,
    pub spectrum: ReconstructedSpectrum,
    /// Gaussian peak fit; `None` with a reason in `fit_error` when it failed.
    pub fit: Option<FitResult>,
    pub fit_error: Option<String>,
}

impl MethodOutcome {
    pub fn center(&self) -> Option<f64> {
        self.fit.as_ref().and_then(|f| f.get("center"))
    }

    pub fn width(&self) -> Option<f64> {
        self.fit.as_ref().and_then(|f| f.get("width"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundtripReport {
    /// Hz, from the spectrum's Gaussian component when it has one.
    pub truth_center: Option<f64>,
    pub truth_width: Option<f64>,
    pub outcomes: Vec<MethodOutcome>,
    /// Median `|Ŝ/S − 1|` over the SD bins where `S` is at least 1% of
    /// its maximum.
    pub sd_median_rel_error: f64,
}

impl RoundtripReport {
    pub fn outcome(&self, method: Method) -> Option<&MethodOutcome> {
        self.outcomes.iter().find(|o| o.method == method)
    }

    /// Compact error metrics, without the spectra.
    pub fn metrics(&self) -> serde_json::Value {
        let methods: Vec<_> = self
            .outcomes
            .iter()
            .map(|o| {
                serde_json::json!({
                    "method": o.method,
                    "center_hz": o.center(),
                    "width_hz": o.width(),
                    "center_bias_hz": o.center().zip(self.truth_center).map(|(c, t)| c - t),
                    "fit_error": o.fit_error,
                    "warnings": o.spectrum.warnings,
                })
            })
            .collect();
        serde_json::json!({
            "truth_center_hz": self.truth_center,
            "truth_width_hz": self.truth_width,
            "sd_median_rel_error": self.sd_median_rel_error,
            "methods": methods,
        })
    }
}

fn fit_outcome(method: Method, spectrum: ReconstructedSpectrum, window: (f64, f64)) -> MethodOutcome {
    match fit_gaussian_peak(&spectrum, window, NmConfig::default()) {
        Ok(fit) => MethodOutcome { method, spectrum, fit: Some(fit), fit_error: None },
        Err(e) => MethodOutcome { method, spectrum, fit: None, fit_error: Some(e.to_string()) },
    }
}

/// Runs CPMG spectral decomposition, DYSCO and gDYSCO direct extraction on
/// curves synthesized from `spectrum`, then fits the Larmor peak in each.
///
/// Noise streams for the individual curves are drawn from one generator
/// seeded with `cfg.seed`, so a run is reproducible bit for bit.
pub fn run_roundtrip(spectrum: &NoiseSpectrum, cfg: &RoundtripConfig) -> Result<RoundtripReport> {
    let grids: Vec<Vec<f64>> =
        cfg.n_list.iter().map(|&n| logspace(cfg.t_min_per_pulse * n as f64, cfg.t_max, cfg.times_per_n)).collect();
    let clean = synth_cpmg_family(spectrum, &cfg.n_list, &grids, Sampling::Dense)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let curves = clean.iter().map(|c| add_measurement_noise(c, cfg.epsilon, rng.next_u64())).collect::<Result<Vec<_>>>()?;
    let sd = cpmg_sd(&curves, &AnalyticFf, cfg.sd)?;

    let f = linspace(cfg.sweep.0, cfg.sweep.1, cfg.sweep.2);
    let dysco = SequenceSpec::dysco(f[f.len() / 2], cfg.dysco_duration);
    let gdysco = SequenceSpec::gdysco(f[f.len() / 2], cfg.dysco_duration);
    let d_curve = add_measurement_noise(&synth_dysco_sweep(spectrum, &dysco, &f)?, cfg.epsilon, rng.next_u64())?;
    let g_curve = add_measurement_noise(&synth_dysco_sweep(spectrum, &gdysco, &f)?, cfg.epsilon, rng.next_u64())?;
    let d_spec = direct_extract(&d_curve, &dysco)?;
    let g_spec = direct_extract(&g_curve, &gdysco)?;

    // relative error where the true density is at least 1% of its maximum
    // over the probed band; elsewhere any noise dominates the ratio
    let truth: Vec<(f64, f64)> = sd.valid_points().map(|p| (p.s, spectrum.density(p.omega))).collect();
    let floor = 0.01 * truth.iter().map(|t| t.1).fold(0.0, f64::max);
    let mut errs: Vec<f64> =
        truth.iter().filter(|t| t.1 > 0.0 && t.1 >= floor).map(|&(s, t)| (s / t - 1.0).abs()).collect();
    errs.sort_by(f64::total_cmp);
    let sd_median_rel_error = if errs.is_empty() { f64::NAN } else { errs[errs.len() / 2] };

    let peak = spectrum.components().iter().find_map(|c| match *c {
        Component::GaussianPeak { sigma, omega_center, .. } => Some((omega_center / (2.0 * PI), sigma / (2.0 * PI))),
        _ => None,
    });
    Ok(RoundtripReport {
        truth_center: peak.map(|p| p.0),
        truth_width: peak.map(|p| p.1),
        outcomes: vec![
            fit_outcome(Method::CpmgSd, sd, cfg.sd_window),
            fit_outcome(Method::DyscoDirect, d_spec, cfg.direct_window),
            fit_outcome(Method::GdyscoDirect, g_spec, cfg.direct_window),
        ],
        sd_median_rel_error,
    })
}
