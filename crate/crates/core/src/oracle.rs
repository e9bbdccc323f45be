//! Monte Carlo dephasing oracle.
//!
//! Stationary Gaussian frequency noise is synthesized as a sum of cosine
//! modes, `β(t) = Σ_k A_k cos(ω_k t + θ_k)` with `A_k = √(2·S(ω_k)·Δω/π)` on
//! a uniform grid `ω_k = (k + ½)·Δω` and uniform random phases. Each
//! realization accumulates `φ = ∫ β(t)·s(t) dt` with the trapezoidal rule on
//! the trace grid. This shares nothing with the filter-function code path,
//! which makes it a useful check on the `χ` normalization.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::NoiseSpectrum;
use crate::sequences::{Interpolation, SensitivityTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub n_realizations: usize,
    pub seed: u64,
    /// Required time resolution, seconds; the trace spacing must not exceed it.
    pub dt: f64,
    /// Number of cosine modes.
    pub spectral_components: usize,
    /// Highest synthesized frequency, rad/s; defaults to `2π/(10·dt)`.
    #[serde(default)]
    pub omega_max: Option<f64>,
    /// Cap on `n_realizations × trace samples`.
    #[serde(default = "default_work")]
    pub max_work: f64,
}

fn default_work() -> f64 {
    1e10
}

impl McConfig {
    pub fn new(n_realizations: usize, seed: u64, dt: f64, spectral_components: usize) -> Self {
        McConfig { n_realizations, seed, dt, spectral_components, omega_max: None, max_work: default_work() }
    }

    /// Settings matched to a trace: the trace spacing as `dt`, the highest
    /// resolvable frequency as `ω_max`, and enough modes that the spacing
    /// `Δω` is below both `π/(4t)` and a quarter of the narrowest spectral
    /// feature.
    pub fn for_trace(spectrum: &NoiseSpectrum, trace: &SensitivityTrace, n_realizations: usize, seed: u64) -> Self {
        let dt = trace.dt();
        let omega_max = 2.0 * PI / (10.0 * dt);
        let mut dw = PI / (4.0 * trace.duration());
        let f = spectrum.features();
        for w in f.windows(2) {
            if w[1] > w[0] && w[0] < omega_max {
                dw = dw.min(0.5 * (w[1] - w[0]));
            }
        }
        let k = ((omega_max / dw).ceil() as usize).clamp(256, 200_000);
        McConfig { omega_max: Some(omega_max), ..McConfig::new(n_realizations, seed, dt, k) }
    }

    pub fn omega_max(&self) -> f64 {
        self.omega_max.unwrap_or(2.0 * PI / (10.0 * self.dt))
    }

    fn validate(&self, trace: &SensitivityTrace) -> Result<()> {
        if self.n_realizations < 100 {
            return Err(Error::input("n_realizations must be at least 100"));
        }
        if self.spectral_components == 0 {
            return Err(Error::input("spectral_components must be positive"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::input("dt must be positive"));
        }
        if trace.dt() > self.dt * (1.0 + 1e-9) {
            return Err(Error::input(format!("trace spacing {} exceeds dt {}", trace.dt(), self.dt)));
        }
        if trace.interpolation() == Interpolation::Hold && trace.shortest_run() < 10.0 * self.dt * (1.0 - 1e-9) {
            return Err(Error::input(format!(
                "dt {} does not resolve the shortest sequence segment {} by 10x",
                self.dt,
                trace.shortest_run()
            )));
        }
        let wmax = self.omega_max();
        if !(wmax > 0.0) || self.dt > 2.0 * PI / (10.0 * wmax) * (1.0 + 1e-9) {
            return Err(Error::input(format!("dt {} does not resolve 2π/omega_max by 10x", self.dt)));
        }
        let requested = self.n_realizations as f64 * trace.values().len() as f64;
        if requested > self.max_work {
            return Err(Error::Budget { requested, cap: self.max_work });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    /// `⟨cos φ⟩`.
    pub coherence: f64,
    pub stderr: f64,
    /// `⟨φ²⟩/2`, the Gaussian estimator of `χ`.
    pub chi_estimate: f64,
    pub chi_stderr: f64,
    /// Ensemble expectation of `φ²/2` for the synthesized modes (no sampling
    /// noise); isolates the mode discretization from the realization count.
    pub chi_modes: f64,
    pub n: usize,
    pub seed: u64,
}

/// Trapezoid projections `∫ s(t)·cos(ωt) dt` and `∫ s(t)·sin(ωt) dt`.
fn project(trace: &SensitivityTrace, omega: f64) -> (f64, f64) {
    let t = trace.times();
    let v = trace.values();
    let dt = trace.dt();
    let m = v.len() - 1;
    let (rc, rs) = ((omega * dt).cos(), (omega * dt).sin());
    let mut c = 1.0;
    let mut s = 0.0;
    let mut p = 0.0;
    let mut q = 0.0;
    let mut prev = (c, s);
    for i in 0..m {
        let next = if (i + 1) % 128 == 0 {
            ((omega * t[i + 1]).cos(), (omega * t[i + 1]).sin())
        } else {
            (c * rc - s * rs, s * rc + c * rs)
        };
        match trace.interpolation() {
            Interpolation::Hold => {
                p += v[i] * 0.5 * (prev.0 + next.0);
                q += v[i] * 0.5 * (prev.1 + next.1);
            }
            Interpolation::Smooth => {
                p += 0.5 * (v[i] * prev.0 + v[i + 1] * next.0);
                q += 0.5 * (v[i] * prev.1 + v[i + 1] * next.1);
            }
        }
        c = next.0;
        s = next.1;
        prev = next;
    }
    (p * dt, q * dt)
}

/// Monte Carlo estimate of the coherence `⟨e^{iφ}⟩`.
pub fn mc_coherence(spectrum: &NoiseSpectrum, trace: &SensitivityTrace, cfg: &McConfig) -> Result<McResult> {
    cfg.validate(trace)?;
    let n = cfg.n_realizations;
    if spectrum.is_zero() {
        return Ok(McResult {
            coherence: 1.0,
            stderr: 0.0,
            chi_estimate: 0.0,
            chi_stderr: 0.0,
            chi_modes: 0.0,
            n,
            seed: cfg.seed,
        });
    }
    let k = cfg.spectral_components;
    let dw = cfg.omega_max() / k as f64;
    // per mode: amplitude-weighted projections
    let modes: Vec<(f64, f64)> = (0..k)
        .into_par_iter()
        .map(|j| {
            let w = (j as f64 + 0.5) * dw;
            let a = (2.0 * spectrum.density(w) * dw / PI).sqrt();
            if a == 0.0 {
                return (0.0, 0.0);
            }
            let (p, q) = project(trace, w);
            (a * p, a * q)
        })
        .collect();
    let chi_modes = 0.25 * modes.iter().map(|(p, q)| p * p + q * q).sum::<f64>();

    let phases: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(r as u64);
            let mut phi = 0.0;
            for &(p, q) in &modes {
                let theta = 2.0 * PI * rng.random::<f64>();
                let (s, c) = theta.sin_cos();
                phi += c * p - s * q;
            }
            phi
        })
        .collect();

    let nf = n as f64;
    let cos_mean = phases.iter().map(|p| p.cos()).sum::<f64>() / nf;
    let cos_var = phases.iter().map(|p| (p.cos() - cos_mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let sq_mean = phases.iter().map(|p| p * p).sum::<f64>() / nf;
    let sq_var = phases.iter().map(|p| (p * p - sq_mean).powi(2)).sum::<f64>() / (nf - 1.0);
    Ok(McResult {
        coherence: cos_mean,
        stderr: (cos_var / nf).sqrt(),
        chi_estimate: 0.5 * sq_mean,
        chi_stderr: 0.5 * (sq_var / nf).sqrt(),
        chi_modes,
        n,
        seed: cfg.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::cpmg_ff;
    use crate::forward::chi;
    use crate::sequences::{build_trace, SequenceSpec};

    fn cpmg_trace(n: u32, tau: f64) -> SensitivityTrace {
        let spec = SequenceSpec::cpmg(n, tau);
        // 160 samples per free interval puts ω_max at 16× the pulse rate
        build_trace(&spec, 160.0 / tau).unwrap()
    }

    #[test]
    fn zero_spectrum() {
        let trace = cpmg_trace(2, 1e-6);
        let cfg = McConfig::for_trace(&NoiseSpectrum::zero(), &trace, 100, 1);
        let r = mc_coherence(&NoiseSpectrum::zero(), &trace, &cfg).unwrap();
        assert_eq!((r.coherence, r.stderr), (1.0, 0.0));
    }

    #[test]
    fn flat_spectrum_pins_the_convention() {
        let level = 2e3;
        let s = NoiseSpectrum::flat(level).unwrap();
        let trace = cpmg_trace(4, 5e-6);
        let cfg = McConfig::for_trace(&s, &trace, 4000, 3);
        let r = mc_coherence(&s, &trace, &cfg).unwrap();
        let expected = 0.5 * trace.duration() * level;
        let quad = chi(&s, &cpmg_ff(4, trace.duration(), &[]).unwrap()).unwrap();
        assert!((quad / expected - 1.0).abs() < 1e-3);
        assert!((r.chi_modes / expected - 1.0).abs() < 0.02, "{} vs {expected}", r.chi_modes);
        assert!((r.chi_estimate - quad).abs() <= 0.02 * quad + 3.0 * r.chi_stderr);
    }

    #[test]
    fn deterministic_per_seed() {
        let s = NoiseSpectrum::lorentzian_dc(1e5, 1e5).unwrap();
        let trace = cpmg_trace(1, 5e-6);
        let cfg = McConfig::for_trace(&s, &trace, 200, 42);
        let a = mc_coherence(&s, &trace, &cfg).unwrap();
        let b = mc_coherence(&s, &trace, &cfg).unwrap();
        assert_eq!(a, b);
        let other = mc_coherence(&s, &trace, &McConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a.coherence, other.coherence);
    }

    #[test]
    fn validation() {
        let s = NoiseSpectrum::flat(1.0).unwrap();
        let trace = cpmg_trace(2, 1e-6);
        let mut cfg = McConfig::for_trace(&s, &trace, 100, 1);
        cfg.n_realizations = 10;
        assert!(mc_coherence(&s, &trace, &cfg).is_err());
        let cfg = McConfig { max_work: 10.0, ..McConfig::for_trace(&s, &trace, 100, 1) };
        assert!(matches!(mc_coherence(&s, &trace, &cfg), Err(Error::Budget { .. })));
        // trace spacing coarser than the requested resolution
        let cfg = McConfig::new(100, 1, trace.dt() / 2.0, 100);
        assert!(mc_coherence(&s, &trace, &cfg).is_err());
        let cfg = McConfig::new(100, 1, trace.dt() * 2.0, 100);
        assert!(mc_coherence(&s, &trace, &cfg).is_ok());
        let coarse = McConfig { omega_max: Some(1e12), ..cfg };
        assert!(mc_coherence(&s, &trace, &coarse).is_err());
    }
}
