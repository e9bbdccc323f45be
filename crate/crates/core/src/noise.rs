//! One-sided noise spectral densities `S(ω)`, in rad/s, for `ω ≥ 0`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parametric spectral component. `delta` is the coupling strength and
/// `sigma` the width, both rad/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Component {
    /// `Δ²/(πσ(1 + (ω/σ)²))`
    LorentzianDc { delta: f64, sigma: f64 },
    /// `Δ²/(√(2π)σ)·exp(−(ω − ω_c)²/2σ²)`
    GaussianPeak { delta: f64, sigma: f64, omega_center: f64 },
    /// Constant density, useful for normalization checks.
    Flat { level: f64 },
}

impl Component {
    fn density(&self, omega: f64) -> f64 {
        match *self {
            Component::LorentzianDc { delta, sigma } => {
                let r = omega / sigma;
                delta * delta / (PI * sigma * (1.0 + r * r))
            }
            Component::GaussianPeak { delta, sigma, omega_center } => {
                let r = (omega - omega_center) / sigma;
                delta * delta / ((2.0 * PI).sqrt() * sigma) * (-0.5 * r * r).exp()
            }
            Component::Flat { level } => level,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Component::LorentzianDc { delta, sigma } => delta > 0.0 && sigma > 0.0,
            Component::GaussianPeak { delta, sigma, omega_center } => delta > 0.0 && sigma > 0.0 && omega_center > 0.0,
            Component::Flat { level } => level > 0.0,
        };
        let finite = match *self {
            Component::LorentzianDc { delta, sigma } => delta.is_finite() && sigma.is_finite(),
            Component::GaussianPeak { delta, sigma, omega_center } => {
                delta.is_finite() && sigma.is_finite() && omega_center.is_finite()
            }
            Component::Flat { level } => level.is_finite(),
        };
        if ok && finite {
            Ok(())
        } else {
            Err(Error::input(format!("spectral parameters must be positive and finite: {self:?}")))
        }
    }
}

/// Shape of a spectrum before the overall scale factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    Parametric { components: Vec<Component> },
    /// Linear interpolation between nodes, zero outside.
    Tabulated { omegas: Vec<f64>, values: Vec<f64> },
}

fn unit() -> f64 {
    1.0
}

fn is_unit(x: &f64) -> bool {
    *x == 1.0
}

/// A noise spectrum: a shape times an overall scale.
///
/// Keeping the scale separate makes `χ` exactly linear in it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpectrum {
    #[serde(flatten)]
    shape: Shape,
    #[serde(default = "unit", skip_serializing_if = "is_unit")]
    scale: f64,
}

impl NoiseSpectrum {
    pub fn parametric(components: Vec<Component>) -> Result<Self> {
        for c in &components {
            c.validate()?;
        }
        Ok(NoiseSpectrum { shape: Shape::Parametric { components }, scale: 1.0 })
    }

    pub fn tabulated(omegas: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let s = NoiseSpectrum { shape: Shape::Tabulated { omegas, values }, scale: 1.0 };
        s.validate()?;
        Ok(s)
    }

    /// `S ≡ 0`.
    pub fn zero() -> Self {
        NoiseSpectrum { shape: Shape::Parametric { components: vec![] }, scale: 1.0 }
    }

    pub fn lorentzian_dc(delta: f64, sigma: f64) -> Result<Self> {
        NoiseSpectrum::parametric(vec![Component::LorentzianDc { delta, sigma }])
    }

    pub fn gaussian_peak(delta: f64, sigma: f64, omega_center: f64) -> Result<Self> {
        NoiseSpectrum::parametric(vec![Component::GaussianPeak { delta, sigma, omega_center }])
    }

    pub fn flat(level: f64) -> Result<Self> {
        NoiseSpectrum::parametric(vec![Component::Flat { level }])
    }

    /// Re-checks invariants, e.g. after deserialization.
    pub fn validate(&self) -> Result<()> {
        if !(self.scale >= 0.0 && self.scale.is_finite()) {
            return Err(Error::input("spectrum scale must be non-negative"));
        }
        match &self.shape {
            Shape::Parametric { components } => components.iter().try_for_each(Component::validate),
            Shape::Tabulated { omegas, values } => {
                if omegas.len() != values.len() || omegas.len() < 2 {
                    return Err(Error::input("tabulated spectrum needs at least two (omega, S) pairs"));
                }
                if omegas[0] < 0.0 || omegas.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::input("tabulated omegas must be non-negative and strictly increasing"));
                }
                if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(Error::input("tabulated densities must be finite and non-negative"));
                }
                Ok(())
            }
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn components(&self) -> &[Component] {
        match &self.shape {
            Shape::Parametric { components } => components,
            Shape::Tabulated { .. } => &[],
        }
    }

    /// The same spectrum multiplied pointwise by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        NoiseSpectrum { shape: self.shape.clone(), scale: self.scale * factor }
    }

    /// Adds a component (parametric spectra only).
    pub fn with_component(&self, c: Component) -> Result<Self> {
        c.validate()?;
        match &self.shape {
            Shape::Parametric { components } if self.scale == 1.0 => {
                let mut components = components.clone();
                components.push(c);
                Ok(NoiseSpectrum { shape: Shape::Parametric { components }, scale: 1.0 })
            }
            _ => Err(Error::input("components can only be added to unscaled parametric spectra")),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.scale == 0.0
            || match &self.shape {
                Shape::Parametric { components } => components.is_empty(),
                Shape::Tabulated { values, .. } => values.iter().all(|v| *v == 0.0),
            }
    }

    /// `S(ω)`; negative frequencies are rejected.
    pub fn eval(&self, omega: f64) -> Result<f64> {
        if !(omega >= 0.0) {
            return Err(Error::input(format!("spectrum evaluated at negative or NaN omega {omega}")));
        }
        Ok(self.density(omega))
    }

    /// `S(ω)` without the domain check; `ω` is taken as `|ω|`.
    pub fn density(&self, omega: f64) -> f64 {
        self.scale * self.shape_density(omega.abs())
    }

    /// Density of the unscaled shape.
    pub fn shape_density(&self, omega: f64) -> f64 {
        match &self.shape {
            Shape::Parametric { components } => components.iter().map(|c| c.density(omega)).sum(),
            Shape::Tabulated { omegas, values } => {
                let n = omegas.len();
                if omega < omegas[0] || omega > omegas[n - 1] {
                    return 0.0;
                }
                let i = omegas.partition_point(|&w| w <= omega).clamp(1, n - 1);
                let (w0, w1) = (omegas[i - 1], omegas[i]);
                let u = (omega - w0) / (w1 - w0);
                values[i - 1] + u * (values[i] - values[i - 1])
            }
        }
    }

    /// Frequencies where the density changes character; used as quadrature
    /// breakpoints.
    pub fn features(&self) -> Vec<f64> {
        let mut out = Vec::new();
        match &self.shape {
            Shape::Parametric { components } => {
                for c in components {
                    match *c {
                        Component::LorentzianDc { sigma, .. } => {
                            out.extend([0.1, 0.3, 1.0, 3.0, 10.0, 100.0].iter().map(|k| k * sigma));
                        }
                        Component::GaussianPeak { sigma, omega_center, .. } => {
                            for k in [-8.0, -5.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 5.0, 8.0] {
                                let w = omega_center + k * sigma;
                                if w > 0.0 {
                                    out.push(w);
                                }
                            }
                        }
                        Component::Flat { .. } => {}
                    }
                }
            }
            Shape::Tabulated { omegas, .. } => out.extend_from_slice(omegas),
        }
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    /// Upper end of the localized spectral content (Gaussian peaks out to
    /// `8σ`, or the end of a table); zero when only smooth tails are present.
    pub fn compact_extent(&self) -> f64 {
        match &self.shape {
            Shape::Parametric { components } => components
                .iter()
                .map(|c| match *c {
                    Component::GaussianPeak { sigma, omega_center, .. } => omega_center + 8.0 * sigma,
                    _ => 0.0,
                })
                .fold(0.0, f64::max),
            Shape::Tabulated { omegas, .. } => *omegas.last().unwrap_or(&0.0),
        }
    }

    /// `∫₀^∞ S dω`, infinite when a flat component is present.
    pub fn total_power(&self) -> f64 {
        let shape: f64 = match &self.shape {
            Shape::Parametric { components } => components
                .iter()
                .map(|c| match *c {
                    Component::LorentzianDc { delta, .. } => 0.5 * delta * delta,
                    Component::GaussianPeak { delta, sigma, omega_center } => {
                        0.5 * delta * delta * (1.0 + libm::erf(omega_center / (2f64.sqrt() * sigma)))
                    }
                    Component::Flat { .. } => f64::INFINITY,
                })
                .sum(),
            Shape::Tabulated { omegas, values } => omegas
                .windows(2)
                .zip(values.windows(2))
                .map(|(w, v)| 0.5 * (w[1] - w[0]) * (v[0] + v[1]))
                .sum(),
        };
        self.scale * shape
    }

    /// Centre of the first Gaussian peak, rad/s.
    pub fn larmor_omega(&self) -> Option<f64> {
        self.components().iter().find_map(|c| match c {
            Component::GaussianPeak { omega_center, .. } => Some(*omega_center),
            _ => None,
        })
    }

    /// Samples the spectrum on `omegas` as a tabulated spectrum.
    pub fn tabulate(&self, omegas: &[f64]) -> Result<NoiseSpectrum> {
        NoiseSpectrum::tabulated(omegas.to_vec(), omegas.iter().map(|&w| self.density(w)).collect())
    }

    /// Two-column CSV with an `omega_rad_s,s_rad_s` header. Parametric
    /// spectra are sampled on `omegas`.
    pub fn to_csv(&self, omegas: &[f64]) -> String {
        let mut out = String::from("omega_rad_s,s_rad_s\n");
        for &w in omegas {
            out.push_str(&format!("{w},{}\n", self.density(w)));
        }
        out
    }
}

/// The five-parameter model fitted to the experiment: a ¹³C Gaussian at the
/// Larmor frequency plus a DC Lorentzian from ¹⁴N. Values in rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub delta_c13: f64,
    pub sigma_c13: f64,
    pub delta_n14: f64,
    pub sigma_n14: f64,
    pub omega_larmor: f64,
}

impl NoiseParams {
    pub const NAMES: [&'static str; 5] = ["delta_c13", "sigma_c13", "delta_n14", "sigma_n14", "omega_larmor"];

    pub fn experiment() -> Self {
        NoiseParams { delta_c13: 500e3, sigma_c13: 25e3, delta_n14: 40e3, sigma_n14: 50e3, omega_larmor: 392e3 }
    }

    pub fn to_array(self) -> [f64; 5] {
        [self.delta_c13, self.sigma_c13, self.delta_n14, self.sigma_n14, self.omega_larmor]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        NoiseParams { delta_c13: a[0], sigma_c13: a[1], delta_n14: a[2], sigma_n14: a[3], omega_larmor: a[4] }
    }

    pub fn spectrum(&self) -> Result<NoiseSpectrum> {
        NoiseSpectrum::parametric(vec![
            Component::GaussianPeak { delta: self.delta_c13, sigma: self.sigma_c13, omega_center: self.omega_larmor },
            Component::LorentzianDc { delta: self.delta_n14, sigma: self.sigma_n14 },
        ])
    }
}

/// Spectrum with the parameters fitted to the measured CPMG-8 decay.
pub fn default_experiment_spectrum() -> NoiseSpectrum {
    NoiseParams::experiment().spectrum().expect("reference parameters are valid")
}
