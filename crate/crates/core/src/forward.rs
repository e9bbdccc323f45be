//! Forward model: coherence `C = e^{−χ}` from a noise spectrum and a
//! sequence, plus simulated measurement noise.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{analytic_ff, cpmg_ff, FilterFunction};
use crate::noise::NoiseSpectrum;
use crate::quad::{Tolerance, GL8_W, GL8_X};
use crate::sequences::{Family, SequenceSpec};

/// Relative tolerance of the adaptive `χ` quadrature.
pub const CHI_REL_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Abscissa {
    /// Total sequence time, seconds.
    Time,
    /// Modulation frequency, Hz.
    ModFrequency,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub coherence: f64,
    pub uncertainty: f64,
    /// Set when the coherence is outside `(0, 1 + 3·uncertainty]`.
    #[serde(default)]
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Synthetic { seed: Option<u64> },
    Ingested { path: String },
}

/// Ordered coherence samples against time or modulation frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceCurve {
    pub abscissa: Abscissa,
    pub points: Vec<CurvePoint>,
    /// Template of the swept sequence: the duration (time sweeps) or the
    /// modulation frequency (frequency sweeps) is overridden per point.
    pub sequence: Option<SequenceSpec>,
    pub provenance: Provenance,
}

/// Whether a coherence value is outside the physically allowed range.
pub fn out_of_range(coherence: f64, uncertainty: f64) -> bool {
    !(coherence > 0.0 && coherence <= 1.0 + 3.0 * uncertainty)
}

impl CoherenceCurve {
    /// Validates ordering and uncertainties and sets the range flags.
    pub fn new(
        abscissa: Abscissa,
        mut points: Vec<CurvePoint>,
        sequence: Option<SequenceSpec>,
        provenance: Provenance,
    ) -> Result<Self> {
        if points.windows(2).any(|w| !(w[1].x > w[0].x)) {
            return Err(Error::input("curve abscissa must be strictly increasing"));
        }
        if points.iter().any(|p| !(p.uncertainty >= 0.0)) {
            return Err(Error::input("uncertainties must be non-negative"));
        }
        for p in &mut points {
            p.flagged = out_of_range(p.coherence, p.uncertainty);
        }
        Ok(CoherenceCurve { abscissa, points, sequence, provenance })
    }

    pub fn xs(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.x).collect()
    }

    pub fn coherences(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.coherence).collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Sequence used at point `x`.
    pub fn spec_at(&self, x: f64) -> Option<SequenceSpec> {
        let s = self.sequence.clone()?;
        Some(match self.abscissa {
            Abscissa::Time => s.with_duration(x),
            Abscissa::ModFrequency => s.with_mod_frequency(x),
        })
    }

    /// Pulse count of a CPMG-family curve.
    pub fn pulses(&self) -> Option<u32> {
        self.sequence.as_ref().filter(|s| s.family.is_pulsed()).map(|s| s.pulses())
    }

    pub fn csv_header(&self) -> &'static str {
        match self.abscissa {
            Abscissa::Time => "time_s,coherence,uncertainty",
            Abscissa::ModFrequency => "mod_frequency_hz,coherence,uncertainty",
        }
    }

    /// Three-column CSV (abscissa, coherence, uncertainty) with units in the
    /// header. Values use Rust's shortest round-trip formatting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(self.csv_header());
        out.push('\n');
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.x, p.coherence, p.uncertainty));
        }
        out
    }

    /// JSON sidecar holding the sequence template and provenance.
    pub fn sidecar(&self) -> serde_json::Value {
        serde_json::json!({
            "abscissa": self.abscissa,
            "sequence": self.sequence,
            "provenance": self.provenance,
            "points": self.points.len(),
        })
    }
}

/// `χ = (t/2)·∫₀^∞ S(ω)·FF(ω) dω` by adaptive quadrature.
pub fn chi(spectrum: &NoiseSpectrum, ff: &FilterFunction) -> Result<f64> {
    if spectrum.is_zero() {
        return Ok(0.0);
    }
    let breaks = spectrum.features();
    let tol = Tolerance { rel: CHI_REL_TOL, ..Default::default() };
    let integral = ff.integrate(|w| spectrum.shape_density(w), &breaks, tol)?;
    Ok(spectrum.scale() * (0.5 * ff.duration() * integral.value))
}

/// `χ` for a sequence spec with its analytic filter function.
pub fn chi_for(spectrum: &NoiseSpectrum, spec: &SequenceSpec) -> Result<f64> {
    chi(spectrum, &analytic_ff(spec, &[])?)
}

/// Fixed-rule `χ`: 8-point Gauss panels of width `π/t` up to `16×` the
/// nominal sensing frequency (or past any spectral peak), split at spectral
/// features, plus the averaged envelope tail. Roughly ten times cheaper than [`chi`] and accurate to
/// about `10⁻⁴` for smooth spectra; used inside fitting loops.
pub fn chi_fast(spectrum: &NoiseSpectrum, ff: &FilterFunction) -> f64 {
    if spectrum.is_zero() {
        return 0.0;
    }
    let kernel = ff.kernel();
    let t = ff.duration();
    let step = PI / t;
    let w_cut = (16.0 * kernel.nominal_omega()).max(spectrum.compact_extent());
    let panels = (w_cut / step).ceil() as usize;
    let w_cut = panels as f64 * step;
    let features = spectrum.features();
    let mut breaks: Vec<f64> = (0..=panels).map(|k| k as f64 * step).collect();
    breaks.extend(features.iter().copied().filter(|&w| w > 0.0 && w < w_cut));
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let mut sum = 0.0;
    for p in breaks.windows(2) {
        let c = 0.5 * (p[0] + p[1]);
        let h = 0.5 * (p[1] - p[0]);
        for (x, wgt) in GL8_X.iter().zip(GL8_W) {
            let w = c + h * x;
            sum += wgt * h * spectrum.shape_density(w) * kernel.eval(w);
        }
    }
    let energy = kernel.jump_energy();
    if energy > 0.0 {
        // ∫_W^∞ S·E/(π t ω²) dω with ω = W/u
        let mut ub: Vec<f64> = (0..10).map(|k| 0.5f64.powi(k)).collect();
        ub.push(0.0);
        ub.extend(features.iter().filter(|&&w| w > w_cut).map(|&w| w_cut / w));
        ub.sort_by(f64::total_cmp);
        ub.dedup();
        for p in ub.windows(2) {
            let c = 0.5 * (p[0] + p[1]);
            let h = 0.5 * (p[1] - p[0]);
            for (x, wgt) in GL8_X.iter().zip(GL8_W) {
                let u = c + h * x;
                let w = w_cut / u;
                sum += wgt * h * spectrum.shape_density(w) * energy / (PI * t * w_cut);
            }
        }
    }
    spectrum.scale() * (0.5 * t * sum)
}

/// Precomputed fixed quadrature for `χ` with one filter function: nodes
/// and filter weights do not depend on the spectrum, so repeated
/// evaluation only costs spectrum lookups. Same panels and tail as
/// [`chi_fast`], with the cutoff fixed at construction and no splits at
/// spectral features.
#[derive(Debug, Clone)]
pub struct ChiRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl ChiRule {
    /// `extent` extends the panel range past `16×` the sensing frequency,
    /// typically to the highest spectral feature expected.
    pub fn new(ff: &FilterFunction, extent: f64) -> Self {
        let kernel = ff.kernel();
        let t = ff.duration();
        let step = PI / t;
        let panels = ((16.0 * kernel.nominal_omega()).max(extent) / step).ceil() as usize;
        let w_cut = panels as f64 * step;
        let mut nodes = Vec::with_capacity(8 * panels + 80);
        let mut weights = Vec::with_capacity(8 * panels + 80);
        for k in 0..panels {
            let c = (k as f64 + 0.5) * step;
            let h = 0.5 * step;
            for (x, wgt) in GL8_X.iter().zip(GL8_W) {
                let w = c + h * x;
                nodes.push(w);
                weights.push(0.5 * t * wgt * h * kernel.eval(w));
            }
        }
        let energy = kernel.jump_energy();
        if energy > 0.0 {
            for k in 0..10 {
                let (lo, hi) = (if k == 9 { 0.0 } else { 0.5f64.powi(k + 1) }, 0.5f64.powi(k));
                let c = 0.5 * (lo + hi);
                let h = 0.5 * (hi - lo);
                for (x, wgt) in GL8_X.iter().zip(GL8_W) {
                    let u = c + h * x;
                    nodes.push(w_cut / u);
                    weights.push(0.5 * t * wgt * h * energy / (PI * t * w_cut));
                }
            }
        }
        ChiRule { nodes, weights }
    }

    pub fn chi(&self, spectrum: &NoiseSpectrum) -> f64 {
        let sum: f64 = self.nodes.iter().zip(&self.weights).map(|(&w, &k)| k * spectrum.shape_density(w)).sum();
        spectrum.scale() * sum
    }
}

fn coherence_of(chi: f64) -> f64 {
    (-chi).exp().max(f64::MIN_POSITIVE)
}

/// Which total times a CPMG synthesis visits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Every time on the grid.
    Dense,
    /// Only `t = 2N·k·T_L` (free precession a multiple of the Larmor period)
    /// within the grid's range.
    RevivalsOnly,
}

/// Total times at which `tau_free` is a whole number of Larmor periods.
pub fn revival_times(n: u32, omega_larmor: f64, t_min: f64, t_max: f64) -> Vec<f64> {
    let period = 2.0 * PI / omega_larmor;
    let unit = 2.0 * n as f64 * period;
    let first = (t_min / unit).ceil().max(1.0) as u64;
    let last = (t_max / unit).floor() as u64;
    (first..=last).map(|k| k as f64 * unit).collect()
}

/// CPMG-N coherence curves for every `N` in `n_list`.
///
/// `grids` holds either one time grid shared by all `N` or one per `N`.
pub fn synth_cpmg_family(
    spectrum: &NoiseSpectrum,
    n_list: &[u32],
    grids: &[Vec<f64>],
    sampling: Sampling,
) -> Result<Vec<CoherenceCurve>> {
    if n_list.is_empty() {
        return Err(Error::input("n_list must not be empty"));
    }
    if grids.len() != 1 && grids.len() != n_list.len() {
        return Err(Error::input("provide one time grid, or one per pulse count"));
    }
    let mut jobs: Vec<(usize, f64)> = Vec::new();
    for (i, &n) in n_list.iter().enumerate() {
        if n == 0 {
            return Err(Error::spec("n_pulses must be positive"));
        }
        let grid = &grids[if grids.len() == 1 { 0 } else { i }];
        if grid.is_empty() {
            return Err(Error::input("empty time grid"));
        }
        let times = match sampling {
            Sampling::Dense => grid.clone(),
            Sampling::RevivalsOnly => {
                let wl = spectrum
                    .larmor_omega()
                    .ok_or_else(|| Error::input("revival sampling needs a spectrum with a Gaussian peak"))?;
                let lo = grid.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = grid.iter().copied().fold(0.0, f64::max);
                revival_times(n, wl, lo, hi)
            }
        };
        jobs.extend(times.into_iter().map(|t| (i, t)));
    }
    let values: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(i, t)| {
            let ff = cpmg_ff(n_list[i], t, &[])?;
            chi(spectrum, &ff)
        })
        .collect();
    let mut curves: Vec<Vec<CurvePoint>> = vec![Vec::new(); n_list.len()];
    for ((i, t), chi) in jobs.into_iter().zip(values) {
        curves[i].push(CurvePoint { x: t, coherence: coherence_of(chi?), uncertainty: 0.0, flagged: false });
    }
    n_list
        .iter()
        .zip(curves)
        .map(|(&n, mut points)| {
            points.sort_by(|a, b| a.x.total_cmp(&b.x));
            points.dedup_by(|a, b| a.x == b.x);
            let t_ref = points.first().map(|p| p.x).unwrap_or(1.0);
            CoherenceCurve::new(
                Abscissa::Time,
                points,
                Some(SequenceSpec::cpmg_with_duration(n, t_ref)),
                Provenance::Synthetic { seed: None },
            )
        })
        .collect()
}

/// Coherence against modulation frequency at fixed duration.
pub fn synth_dysco_sweep(spectrum: &NoiseSpectrum, template: &SequenceSpec, f_grid: &[f64]) -> Result<CoherenceCurve> {
    if !matches!(template.family, Family::Dysco | Family::Gdysco) {
        return Err(Error::input("frequency sweeps need a DYSCO or gDYSCO template"));
    }
    if let Some(f) = f_grid.iter().find(|&&f| f * template.duration < 1.0 - 1e-9) {
        return Err(Error::input(format!(
            "modulation frequency {f} Hz below 1/duration = {} Hz",
            1.0 / template.duration
        )));
    }
    let values: Vec<Result<f64>> = f_grid
        .par_iter()
        .map(|&f| chi_for(spectrum, &template.clone().with_mod_frequency(f)))
        .collect();
    let mut points = Vec::with_capacity(f_grid.len());
    for (&f, chi) in f_grid.iter().zip(values) {
        points.push(CurvePoint { x: f, coherence: coherence_of(chi?), uncertainty: 0.0, flagged: false });
    }
    CoherenceCurve::new(Abscissa::ModFrequency, points, Some(template.clone()), Provenance::Synthetic { seed: None })
}

/// Adds i.i.d. normal deviates of standard deviation `epsilon`. Each point
/// draws from its own ChaCha stream (`seed`, index), so the result does not
/// depend on evaluation order.
pub fn add_measurement_noise(curve: &CoherenceCurve, epsilon: f64, seed: u64) -> Result<CoherenceCurve> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::input("epsilon must be non-negative"));
    }
    if epsilon == 0.0 {
        return Ok(curve.clone());
    }
    let normal = Normal::new(0.0, epsilon).map_err(|e| Error::input(e.to_string()))?;
    let mut out = curve.clone();
    for (i, p) in out.points.iter_mut().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        p.coherence += normal.sample(&mut rng);
        p.uncertainty = epsilon;
        p.flagged = out_of_range(p.coherence, p.uncertainty);
    }
    out.provenance = Provenance::Synthetic { seed: Some(seed) };
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::dysco_ff;
    use crate::noise::{default_experiment_spectrum, Component};

    #[test]
    fn zero_spectrum_gives_unit_coherence() {
        let ff = cpmg_ff(8, 1e-4, &[]).unwrap();
        assert_eq!(chi(&NoiseSpectrum::zero(), &ff).unwrap(), 0.0);
        let sweep = synth_dysco_sweep(&NoiseSpectrum::zero(), &SequenceSpec::gdysco(50e3, 200e-6), &[40e3, 60e3]).unwrap();
        assert!(sweep.points.iter().all(|p| p.coherence == 1.0));
    }

    #[test]
    fn flat_spectrum_normalization() {
        let s = NoiseSpectrum::flat(1e3).unwrap();
        for n in [1, 8, 64] {
            let t = 1e-4;
            let c = chi(&s, &cpmg_ff(n, t, &[]).unwrap()).unwrap();
            assert!((c / (0.5 * t * 1e3) - 1.0).abs() < 1e-3, "N={n}: {c}");
        }
    }

    #[test]
    fn narrow_gaussian_inside_main_lobe() {
        // χ ≈ (t/2)·Σ_lobe·S̄ when S is a narrow line at the peak
        let t = 1e-4;
        let ff = cpmg_ff(16, t, &[]).unwrap();
        let stats = crate::filters::peak_stats(&ff).unwrap();
        let w0 = stats.omega0();
        let s = NoiseSpectrum::gaussian_peak(1e4, 1.0, w0).unwrap();
        let c = chi(&s, &ff).unwrap();
        // the line integrates to Δ² and samples FF at ω₀
        let expected = 0.5 * t * 1e8 * ff.eval(w0);
        assert!((c / expected - 1.0).abs() < 1e-3, "{c} vs {expected}");
    }

    #[test]
    fn fast_chi_tracks_adaptive() {
        let s = default_experiment_spectrum();
        for &t in &[2e-6, 16e-6, 50e-6, 200e-6, 1e-3] {
            let ff = cpmg_ff(8, t, &[]).unwrap();
            let a = chi(&s, &ff).unwrap();
            let b = chi_fast(&s, &ff);
            assert!((a - b).abs() <= 2e-4 * a + 1e-9, "t={t}: {a} vs {b}");
        }
    }

    #[test]
    fn linearity_is_exact() {
        let s = default_experiment_spectrum();
        let ff = cpmg_ff(4, 30e-6, &[]).unwrap();
        let base = chi(&s, &ff).unwrap();
        for a in [0.5, 2.0, 10.0] {
            assert_eq!(chi(&s.scaled(a), &ff).unwrap(), a * base);
        }
    }

    #[test]
    fn adding_noise_never_raises_coherence() {
        let s = default_experiment_spectrum();
        let more = s.with_component(Component::Flat { level: 10.0 }).unwrap();
        let grid = vec![vec![1e-6, 1e-5, 1e-4]];
        let a = synth_cpmg_family(&s, &[2], &grid, Sampling::Dense).unwrap();
        let b = synth_cpmg_family(&more, &[2], &grid, Sampling::Dense).unwrap();
        for (p, q) in a[0].points.iter().zip(&b[0].points) {
            assert!(q.coherence <= p.coherence);
        }
    }

    #[test]
    fn short_time_limit() {
        let s = default_experiment_spectrum();
        let curves = synth_cpmg_family(&s, &[1, 8], &[vec![1e-9]], Sampling::Dense).unwrap();
        for c in curves {
            assert!(c.points[0].coherence > 0.999);
        }
    }

    #[test]
    fn revival_sampling() {
        let s = default_experiment_spectrum();
        let grid = vec![(1..=200).map(|k| k as f64 * 1e-6).collect::<Vec<_>>()];
        let curves = synth_cpmg_family(&s, &[1], &grid, Sampling::RevivalsOnly).unwrap();
        let tl = 2.0 * PI / 392e3;
        assert_eq!(curves[0].len(), (200e-6 / (2.0 * tl)).floor() as usize);
        for p in &curves[0].points {
            let k = p.x / (2.0 * tl);
            assert!((k - k.round()).abs() < 1e-9);
        }
        let lor = NoiseSpectrum::lorentzian_dc(1e3, 1e3).unwrap();
        assert!(synth_cpmg_family(&lor, &[1], &grid, Sampling::RevivalsOnly).is_err());
    }

    #[test]
    fn dysco_sweep_dips_at_larmor() {
        let s = default_experiment_spectrum();
        let t = 200e-6;
        let fl = 392e3 / (2.0 * PI);
        let sweep = synth_dysco_sweep(&s, &SequenceSpec::gdysco(fl, t), &[20e3, fl, 120e3]).unwrap();
        let c = sweep.coherences();
        assert!(c[1] < 0.5 * c[0].min(c[2]), "{c:?}");
        assert!(synth_dysco_sweep(&s, &SequenceSpec::gdysco(fl, t), &[1e3]).is_err());
    }

    #[test]
    fn off_resonance_matches_delta_approximation() {
        // far from the spectral features the FF acts like Σ·δ(ω − ω₀)
        let s = NoiseSpectrum::lorentzian_dc(2e4, 2e6).unwrap();
        let t = 200e-6;
        let spec = SequenceSpec::gdysco(100e3, t);
        let ff = dysco_ff(&spec, &[]).unwrap();
        let c = chi(&s, &ff).unwrap();
        let approx = 0.5 * t * 0.147_7 * s.density(2.0 * PI * 100e3);
        assert!((c / approx - 1.0).abs() < 1e-2, "{c} vs {approx}");
    }

    #[test]
    fn measurement_noise_statistics() {
        let points: Vec<CurvePoint> = (0..10_000)
            .map(|i| CurvePoint { x: i as f64, coherence: 0.5, uncertainty: 0.0, flagged: false })
            .collect();
        let curve = CoherenceCurve::new(Abscissa::Time, points, None, Provenance::Synthetic { seed: None }).unwrap();
        let noisy = add_measurement_noise(&curve, 0.03, 11).unwrap();
        let d: Vec<f64> = noisy.points.iter().map(|p| p.coherence - 0.5).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64).sqrt();
        assert!((sd - 0.03).abs() < 1e-3, "{sd}");
        assert_eq!(noisy, add_measurement_noise(&curve, 0.03, 11).unwrap());
        assert_eq!(add_measurement_noise(&curve, 0.0, 11).unwrap(), curve);
        assert!(noisy.points.iter().all(|p| p.uncertainty == 0.03));
    }
}
