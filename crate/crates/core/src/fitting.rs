//! Least-squares fits: noise-model parameters from CPMG decays, stretched
//! exponential envelopes, Larmor revival combs and Gaussian spectral peaks.
//!
//! All fits minimize a sum of squared residuals with the bounded simplex
//! search in [`crate::optim`]. Parameter variances come from `s²(JᵀJ)⁻¹`
//! with a central-difference Jacobian at the optimum.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::cpmg_ff;
use crate::forward::{Abscissa, ChiRule, CoherenceCurve};
use crate::noise::NoiseParams;
use crate::optim::{minimize, NmConfig, NmResult};
use crate::reconstruct::{PointFlag, ReconstructedSpectrum};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub value: f64,
    pub unit: String,
    /// Variance estimate; `None` when the Jacobian is rank deficient.
    pub variance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub parameters: Vec<Parameter>,
    /// `√Σ rᵢ²`
    pub residual_norm: f64,
    pub covariance_diag: Vec<Option<f64>>,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.parameters.iter().find(|p| p.name == name).map(|p| p.value)
    }

    pub fn values(&self) -> Vec<f64> {
        self.parameters.iter().map(|p| p.value).collect()
    }

    fn assemble(names: &[(&str, &str)], x: &[f64], residual_norm: f64, cov: Vec<Option<f64>>, nm: &NmResult) -> Self {
        let parameters = names
            .iter()
            .zip(x)
            .zip(&cov)
            .map(|((&(name, unit), &value), &variance)| Parameter {
                name: name.to_string(),
                value,
                unit: unit.to_string(),
                variance,
            })
            .collect();
        FitResult { parameters, residual_norm, covariance_diag: cov, converged: nm.converged, iterations: nm.iterations }
    }
}

/// Diagonal of `s²(JᵀJ)⁻¹` with `s² = Σr²/(m − p)`.
fn covariance_diag(residuals: &dyn Fn(&[f64]) -> Vec<f64>, x: &[f64]) -> Vec<Option<f64>> {
    let r0 = residuals(x);
    let m = r0.len();
    let p = x.len();
    if m <= p {
        return vec![None; p];
    }
    let mut jac = DMatrix::<f64>::zeros(m, p);
    for j in 0..p {
        let h = 1e-6 * x[j].abs().max(1e-12);
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += h;
        xm[j] -= h;
        let (rp, rm) = (residuals(&xp), residuals(&xm));
        for i in 0..m {
            jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
        }
    }
    let s2 = r0.iter().map(|r| r * r).sum::<f64>() / (m - p) as f64;
    match (jac.transpose() * &jac).try_inverse() {
        Some(inv) => (0..p).map(|j| Some(s2 * inv[(j, j)]).filter(|v| v.is_finite() && *v >= 0.0)).collect(),
        None => vec![None; p],
    }
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Seed grid of [`fit_noise_params`]: log-spaced Larmor frequencies across
/// the bounds. Adjacent points differ by about 4%, below the width of the
/// valley around the optimum.
pub const LARMOR_SEED_POINTS: usize = 128;
/// Seed grid of [`fit_noise_params`]: log-spaced ¹³C widths.
pub const SIGMA_SEED_POINTS: usize = 12;

/// Bounds for the noise-model fit, in the order of [`NoiseParams::NAMES`].
pub type ParamBounds = [(f64, f64); 5];

/// Default box: one decade either side of the start.
pub fn default_bounds(initial: &NoiseParams) -> ParamBounds {
    initial.to_array().map(|v| (v / 10.0, v * 10.0))
}

/// Fits the five composite-model parameters to a CPMG-`n` decay.
///
/// The search runs over log-parameters; the model coherence is
/// `exp(−χ)` with `χ` from a precomputed [`ChiRule`] per time point.
pub fn fit_noise_params(
    curve: &CoherenceCurve,
    template_n: u32,
    initial: NoiseParams,
    bounds: Option<ParamBounds>,
    cfg: NmConfig,
) -> Result<FitResult> {
    if curve.abscissa != Abscissa::Time {
        return Err(Error::input("noise-model fit needs a time-domain curve"));
    }
    if let Some(n) = curve.pulses() {
        if n != template_n {
            return Err(Error::input(format!("curve was measured with CPMG-{n}, not CPMG-{template_n}")));
        }
    }
    let extent = initial.spectrum()?.compact_extent();
    let data: Vec<(ChiRule, f64)> = curve
        .points
        .iter()
        .filter(|p| !p.flagged)
        .map(|p| Ok((ChiRule::new(&cpmg_ff(template_n, p.x, &[])?, extent), p.coherence)))
        .collect::<Result<_>>()?;
    if data.len() < 6 {
        return Err(Error::input("need at least six valid points to fit five parameters"));
    }
    let bounds = bounds.unwrap_or_else(|| default_bounds(&initial));
    let x0 = initial.to_array();
    for (i, (&v, &(lo, hi))) in x0.iter().zip(&bounds).enumerate() {
        if !(lo > 0.0 && lo < hi && v >= lo && v <= hi) {
            return Err(Error::input(format!("initial {} = {v} outside bounds [{lo}, {hi}]", NoiseParams::NAMES[i])));
        }
    }
    let residuals = |p: &[f64]| -> Vec<f64> {
        let params = NoiseParams::from_array([p[0], p[1], p[2], p[3], p[4]]);
        match params.spectrum() {
            Ok(s) => data.par_iter().map(|(rule, c)| (-rule.chi(&s)).exp() - c).collect(),
            Err(_) => vec![f64::INFINITY; data.len()],
        }
    };
    let names: Vec<(&str, &str)> = NoiseParams::NAMES.iter().map(|n| (*n, "rad/s")).collect();
    // exp(ln x) need not round-trip, so test the start point as given
    if sum_sq(&residuals(&x0)) == 0.0 {
        let cov = covariance_diag(&residuals, &x0);
        let parameters = names
            .iter()
            .zip(x0)
            .zip(&cov)
            .map(|((&(name, unit), value), &variance)| Parameter { name: name.into(), value, unit: unit.into(), variance })
            .collect();
        return Ok(FitResult { parameters, residual_norm: 0.0, covariance_diag: cov, converged: true, iterations: 0 });
    }
    let mut log0: Vec<f64> = x0.iter().map(|v| v.ln()).collect();
    // The cost has a narrow valley around the true Larmor frequency that is
    // only visible once the peak width is roughly right, so seed both from a
    // coarse log grid with the other parameters at their start values.
    let grid = |(lo, hi): (f64, f64), n: usize, k: usize| lo * (hi / lo).powf(k as f64 / (n - 1) as f64);
    let cells: Vec<(usize, usize)> =
        (0..SIGMA_SEED_POINTS).flat_map(|i| (0..LARMOR_SEED_POINTS).map(move |k| (i, k))).collect();
    let seed = cells
        .par_iter()
        .map(|&(i, k)| {
            let mut p = x0;
            p[1] = grid(bounds[1], SIGMA_SEED_POINTS, i);
            p[4] = grid(bounds[4], LARMOR_SEED_POINTS, k);
            (sum_sq(&residuals(&p)), p)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0));
    if let Some((cost, p)) = seed {
        if cost < sum_sq(&residuals(&x0)) {
            log0[1] = p[1].ln();
            log0[4] = p[4].ln();
        }
    }
    let lo: Vec<f64> = bounds.iter().map(|b| b.0.ln()).collect();
    let hi: Vec<f64> = bounds.iter().map(|b| b.1.ln()).collect();
    let nm = minimize(
        |lp: &[f64]| sum_sq(&residuals(&lp.iter().map(|v| v.exp()).collect::<Vec<_>>())),
        &log0,
        &lo,
        &hi,
        cfg,
    )?;
    let x: Vec<f64> = nm.x.iter().map(|v| v.exp()).collect();
    let cov = covariance_diag(&residuals, &x);
    Ok(FitResult::assemble(&names, &x, nm.value.sqrt(), cov, &nm))
}

/// Fits `exp(−(t/T)^p)` to `(time, coherence)` pairs; `fixed_p` pins the
/// exponent.
pub fn fit_envelope(points: &[(f64, f64)], fixed_p: Option<f64>, cfg: NmConfig) -> Result<FitResult> {
    if points.len() < 4 {
        return Err(Error::input("envelope fit needs at least four points"));
    }
    if let Some(&(t, c)) = points.iter().find(|(t, c)| !(t.is_finite() && *t > 0.0 && *c > 0.0 && *c <= 1.0)) {
        return Err(Error::input(format!("envelope point ({t}, {c}) needs t > 0 and coherence in (0, 1]")));
    }
    if let Some(p) = fixed_p {
        if !(p > 0.0 && p <= 4.0) {
            return Err(Error::input("fixed exponent must lie in (0, 4]"));
        }
    }
    let c0 = points[0].1;
    if points.iter().all(|&(_, c)| (c - c0).abs() <= 1e-12 * c0) {
        return Err(Error::Fit("degenerate envelope data: all coherence values are equal".into()));
    }
    let t_min = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let t_max = points.iter().map(|p| p.0).fold(0.0, f64::max);
    // start from the 1/e crossing, linearizing ln(−ln C) = p·ln t − p·ln T
    let lin: Vec<(f64, f64)> = points.iter().filter(|p| p.1 < 1.0).map(|&(t, c)| (t.ln(), (-c.ln()).ln())).collect();
    let (mut p_start, mut t_start) = (1.0, (t_min * t_max).sqrt());
    if lin.len() >= 2 {
        let n = lin.len() as f64;
        let mx = lin.iter().map(|v| v.0).sum::<f64>() / n;
        let my = lin.iter().map(|v| v.1).sum::<f64>() / n;
        let sxx: f64 = lin.iter().map(|v| (v.0 - mx).powi(2)).sum();
        let sxy: f64 = lin.iter().map(|v| (v.0 - mx) * (v.1 - my)).sum();
        if sxx > 0.0 {
            let slope = sxy / sxx;
            if slope.is_finite() && slope > 0.0 {
                p_start = slope.clamp(0.1, 4.0);
                t_start = (mx - my / slope).exp();
            }
        }
    }
    let p_start = fixed_p.unwrap_or(p_start);
    let (t_lo, t_hi) = ((t_min / 1e3).ln(), (t_max * 1e6).ln());
    let t_start = t_start.ln().clamp(t_lo, t_hi);

    let model = |x: &[f64]| -> Vec<f64> {
        let (t_env, p) = (x[0], x[1]);
        points.iter().map(|&(t, c)| (-(t / t_env).powf(p)).exp() - c).collect()
    };
    let nm = match fixed_p {
        Some(p) => minimize(|x: &[f64]| sum_sq(&model(&[x[0].exp(), p])), &[t_start], &[t_lo], &[t_hi], cfg)?,
        None => minimize(
            |x: &[f64]| sum_sq(&model(&[x[0].exp(), x[1]])),
            &[t_start, p_start],
            &[t_lo, 0.05],
            &[t_hi, 4.0],
            cfg,
        )?,
    };
    let t_fit = nm.x[0].exp();
    let p_fit = fixed_p.unwrap_or_else(|| nm.x[1]);
    let (x, cov, names): (Vec<f64>, Vec<Option<f64>>, Vec<(&str, &str)>) = match fixed_p {
        Some(p) => {
            let cov = covariance_diag(&|x: &[f64]| model(&[x[0], p]), &[t_fit]);
            (vec![t_fit, p], vec![cov[0], Some(0.0)], vec![("T", "s"), ("p", "")])
        }
        None => {
            let cov = covariance_diag(&model, &[t_fit, p_fit]);
            (vec![t_fit, p_fit], cov, vec![("T", "s"), ("p", "")])
        }
    };
    Ok(FitResult::assemble(&names, &x, nm.value.sqrt(), cov, &nm))
}

/// Local maxima of `y` ranked by topographic prominence; returns indices
/// whose prominence exceeds `min_prominence`.
fn prominent_peaks(y: &[f64], min_prominence: f64) -> Vec<usize> {
    let n = y.len();
    let mut peaks = Vec::new();
    for i in 0..n {
        let left_ok = i == 0 || y[i] > y[i - 1];
        let right_ok = i + 1 == n || y[i] >= y[i + 1];
        if !(left_ok && right_ok) {
            continue;
        }
        let mut left_min = y[i];
        let mut j = i;
        while j > 0 && y[j - 1] <= y[i] {
            j -= 1;
            left_min = left_min.min(y[j]);
        }
        let left_base = if j == 0 && y[0] <= y[i] { None } else { Some(left_min) };
        let mut right_min = y[i];
        let mut k = i;
        while k + 1 < n && y[k + 1] <= y[i] {
            k += 1;
            right_min = right_min.min(y[k]);
        }
        let right_base = if k + 1 == n { None } else { Some(right_min) };
        // at the ends of the record the missing side does not limit the peak
        let base = match (left_base, right_base) {
            (Some(a), Some(b)) => a.max(b),
            (Some(a), None) => a.max(right_min),
            (None, Some(b)) => b.max(left_min),
            (None, None) => left_min.min(right_min),
        };
        if y[i] - base > min_prominence {
            peaks.push(i);
        }
    }
    peaks
}

/// Number of comb terms used when the data span is short.
pub const DEFAULT_COMB_TERMS: usize = 7;

/// `exp(−(t/T₂)^p)·Σᵢ exp(−(t − i·t_l)²/2σ²)`
pub fn revival_comb(t: f64, t2: f64, p: f64, t_l: f64, sigma: f64, terms: usize) -> f64 {
    let comb: f64 = (0..terms).map(|i| (-(t - i as f64 * t_l).powi(2) / (2.0 * sigma * sigma)).exp()).sum();
    (-(t / t2).powf(p)).exp() * comb
}

/// Fits a Larmor revival comb to a Hahn-echo style decay.
pub fn fit_revival_comb(curve: &CoherenceCurve, cfg: NmConfig) -> Result<FitResult> {
    if curve.abscissa != Abscissa::Time {
        return Err(Error::input("revival fit needs a time-domain curve"));
    }
    let pts: Vec<(f64, f64)> = curve.points.iter().filter(|p| !p.flagged).map(|p| (p.x, p.coherence)).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let span = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max) - ys.iter().copied().fold(f64::INFINITY, f64::min);
    let peaks = prominent_peaks(&ys, 0.1 * span);
    if peaks.len() < 3 {
        return Err(Error::Fit(format!("found {} resolvable revivals, need at least 3", peaks.len())));
    }
    let times: Vec<f64> = peaks.iter().map(|&i| pts[i].0).collect();
    let mut gaps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    gaps.sort_by(f64::total_cmp);
    let t_l0 = gaps[gaps.len() / 2];
    let t_end = pts.last().unwrap().0;
    let terms = DEFAULT_COMB_TERMS.max((t_end / t_l0).ceil() as usize + 2);

    let model = |x: &[f64]| -> Vec<f64> {
        pts.iter().map(|&(t, c)| revival_comb(t, x[0], x[1], x[2], x[3], terms) - c).collect()
    };
    let t_span = t_end.max(t_l0);
    let lo = [(t_span / 100.0).ln(), 0.1, 0.5 * t_l0, t_l0 / 100.0];
    let hi = [(t_span * 1e9).ln(), 4.0, 1.5 * t_l0, t_l0];
    let x0 = [t_span.ln(), 1.0, t_l0, t_l0 / 8.0];
    let nm = minimize(|x: &[f64]| sum_sq(&model(&[x[0].exp(), x[1], x[2], x[3]])), &x0, &lo, &hi, cfg)?;
    let x = vec![nm.x[0].exp(), nm.x[1], nm.x[2], nm.x[3]];
    let cov = covariance_diag(&model, &x);
    let names = [("T2", "s"), ("p", ""), ("t_larmor", "s"), ("sigma_revival", "s")];
    Ok(FitResult::assemble(&names, &x, nm.value.sqrt(), cov, &nm))
}

/// Fits `A·exp(−(f − c)²/2w²) + B` to the valid points of a spectrum
/// within `window` (Hz). Reports the center and 1σ width in Hz.
///
/// Amplitude and offset enter linearly and are solved exactly for each
/// trial `(c, w)`; the search runs in coordinates relative to the first
/// point of the window, which makes the fit location-equivariant.
pub fn fit_gaussian_peak(spectrum: &ReconstructedSpectrum, window: (f64, f64), cfg: NmConfig) -> Result<FitResult> {
    let (f_lo, f_hi) = window;
    if !(f_lo < f_hi) {
        return Err(Error::input("window must satisfy low < high"));
    }
    let pts: Vec<(f64, f64)> = spectrum
        .points
        .iter()
        .filter(|p| p.flag == PointFlag::Ok)
        .map(|p| (p.omega / (2.0 * PI), p.s))
        .filter(|&(f, _)| f >= f_lo && f <= f_hi)
        .collect();
    fit_gaussian_samples(&pts, cfg)
}

/// [`fit_gaussian_peak`] on raw `(frequency, value)` samples in ascending order.
pub fn fit_gaussian_samples(pts: &[(f64, f64)], cfg: NmConfig) -> Result<FitResult> {
    if pts.len() < 5 {
        return Err(Error::NoPeak(format!("{} points in window, need at least 5", pts.len())));
    }
    let imax = (0..pts.len()).max_by(|&a, &b| pts[a].1.total_cmp(&pts[b].1)).unwrap();
    if imax == 0 || imax + 1 == pts.len() {
        return Err(Error::NoPeak("maximum sits at the window edge".into()));
    }
    let f_ref = pts[0].0;
    let local: Vec<(f64, f64)> = pts.iter().map(|&(f, y)| (f - f_ref, y)).collect();
    let width = local.last().unwrap().0;
    let min_gap = local.windows(2).map(|w| w[1].0 - w[0].0).fold(f64::INFINITY, f64::min);

    // best (A, B) for fixed shape; returns residuals
    let project = |c: f64, w: f64| -> (f64, f64, Vec<f64>) {
        let g: Vec<f64> = local.iter().map(|&(f, _)| (-(f - c).powi(2) / (2.0 * w * w)).exp()).collect();
        let n = g.len() as f64;
        let (sg, sy) = (g.iter().sum::<f64>(), local.iter().map(|p| p.1).sum::<f64>());
        let sgg: f64 = g.iter().map(|v| v * v).sum();
        let sgy: f64 = g.iter().zip(&local).map(|(g, p)| g * p.1).sum();
        let det = n * sgg - sg * sg;
        let (a, b) = if det.abs() > 1e-300 { ((n * sgy - sg * sy) / det, (sgg * sy - sg * sgy) / det) } else { (0.0, sy / n) };
        let r = g.iter().zip(&local).map(|(g, p)| a * g + b - p.1).collect();
        (a, b, r)
    };
    let lo = [0.0, (0.25 * min_gap).max(1e-12 * width)];
    let hi = [width, 2.0 * width];
    let x0 = [local[imax].0, (0.25 * width).clamp(lo[1], hi[1])];
    let nm = minimize(|x: &[f64]| sum_sq(&project(x[0], x[1]).2), &x0, &lo, &hi, cfg)?;
    let (c, w) = (nm.x[0], nm.x[1]);
    let (a, b, _) = project(c, w);
    if !(a > 0.0) {
        return Err(Error::NoPeak("best-fit amplitude is not positive".into()));
    }
    let full = |x: &[f64]| -> Vec<f64> {
        local.iter().map(|&(f, y)| x[2] * (-(f - x[0]).powi(2) / (2.0 * x[1] * x[1])).exp() + x[3] - y).collect()
    };
    let cov = covariance_diag(&full, &[c, w, a, b]);
    let names = [("center", "Hz"), ("width", "Hz"), ("amplitude", "rad/s"), ("offset", "rad/s")];
    Ok(FitResult::assemble(&names, &[f_ref + c, w, a, b], nm.value.sqrt(), cov, &nm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::{linspace, logspace};
    use crate::forward::{synth_cpmg_family, CurvePoint, Provenance, Sampling};
    use crate::forward::ChiRule;
    use crate::reconstruct::{Method, SpectrumPoint};
    use proptest::prelude::*;

    fn gaussian_spectrum(freqs: &[f64], c: f64, w: f64, a: f64, b: f64) -> ReconstructedSpectrum {
        let points: Vec<SpectrumPoint> = freqs
            .iter()
            .map(|&f| SpectrumPoint {
                omega: 2.0 * PI * f,
                s: a * (-(f - c).powi(2) / (2.0 * w * w)).exp() + b,
                uncertainty: 0.0,
                flag: PointFlag::Ok,
            })
            .collect();
        ReconstructedSpectrum { method: Method::GdyscoDirect, raw: points.clone(), points, bins: None, warnings: vec![] }
    }

    #[test]
    fn exact_gaussian_recovered() {
        let f = linspace(40e3, 90e3, 61);
        let s = gaussian_spectrum(&f, 62.4e3, 9.3e3, 3e3, 150.0);
        let r = fit_gaussian_peak(&s, (40e3, 90e3), NmConfig::default()).unwrap();
        let v = r.values();
        for (got, want) in v.iter().zip([62.4e3, 9.3e3, 3e3, 150.0]) {
            assert!((got / want - 1.0).abs() < 1e-9, "{got} vs {want}");
        }
        assert!(r.converged);
    }

    #[test]
    fn monotone_window_has_no_peak() {
        let f = linspace(1e3, 2e3, 20);
        let s = gaussian_spectrum(&f, 5e3, 1e3, 1.0, 0.0);
        assert!(matches!(fit_gaussian_peak(&s, (1e3, 2e3), NmConfig::default()), Err(Error::NoPeak(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn peak_fit_is_location_equivariant(k in 1u32..64, noise in 0.0f64..0.2) {
            // shifts by whole multiples of 1024 Hz keep the local coordinates bit-identical
            let delta = 1024.0 * k as f64;
            let f: Vec<f64> = (0..50).map(|i| 40e3 + 1000.0 * i as f64).collect();
            let mut s = gaussian_spectrum(&f, 63e3, 8e3, 2e3, 100.0);
            for (i, p) in s.points.iter_mut().enumerate() {
                p.s *= 1.0 + noise * ((i * 7919) % 13) as f64 / 13.0;
            }
            let mut shifted = s.clone();
            for p in &mut shifted.points {
                p.omega = 2.0 * PI * (p.omega / (2.0 * PI) + delta);
            }
            let pts = |s: &ReconstructedSpectrum| -> Vec<(f64, f64)> {
                s.points.iter().map(|p| (p.omega / (2.0 * PI), p.s)).collect()
            };
            let a = fit_gaussian_samples(&pts(&s), NmConfig::default()).unwrap();
            let b = fit_gaussian_samples(&pts(&shifted), NmConfig::default()).unwrap();
            let shift = b.get("center").unwrap() - a.get("center").unwrap();
            prop_assert!((shift - delta).abs() < 1e-9 * a.get("width").unwrap(), "{shift} vs {delta}");
        }
    }

    #[test]
    fn envelope_exact_recovery() {
        let pts: Vec<(f64, f64)> = logspace(1e-5, 5e-3, 30).into_iter().map(|t| (t, (-(t / 1e-3).powf(1.5)).exp())).collect();
        let r = fit_envelope(&pts, None, NmConfig::default()).unwrap();
        assert!(r.residual_norm < 1e-9, "{}", r.residual_norm);
        assert!((r.get("T").unwrap() / 1e-3 - 1.0).abs() < 1e-6);
        assert!((r.get("p").unwrap() - 1.5).abs() < 1e-6);
    }

    #[test]
    fn envelope_with_fixed_exponent() {
        let pts: Vec<(f64, f64)> = linspace(1e-5, 2e-3, 25).into_iter().map(|t| (t, (-t / 488e-6).exp())).collect();
        let r = fit_envelope(&pts, Some(1.0), NmConfig::default()).unwrap();
        assert!((r.get("T").unwrap() / 488e-6 - 1.0).abs() < 1e-6);
        assert_eq!(r.get("p"), Some(1.0));
    }

    #[test]
    fn envelope_rejects_flat_and_short_data() {
        let flat = vec![(1e-6, 0.5), (2e-6, 0.5), (3e-6, 0.5), (4e-6, 0.5)];
        assert!(matches!(fit_envelope(&flat, None, NmConfig::default()), Err(Error::Fit(_))));
        assert!(fit_envelope(&flat[..3], None, NmConfig::default()).is_err());
        assert!(fit_envelope(&[(1e-6, 1.2), (2e-6, 0.5), (3e-6, 0.4), (4e-6, 0.3)], None, NmConfig::default()).is_err());
    }

    fn comb_curve(t2: f64, p: f64, t_l: f64, sigma: f64, t_max: f64) -> CoherenceCurve {
        let points = linspace(1e-7, t_max, 400)
            .into_iter()
            .map(|t| CurvePoint { x: t, coherence: revival_comb(t, t2, p, t_l, sigma, 40), uncertainty: 0.0, flagged: false })
            .collect();
        CoherenceCurve::new(Abscissa::Time, points, None, Provenance::Synthetic { seed: None }).unwrap()
    }

    #[test]
    fn revival_spacing_recovered() {
        let t_l = 1.0 / 62.5e3;
        let c = comb_curve(488e-6, 1.3, t_l, 2.5e-6, 100e-6);
        let r = fit_revival_comb(&c, NmConfig::default()).unwrap();
        assert!((r.get("t_larmor").unwrap() / t_l - 1.0).abs() < 0.01, "{:?}", r.values());
    }

    #[test]
    fn revival_comb_without_decay() {
        let t_l = 16e-6;
        let c = comb_curve(1e6, 1.0, t_l, 2e-6, 90e-6);
        let r = fit_revival_comb(&c, NmConfig::default()).unwrap();
        assert!(r.residual_norm < 1e-6, "{}", r.residual_norm);
    }

    #[test]
    fn too_few_revivals() {
        let c = comb_curve(1e6, 1.0, 16e-6, 2e-6, 20e-6);
        assert!(matches!(fit_revival_comb(&c, NmConfig::default()), Err(Error::Fit(_))));
    }

    #[test]
    fn noise_fit_fixed_point() {
        let truth = NoiseParams::experiment();
        let s = truth.spectrum().unwrap();
        let ff: Vec<_> = logspace(5e-6, 1e-3, 30);
        let pts = ff
            .iter()
            .map(|&t| CurvePoint {
                x: t,
                coherence: (-ChiRule::new(&cpmg_ff(8, t, &[]).unwrap(), s.compact_extent()).chi(&s)).exp(),
                uncertainty: 0.0,
                flagged: false,
            })
            .collect();
        let curve = CoherenceCurve::new(Abscissa::Time, pts, None, Provenance::Synthetic { seed: None }).unwrap();
        let r = fit_noise_params(&curve, 8, truth, None, NmConfig::default()).unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.residual_norm, 0.0);
        assert!(r.converged);
    }

    #[test]
    fn noise_fit_rejects_wrong_sequence() {
        let s = NoiseParams::experiment().spectrum().unwrap();
        let curves = synth_cpmg_family(&s, &[4], &[logspace(5e-6, 1e-3, 10)], Sampling::Dense).unwrap();
        assert!(fit_noise_params(&curves[0], 8, NoiseParams::experiment(), None, NmConfig::default()).is_err());
    }
}
