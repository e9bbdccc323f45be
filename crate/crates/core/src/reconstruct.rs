//! Spectrum reconstruction from coherence data.
//!
//! - [`cpmg_sd`]: spectral decomposition of CPMG curves. A first-order
//!   estimate treats the main filter lobe as a rectangle of area `Σ`; the
//!   contributions of higher harmonics are then subtracted point by point,
//!   from the highest sensing frequency downwards.
//! - [`direct_extract`]: delta-function inversion of DYSCO/gDYSCO sweeps.
//! - [`dynamic_range`]: detectable spectral range for a given measurement
//!   uncertainty.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{analytic_ff, peak_stats, FilterFunction, Kernel, PeakStats};
use crate::forward::{Abscissa, CoherenceCurve};
use crate::quad::{GL5_W, GL5_X};
use crate::sequences::{Family, SequenceSpec};

/// Segments narrower than this (in `ωt`) are integrated directly.
const GL_SPLIT: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    CpmgSd,
    DyscoDirect,
    GdyscoDirect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointFlag {
    Ok,
    /// Coherence outside `(0, 1 + 3·uncertainty]` (or, for direct
    /// extraction, at or below zero): saturated or unphysical, excluded.
    Clipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumPoint {
    /// rad/s
    pub omega: f64,
    /// rad/s
    pub s: f64,
    /// rad/s
    pub uncertainty: f64,
    pub flag: PointFlag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bins {
    /// Log-spaced bin edges, rad/s.
    pub edges: Vec<f64>,
    /// Points per non-empty bin, aligned with the binned output.
    pub counts: Vec<usize>,
    /// Within-bin standard deviation of `S`, rad/s.
    pub spread: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructedSpectrum {
    pub method: Method,
    /// Output samples: bin averages for the SD, one per frequency otherwise.
    pub points: Vec<SpectrumPoint>,
    /// Per-measurement estimates before binning, in ascending `omega`.
    pub raw: Vec<SpectrumPoint>,
    pub bins: Option<Bins>,
    pub warnings: Vec<String>,
}

impl ReconstructedSpectrum {
    /// Points that passed the range checks.
    pub fn valid_points(&self) -> impl Iterator<Item = &SpectrumPoint> {
        self.points.iter().filter(|p| p.flag == PointFlag::Ok)
    }

    /// Four-column CSV `omega_rad_s,s_rad_s,uncertainty_rad_s,flag`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("omega_rad_s,s_rad_s,uncertainty_rad_s,flag\n");
        for p in &self.points {
            let flag = match p.flag {
                PointFlag::Ok => "ok",
                PointFlag::Clipped => "clipped",
            };
            out.push_str(&format!("{},{},{},{}\n", p.omega, p.s, p.uncertainty, flag));
        }
        out
    }

    /// Metadata sidecar: method, bins and warnings.
    pub fn metadata(&self) -> serde_json::Value {
        serde_json::json!({ "method": self.method, "bins": self.bins, "warnings": self.warnings })
    }
}

/// Source of filter functions for the decomposition.
pub trait FfProvider: Sync {
    fn filter(&self, spec: &SequenceSpec) -> Result<FilterFunction>;
}

/// Closed-form filter functions.
#[derive(Debug, Clone, Copy, Default)]
pub struct AnalyticFf;

impl FfProvider for AnalyticFf {
    fn filter(&self, spec: &SequenceSpec) -> Result<FilterFunction> {
        analytic_ff(spec, &[])
    }
}

/// How the part of the filter below the main lobe is handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LowerSide {
    /// Ignore it: only harmonics above the lobe are subtracted.
    Ignore,
    /// First pass folds the lower mass into the gain; a second pass
    /// subtracts it using the first-pass spectrum.
    TwoPass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdConfig {
    pub bin_count: usize,
    pub lower_side: LowerSide,
    /// Curves are divided by the mean of this many shortest-time points;
    /// zero disables the rescaling.
    pub rescale_points: usize,
}

impl Default for SdConfig {
    fn default() -> Self {
        SdConfig { bin_count: 40, lower_side: LowerSide::TwoPass, rescale_points: 3 }
    }
}

/// Cumulative integrals of a time-normalized filter `φ(x) = FF(x; t = 1)`,
/// `G0(x) = ∫₀ˣ φ` and `G1(x) = ∫₀ˣ x'φ`, tabulated for cubic Hermite
/// interpolation. Valid for sequences whose shape does not change with
/// duration, so that `FF(ω; t) = t·φ(ωt)`.
struct ScaledTable {
    kernel: Kernel,
    h: f64,
    g0: Vec<f64>,
    g1: Vec<f64>,
    d0: Vec<f64>,
    energy: f64,
    stats: PeakStats,
}

const TABLE_STEP: f64 = 0.25;
const TABLE_MAX_NODES: usize = 400_000;

impl ScaledTable {
    fn build(ff: &FilterFunction, x_need: f64) -> Result<Self> {
        let kernel = ff.kernel().clone();
        let stats = peak_stats(ff)?;
        let h = TABLE_STEP;
        let nodes = ((x_need / h).ceil() as usize + 2).clamp(64, TABLE_MAX_NODES);
        let pieces: Vec<(f64, f64)> = (0..nodes - 1)
            .into_par_iter()
            .map(|i| {
                let c = (i as f64 + 0.5) * h;
                let mut a = 0.0;
                let mut b = 0.0;
                for (x, w) in GL5_X.iter().zip(GL5_W) {
                    let xx = c + 0.5 * h * x;
                    let v = kernel.eval(xx);
                    a += w * v;
                    b += w * xx * v;
                }
                (0.5 * h * a, 0.5 * h * b)
            })
            .collect();
        let mut g0 = Vec::with_capacity(nodes);
        let mut g1 = Vec::with_capacity(nodes);
        g0.push(0.0);
        g1.push(0.0);
        for (a, b) in pieces {
            g0.push(g0.last().unwrap() + a);
            g1.push(g1.last().unwrap() + b);
        }
        let d0 = (0..nodes).map(|i| kernel.eval(i as f64 * h)).collect();
        Ok(ScaledTable { energy: kernel.jump_energy(), kernel, h, g0, g1, d0, stats })
    }

    fn x_max(&self) -> f64 {
        (self.g0.len() - 1) as f64 * self.h
    }

    fn hermite(&self, g: &[f64], deriv: impl Fn(usize) -> f64, x: f64) -> f64 {
        let i = ((x / self.h) as usize).min(g.len() - 2);
        let u = x / self.h - i as f64;
        let u2 = u * u;
        let u3 = u2 * u;
        let h00 = 2.0 * u3 - 3.0 * u2 + 1.0;
        let h10 = u3 - 2.0 * u2 + u;
        let h01 = -2.0 * u3 + 3.0 * u2;
        let h11 = u3 - u2;
        h00 * g[i] + h10 * self.h * deriv(i) + h01 * g[i + 1] + h11 * self.h * deriv(i + 1)
    }

    /// `∫₀ˣ φ`
    fn g0(&self, x: f64) -> f64 {
        let xm = self.x_max();
        if x <= xm {
            self.hermite(&self.g0, |i| self.d0[i], x)
        } else {
            self.g0[self.g0.len() - 1] + self.energy / PI * (1.0 / xm - 1.0 / x)
        }
    }

    /// `∫₀ˣ x'φ`
    fn g1(&self, x: f64) -> f64 {
        let xm = self.x_max();
        if x <= xm {
            self.hermite(&self.g1, |i| i as f64 * self.h * self.d0[i], x)
        } else {
            self.g1[self.g1.len() - 1] + self.energy / PI * (x / xm).ln()
        }
    }

    /// `∫_a^b Ŝ(ω)·FF(ω; t) dω` for `Ŝ` linear between `(a, sa)` and `(b, sb)`.
    fn linear_piece(&self, t: f64, a: f64, b: f64, sa: f64, sb: f64) -> f64 {
        if !(b > a) {
            return 0.0;
        }
        let (xa, xb) = (a * t, b * t);
        if xb - xa < GL_SPLIT {
            let c = 0.5 * (xa + xb);
            let hw = 0.5 * (xb - xa);
            let mut sum = 0.0;
            for (x, w) in GL5_X.iter().zip(GL5_W) {
                let xx = c + hw * x;
                let u = (xx - xa) / (xb - xa);
                sum += w * (sa + (sb - sa) * u) * self.kernel.eval(xx);
            }
            return hw * sum;
        }
        let m0 = self.g0(xb) - self.g0(xa);
        // ∫ (x − xa) φ dx
        let m1 = self.g1(xb) - self.g1(xa) - xa * m0;
        sa * m0 + (sb - sa) * m1 / (xb - xa)
    }
}

/// `∫_a^b Ŝ·FF dω` with `Ŝ` interpolated linearly through `nodes`
/// (ascending), held constant below the first node and zero above the last.
fn profile_integral(table: &ScaledTable, t: f64, nodes: &[(f64, f64)], a: f64, b: f64) -> f64 {
    if nodes.is_empty() || !(b > a) {
        return 0.0;
    }
    let (w_first, s_first) = nodes[0];
    let mut sum = 0.0;
    if a < w_first {
        let hi = b.min(w_first);
        sum += s_first * (table.g0(hi * t) - table.g0(a * t));
    }
    let start = nodes.partition_point(|n| n.0 <= a).saturating_sub(1);
    for pair in nodes[start..].windows(2) {
        let (w0, s0) = pair[0];
        let (w1, s1) = pair[1];
        if w0 >= b {
            break;
        }
        let lo = w0.max(a);
        let hi = w1.min(b);
        if hi > lo && w1 > w0 {
            let slope = (s1 - s0) / (w1 - w0);
            sum += table.linear_piece(t, lo, hi, s0 + slope * (lo - w0), s0 + slope * (hi - w0));
        }
    }
    sum
}

/// One CPMG measurement reduced to `χ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiPoint {
    pub n_pulses: u32,
    /// Total time, seconds.
    pub t: f64,
    pub chi: f64,
}

/// Spectral decomposition of CPMG coherence curves.
///
/// Every curve must carry a CPMG sequence template. Points with
/// `C ≤ 0` or `C > 1 + 3·uncertainty` are flagged and excluded.
pub fn cpmg_sd(curves: &[CoherenceCurve], provider: &dyn FfProvider, cfg: SdConfig) -> Result<ReconstructedSpectrum> {
    if curves.is_empty() {
        return Err(Error::input("no curves to decompose"));
    }
    let mut chi_points = Vec::new();
    let mut clipped = Vec::new();
    for curve in curves {
        if curve.abscissa != Abscissa::Time {
            return Err(Error::input("spectral decomposition needs time-domain curves"));
        }
        let n = curve.pulses().ok_or_else(|| Error::input("curve lacks a CPMG sequence template"))?;
        let ok: Vec<_> = curve.points.iter().filter(|p| !p.flagged && p.coherence > 0.0).collect();
        let reference = if cfg.rescale_points == 0 {
            1.0
        } else {
            let k = cfg.rescale_points.min(ok.len());
            if k == 0 {
                return Err(Error::input("curve has no valid points"));
            }
            ok[..k].iter().map(|p| p.coherence).sum::<f64>() / k as f64
        };
        for p in &curve.points {
            if p.flagged || p.coherence <= 0.0 {
                clipped.push((n, p.x));
            } else {
                chi_points.push(ChiPoint { n_pulses: n, t: p.x, chi: -(p.coherence / reference).ln() });
            }
        }
    }
    let mut out = sd_from_chi(&chi_points, provider, cfg)?;
    if !clipped.is_empty() {
        let mut raw = out.raw;
        for (n, t) in clipped {
            let omega = nominal_omega0(provider, n, t)?;
            raw.push(SpectrumPoint { omega, s: 0.0, uncertainty: 0.0, flag: PointFlag::Clipped });
        }
        raw.sort_by(|a, b| a.omega.total_cmp(&b.omega));
        out.raw = raw;
    }
    Ok(out)
}

fn nominal_omega0(provider: &dyn FfProvider, n: u32, t: f64) -> Result<f64> {
    let ff = provider.filter(&SequenceSpec::cpmg_with_duration(n, 1.0))?;
    Ok(peak_stats(&ff)?.omega0() / t)
}

struct Prepared {
    omega0: f64,
    half: f64,
    t: f64,
    chi: f64,
    table: usize,
}

/// Spectral decomposition from `χ` values directly. Linear in `χ`.
pub fn sd_from_chi(points: &[ChiPoint], provider: &dyn FfProvider, cfg: SdConfig) -> Result<ReconstructedSpectrum> {
    if points.is_empty() {
        return Err(Error::input("no valid points to decompose"));
    }
    if cfg.bin_count == 0 {
        return Err(Error::input("bin_count must be positive"));
    }
    let mut ns: Vec<u32> = points.iter().map(|p| p.n_pulses).collect();
    ns.sort_unstable();
    ns.dedup();

    // the tables must reach the highest sensing frequency at the longest time
    let mut stats = Vec::new();
    for &n in &ns {
        let ff = provider.filter(&SequenceSpec::cpmg_with_duration(n, 1.0))?;
        stats.push((ff.clone(), peak_stats(&ff)?));
    }
    let omega_top = points
        .iter()
        .map(|p| stats[ns.binary_search(&p.n_pulses).unwrap()].1.omega0() / p.t)
        .fold(0.0, f64::max);
    let t_max = points.iter().map(|p| p.t).fold(0.0, f64::max);
    let tables: Vec<ScaledTable> = stats
        .iter()
        .map(|(ff, _)| ScaledTable::build(ff, 1.05 * omega_top * t_max))
        .collect::<Result<_>>()?;

    let mut prepared: Vec<Prepared> = points
        .iter()
        .map(|p| {
            let i = ns.binary_search(&p.n_pulses).unwrap();
            let s = &tables[i].stats;
            Prepared { omega0: s.omega0() / p.t, half: s.half_width_omega() / p.t, t: p.t, chi: p.chi, table: i }
        })
        .collect();
    prepared.sort_by(|a, b| b.omega0.total_cmp(&a.omega0));

    let first = sweep(&prepared, &tables, cfg.lower_side, None);
    let estimates = match cfg.lower_side {
        LowerSide::Ignore => first,
        LowerSide::TwoPass => {
            let mut asc: Vec<(f64, f64)> = prepared.iter().map(|p| p.omega0).zip(first).collect();
            asc.reverse();
            sweep(&prepared, &tables, cfg.lower_side, Some(&asc))
        }
    };

    let mut raw: Vec<SpectrumPoint> = prepared
        .iter()
        .zip(&estimates)
        .map(|(p, &s)| SpectrumPoint { omega: p.omega0, s, uncertainty: 0.0, flag: PointFlag::Ok })
        .collect();
    raw.reverse();
    let (binned, bins) = bin_log(&raw, cfg.bin_count);
    let mut warnings = Vec::new();
    let peak = binned.iter().map(|p| p.s).fold(0.0, f64::max);
    if let Some(top) = binned.last() {
        if peak > 0.0 && top.s > 0.1 * peak {
            warnings.push(format!(
                "insufficient high-frequency coverage: highest bin at {:.4e} rad/s still holds {:.0}% of the peak density",
                top.omega,
                100.0 * top.s / peak
            ));
        }
    }
    Ok(ReconstructedSpectrum { method: Method::CpmgSd, points: binned, raw, bins: Some(bins), warnings })
}

/// One highest-to-lowest pass. `previous` (ascending) is the spectrum of a
/// prior pass, used for the part of the filter below the main lobe.
fn sweep(pts: &[Prepared], tables: &[ScaledTable], lower: LowerSide, previous: Option<&[(f64, f64)]>) -> Vec<f64> {
    let mut done: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    let mut out = Vec::with_capacity(pts.len());
    for p in pts {
        let table = &tables[p.table];
        let gain = table.stats.gain;
        let asc: Vec<(f64, f64)> = done.iter().rev().copied().collect();
        let upper = profile_integral(table, p.t, &asc, p.omega0 + p.half, f64::INFINITY);
        let measured = 2.0 * p.chi / p.t;
        let s = match (lower, previous) {
            (LowerSide::Ignore, _) => (measured - upper) / gain,
            (LowerSide::TwoPass, None) => {
                let lower_mass = table.g0((p.omega0 - p.half) * p.t);
                (measured - upper) / (gain + lower_mass)
            }
            (LowerSide::TwoPass, Some(prev)) => {
                let below = profile_integral(table, p.t, prev, 0.0, p.omega0 - p.half);
                (measured - upper - below) / gain
            }
        };
        done.push((p.omega0, s));
        out.push(s);
    }
    out
}

/// Log-spaced binning: bin position is the geometric mean of its points,
/// value the mean and uncertainty the within-bin standard deviation.
fn bin_log(raw: &[SpectrumPoint], bin_count: usize) -> (Vec<SpectrumPoint>, Bins) {
    let valid: Vec<&SpectrumPoint> = raw.iter().filter(|p| p.flag == PointFlag::Ok).collect();
    let lo = valid.iter().map(|p| p.omega).fold(f64::INFINITY, f64::min);
    let hi = valid.iter().map(|p| p.omega).fold(0.0, f64::max);
    let (l0, l1) = (lo.ln(), hi.ln() + 1e-12);
    let edges: Vec<f64> = (0..=bin_count).map(|i| (l0 + (l1 - l0) * i as f64 / bin_count as f64).exp()).collect();
    let mut groups: Vec<Vec<&SpectrumPoint>> = vec![Vec::new(); bin_count];
    for p in valid {
        let i = (((p.omega.ln() - l0) / (l1 - l0) * bin_count as f64) as usize).min(bin_count - 1);
        groups[i].push(p);
    }
    let mut points = Vec::new();
    let mut counts = Vec::new();
    let mut spread = Vec::new();
    for g in groups.into_iter().filter(|g| !g.is_empty()) {
        let n = g.len() as f64;
        let omega = (g.iter().map(|p| p.omega.ln()).sum::<f64>() / n).exp();
        let mean = g.iter().map(|p| p.s).sum::<f64>() / n;
        let sd = if g.len() > 1 { (g.iter().map(|p| (p.s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
        points.push(SpectrumPoint { omega, s: mean, uncertainty: sd, flag: PointFlag::Ok });
        counts.push(g.len());
        spread.push(sd);
    }
    (points, Bins { edges, counts, spread })
}

/// Median of the top decile of coherence values: the off-resonance plateau.
pub fn plateau_contrast(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| b.total_cmp(a));
    let k = v.len().div_ceil(10);
    let top = &mut v[..k];
    top.sort_by(f64::total_cmp);
    Some(if k % 2 == 1 { top[k / 2] } else { 0.5 * (top[k / 2 - 1] + top[k / 2]) })
}

/// Direct inversion `S(ω₀) = −2·ln(C/a)/(t·Σ)` of a DYSCO or gDYSCO
/// frequency sweep, with `a` estimated by [`plateau_contrast`] and `Σ` from
/// the template's filter at the median sweep frequency.
pub fn direct_extract(curve: &CoherenceCurve, template: &SequenceSpec) -> Result<ReconstructedSpectrum> {
    if curve.abscissa != Abscissa::ModFrequency {
        return Err(Error::input("direct extraction needs a modulation-frequency curve"));
    }
    let method = match template.family {
        Family::Dysco => Method::DyscoDirect,
        Family::Gdysco => Method::GdyscoDirect,
        _ => return Err(Error::input("direct extraction needs a DYSCO or gDYSCO template")),
    };
    if curve.is_empty() {
        return Err(Error::input("empty curve"));
    }
    let xs = curve.xs();
    let f_mid = xs[xs.len() / 2];
    let stats = peak_stats(&analytic_ff(&template.clone().with_mod_frequency(f_mid), &[])?.with_default_grid()?)?;
    let gain = stats.gain;
    let t = template.duration;
    let a = plateau_contrast(&curve.coherences()).filter(|a| *a > 0.0).ok_or_else(|| Error::input("no positive coherence values"))?;
    let raw: Vec<SpectrumPoint> = curve
        .points
        .iter()
        .map(|p| {
            let c = p.coherence / a;
            let above = c > 1.0 + 3.0 * p.uncertainty / a;
            if p.coherence <= 0.0 || above {
                SpectrumPoint { omega: 2.0 * PI * p.x, s: 0.0, uncertainty: 0.0, flag: PointFlag::Clipped }
            } else {
                let s = -2.0 * c.ln() / (t * gain);
                // first-order propagation of the coherence uncertainty
                let u = 2.0 * p.uncertainty / (p.coherence * t * gain);
                SpectrumPoint { omega: 2.0 * PI * p.x, s, uncertainty: u, flag: PointFlag::Ok }
            }
        })
        .collect();
    Ok(ReconstructedSpectrum { method, points: raw.clone(), raw, bins: None, warnings: Vec::new() })
}

/// Which contrast enters the lower bound of the DYSCO range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastReading {
    /// `S_min ∝ −ln(a − ε)`, `S_max ∝ −ln ε`, as printed.
    Literal,
    /// `S_min ∝ −ln((a − ε)/a)`, `S_max ∝ −ln(ε/a)`: coherence measured
    /// relative to the contrast.
    Normalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicRange {
    pub s_min: f64,
    pub s_max: f64,
    pub gain: f64,
}

impl DynamicRange {
    pub fn ratio(&self) -> f64 {
        self.s_max / self.s_min
    }
}

/// Smallest and largest detectable spectral density for measurement
/// uncertainty `epsilon`. `a_max` is the maximal contrast (ignored for CPMG).
pub fn dynamic_range(template: &SequenceSpec, epsilon: f64, a_max: f64, reading: ContrastReading) -> Result<DynamicRange> {
    if !(epsilon > 0.0 && epsilon < a_max && a_max <= 1.0) {
        return Err(Error::input(format!("need 0 < epsilon < a_max <= 1, got epsilon={epsilon}, a_max={a_max}")));
    }
    let ff = analytic_ff(template, &[])?.with_default_grid()?;
    let gain = peak_stats(&ff)?.gain;
    let k = -2.0 / (template.duration * gain);
    let (lo, hi) = if template.family.is_pulsed() {
        ((1.0 - epsilon).ln(), epsilon.ln())
    } else {
        match reading {
            ContrastReading::Literal => ((a_max - epsilon).ln(), epsilon.ln()),
            ContrastReading::Normalized => (((a_max - epsilon) / a_max).ln(), (epsilon / a_max).ln()),
        }
    };
    Ok(DynamicRange { s_min: k * lo, s_max: k * hi, gain })
}
