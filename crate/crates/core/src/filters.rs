//! Filter functions and their peak statistics.
//!
//! Normalization: with `Y(ω) = ∫ s(t) e^{−iωt} dt` the filter function is
//! `FF(ω) = |Y(ω)|² / (π t)`, so `∫₀^∞ FF dω` equals the mean square of the
//! sensitivity (1 for CPMG) and `χ = (t/2) ∫₀^∞ S(ω) FF(ω) dω`.
//!
//! Every [`FilterFunction`] carries the kernel it was tabulated from, so
//! integrals and peak statistics are computed on the exact function rather
//! than on the grid.

use std::f64::consts::{LN_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{self, Estimate, Tolerance, GL5_W, GL5_X};
use crate::sequences::{Family, Interpolation, SensitivityTrace, SequenceSpec};

/// Relative nudge used at removable singularities of the CPMG closed form.
const POLE_NUDGE: f64 = 1e-9;

/// Exact integration extends to this multiple of the nominal sensing
/// frequency; beyond it the averaged asymptotic envelope is used.
const EXACT_SPAN: f64 = 64.0;

/// Largest number of initial panels used for one integral.
const MAX_INITIAL_PANELS: f64 = 20_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FfSource {
    AnalyticCpmg,
    AnalyticDysco,
    AnalyticGdysco,
    Numeric,
}

/// Exact representation of a filter function.
#[derive(Debug, Clone, PartialEq)]
pub enum Kernel {
    /// Closed-form CPMG-N.
    Cpmg { n: u32, duration: f64 },
    /// `a·sin(ω₀t)` on `[0, t]`.
    Dysco { omega0: f64, duration: f64, amplitude: f64 },
    /// `a·sin(ω₀t)·exp(−(t − T/2)²/2σ²)`, transformed without truncation.
    Gdysco { omega0: f64, sigma: f64, duration: f64, amplitude: f64 },
    /// Piecewise constant sensitivity with `levels[k]` on `[edges[k], edges[k+1])`.
    Steps { edges: Vec<f64>, levels: Vec<f64> },
    /// Smooth sampled trace: interval start times and per-node weights of a
    /// 5-point Gauss rule applied to the cubic interpolant.
    Sampled { starts: Vec<f64>, weights: Vec<[f64; 5]>, dt: f64, duration: f64, edge_energy: f64 },
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

fn cpmg_closed_form(n: u32, t: f64, omega: f64) -> f64 {
    let nf = n as f64;
    let x = omega * t;
    let c = (x / (2.0 * nf)).cos();
    let s4 = (x / (4.0 * nf)).sin().powi(4);
    let parity = if n % 2 == 0 { (x / 2.0).sin().powi(2) } else { (x / 2.0).cos().powi(2) };
    16.0 / (PI * t * omega * omega) * s4 * parity / (c * c)
}

impl Kernel {
    pub fn duration(&self) -> f64 {
        match self {
            Kernel::Cpmg { duration, .. }
            | Kernel::Dysco { duration, .. }
            | Kernel::Gdysco { duration, .. }
            | Kernel::Sampled { duration, .. } => *duration,
            Kernel::Steps { edges, .. } => *edges.last().unwrap_or(&0.0),
        }
    }

    /// `FF(ω)` in seconds.
    pub fn eval(&self, omega: f64) -> f64 {
        let omega = omega.abs();
        match self {
            Kernel::Cpmg { n, duration } => {
                if omega == 0.0 {
                    return 0.0;
                }
                let c = (omega * duration / (2.0 * *n as f64)).cos();
                if c.abs() < 1e-7 {
                    let lo = cpmg_closed_form(*n, *duration, omega * (1.0 - POLE_NUDGE));
                    let hi = cpmg_closed_form(*n, *duration, omega * (1.0 + POLE_NUDGE));
                    0.5 * (lo + hi)
                } else {
                    cpmg_closed_form(*n, *duration, omega)
                }
            }
            _ => {
                let (re, im) = self.transform(omega);
                (re * re + im * im) / (PI * self.duration())
            }
        }
    }

    /// Fourier transform `Y(ω)` of the sensitivity (not available in closed
    /// form for the CPMG kernel, which is rebuilt as steps).
    pub fn transform(&self, omega: f64) -> (f64, f64) {
        match self {
            Kernel::Cpmg { n, duration } => {
                let spec = SequenceSpec::cpmg_with_duration(*n, *duration);
                let (edges, levels) = spec.steps().expect("pulsed spec has steps");
                Kernel::Steps { edges, levels }.transform(omega)
            }
            Kernel::Dysco { omega0, duration, amplitude } => {
                let t = *duration;
                let dm = omega0 - omega;
                let dp = omega0 + omega;
                let am = t * sinc(dm * t / 2.0);
                let ap = t * sinc(dp * t / 2.0);
                // (a/2i)·[am·e^{i dm t/2} − ap·e^{−i dp t/2}]
                let re = am * (dm * t / 2.0).cos() - ap * (dp * t / 2.0).cos();
                let im = am * (dm * t / 2.0).sin() + ap * (dp * t / 2.0).sin();
                (0.5 * amplitude * im, -0.5 * amplitude * re)
            }
            Kernel::Gdysco { omega0, sigma, duration, amplitude } => {
                let t = *duration;
                let dm = omega0 - omega;
                let dp = omega0 + omega;
                let norm = sigma * (2.0 * PI).sqrt();
                let am = norm * (-0.5 * dm * dm * sigma * sigma).exp();
                let ap = norm * (-0.5 * dp * dp * sigma * sigma).exp();
                let re = am * (dm * t / 2.0).cos() - ap * (dp * t / 2.0).cos();
                let im = am * (dm * t / 2.0).sin() + ap * (dp * t / 2.0).sin();
                (0.5 * amplitude * im, -0.5 * amplitude * re)
            }
            Kernel::Steps { edges, levels } => {
                let mut re = 0.0;
                let mut im = 0.0;
                for (k, level) in levels.iter().enumerate() {
                    let width = edges[k + 1] - edges[k];
                    let mid = 0.5 * (edges[k + 1] + edges[k]);
                    let amp = level * width * sinc(omega * width / 2.0);
                    re += amp * (omega * mid).cos();
                    im -= amp * (omega * mid).sin();
                }
                (re, im)
            }
            Kernel::Sampled { starts, weights, dt, .. } => {
                let mut local = [(0.0, 0.0); 5];
                for (j, x) in GL5_X.iter().enumerate() {
                    let off = 0.5 * dt * (1.0 + x);
                    local[j] = ((omega * off).cos(), -(omega * off).sin());
                }
                let (step_c, step_s) = ((omega * dt).cos(), -(omega * dt).sin());
                let (mut pc, mut ps) = ((omega * starts[0]).cos(), -(omega * starts[0]).sin());
                let mut re = 0.0;
                let mut im = 0.0;
                for (i, w) in weights.iter().enumerate() {
                    if i % 64 == 0 {
                        // refresh the running phase to keep rounding bounded
                        pc = (omega * starts[i]).cos();
                        ps = -(omega * starts[i]).sin();
                    }
                    let mut lr = 0.0;
                    let mut li = 0.0;
                    for j in 0..5 {
                        lr += w[j] * local[j].0;
                        li += w[j] * local[j].1;
                    }
                    re += pc * lr - ps * li;
                    im += pc * li + ps * lr;
                    let npc = pc * step_c - ps * step_s;
                    ps = pc * step_s + ps * step_c;
                    pc = npc;
                }
                (re, im)
            }
        }
    }

    /// Characteristic sensing frequency, rad/s.
    pub fn nominal_omega(&self) -> f64 {
        match self {
            Kernel::Cpmg { n, duration } => PI * *n as f64 / duration,
            Kernel::Dysco { omega0, .. } | Kernel::Gdysco { omega0, .. } => *omega0,
            Kernel::Steps { levels, edges } => {
                let flips = levels.windows(2).filter(|w| w[0] != w[1]).count().max(1);
                PI * flips as f64 / edges.last().unwrap_or(&1.0)
            }
            Kernel::Sampled { starts, weights, duration, .. } => {
                // zero crossings of the node weights give the dominant period
                let mut crossings = 0usize;
                let mut last = 0.0f64;
                for w in weights {
                    let v = w[2];
                    if v != 0.0 {
                        if last != 0.0 && v.signum() != last.signum() {
                            crossings += 1;
                        }
                        last = v;
                    }
                }
                let _ = starts;
                PI * crossings.max(1) as f64 / duration
            }
        }
    }

    /// Sum of squared jumps of `s(t)` (including the switch-on and switch-off
    /// edges). The filter function averages to `E/(π t ω²)` at high `ω`.
    pub fn jump_energy(&self) -> f64 {
        match self {
            Kernel::Cpmg { n, .. } => 2.0 + 4.0 * *n as f64,
            Kernel::Dysco { omega0, duration, amplitude } => (amplitude * (omega0 * duration).sin()).powi(2),
            Kernel::Gdysco { .. } => 0.0,
            Kernel::Steps { levels, .. } => {
                let first = levels.first().copied().unwrap_or(0.0);
                let last = levels.last().copied().unwrap_or(0.0);
                let inner: f64 = levels.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
                first * first + last * last + inner
            }
            Kernel::Sampled { edge_energy, .. } => *edge_energy,
        }
    }

    /// Highest frequency at which the kernel is trustworthy.
    pub fn max_valid_omega(&self) -> f64 {
        match self {
            Kernel::Sampled { dt, .. } => PI / dt,
            _ => f64::INFINITY,
        }
    }

    /// Period of the high-frequency pattern, when the kernel has one.
    fn period(&self) -> Option<f64> {
        match self {
            Kernel::Cpmg { n, duration } => Some(4.0 * PI * *n as f64 / duration),
            _ => None,
        }
    }
}

/// Tabulated filter function backed by its exact kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterFunction {
    omegas: Vec<f64>,
    values: Vec<f64>,
    duration: f64,
    source: FfSource,
    kernel: Kernel,
}

fn check_grid(omegas: &[f64]) -> Result<()> {
    if let Some(w) = omegas.first() {
        if !(*w >= 0.0) {
            return Err(Error::input("frequency grid must be non-negative"));
        }
    }
    if omegas.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::input("frequency grid must be strictly increasing"));
    }
    Ok(())
}

impl FilterFunction {
    fn tabulate(kernel: Kernel, source: FfSource, omegas: &[f64]) -> Result<Self> {
        check_grid(omegas)?;
        let values = omegas.iter().map(|&w| kernel.eval(w)).collect();
        Ok(FilterFunction { omegas: omegas.to_vec(), values, duration: kernel.duration(), source, kernel })
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn source(&self) -> FfSource {
        self.source
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    /// Exact value at `omega`, independent of the tabulation grid.
    pub fn eval(&self, omega: f64) -> f64 {
        self.kernel.eval(omega)
    }

    /// Same filter tabulated on another grid.
    pub fn with_grid(&self, omegas: &[f64]) -> Result<Self> {
        FilterFunction::tabulate(self.kernel.clone(), self.source, omegas)
    }

    /// The default grid for this kernel (see [`default_grid`]).
    pub fn with_default_grid(&self) -> Result<Self> {
        self.with_grid(&default_grid(&self.kernel))
    }

    /// `∫_a^b w(ω)·FF(ω) dω` on panels of width `π/t`, refined adaptively.
    pub fn integrate_range<W: Fn(f64) -> f64>(
        &self,
        weight: W,
        a: f64,
        b: f64,
        breaks: &[f64],
        tol: Tolerance,
    ) -> Result<Estimate> {
        if !(b > a) {
            return Ok(Estimate { value: 0.0, error: 0.0 });
        }
        let step = (PI / self.duration).max((b - a) / MAX_INITIAL_PANELS);
        let mut points: Vec<f64> = Vec::new();
        let first = (a / step).floor() as i64 + 1;
        let last = (b / step).ceil() as i64;
        points.push(a);
        for k in first..last {
            points.push(k as f64 * step);
        }
        points.push(b);
        points.extend(breaks.iter().copied().filter(|&x| x > a && x < b));
        points.sort_by(f64::total_cmp);
        points.dedup();
        quad::adaptive(|w| weight(w) * self.kernel.eval(w), &points, tol)
    }

    /// `∫₀^∞ w(ω)·FF(ω) dω`.
    ///
    /// Exact panels reach `64×` the nominal sensing frequency; the remainder
    /// uses the averaged envelope `E/(π t ω²)`. When that tail exceeds
    /// `10⁻³` of the total, the exact range is doubled (up to three times)
    /// until the envelope estimate is confirmed; otherwise a
    /// [`Error::Coverage`] is returned.
    pub fn integrate<W: Fn(f64) -> f64>(&self, weight: W, breaks: &[f64], tol: Tolerance) -> Result<Estimate> {
        let t = self.duration;
        let energy = self.kernel.jump_energy();
        let mut w_cut = EXACT_SPAN * self.kernel.nominal_omega();
        if let Some(p) = self.kernel.period() {
            w_cut = (w_cut / p).ceil() * p;
        }
        w_cut = w_cut.min(self.kernel.max_valid_omega());
        let envelope_tail = |from: f64| -> Result<f64> {
            if energy == 0.0 {
                return Ok(0.0);
            }
            let e = quad::semi_infinite(|w| weight(w) * energy / (PI * t * w * w), from, breaks, tol)?;
            Ok(e.value)
        };
        let head = self.integrate_range(&weight, 0.0, w_cut, breaks, tol)?;
        let mut value = head.value;
        let mut error = head.error;
        let mut tail = envelope_tail(w_cut)?;
        let mut cut = w_cut;
        for _ in 0..3 {
            let total = value + tail;
            if tail.abs() <= 1e-3 * total.abs() {
                return Ok(Estimate { value: total, error });
            }
            let next = if let Some(p) = self.kernel.period() { ((2.0 * cut) / p).ceil() * p } else { 2.0 * cut };
            if next > self.kernel.max_valid_omega() {
                break;
            }
            let extra = self.integrate_range(&weight, cut, next, breaks, tol)?;
            let next_tail = envelope_tail(next)?;
            let change = (extra.value + next_tail - tail).abs();
            value += extra.value;
            error += extra.error;
            tail = next_tail;
            cut = next;
            if change <= 1e-3 * (value + tail).abs() {
                return Ok(Estimate { value: value + tail, error: error + change });
            }
        }
        let total = value + tail;
        Err(Error::Coverage { tail_fraction: if total != 0.0 { tail / total } else { 1.0 } })
    }

    /// Total area `∫₀^∞ FF dω`.
    pub fn area(&self) -> Result<f64> {
        Ok(self.integrate(|_| 1.0, &[], Tolerance { rel: 1e-7, ..Default::default() })?.value)
    }

    /// Two-column CSV with an `omega_rad_s,ff_s` header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("omega_rad_s,ff_s\n");
        for (w, v) in self.omegas.iter().zip(&self.values) {
            out.push_str(&format!("{w},{v}\n"));
        }
        out
    }
}

/// Default tabulation grid for a kernel, rad/s.
///
/// CPMG-like kernels get a log grid from `0.01/t` to `40·N/t` Hz, dense
/// enough for at least 50 samples across the main lobe. DYSCO-like kernels
/// get 2000 linear points spanning `f₀ ± 20/t`.
pub fn default_grid(kernel: &Kernel) -> Vec<f64> {
    let t = kernel.duration();
    match kernel {
        Kernel::Dysco { omega0, .. } | Kernel::Gdysco { omega0, .. } => {
            let f0 = omega0 / (2.0 * PI);
            let lo = (f0 - 20.0 / t).max(1e-3 * f0);
            let hi = f0 + 20.0 / t;
            linspace(lo, hi, 2000).into_iter().map(|f| 2.0 * PI * f).collect()
        }
        _ => {
            let n = (kernel.nominal_omega() * t / PI).round().max(1.0);
            let lo = 0.01 / t;
            let hi = (40.0 * n / t).min(0.999 * kernel.max_valid_omega() / (2.0 * PI));
            let decades = (hi / lo).log10();
            let points = ((28.8 * n * decades).ceil() as usize).max(2000);
            logspace(lo, hi, points).into_iter().map(|f| 2.0 * PI * f).collect()
        }
    }
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Closed-form CPMG-N filter function on `omegas` (rad/s).
pub fn cpmg_ff(n_pulses: u32, duration: f64, omegas: &[f64]) -> Result<FilterFunction> {
    if n_pulses == 0 {
        return Err(Error::spec("n_pulses must be positive"));
    }
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::spec(format!("duration must be positive, got {duration}")));
    }
    FilterFunction::tabulate(Kernel::Cpmg { n: n_pulses, duration }, FfSource::AnalyticCpmg, omegas)
}

/// Analytic DYSCO or gDYSCO filter function. Quantized sequences are
/// transformed exactly as a staircase.
pub fn dysco_ff(spec: &SequenceSpec, omegas: &[f64]) -> Result<FilterFunction> {
    spec.validate()?;
    let omega0 = 2.0 * PI * spec.mod_frequency;
    let kernel = match spec.family {
        Family::Dysco | Family::Gdysco if spec.quant_steps > 0 => {
            let (edges, levels) = spec.steps().expect("quantized spec has steps");
            Kernel::Steps { edges, levels }
        }
        Family::Dysco => Kernel::Dysco { omega0, duration: spec.duration, amplitude: spec.amplitude },
        Family::Gdysco => {
            Kernel::Gdysco { omega0, sigma: spec.sigma(), duration: spec.duration, amplitude: spec.amplitude }
        }
        _ => return Err(Error::input("dysco_ff needs a DYSCO or gDYSCO spec")),
    };
    let source = if spec.family == Family::Gdysco { FfSource::AnalyticGdysco } else { FfSource::AnalyticDysco };
    FilterFunction::tabulate(kernel, source, omegas)
}

/// Analytic filter function for any family.
pub fn analytic_ff(spec: &SequenceSpec, omegas: &[f64]) -> Result<FilterFunction> {
    if spec.family.is_pulsed() {
        spec.validate()?;
        cpmg_ff(spec.pulses(), spec.duration, omegas)
    } else {
        dysco_ff(spec, omegas)
    }
}

/// Kernel for a sampled trace: exact segment transforms for held traces,
/// Gauss rule on a local cubic interpolant for smooth ones.
pub fn trace_kernel(trace: &SensitivityTrace) -> Kernel {
    let v = trace.values();
    let t = trace.times();
    let m = v.len() - 1;
    match trace.interpolation() {
        Interpolation::Hold => {
            let mut edges = vec![0.0];
            let mut levels = vec![v[0]];
            for i in 1..m {
                if v[i] != v[i - 1] {
                    edges.push(t[i]);
                    levels.push(v[i]);
                }
            }
            edges.push(trace.duration());
            Kernel::Steps { edges, levels }
        }
        Interpolation::Smooth => {
            let dt = trace.dt();
            let mut weights = Vec::with_capacity(m);
            for i in 0..m {
                // four-point stencil, shifted inward at the ends
                let base = i.saturating_sub(1).min(m - 3);
                let xs = [base as f64, base as f64 + 1.0, base as f64 + 2.0, base as f64 + 3.0];
                let mut w = [0.0; 5];
                for (j, x) in GL5_X.iter().enumerate() {
                    let u = i as f64 + 0.5 * (1.0 + x);
                    let mut p = 0.0;
                    for a in 0..4 {
                        let mut l = 1.0;
                        for b in 0..4 {
                            if a != b {
                                l *= (u - xs[b]) / (xs[a] - xs[b]);
                            }
                        }
                        p += l * v[base + a];
                    }
                    w[j] = 0.5 * dt * GL5_W[j] * p;
                }
                weights.push(w);
            }
            let starts = t[..m].to_vec();
            Kernel::Sampled { starts, weights, dt, duration: trace.duration(), edge_energy: v[0].powi(2) + v[m].powi(2) }
        }
    }
}

/// Filter function of a sampled trace. The grid must stay below the trace
/// Nyquist frequency `π/dt`.
pub fn numeric_ff(trace: &SensitivityTrace, omegas: &[f64]) -> Result<FilterFunction> {
    let nyquist = PI / trace.dt();
    if let Some(&w) = omegas.last() {
        if w > nyquist {
            return Err(Error::GridBeyondNyquist { omega: w, nyquist });
        }
    }
    FilterFunction::tabulate(trace_kernel(trace), FfSource::Numeric, omegas)
}

/// Peak statistics in Hz. Areas are fractions of `∫₀^∞ FF dω`-style
/// dimensionless integrals (not normalized by the total).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakStats {
    pub f0: f64,
    pub fwhm: f64,
    pub gain: f64,
    pub main_lobe_area: f64,
    pub total_area: f64,
    /// Main-lobe boundaries (enclosing minima), Hz.
    pub main_lobe: (f64, f64),
    pub harmonic_frequencies: Vec<f64>,
    /// Area within `±f0` of each harmonic.
    pub harmonic_areas: Vec<f64>,
}

impl PeakStats {
    pub fn omega0(&self) -> f64 {
        2.0 * PI * self.f0
    }

    /// Half of the FWHM in rad/s.
    pub fn half_width_omega(&self) -> f64 {
        PI * self.fwhm
    }
}

fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, sign: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = sign * f(c);
    let mut fd = sign * f(d);
    for _ in 0..80 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = sign * f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = sign * f(d);
        }
        if (b - a) <= 1e-13 * b.abs() {
            break;
        }
    }
    0.5 * (a + b)
}

fn bisect<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> f64 {
    let fa = f(a);
    for _ in 0..100 {
        let m = 0.5 * (a + b);
        if (f(m) > 0.0) == (fa > 0.0) {
            a = m;
        } else {
            b = m;
        }
        if (b - a).abs() <= 1e-14 * b.abs() {
            break;
        }
    }
    0.5 * (a + b)
}

/// Peak frequency, FWHM, gain and harmonic content of a filter function.
///
/// The grid locates the features; every quantity is then refined on the
/// kernel. An empty grid is replaced by [`default_grid`].
pub fn peak_stats(ff: &FilterFunction) -> Result<PeakStats> {
    let owned;
    let ff = if ff.omegas.len() < 3 {
        owned = ff.with_default_grid()?;
        &owned
    } else {
        ff
    };
    let w = &ff.omegas;
    let v = &ff.values;
    let k = &ff.kernel;
    let last = w.len() - 1;
    let imax = v.iter().enumerate().fold(0, |best, (i, x)| if *x > v[best] { i } else { best });
    if imax == 0 || imax == last {
        return Err(Error::PeakAtGridEdge);
    }
    let w0 = golden_max(|x| k.eval(x), w[imax - 1], w[imax + 1], 1.0);
    let peak = k.eval(w0);
    let half = 0.5 * peak;

    let mut j = imax;
    while j > 0 && v[j] >= half {
        j -= 1;
    }
    if v[j] >= half {
        return Err(Error::PeakAtGridEdge);
    }
    let lo_half = bisect(|x| k.eval(x) - half, w[j], w[j + 1].min(w0));
    let mut j = imax;
    while j < last && v[j] >= half {
        j += 1;
    }
    if v[j] >= half {
        return Err(Error::PeakAtGridEdge);
    }
    let hi_half = bisect(|x| k.eval(x) - half, w[j - 1].max(w0), w[j]);
    let fwhm_omega = hi_half - lo_half;

    // enclosing minima
    let mut l = imax;
    while l > 0 && v[l - 1] < v[l] {
        l -= 1;
    }
    let lobe_lo = if l == 0 { 0.0 } else { golden_max(|x| k.eval(x), w[l - 1], w[l + 1], -1.0) };
    let mut r = imax;
    while r < last && v[r + 1] < v[r] {
        r += 1;
    }
    let lobe_hi = if r == last { w[last] } else { golden_max(|x| k.eval(x), w[r - 1], w[r + 1], -1.0) };

    let tol = Tolerance { rel: 1e-8, ..Default::default() };
    let gain = ff.integrate_range(|_| 1.0, w0 - 0.5 * fwhm_omega, w0 + 0.5 * fwhm_omega, &[w0], tol)?.value;
    let main_lobe_area = ff.integrate_range(|_| 1.0, lobe_lo, lobe_hi, &[w0], tol)?.value;
    let total_area = ff.area()?;

    let mut harmonic_frequencies = Vec::new();
    let mut harmonic_areas = Vec::new();
    for i in (r + 1).max(1)..last {
        // a harmonic dominates everything within half a sensing frequency,
        // which excludes the side lobes hugging the main peak
        let dominant = || {
            let lo = w.partition_point(|&x| x < w[i] - 0.5 * w0);
            let hi = w.partition_point(|&x| x <= w[i] + 0.5 * w0);
            v[lo..hi].iter().all(|&x| x <= v[i])
        };
        if v[i] > 0.05 * peak && v[i] >= v[i - 1] && v[i] > v[i + 1] && dominant() {
            let wh = golden_max(|x| k.eval(x), w[i - 1], w[i + 1], 1.0);
            let area = ff.integrate_range(|_| 1.0, (wh - w0).max(0.0), wh + w0, &[wh], tol)?.value;
            harmonic_frequencies.push(wh / (2.0 * PI));
            harmonic_areas.push(area);
        }
    }

    let hz = 1.0 / (2.0 * PI);
    Ok(PeakStats {
        f0: w0 * hz,
        fwhm: fwhm_omega * hz,
        gain,
        main_lobe_area,
        total_area,
        main_lobe: (lobe_lo * hz, lobe_hi * hz),
        harmonic_frequencies,
        harmonic_areas,
    })
}

/// gDYSCO FWHM in Hz for envelope width `sigma`.
pub fn gdysco_fwhm(sigma: f64) -> f64 {
    LN_2.sqrt() / (PI * sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequences::build_trace;

    fn grid_for(n: u32, t: f64) -> Vec<f64> {
        default_grid(&Kernel::Cpmg { n, duration: t })
    }

    #[test]
    fn cpmg_area_is_one() {
        for n in [1, 2, 4, 8, 16, 32, 64, 128] {
            let ff = cpmg_ff(n, 1e-4, &[]).unwrap();
            let area = ff.area().unwrap();
            assert!((area - 1.0).abs() < 1e-3, "N={n}: {area}");
        }
    }

    #[test]
    fn closed_form_matches_step_transform() {
        for n in [1, 2, 3, 8] {
            let k = Kernel::Cpmg { n, duration: 1.0 };
            let spec = SequenceSpec::cpmg_with_duration(n, 1.0);
            let (edges, levels) = spec.steps().unwrap();
            let s = Kernel::Steps { edges, levels };
            for &x in &[0.3, 1.7, 4.4, 9.0, 25.1, 60.0] {
                let a = k.eval(x);
                let b = s.eval(x);
                assert!((a - b).abs() <= 1e-9 * b.max(1e-12), "N={n} x={x}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn poles_are_finite() {
        // cos(x/2N) = 0 at x = π·N
        for n in [1, 2, 4, 7] {
            let t = 1e-5;
            let pole = PI * n as f64 / t;
            let ff = cpmg_ff(n, t, &[pole, 3.0 * pole]).unwrap();
            for v in ff.values() {
                assert!(v.is_finite() && *v >= 0.0);
            }
            let near = Kernel::Cpmg { n, duration: t }.eval(pole * (1.0 + 1e-5));
            assert!((ff.values()[0] - near).abs() < 1e-3 * near.max(1e-30), "N={n}");
        }
        assert_eq!(Kernel::Cpmg { n: 4, duration: 1.0 }.eval(0.0), 0.0);
    }

    #[test]
    fn peak_position_table() {
        let expected = [(1, 1.48), (2, 2.30), (3, 3.21), (4, 4.17), (8, 8.09), (16, 16.04)];
        for (n, ratio) in expected {
            let t = 1e-4;
            let ff = cpmg_ff(n, t, &grid_for(n, t)).unwrap();
            let s = peak_stats(&ff).unwrap();
            let got = s.omega0() * t / PI;
            assert!((got / ratio - 1.0).abs() < 5e-3, "N={n}: {got}");
        }
    }

    #[test]
    fn cpmg8_harmonics() {
        let t = 1e-4;
        let ff = cpmg_ff(8, t, &grid_for(8, t)).unwrap();
        let s = peak_stats(&ff).unwrap();
        assert!((s.main_lobe_area - 0.75).abs() < 0.05, "{}", s.main_lobe_area);
        assert!(s.gain <= s.main_lobe_area && s.main_lobe_area <= s.total_area);
        let h = s.harmonic_frequencies[0];
        assert!((h / s.f0 - 3.0).abs() < 0.1, "{}", h / s.f0);
        assert!((s.harmonic_areas[0] - 0.10).abs() < 0.03, "{}", s.harmonic_areas[0]);
    }

    #[test]
    fn dysco_shapes() {
        let t = 200e-6;
        let spec = SequenceSpec::dysco(62.5e3, t);
        let ff = dysco_ff(&spec, &default_grid(&Kernel::Dysco { omega0: 2.0 * PI * 62.5e3, duration: t, amplitude: 1.0 }))
            .unwrap();
        let s = peak_stats(&ff).unwrap();
        assert!((s.fwhm * t / 0.884 - 1.0).abs() < 0.01, "{}", s.fwhm * t);
        assert!((s.gain - 0.35).abs() < 0.035, "{}", s.gain);
        assert!((s.total_area - 0.5).abs() < 0.005);

        // first side lobe of sinc², far from DC so the mirror term is negligible
        let far = dysco_ff(&SequenceSpec::dysco(1e6, t), &[]).unwrap();
        let x1: f64 = 4.493_409_457_909_064;
        let oracle = (x1.sin() / x1).powi(2);
        let side = far.eval(2.0 * PI * 1e6 + 2.0 * x1 / t) / far.eval(2.0 * PI * 1e6);
        assert!((side - oracle).abs() < 1e-3, "{side} vs {oracle}");
        assert!((oracle - 0.0472).abs() < 1e-4);

        let spec = SequenceSpec::gdysco(62.5e3, t);
        let ff = dysco_ff(&spec, &[]).unwrap().with_default_grid().unwrap();
        let s = peak_stats(&ff).unwrap();
        assert!((s.fwhm * t / 1.59 - 1.0).abs() < 0.01, "{}", s.fwhm * t);
        assert!((s.fwhm / gdysco_fwhm(t / 6.0) - 1.0).abs() < 0.01);
        assert!((s.gain - 0.11).abs() < 0.011, "{}", s.gain);
        assert!((s.total_area - 0.147).abs() < 0.0015);
        assert!(s.harmonic_frequencies.is_empty());
    }

    #[test]
    fn numeric_matches_analytic_cpmg() {
        let spec = SequenceSpec::cpmg(8, 2e-6);
        let trace = build_trace(&spec, 1e7).unwrap();
        let grid: Vec<f64> = default_grid(&Kernel::Cpmg { n: 8, duration: spec.duration })
            .into_iter()
            .filter(|&w| w < PI / trace.dt())
            .collect();
        let num = numeric_ff(&trace, &grid).unwrap();
        let ana = cpmg_ff(8, spec.duration, &grid).unwrap();
        let a = peak_stats(&ana).unwrap();
        let n = peak_stats(&num).unwrap();
        let rel = (num.eval(n.omega0()) / ana.eval(a.omega0()) - 1.0).abs();
        assert!(rel < 1e-2, "{rel}");
    }

    #[test]
    fn numeric_dysco_area() {
        let t = 200e-6;
        let spec = SequenceSpec::dysco(62.5e3, t);
        let trace = build_trace(&spec, 40.0 * 62.5e3).unwrap();
        let ff = numeric_ff(&trace, &[]).unwrap();
        let area = ff.area().unwrap();
        assert!((area - 0.5).abs() < 0.005, "{area}");
        let ana = dysco_ff(&spec, &[]).unwrap();
        let w0 = 2.0 * PI * 62.5e3;
        for d in [-0.4, -0.2, 0.0, 0.2, 0.4] {
            let w = w0 + d * 2.0 * PI / t;
            let rel = (ff.eval(w) / ana.eval(w) - 1.0).abs();
            assert!(rel < 0.02, "{d}: {rel}");
        }
    }

    #[test]
    fn constant_trace_is_dc_only() {
        let times: Vec<f64> = (0..=100).map(|i| i as f64 * 1e-7).collect();
        let trace = SensitivityTrace::from_samples(times, vec![1.0; 101], Interpolation::Hold).unwrap();
        let t = trace.duration();
        let grid: Vec<f64> = (0..200).map(|i| 2.0 * PI / t * (3.5 + 0.05 * i as f64)).collect();
        let ff = numeric_ff(&trace, &grid).unwrap();
        let dc = ff.eval(1e-3 / t);
        assert!((dc - t / PI).abs() < 1e-6 * t);
        assert!(ff.values().iter().all(|v| *v < 1e-2 * dc));
    }

    #[test]
    fn grid_beyond_nyquist_rejected() {
        let trace = build_trace(&SequenceSpec::cpmg(2, 1e-6), 2e7).unwrap();
        let err = numeric_ff(&trace, &[1.0, 1e9]).unwrap_err();
        assert!(matches!(err, Error::GridBeyondNyquist { .. }));
    }

    #[test]
    fn narrow_grid_reports_edge() {
        let t = 1e-4;
        let w0 = 1.48 * PI / t;
        let ff = cpmg_ff(1, t, &linspace(0.5 * w0, 0.9 * w0, 50)).unwrap();
        assert!(matches!(peak_stats(&ff), Err(Error::PeakAtGridEdge)));
    }

    #[test]
    fn csv_header() {
        let ff = cpmg_ff(2, 1e-5, &[1e5, 2e5]).unwrap();
        assert!(ff.to_csv().starts_with("omega_rad_s,ff_s\n"));
    }
}
