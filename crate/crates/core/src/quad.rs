//! Quadrature helpers: adaptive Gauss-Kronrod over breakpoint panels and
//! fixed Gauss-Legendre rules.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

// 15-point Kronrod extension of the 7-point Gauss rule (QUADPACK qk15).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Gauss-Legendre 5-point nodes and weights on `[-1, 1]`.
pub const GL5_X: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
pub const GL5_W: [f64; 5] = [
    0.236_926_885_056_189,
    0.478_628_670_499_366,
    0.568_888_888_888_889,
    0.478_628_670_499_366,
    0.236_926_885_056_189,
];

/// Gauss-Legendre 8-point nodes and weights on `[-1, 1]`.
pub const GL8_X: [f64; 8] = [
    -0.960_289_856_497_536_2,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];
pub const GL8_W: [f64; 8] = [
    0.101_228_536_290_376_3,
    0.222_381_034_453_374_5,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Result of one 15-point Kronrod evaluation: estimate and error bound.
fn kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut gauss = fc * WG[3];
    let mut kron = fc * WGK[7];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Tolerances and limits for [`adaptive`].
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub rel: f64,
    pub abs: f64,
    pub max_panels: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance { rel: 1e-4, abs: 0.0, max_panels: 400_000 }
    }
}

/// Integral estimate with its accumulated error bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

/// Globally adaptive Gauss-Kronrod quadrature over the panels defined by
/// `breaks` (sorted, at least two entries). The panel with the largest error
/// is bisected until the total error meets the tolerance.
pub fn adaptive<F: Fn(f64) -> f64>(f: F, breaks: &[f64], tol: Tolerance) -> Result<Estimate> {
    if breaks.len() < 2 {
        return Ok(Estimate { value: 0.0, error: 0.0 });
    }
    let mut heap = BinaryHeap::with_capacity(breaks.len() * 2);
    let mut value = 0.0;
    let mut error = 0.0;
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            let (v, e) = kronrod(&f, w[0], w[1]);
            value += v;
            error += e;
            heap.push(Panel { a: w[0], b: w[1], value: v, error: e });
        }
    }
    while error > tol.abs.max(tol.rel * value.abs()) {
        if heap.len() >= tol.max_panels {
            break;
        }
        let Some(worst) = heap.pop() else { break };
        let mid = 0.5 * (worst.a + worst.b);
        if !(mid > worst.a && mid < worst.b) {
            // interval exhausted at machine precision
            heap.push(Panel { error: 0.0, ..worst });
            error -= worst.error;
            continue;
        }
        let (v1, e1) = kronrod(&f, worst.a, mid);
        let (v2, e2) = kronrod(&f, mid, worst.b);
        value += v1 + v2 - worst.value;
        error += e1 + e2 - worst.error;
        heap.push(Panel { a: worst.a, b: mid, value: v1, error: e1 });
        heap.push(Panel { a: mid, b: worst.b, value: v2, error: e2 });
    }
    // re-sum to shed accumulated rounding from the running totals
    let (value, error) = heap.iter().fold((0.0, 0.0), |(v, e), p| (v + p.value, e + p.error));
    if !value.is_finite() {
        return Err(Error::Fit("non-finite integrand".into()));
    }
    Ok(Estimate { value, error })
}

/// `∫_a^∞ f`, mapped onto `(0, 1]` by `x = a / u`. Requires `a > 0`.
pub fn semi_infinite<F: Fn(f64) -> f64>(f: F, a: f64, extra_breaks: &[f64], tol: Tolerance) -> Result<Estimate> {
    if !(a > 0.0) {
        return Err(Error::input("semi-infinite integral needs a positive lower bound"));
    }
    let g = |u: f64| if u <= 0.0 { 0.0 } else { f(a / u) * a / (u * u) };
    let mut breaks: Vec<f64> = vec![0.0, 1.0];
    breaks.extend(extra_breaks.iter().filter(|&&x| x > a).map(|&x| a / x));
    for k in 1..8 {
        breaks.push(0.5f64.powi(k));
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    adaptive(g, &breaks, tol)
}

/// Fixed Gauss-Legendre 8-point rule on `n` equal panels of `[a, b]`.
pub fn gauss_legendre<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut sum = 0.0;
    for i in 0..n {
        let c = a + (i as f64 + 0.5) * h;
        for (x, w) in GL8_X.iter().zip(GL8_W) {
            sum += w * f(c + 0.5 * h * x);
        }
    }
    0.5 * h * sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn polynomial_is_exact() {
        let r = adaptive(|x| 3.0 * x * x, &[0.0, 2.0], Tolerance::default()).unwrap();
        assert!((r.value - 8.0).abs() < 1e-13);
    }

    #[test]
    fn oscillatory_integrand_over_panels() {
        let breaks: Vec<f64> = (0..=40).map(|k| k as f64 * PI / 4.0).collect();
        let r = adaptive(|x| (x.sin() / (1.0 + x)).powi(2), &breaks, Tolerance { rel: 1e-10, ..Default::default() })
            .unwrap();
        let reference = gauss_legendre(|x| (x.sin() / (1.0 + x)).powi(2), 0.0, 10.0 * PI, 4000);
        assert!((r.value - reference).abs() < 1e-9, "{} vs {}", r.value, reference);
    }

    #[test]
    fn semi_infinite_tail() {
        let r = semi_infinite(|x| 1.0 / (x * x), 2.0, &[], Tolerance { rel: 1e-10, ..Default::default() }).unwrap();
        assert!((r.value - 0.5).abs() < 1e-10);
        let r = semi_infinite(|x| (-x).exp(), 1.0, &[], Tolerance { rel: 1e-10, ..Default::default() }).unwrap();
        assert!((r.value - (-1f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn narrow_peak_found_by_refinement() {
        let s = 1e-3;
        let f = |x: f64| (-(x - 0.3).powi(2) / (2.0 * s * s)).exp();
        let r = adaptive(f, &[0.0, 0.25, 0.35, 1.0], Tolerance { rel: 1e-10, ..Default::default() }).unwrap();
        assert!((r.value / (s * (2.0 * PI).sqrt()) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fixed_rules() {
        let v = gauss_legendre(|x| x.powi(15), 0.0, 1.0, 1);
        assert!((v - 1.0 / 16.0).abs() < 1e-14);
        let v: f64 = GL5_X.iter().zip(GL5_W).map(|(x, w)| w * x.powi(8)).sum();
        assert!((v - 2.0 / 9.0).abs() < 1e-12);
    }
}
