//! Bounded Nelder-Mead simplex search.
//!
//! The search runs in the unit cube `u ∈ [0, 1]^d`, mapped affinely onto the
//! box bounds; trial points are clamped to the cube. When the simplex
//! collapses, the search restarts from the best vertex with a fresh simplex,
//! and stops once a restart fails to improve the best value.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmConfig {
    pub max_iterations: usize,
    /// Stop when the spread of simplex values is below `rel_tol·|f_best|`
    /// (plus a tiny absolute floor).
    pub rel_tol: f64,
    /// Initial edge length in the unit cube.
    pub initial_step: f64,
    pub max_restarts: usize,
}

impl Default for NmConfig {
    fn default() -> Self {
        NmConfig { max_iterations: 2000, rel_tol: 1e-8, initial_step: 0.1, max_restarts: 4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Best value after each iteration.
    pub history: Vec<f64>,
}

struct Boxed<'a, F> {
    f: F,
    lo: &'a [f64],
    hi: &'a [f64],
    evals: usize,
}

impl<F: FnMut(&[f64]) -> f64> Boxed<'_, F> {
    fn to_x(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(self.lo.iter().zip(self.hi)).map(|(u, (l, h))| l + (h - l) * u.clamp(0.0, 1.0)).collect()
    }

    fn call(&mut self, u: &[f64]) -> f64 {
        self.evals += 1;
        let x = self.to_x(u);
        let v = (self.f)(&x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

fn clamp_unit(u: Vec<f64>) -> Vec<f64> {
    u.into_iter().map(|v| v.clamp(0.0, 1.0)).collect()
}

fn combine(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    // a + t·(b − a)
    clamp_unit(a.iter().zip(b).map(|(a, b)| a + t * (b - a)).collect())
}

fn initial_simplex(u0: &[f64], step: f64) -> Vec<Vec<f64>> {
    let mut s = vec![u0.to_vec()];
    for i in 0..u0.len() {
        let mut v = u0.to_vec();
        // step inward if the start sits near the upper face
        v[i] = if v[i] + step <= 1.0 { v[i] + step } else { v[i] - step };
        s.push(v);
    }
    s
}

/// Minimizes `f` over the box `[lower, upper]` starting from `x0`.
pub fn minimize<F>(f: F, x0: &[f64], lower: &[f64], upper: &[f64], cfg: NmConfig) -> Result<NmResult>
where
    F: FnMut(&[f64]) -> f64,
{
    let d = x0.len();
    if d == 0 || lower.len() != d || upper.len() != d {
        return Err(Error::input("dimension mismatch between start point and bounds"));
    }
    for i in 0..d {
        if !(lower[i] < upper[i]) || !(x0[i] >= lower[i] && x0[i] <= upper[i]) {
            return Err(Error::input(format!(
                "start value {} outside bounds [{}, {}] for parameter {i}",
                x0[i], lower[i], upper[i]
            )));
        }
    }
    let mut obj = Boxed { f, lo: lower, hi: upper, evals: 0 };
    let u0: Vec<f64> = (0..d).map(|i| (x0[i] - lower[i]) / (upper[i] - lower[i])).collect();
    let f0 = obj.call(&u0);
    if f0 == 0.0 {
        return Ok(NmResult { x: obj.to_x(&u0), value: 0.0, iterations: 0, evaluations: obj.evals, converged: true, history: vec![] });
    }

    let mut simplex = initial_simplex(&u0, cfg.initial_step);
    let mut values: Vec<f64> = std::iter::once(f0).chain(simplex[1..].iter().map(|v| obj.call(v))).collect();
    let mut iterations = 0;
    let mut restarts = 0;
    let mut best_at_restart = f64::INFINITY;
    let mut history = Vec::new();
    let mut converged = false;

    while iterations < cfg.max_iterations {
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        let (best, worst) = (values[0], values[d]);

        let spread = worst - best;
        let size = simplex[1..]
            .iter()
            .map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if spread <= cfg.rel_tol * best.abs() + 1e-300 || size < 1e-12 {
            let improved = best < best_at_restart * (1.0 - cfg.rel_tol) - 1e-300;
            if best == 0.0 || !improved || restarts >= cfg.max_restarts {
                converged = true;
                break;
            }
            restarts += 1;
            best_at_restart = best;
            let step = cfg.initial_step * 0.5f64.powi(restarts as i32);
            simplex = initial_simplex(&simplex[0], step);
            values = std::iter::once(best).chain(simplex[1..].iter().map(|v| obj.call(v))).collect();
            continue;
        }
        iterations += 1;

        let centroid: Vec<f64> =
            (0..d).map(|j| simplex[..d].iter().map(|v| v[j]).sum::<f64>() / d as f64).collect();
        let reflected = combine(&centroid, &simplex[d], -1.0);
        let fr = obj.call(&reflected);
        if fr < best {
            let expanded = combine(&centroid, &simplex[d], -2.0);
            let fe = obj.call(&expanded);
            if fe < fr {
                simplex[d] = expanded;
                values[d] = fe;
            } else {
                simplex[d] = reflected;
                values[d] = fr;
            }
        } else if fr < values[d - 1] {
            simplex[d] = reflected;
            values[d] = fr;
        } else {
            let (trial, ft) = if fr < worst {
                let c = combine(&centroid, &simplex[d], -0.5);
                let fc = obj.call(&c);
                (c, fc)
            } else {
                let c = combine(&centroid, &simplex[d], 0.5);
                let fc = obj.call(&c);
                (c, fc)
            };
            if ft < worst.min(fr) {
                simplex[d] = trial;
                values[d] = ft;
            } else {
                for i in 1..=d {
                    simplex[i] = combine(&simplex[0], &simplex[i], 0.5);
                    values[i] = obj.call(&simplex[i]);
                }
            }
        }
        history.push(values.iter().copied().fold(f64::INFINITY, f64::min));
    }

    let i = (0..=d).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    Ok(NmResult { x: obj.to_x(&simplex[i]), value: values[i], iterations, evaluations: obj.evals, converged, history })
}
