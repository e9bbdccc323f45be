//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

use std::path::Path;
use std::time::Instant;

use qnoise::filters::{analytic_ff, cpmg_ff, gdysco_fwhm, linspace, logspace, peak_stats};
use qnoise::fitting::fit_noise_params;
use qnoise::forward::{add_measurement_noise, chi, synth_cpmg_family, Sampling};
use qnoise::noise::{default_experiment_spectrum, NoiseParams, NoiseSpectrum};
use qnoise::optim::NmConfig;
use qnoise::oracle::{mc_coherence, McConfig};
use qnoise::reconstruct::{cpmg_sd, dynamic_range, sd_from_chi, AnalyticFf, ChiPoint, ContrastReading, Method, SdConfig};
use qnoise::roundtrip::{run_roundtrip, RoundtripConfig};
use qnoise::sequences::{build_trace, SequenceSpec};

type Check = Result<String, String>;

fn verdict(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    format!("error: {e}")
}

fn ff_normalization() -> Check {
    let mut worst: f64 = 0.0;
    for n in [1, 2, 4, 8, 16, 32, 64, 128] {
        let area = cpmg_ff(n, 1e-4, &[]).map_err(err)?.area().map_err(err)?;
        worst = worst.max((area - 1.0).abs());
    }
    verdict(worst <= 1e-3, format!("max |area - 1| = {worst:.2e} (limit 1e-3)"))
}

fn peak_positions() -> Check {
    let t = 1e-4;
    let expected = [(1, 1.48), (2, 2.30), (3, 3.21), (4, 4.17), (8, 8.09), (16, 16.04)];
    let mut worst: f64 = 0.0;
    let mut got = Vec::new();
    for (n, r) in expected {
        let ratio = 2.0 * peak_stats(&cpmg_ff(n, t, &[]).map_err(err)?).map_err(err)?.f0 * t;
        worst = worst.max((ratio / r - 1.0).abs());
        got.push(format!("{ratio:.3}"));
    }
    verdict(worst <= 5e-3, format!("2 f0 t = [{}], max deviation {:.2}% (limit 0.5%)", got.join(", "), 100.0 * worst))
}

fn fwhm_constants() -> Check {
    let t = 200e-6;
    let stats = |spec: SequenceSpec| peak_stats(&analytic_ff(&spec, &[])?);
    let c = stats(SequenceSpec::cpmg_with_duration(16, t)).map_err(err)?.fwhm * t;
    let d = stats(SequenceSpec::dysco(50e3, t)).map_err(err)?.fwhm * t;
    let g = stats(SequenceSpec::gdysco(50e3, t)).map_err(err)?.fwhm;
    let g_closed = gdysco_fwhm(t / 6.0);
    let devs = [(c / 0.89 - 1.0).abs(), (d / 0.884 - 1.0).abs(), (g * t / 1.59 - 1.0).abs(), (g / g_closed - 1.0).abs()];
    let worst = devs.iter().copied().fold(0.0, f64::max);
    verdict(
        worst <= 0.01,
        format!(
            "FWHM t: CPMG-16 {c:.4}, DYSCO {d:.4}, gDYSCO {:.4} (closed form {:.4}), max deviation {:.2}% (limit 1%)",
            g * t,
            g_closed * t,
            100.0 * worst
        ),
    )
}

fn gains() -> Check {
    let t = 200e-6;
    let gain = |spec: SequenceSpec| -> Result<f64, String> {
        Ok(peak_stats(&analytic_ff(&spec, &[]).map_err(err)?).map_err(err)?.gain)
    };
    let got = [
        gain(SequenceSpec::cpmg_with_duration(16, t))?,
        gain(SequenceSpec::dysco(50e3, t))?,
        gain(SequenceSpec::gdysco(50e3, t))?,
    ];
    let worst = got.iter().zip([0.6, 0.35, 0.11]).map(|(g, r)| (g / r - 1.0).abs()).fold(0.0, f64::max);
    verdict(
        worst <= 0.10,
        format!("gain CPMG {:.3}, DYSCO {:.3}, gDYSCO {:.4}, max deviation {:.1}% (limit 10%)", got[0], got[1], got[2], 100.0 * worst),
    )
}

fn harmonic_content() -> Check {
    let p = peak_stats(&cpmg_ff(8, 1e-4, &[]).map_err(err)?).map_err(err)?;
    let main = p.main_lobe_area / p.total_area;
    let (k, f) = p
        .harmonic_frequencies
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 / p.f0 - 3.0).abs().total_cmp(&(b.1 / p.f0 - 3.0).abs()))
        .ok_or("no harmonics found")?;
    let h = p.harmonic_areas[k] / p.total_area;
    let near_three = (f / p.f0 - 3.0).abs() < 0.2;
    verdict(
        (main - 0.75).abs() <= 0.05 && (h - 0.10).abs() <= 0.03 && near_three,
        format!("CPMG-8 main lobe {:.1}%, harmonic at {:.2} f0 carries {:.1}%", 100.0 * main, f / p.f0, 100.0 * h),
    )
}

fn oracle_agreement() -> Check {
    let default = default_experiment_spectrum();
    let pairs = [
        ("composite, CPMG-8 40us", default.clone(), SequenceSpec::cpmg_with_duration(8, 40e-6)),
        ("composite, Hahn 10us", default.clone(), SequenceSpec::hahn(5e-6)),
        ("composite, DYSCO 100 kHz 200us", default, SequenceSpec::dysco(100e3, 200e-6)),
        (
            "weak Larmor peak, gDYSCO 62.5 kHz 200us",
            NoiseSpectrum::gaussian_peak(30e3, 25e3, 392e3).map_err(err)?,
            SequenceSpec::gdysco(62.5e3, 200e-6),
        ),
        ("Lorentzian, CPMG-4 100us", NoiseSpectrum::lorentzian_dc(40e3, 50e3).map_err(err)?, SequenceSpec::cpmg_with_duration(4, 100e-6)),
        ("flat, CPMG-2 200us", NoiseSpectrum::flat(2e3).map_err(err)?, SequenceSpec::cpmg_with_duration(2, 200e-6)),
    ];
    let mut lines = Vec::new();
    let mut ok = true;
    for (i, (name, spectrum, spec)) in pairs.iter().enumerate() {
        let rate = if spec.family.is_pulsed() { 160.0 / spec.tau_free } else { 200.0 * spec.feature_frequency() };
        let trace = build_trace(spec, rate).map_err(err)?;
        let cfg = McConfig::for_trace(spectrum, &trace, 10_000, i as u64);
        let mc = mc_coherence(spectrum, &trace, &cfg).map_err(err)?;
        let exact = chi(spectrum, &analytic_ff(spec, &[]).map_err(err)?).map_err(err)?;
        let good = (mc.chi_estimate - exact).abs() <= 0.02 * exact + 3.0 * mc.chi_stderr;
        ok &= good;
        lines.push(format!("{name}: MC {:.4} +- {:.4} vs {exact:.4}", mc.chi_estimate, mc.chi_stderr));
    }
    verdict(ok, lines.join("; "))
}

fn lorentzian_roundtrip() -> Check {
    let spectrum = NoiseSpectrum::lorentzian_dc(20e3, 1e5).map_err(err)?;
    let rt = RoundtripConfig::default();
    let grids: Vec<Vec<f64>> =
        rt.n_list.iter().map(|&n| logspace(rt.t_min_per_pulse * n as f64, rt.t_max, rt.times_per_n)).collect();
    let curves = synth_cpmg_family(&spectrum, &rt.n_list, &grids, Sampling::Dense).map_err(err)?;
    let sd = cpmg_sd(&curves, &AnalyticFf, SdConfig::default()).map_err(err)?;
    let omegas: Vec<f64> = sd.valid_points().map(|p| p.omega).collect();
    let (lo, hi) = (omegas.iter().copied().fold(f64::INFINITY, f64::min), omegas.iter().copied().fold(0.0, f64::max));
    let center = (lo * hi).sqrt();
    let (a, b) = (center / 10.0, center * 10.0);
    let mut errs: Vec<f64> = sd
        .valid_points()
        .filter(|p| p.omega >= a && p.omega <= b)
        .map(|p| (p.s / spectrum.density(p.omega) - 1.0).abs())
        .collect();
    if errs.is_empty() {
        return Err("no reconstructed points in the central two decades".into());
    }
    errs.sort_by(f64::total_cmp);
    let median = errs[errs.len() / 2];
    verdict(
        median <= 0.10,
        format!(
            "median relative error {:.1}% over {} bins in [{:.3e}, {:.3e}] rad/s (limit 10%)",
            100.0 * median,
            errs.len(),
            a,
            b
        ),
    )
}

fn peak_study() -> Check {
    let spectrum = default_experiment_spectrum();
    let seeds = 5;
    let mut sums = [[0.0; 2]; 3];
    let methods = [Method::CpmgSd, Method::DyscoDirect, Method::GdyscoDirect];
    let mut truth = 0.0;
    for seed in 0..seeds {
        let cfg = RoundtripConfig { epsilon: 0.03, seed, ..Default::default() };
        let report = run_roundtrip(&spectrum, &cfg).map_err(err)?;
        truth = report.truth_center.ok_or("spectrum has no Larmor peak")?;
        for (k, m) in methods.iter().enumerate() {
            let o = report.outcome(*m).ok_or("missing method")?;
            let (c, w) = o.center().zip(o.width()).ok_or_else(|| {
                format!("seed {seed} {:?}: {}", m, o.fit_error.clone().unwrap_or_default())
            })?;
            sums[k][0] += c / seeds as f64;
            sums[k][1] += w / seeds as f64;
        }
    }
    let [sd, dy, gd] = sums;
    let ordered = gd[1] < dy[1] && dy[1] <= sd[1];
    let sd_high = sd[0] > truth;
    let gd_close = (gd[0] / 62.4e3 - 1.0).abs() <= 0.03;
    verdict(
        ordered && sd_high && gd_close,
        format!(
            "mean widths SD {:.1}, DYSCO {:.1}, gDYSCO {:.1} kHz; centers SD {:.1}, gDYSCO {:.2} kHz (truth {:.2} kHz)",
            sd[1] / 1e3,
            dy[1] / 1e3,
            gd[1] / 1e3,
            sd[0] / 1e3,
            gd[0] / 1e3,
            truth / 1e3
        ),
    )
}

fn dynamic_ranges() -> Check {
    let t = 200e-6;
    let eps = 0.03;
    let cpmg = dynamic_range(&SequenceSpec::cpmg_with_duration(16, t), eps, 1.0, ContrastReading::Literal).map_err(err)?;
    let dysco = dynamic_range(&SequenceSpec::dysco(50e3, t), eps, 0.8, ContrastReading::Literal).map_err(err)?;
    let gdysco = dynamic_range(&SequenceSpec::gdysco(50e3, t), eps, 1.0, ContrastReading::Literal).map_err(err)?;
    let g_over_c = gdysco.s_max / cpmg.s_max;
    let ok = (90.0..=130.0).contains(&cpmg.ratio()) && (9.0..=15.0).contains(&dysco.ratio()) && (5.0..=7.0).contains(&g_over_c);
    verdict(
        ok,
        format!("CPMG ratio {:.1}, DYSCO ratio {:.2}, gDYSCO/CPMG S_max {:.2}", cpmg.ratio(), dysco.ratio(), g_over_c),
    )
}

fn fit_recovery() -> Check {
    let truth = NoiseParams::experiment();
    let spectrum = truth.spectrum().map_err(err)?;
    let grid = linspace(1e-6, 3e-4, 300);
    let clean = synth_cpmg_family(&spectrum, &[8], &[grid], Sampling::Dense).map_err(err)?.remove(0);
    let start = NoiseParams::from_array(truth.to_array().map(|v| 2.0 * v));
    let fit = fit_noise_params(&clean, 8, start, None, NmConfig::default()).map_err(err)?;
    let worst = fit.values().iter().zip(truth.to_array()).map(|(v, t)| (v / t - 1.0).abs()).fold(0.0, f64::max);
    let mut larmor_worst: f64 = 0.0;
    for seed in 0..10 {
        let noisy = add_measurement_noise(&clean, 0.01, seed).map_err(err)?;
        let fit = fit_noise_params(&noisy, 8, start, None, NmConfig::default()).map_err(err)?;
        let w = fit.get("omega_larmor").ok_or("fit lacks omega_larmor")?;
        larmor_worst = larmor_worst.max((w / truth.omega_larmor - 1.0).abs());
    }
    verdict(
        worst <= 0.05 && larmor_worst <= 0.02,
        format!(
            "noise-free max parameter error {:.3}% (limit 5%); eps = 0.01 worst Larmor error {:.3}% over 10 seeds (limit 2%)",
            100.0 * worst,
            100.0 * larmor_worst
        ),
    )
}

fn linearity() -> Check {
    let spectrum = default_experiment_spectrum();
    let ff = cpmg_ff(8, 40e-6, &[]).map_err(err)?;
    let base = chi(&spectrum, &ff).map_err(err)?;
    let mut chi_exact = true;
    for a in [0.5, 2.0, 10.0] {
        chi_exact &= chi(&spectrum.scaled(a), &ff).map_err(err)? == a * base;
    }

    let points: Vec<ChiPoint> = [1u32, 4, 16]
        .iter()
        .flat_map(|&n| logspace(2e-6 * n as f64, 2e-3, 25).into_iter().map(move |t| (n, t)))
        .map(|(n, t)| {
            let c = chi(&spectrum, &cpmg_ff(n, t, &[])?)?;
            Ok(ChiPoint { n_pulses: n, t, chi: c })
        })
        .collect::<qnoise::Result<_>>()
        .map_err(err)?;
    let base = sd_from_chi(&points, &AnalyticFf, SdConfig::default()).map_err(err)?;
    let mut sd_worst: f64 = 0.0;
    let mut bitwise = true;
    for a in [0.5, 2.0, 10.0] {
        let scaled: Vec<ChiPoint> = points.iter().map(|p| ChiPoint { chi: a * p.chi, ..*p }).collect();
        let out = sd_from_chi(&scaled, &AnalyticFf, SdConfig::default()).map_err(err)?;
        for (p, q) in base.raw.iter().zip(&out.raw) {
            let rel = if p.s == 0.0 { q.s.abs() } else { (q.s / (a * p.s) - 1.0).abs() };
            sd_worst = sd_worst.max(rel);
            if a != 10.0 {
                bitwise &= q.s == a * p.s;
            }
        }
    }
    verdict(
        chi_exact && bitwise && sd_worst <= 1e-12,
        format!(
            "chi exact: {chi_exact}; SD bitwise for a = 0.5, 2: {bitwise}; SD worst relative deviation {sd_worst:.1e} (limit 1e-12)"
        ),
    )
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let mut full = vec!["qnoise".to_string(), "--out".to_string(), dir.display().to_string()];
    full.extend(args.iter().map(|s| s.to_string()));
    match qnoise::cli::run(full) {
        0 => Ok(()),
        code => Err(format!("`{}` exited with {code}", args.join(" "))),
    }
}

fn csv_files(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .map_err(err)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "csv"))
        .map(|e| Ok((e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).map_err(err)?)))
        .collect::<Result<_, String>>()?;
    files.sort();
    Ok(files)
}

fn determinism() -> Check {
    let commands: [&[&str]; 3] = [
        &["synth", "--epsilon", "0.02", "--seed", "11", "--points", "40"],
        &["oracle", "--family", "cpmg", "--n", "4", "--duration", "100e-6", "--realizations", "2000", "--seed", "5"],
        &["roundtrip", "--epsilon", "0.03", "--seed", "7", "--times-per-n", "40"],
    ];
    let mut compared = 0;
    for args in commands {
        let a = tempfile::tempdir().map_err(err)?;
        let b = tempfile::tempdir().map_err(err)?;
        run_cli(a.path(), args)?;
        run_cli(b.path(), args)?;
        let (fa, fb) = (csv_files(a.path())?, csv_files(b.path())?);
        if fa.is_empty() {
            return Err(format!("`{}` wrote no CSV files", args[0]));
        }
        if fa != fb {
            return Err(format!("`{}` outputs differ between identical runs", args[0]));
        }
        compared += fa.len();
    }
    Ok(format!("{compared} CSV files byte-identical across repeated synth, oracle and roundtrip runs"))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 12] = [
        ("FF normalization", ff_normalization),
        ("peak-position table", peak_positions),
        ("FWHM constants", fwhm_constants),
        ("gain table", gains),
        ("harmonic content", harmonic_content),
        ("oracle agreement", oracle_agreement),
        ("SD round trip, Lorentzian", lorentzian_roundtrip),
        ("peak study", peak_study),
        ("dynamic range", dynamic_ranges),
        ("noise-model fit recovery", fit_recovery),
        ("linearity", linearity),
        ("determinism", determinism),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (tag, detail) = match check() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failures += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {tag} {name}: {detail} [{:.1} s]", i + 1, start.elapsed().as_secs_f64());
    }
    println!("{} of {} criteria pass", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
