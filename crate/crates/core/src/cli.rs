//! Command-line front end. [`run`] parses arguments, executes one
//! subcommand and returns the process exit status:
//!
//! - `0` all artifacts written
//! - `2` usage error (unknown command or flag)
//! - `3` validation failure
//! - `4` numeric failure (quadrature coverage, fit, budget)

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::error::{Error, Result};
use crate::filters::{analytic_ff, default_grid, linspace, logspace, peak_stats};
use crate::fitting::{fit_envelope, fit_gaussian_peak, fit_noise_params, fit_revival_comb};
use crate::forward::{add_measurement_noise, chi, synth_cpmg_family, synth_dysco_sweep, Sampling};
use crate::io::{ingest_curve, read_spectrum, OutputDir, Schema};
use crate::noise::{default_experiment_spectrum, NoiseParams, NoiseSpectrum};
use crate::optim::NmConfig;
use crate::oracle::{mc_coherence, McConfig};
use crate::reconstruct::{cpmg_sd, direct_extract, AnalyticFf, LowerSide, Method, SdConfig};
use crate::roundtrip::{run_roundtrip, RoundtripConfig};
use crate::sequences::{bandwidth_report_with_margin, build_trace, Family, SequenceSpec, DEFAULT_BANDWIDTH_MARGIN};

#[derive(Debug, Parser)]
#[command(name = "qnoise", version, about = "Noise spectroscopy workbench", args_override_self = true)]
pub struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = "QNOISE_OUT", default_value = "qnoise-out")]
    pub out: PathBuf,
    /// JSON object of flag values, applied before the command line.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Print progress to standard error.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter function CSV and peak statistics for one sequence.
    Ff(FfArgs),
    /// Accessible frequency band of a sequence.
    Bandwidth(BandwidthArgs),
    /// Synthetic coherence curves.
    Synth(SynthArgs),
    /// Monte Carlo coherence compared with quadrature.
    Oracle(OracleArgs),
    /// Spectrum from coherence files.
    Reconstruct(ReconstructArgs),
    /// Least-squares fits.
    Fit(FitArgs),
    /// Synthesize, reconstruct and compare against the true spectrum.
    Roundtrip(RoundtripArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SeqArgs {
    #[arg(long, default_value = "cpmg")]
    pub family: Family,
    /// Number of π pulses (pulsed families).
    #[arg(long, default_value_t = 1)]
    pub n: u32,
    /// Total time, seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Half-interval between π pulses, seconds (pulsed families).
    #[arg(long)]
    pub tau: Option<f64>,
    /// Modulation frequency, Hz (continuous families).
    #[arg(long)]
    pub f0: Option<f64>,
    /// Envelope width, seconds (gdysco).
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub quant_steps: u32,
    #[arg(long, default_value_t = 1.0)]
    pub amplitude: f64,
}

impl SeqArgs {
    pub fn spec(&self) -> Result<SequenceSpec> {
        let spec = match self.family {
            Family::Cpmg | Family::Hahn => {
                let n = if self.family == Family::Hahn { 1 } else { self.n };
                match (self.duration, self.tau) {
                    (Some(t), None) => SequenceSpec::cpmg_with_duration(n, t),
                    (None, Some(tau)) => SequenceSpec::cpmg(n, tau),
                    (Some(_), Some(_)) => return Err(Error::input("give either --duration or --tau, not both")),
                    (None, None) => return Err(Error::input("pulsed sequences need --duration or --tau")),
                }
            }
            Family::Dysco | Family::Gdysco => {
                let t = self.duration.ok_or_else(|| Error::input("continuous sequences need --duration"))?;
                let f0 = self.f0.ok_or_else(|| Error::input("continuous sequences need --f0"))?;
                let s = if self.family == Family::Dysco { SequenceSpec::dysco(f0, t) } else { SequenceSpec::gdysco(f0, t) };
                match self.sigma {
                    Some(sigma) => s.with_envelope_sigma(sigma),
                    None => s,
                }
                .with_quant_steps(self.quant_steps)
                .with_amplitude(self.amplitude)
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Args)]
pub struct FfArgs {
    #[command(flatten)]
    pub seq: SeqArgs,
    /// Number of grid points; the default grid resolves every lobe.
    #[arg(long)]
    pub points: Option<usize>,
    /// Upper end of the grid, rad/s (with --points).
    #[arg(long)]
    pub omega_max: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BandwidthArgs {
    #[command(flatten)]
    pub seq: SeqArgs,
    /// Rabi frequency, Hz.
    #[arg(long)]
    pub f_rabi: f64,
    /// Hahn-echo decay time, seconds (pulsed families).
    #[arg(long)]
    pub t2_echo: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_BANDWIDTH_MARGIN)]
    pub margin: f64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// default | zero | flat:L | lorentzian:D,S | gaussian:D,S,W | path to JSON
    #[arg(long, default_value = "default")]
    pub spectrum: String,
    #[arg(long, default_value = "cpmg")]
    pub family: Family,
    /// Pulse counts (pulsed families).
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32,64")]
    pub n_list: Vec<u32>,
    /// Shortest total time, seconds.
    #[arg(long, default_value_t = 1e-6)]
    pub t_min: f64,
    #[arg(long, default_value_t = 3e-3)]
    pub t_max: f64,
    /// Only total times that are whole Larmor periods per free interval.
    #[arg(long)]
    pub revivals_only: bool,
    /// Sequence duration, seconds (continuous families).
    #[arg(long, default_value_t = 200e-6)]
    pub duration: f64,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub quant_steps: u32,
    /// Sweep limits, Hz (continuous families).
    #[arg(long, default_value_t = 30e3)]
    pub f_min: f64,
    #[arg(long, default_value_t = 100e3)]
    pub f_max: f64,
    #[arg(long, default_value_t = 100)]
    pub points: usize,
    /// Standard deviation of added coherence noise.
    #[arg(long, default_value_t = 0.0)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long, default_value = "default")]
    pub spectrum: String,
    #[command(flatten)]
    pub seq: SeqArgs,
    #[arg(long, default_value_t = 10_000)]
    pub realizations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Trace sampling rate, Hz; defaults to 160 samples per free interval
    /// (pulsed) or 200 per modulation period (continuous).
    #[arg(long)]
    pub rate: Option<f64>,
    /// Relative χ tolerance of the agreement check.
    #[arg(long, default_value_t = 0.02)]
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReconstructMode {
    Sd,
    Direct,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[arg(long, value_enum)]
    pub mode: ReconstructMode,
    /// sd: `N=path` per CPMG curve (repeatable); direct: one sweep file.
    #[arg(long, required = true)]
    pub input: Vec<String>,
    /// Sequence of the sweep (direct mode).
    #[command(flatten)]
    pub seq: SeqArgs,
    #[arg(long, default_value_t = 40)]
    pub bins: usize,
    /// Skip the lower-side correction of the decomposition.
    #[arg(long)]
    pub single_pass: bool,
    #[arg(long, default_value_t = 3)]
    pub rescale_points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitMode {
    Noise,
    Envelope,
    Comb,
    Peak,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, value_enum)]
    pub mode: FitMode,
    /// Coherence CSV (noise, envelope, comb) or spectrum CSV (peak).
    #[arg(long)]
    pub input: PathBuf,
    /// CPMG pulse count (noise).
    #[arg(long, default_value_t = 8)]
    pub n: u32,
    /// JSON file with starting noise parameters (noise); defaults to the
    /// reference values.
    #[arg(long)]
    pub initial: Option<PathBuf>,
    /// Pin the envelope exponent (envelope).
    #[arg(long)]
    pub fixed_p: Option<f64>,
    /// Fit window, Hz (peak).
    #[arg(long, default_value_t = 20e3)]
    pub window_lo: f64,
    #[arg(long, default_value_t = 200e3)]
    pub window_hi: f64,
    #[arg(long, default_value_t = 2000)]
    pub max_iterations: usize,
}

#[derive(Debug, Args)]
pub struct RoundtripArgs {
    #[arg(long, default_value = "default")]
    pub spectrum: String,
    #[arg(long, default_value_t = 0.0)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Times per CPMG curve.
    #[arg(long, default_value_t = 80)]
    pub times_per_n: usize,
}

/// Parses a spectrum argument: a keyword, a `kind:params` form, or a path
/// to a JSON spectrum or JSON noise parameters.
pub fn parse_spectrum(arg: &str) -> Result<NoiseSpectrum> {
    let nums = |s: &str, k: usize| -> Result<Vec<f64>> {
        let v: Vec<f64> = s
            .split(',')
            .map(|x| x.trim().parse::<f64>().map_err(|_| Error::input(format!("bad number `{x}` in spectrum `{arg}`"))))
            .collect::<Result<_>>()?;
        if v.len() != k {
            return Err(Error::input(format!("spectrum `{arg}` needs {k} values")));
        }
        Ok(v)
    };
    match arg.split_once(':') {
        _ if arg == "default" => Ok(default_experiment_spectrum()),
        _ if arg == "zero" => Ok(NoiseSpectrum::zero()),
        Some(("flat", rest)) => NoiseSpectrum::flat(nums(rest, 1)?[0]),
        Some(("lorentzian", rest)) => {
            let v = nums(rest, 2)?;
            NoiseSpectrum::lorentzian_dc(v[0], v[1])
        }
        Some(("gaussian", rest)) => {
            let v = nums(rest, 3)?;
            NoiseSpectrum::gaussian_peak(v[0], v[1], v[2])
        }
        _ => {
            let text = std::fs::read_to_string(arg)?;
            if let Ok(p) = serde_json::from_str::<NoiseParams>(&text) {
                return p.spectrum();
            }
            let s: NoiseSpectrum = serde_json::from_str(&text)?;
            s.validate()?;
            Ok(s)
        }
    }
}

fn flag_args(config: &serde_json::Value) -> Result<Vec<String>> {
    let obj = config.as_object().ok_or_else(|| Error::input("config file must hold a JSON object"))?;
    let mut out = Vec::new();
    for (key, value) in obj {
        let flag = format!("--{}", key.replace('_', "-"));
        match value {
            serde_json::Value::Bool(true) => out.push(flag),
            serde_json::Value::Bool(false) | serde_json::Value::Null => {}
            serde_json::Value::Array(items) => {
                let joined: Vec<String> = items.iter().map(scalar_text).collect();
                out.push(flag);
                out.push(joined.join(","));
            }
            other => {
                out.push(flag);
                out.push(scalar_text(other));
            }
        }
    }
    Ok(out)
}

fn scalar_text(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

const COMMANDS: [&str; 7] = ["ff", "bandwidth", "synth", "oracle", "reconstruct", "fit", "roundtrip"];

/// Splices `--config` values in right after the subcommand name, so
/// flags given on the command line override them.
fn expand_config(mut args: Vec<String>) -> Result<Vec<String>> {
    let pos = args.iter().position(|a| a == "--config").map(|i| (i, args.get(i + 1).cloned()));
    let inline = args.iter().find_map(|a| a.strip_prefix("--config=").map(str::to_string));
    let path = match (pos, inline) {
        (Some((_, Some(p))), _) => p,
        (_, Some(p)) => p,
        _ => return Ok(args),
    };
    let text = std::fs::read_to_string(&path).map_err(|e| Error::input(format!("config {path}: {e}")))?;
    let extra = flag_args(&serde_json::from_str(&text)?)?;
    if let Some(i) = args.iter().position(|a| COMMANDS.contains(&a.as_str())) {
        args.splice(i + 1..i + 1, extra);
    }
    Ok(args)
}

fn exit_code(e: &Error) -> i32 {
    if e.is_numeric() {
        4
    } else {
        3
    }
}

/// Runs the command line `args` (including the program name) and returns
/// the exit status. Diagnostics go to standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<String> = args.into_iter().map(|a| a.into().to_string_lossy().into_owned()).collect();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return 3;
        }
    };
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn require_file(p: &Path) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(Error::input(format!("input file {} does not exist", p.display())))
    }
}

fn spectrum_inputs(arg: &str) -> Vec<PathBuf> {
    if arg.contains(':') || arg == "default" || arg == "zero" {
        Vec::new()
    } else {
        vec![PathBuf::from(arg)]
    }
}

/// Executes a parsed command line.
pub fn execute(cli: &Cli) -> Result<()> {
    let log = |msg: &str| {
        if cli.verbose > 0 {
            eprintln!("{msg}");
        }
    };
    match &cli.command {
        Command::Ff(a) => {
            let spec = a.seq.spec()?;
            let ff = analytic_ff(&spec, &[])?;
            let grid = match a.points {
                Some(n) => linspace(0.0, a.omega_max.unwrap_or_else(|| *default_grid(ff.kernel()).last().unwrap()), n),
                None => default_grid(ff.kernel()),
            };
            let ff = ff.with_grid(&grid)?;
            let stats = peak_stats(&ff)?;
            let mut out = OutputDir::create(&cli.out)?;
            out.write("ff.csv", &ff.to_csv())?;
            out.write_json("peak_stats.json", &stats)?;
            println!("f0 = {:.6e} Hz, fwhm = {:.6e} Hz, gain = {:.4}", stats.f0, stats.fwhm, stats.gain);
            out.finish("ff", None, json!({ "sequence": spec, "points": grid.len() }), &[])?;
        }
        Command::Bandwidth(a) => {
            let spec = a.seq.spec()?;
            let report = bandwidth_report_with_margin(&spec, a.f_rabi, a.t2_echo, a.margin)?;
            let mut out = OutputDir::create(&cli.out)?;
            out.write_json("bandwidth.json", &report)?;
            out.finish("bandwidth", None, json!({ "sequence": spec, "f_rabi": a.f_rabi, "t2_echo": a.t2_echo, "margin": a.margin }), &[])?;
        }
        Command::Synth(a) => {
            let inputs = spectrum_inputs(&a.spectrum);
            inputs.iter().try_for_each(|p| require_file(p))?;
            let spectrum = parse_spectrum(&a.spectrum)?;
            let mut out = OutputDir::create(&cli.out)?;
            match a.family {
                Family::Cpmg | Family::Hahn => {
                    let n_list = if a.family == Family::Hahn { vec![1] } else { a.n_list.clone() };
                    let grid = logspace(a.t_min, a.t_max, a.points);
                    let sampling = if a.revivals_only { Sampling::RevivalsOnly } else { Sampling::Dense };
                    log(&format!("synthesizing {} CPMG curves", n_list.len()));
                    let curves = synth_cpmg_family(&spectrum, &n_list, &[grid], sampling)?;
                    for (k, (c, n)) in curves.iter().zip(&n_list).enumerate() {
                        let c = add_measurement_noise(c, a.epsilon, a.seed.wrapping_add(k as u64))?;
                        out.write(&format!("curve_cpmg{n}.csv"), &c.to_csv())?;
                        out.write_json(&format!("curve_cpmg{n}.json"), &c.sidecar())?;
                    }
                }
                Family::Dysco | Family::Gdysco => {
                    let f = linspace(a.f_min, a.f_max, a.points);
                    let mid = f[f.len() / 2];
                    let base = if a.family == Family::Dysco {
                        SequenceSpec::dysco(mid, a.duration)
                    } else {
                        SequenceSpec::gdysco(mid, a.duration)
                    };
                    let template = match a.sigma {
                        Some(s) => base.with_envelope_sigma(s),
                        None => base,
                    }
                    .with_quant_steps(a.quant_steps);
                    template.validate()?;
                    let c = add_measurement_noise(&synth_dysco_sweep(&spectrum, &template, &f)?, a.epsilon, a.seed)?;
                    let name = a.family.to_string();
                    out.write(&format!("curve_{name}.csv"), &c.to_csv())?;
                    out.write_json(&format!("curve_{name}.json"), &c.sidecar())?;
                }
            }
            let config = json!({
                "spectrum": spectrum, "family": a.family, "n_list": a.n_list, "t_min": a.t_min, "t_max": a.t_max,
                "points": a.points, "revivals_only": a.revivals_only, "duration": a.duration, "sigma": a.sigma,
                "quant_steps": a.quant_steps, "f_min": a.f_min, "f_max": a.f_max, "epsilon": a.epsilon,
            });
            out.finish("synth", Some(a.seed), config, &inputs)?;
        }
        Command::Oracle(a) => {
            let inputs = spectrum_inputs(&a.spectrum);
            inputs.iter().try_for_each(|p| require_file(p))?;
            let spectrum = parse_spectrum(&a.spectrum)?;
            let spec = a.seq.spec()?;
            let rate = a.rate.unwrap_or(if spec.family.is_pulsed() {
                160.0 / spec.tau_free
            } else {
                200.0 * spec.feature_frequency()
            });
            let trace = build_trace(&spec, rate)?;
            let cfg = McConfig::for_trace(&spectrum, &trace, a.realizations, a.seed);
            log(&format!("{} realizations, {} modes, {} samples", cfg.n_realizations, cfg.spectral_components, trace.values().len()));
            let mc = mc_coherence(&spectrum, &trace, &cfg)?;
            let chi_q = chi(&spectrum, &analytic_ff(&spec, &[])?)?;
            let diff = (mc.chi_estimate - chi_q).abs();
            let agree = diff <= a.tolerance * chi_q + 3.0 * mc.chi_stderr;
            let mut out = OutputDir::create(&cli.out)?;
            out.write_json(
                "oracle.json",
                &json!({
                    "monte_carlo": mc,
                    "chi_quadrature": chi_q,
                    "coherence_quadrature": (-chi_q).exp(),
                    "chi_abs_difference": diff,
                    "agree": agree,
                }),
            )?;
            out.write(
                "oracle.csv",
                &format!(
                    "quantity,monte_carlo,quadrature\nchi,{},{}\ncoherence,{},{}\n",
                    mc.chi_estimate,
                    chi_q,
                    mc.coherence,
                    (-chi_q).exp()
                ),
            )?;
            let config = json!({ "spectrum": spectrum, "sequence": spec, "rate": rate, "mc": {
                "n_realizations": cfg.n_realizations, "dt": cfg.dt, "spectral_components": cfg.spectral_components,
                "omega_max": cfg.omega_max() }, "tolerance": a.tolerance });
            out.finish("oracle", Some(a.seed), config, &inputs)?;
            if !agree {
                return Err(Error::Fit(format!("Monte Carlo χ {} disagrees with quadrature {chi_q}", mc.chi_estimate)));
            }
        }
        Command::Reconstruct(a) => {
            let mut inputs = Vec::new();
            let result = match a.mode {
                ReconstructMode::Sd => {
                    let mut pairs = Vec::new();
                    for item in &a.input {
                        let (n, path) = item
                            .split_once('=')
                            .ok_or_else(|| Error::input(format!("sd inputs take the form N=path, got `{item}`")))?;
                        let n: u32 = n.parse().map_err(|_| Error::input(format!("bad pulse count in `{item}`")))?;
                        let path = PathBuf::from(path);
                        require_file(&path)?;
                        pairs.push((n, path));
                    }
                    let mut curves = Vec::new();
                    for (n, path) in &pairs {
                        let mut c = ingest_curve(path, Schema::TimeCsv)?;
                        c.sequence = Some(SequenceSpec::cpmg_with_duration(*n, c.points[0].x));
                        curves.push(c);
                        inputs.push(path.clone());
                    }
                    let cfg = SdConfig {
                        bin_count: a.bins,
                        lower_side: if a.single_pass { LowerSide::Ignore } else { LowerSide::TwoPass },
                        rescale_points: a.rescale_points,
                    };
                    cpmg_sd(&curves, &AnalyticFf, cfg)?
                }
                ReconstructMode::Direct => {
                    if a.input.len() != 1 {
                        return Err(Error::input("direct mode takes exactly one input file"));
                    }
                    let path = PathBuf::from(&a.input[0]);
                    require_file(&path)?;
                    let mut seq = a.seq.clone();
                    let curve = ingest_curve(&path, Schema::FreqCsv)?;
                    seq.f0.get_or_insert(curve.points[curve.len() / 2].x);
                    let template = seq.spec()?;
                    inputs.push(path);
                    direct_extract(&curve, &template)?
                }
            };
            for w in &result.warnings {
                eprintln!("warning: {w}");
            }
            let mut out = OutputDir::create(&cli.out)?;
            out.write("spectrum.csv", &result.to_csv())?;
            out.write_json("spectrum_meta.json", &result.metadata())?;
            let config = json!({ "mode": format!("{:?}", a.mode).to_lowercase(), "bins": a.bins,
                "single_pass": a.single_pass, "rescale_points": a.rescale_points });
            out.finish("reconstruct", None, config, &inputs)?;
        }
        Command::Fit(a) => {
            require_file(&a.input)?;
            let mut inputs = vec![a.input.clone()];
            if let Some(p) = &a.initial {
                require_file(p)?;
                inputs.push(p.clone());
            }
            let nm = NmConfig { max_iterations: a.max_iterations, ..NmConfig::default() };
            let result = match a.mode {
                FitMode::Noise => {
                    let initial = match &a.initial {
                        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
                        None => NoiseParams::experiment(),
                    };
                    let curve = ingest_curve(&a.input, Schema::TimeCsv)?;
                    fit_noise_params(&curve, a.n, initial, None, nm)?
                }
                FitMode::Envelope => {
                    let curve = ingest_curve(&a.input, Schema::TimeCsv)?;
                    let pts: Vec<(f64, f64)> =
                        curve.points.iter().filter(|p| !p.flagged).map(|p| (p.x, p.coherence.min(1.0))).collect();
                    fit_envelope(&pts, a.fixed_p, nm)?
                }
                FitMode::Comb => fit_revival_comb(&ingest_curve(&a.input, Schema::TimeCsv)?, nm)?,
                FitMode::Peak => {
                    let s = read_spectrum(&a.input, Method::CpmgSd)?;
                    fit_gaussian_peak(&s, (a.window_lo, a.window_hi), nm)?
                }
            };
            let mut out = OutputDir::create(&cli.out)?;
            out.write_json("fit.json", &result)?;
            let config = json!({ "mode": format!("{:?}", a.mode).to_lowercase(), "n": a.n, "fixed_p": a.fixed_p,
                "window_hz": [a.window_lo, a.window_hi], "max_iterations": a.max_iterations });
            out.finish("fit", None, config, &inputs)?;
            if !result.converged {
                eprintln!("warning: fit stopped at the iteration cap without converging");
            }
        }
        Command::Roundtrip(a) => {
            let inputs = spectrum_inputs(&a.spectrum);
            inputs.iter().try_for_each(|p| require_file(p))?;
            let spectrum = parse_spectrum(&a.spectrum)?;
            let cfg = RoundtripConfig { epsilon: a.epsilon, seed: a.seed, times_per_n: a.times_per_n, ..Default::default() };
            let report = run_roundtrip(&spectrum, &cfg)?;
            let mut out = OutputDir::create(&cli.out)?;
            for o in &report.outcomes {
                let name = match o.method {
                    Method::CpmgSd => "cpmg_sd",
                    Method::DyscoDirect => "dysco",
                    Method::GdyscoDirect => "gdysco",
                };
                out.write(&format!("spectrum_{name}.csv"), &o.spectrum.to_csv())?;
            }
            let truth: Vec<f64> = report.outcomes[0].spectrum.points.iter().map(|p| p.omega).collect();
            out.write("spectrum_truth.csv", &spectrum.to_csv(&truth))?;
            out.write_json("metrics.json", &report.metrics())?;
            let mut rows = String::from("method,center_hz,width_hz\n");
            for o in &report.outcomes {
                rows.push_str(&format!(
                    "{:?},{},{}\n",
                    o.method,
                    o.center().map_or(String::new(), |v| v.to_string()),
                    o.width().map_or(String::new(), |v| v.to_string())
                ));
            }
            out.write("peaks.csv", &rows)?;
            out.finish("roundtrip", Some(a.seed), json!({ "spectrum": spectrum, "config": cfg }), &inputs)?;
            println!(
                "truth center {:.1} Hz; {}",
                report.truth_center.unwrap_or(f64::NAN),
                report
                    .outcomes
                    .iter()
                    .map(|o| format!("{:?}: center {:.1} Hz width {:.1} Hz", o.method, o.center().unwrap_or(f64::NAN), o.width().unwrap_or(f64::NAN)))
                    .collect::<Vec<_>>()
                    .join("; ")
            );
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_values_become_flags() {
        let v = json!({ "n": 16, "duration": 1.6e-4, "revivals_only": true, "n_list": [1, 2], "skip": false });
        let mut f = flag_args(&v).unwrap();
        f.sort();
        assert!(f.contains(&"--revivals-only".to_string()));
        assert!(f.contains(&"1,2".to_string()));
        assert!(!f.iter().any(|s| s == "--skip"));
    }

    #[test]
    fn spectrum_keywords() {
        assert!(parse_spectrum("zero").unwrap().is_zero());
        assert!(parse_spectrum("flat:2").is_ok());
        assert!(parse_spectrum("lorentzian:1e5,1e5").is_ok());
        assert!(parse_spectrum("lorentzian:1e5").is_err());
        assert!(parse_spectrum("/nonexistent.json").is_err());
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["qnoise", "frobnicate"]), 2);
    }

    #[test]
    fn validation_errors_exit_three() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        assert_eq!(run(["qnoise", "--out", out, "ff", "--family", "cpmg", "--n", "4"]), 3);
        assert_eq!(run(["qnoise", "--out", out, "fit", "--mode", "envelope", "--input", "/no/such.csv"]), 3);
    }
}
