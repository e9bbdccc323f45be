//! Stretched-exponential envelope and Larmor revival comb fitted to a
//! Hahn-echo decay.
//!
//! cargo run --release --example envelope_and_revivals

use qnoise::filters::linspace;
use qnoise::fitting::{fit_envelope, fit_revival_comb};
use qnoise::forward::{revival_times, synth_cpmg_family, Sampling};
use qnoise::noise::default_experiment_spectrum;
use qnoise::optim::NmConfig;

fn main() -> qnoise::Result<()> {
    let spectrum = default_experiment_spectrum();
    let w_l = spectrum.larmor_omega().expect("reference spectrum has a Larmor peak");

    let tops = revival_times(1, w_l, 1e-6, 2e-3);
    let top_curve = synth_cpmg_family(&spectrum, &[1], &[tops], Sampling::Dense)?.remove(0);
    let points: Vec<(f64, f64)> = top_curve.points.iter().map(|p| (p.x, p.coherence)).collect();
    let env = fit_envelope(&points, None, NmConfig::default())?;
    println!("envelope at revivals: T = {:.3e} s, p = {:.3}", env.get("T").unwrap_or(f64::NAN), env.get("p").unwrap_or(f64::NAN));

    let dense = synth_cpmg_family(&spectrum, &[1], &[linspace(1e-6, 250e-6, 600)], Sampling::Dense)?.remove(0);
    match fit_revival_comb(&dense, NmConfig::default()) {
        Ok(comb) => {
            for p in &comb.parameters {
                println!("{:<14} {:.4e} {}", p.name, p.value, p.unit);
            }
            let period = 2.0 * std::f64::consts::PI / w_l;
            println!("expected revival spacing 2 x Larmor period = {:.4e} s", 2.0 * period);
        }
        Err(e) => println!("comb fit failed: {e}"),
    }
    Ok(())
}
