//! Five-parameter noise model fitted to a noisy CPMG-8 decay from a start
//! point twice the true values.
//!
//! cargo run --release --example noise_model_fit

use qnoise::filters::linspace;
use qnoise::fitting::fit_noise_params;
use qnoise::forward::{add_measurement_noise, synth_cpmg_family, Sampling};
use qnoise::noise::NoiseParams;
use qnoise::optim::NmConfig;

fn main() -> qnoise::Result<()> {
    let truth = NoiseParams::experiment();
    let clean = synth_cpmg_family(&truth.spectrum()?, &[8], &[linspace(1e-6, 3e-4, 300)], Sampling::Dense)?.remove(0);
    let noisy = add_measurement_noise(&clean, 0.01, 3)?;
    let start = NoiseParams::from_array(truth.to_array().map(|v| 2.0 * v));
    let fit = fit_noise_params(&noisy, 8, start, None, NmConfig::default())?;
    println!("converged {} after {} iterations, residual norm {:.4}", fit.converged, fit.iterations, fit.residual_norm);
    for (p, t) in fit.parameters.iter().zip(truth.to_array()) {
        let sd = p.variance.map_or("n/a".to_string(), |v| format!("{:.2e}", v.sqrt()));
        println!("{:<14} {:>12.4e} {:<6} truth {:>10.4e}  stderr {sd}", p.name, p.value, p.unit, t);
    }
    Ok(())
}
