//! Reconstruction of a DC Lorentzian from noise-free CPMG decays.
//!
//! cargo run --release --example spectral_decomposition

use qnoise::filters::logspace;
use qnoise::forward::{synth_cpmg_family, Sampling};
use qnoise::noise::NoiseSpectrum;
use qnoise::reconstruct::{cpmg_sd, AnalyticFf, LowerSide, SdConfig};

fn main() -> qnoise::Result<()> {
    let spectrum = NoiseSpectrum::lorentzian_dc(20e3, 1e5)?;
    let n_list = [1, 2, 4, 8, 16, 32, 64];
    let grids: Vec<Vec<f64>> = n_list.iter().map(|&n| logspace(0.3e-6 * n as f64, 3e-3, 80)).collect();
    let curves = synth_cpmg_family(&spectrum, &n_list, &grids, Sampling::Dense)?;

    for (label, lower_side) in [("single pass", LowerSide::Ignore), ("two pass", LowerSide::TwoPass)] {
        let sd = cpmg_sd(&curves, &AnalyticFf, SdConfig { lower_side, ..SdConfig::default() })?;
        println!("{label}:");
        for p in sd.valid_points().step_by(4) {
            let truth = spectrum.density(p.omega);
            println!("  omega {:>10.3e}  S {:>10.3e}  truth {:>10.3e}  error {:>+6.1}%", p.omega, p.s, truth, 100.0 * (p.s / truth - 1.0));
        }
        for w in &sd.warnings {
            println!("  warning: {w}");
        }
    }
    Ok(())
}
