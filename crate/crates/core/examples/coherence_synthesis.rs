//! Coherence decays of the CPMG family under the reference noise model,
//! with and without measurement noise.
//!
//! cargo run --example coherence_synthesis

use qnoise::filters::logspace;
use qnoise::forward::{add_measurement_noise, revival_times, synth_cpmg_family, Sampling};
use qnoise::noise::default_experiment_spectrum;

fn main() -> qnoise::Result<()> {
    let spectrum = default_experiment_spectrum();
    let n_list = [1, 4, 16];
    let grid = logspace(1e-6, 1e-3, 9);
    let curves = synth_cpmg_family(&spectrum, &n_list, &[grid.clone()], Sampling::Dense)?;
    print!("{:>12}", "t [s]");
    for n in n_list {
        print!("{:>12}", format!("CPMG-{n}"));
    }
    println!();
    for (i, t) in grid.iter().enumerate() {
        print!("{t:>12.3e}");
        for c in &curves {
            print!("{:>12.5}", c.points[i].coherence);
        }
        println!();
    }

    let noisy = add_measurement_noise(&curves[1], 0.03, 7)?;
    let flagged = noisy.points.iter().filter(|p| p.flagged).count();
    println!("\nCPMG-4 with eps = 0.03: {flagged} of {} points flagged", noisy.len());

    let w_l = spectrum.larmor_omega().expect("reference spectrum has a Larmor peak");
    let revivals = revival_times(4, w_l, 1e-6, 1e-3);
    println!("CPMG-4 revival times up to 1 ms: {} points, first {:.3e} s", revivals.len(), revivals[0]);
    Ok(())
}
