//! Larmor peak recovered by CPMG decomposition, DYSCO and gDYSCO from noisy
//! synthetic data.
//!
//! cargo run --release --example peak_resolution

use qnoise::noise::default_experiment_spectrum;
use qnoise::roundtrip::{run_roundtrip, RoundtripConfig};

fn main() -> qnoise::Result<()> {
    let spectrum = default_experiment_spectrum();
    let cfg = RoundtripConfig { epsilon: 0.03, seed: 4, ..Default::default() };
    let report = run_roundtrip(&spectrum, &cfg)?;
    println!(
        "truth: center {:.2} kHz, width {:.2} kHz",
        report.truth_center.unwrap_or(f64::NAN) / 1e3,
        report.truth_width.unwrap_or(f64::NAN) / 1e3
    );
    for o in &report.outcomes {
        match (o.center(), o.width()) {
            (Some(c), Some(w)) => println!("{:?}: center {:.2} kHz, width {:.2} kHz", o.method, c / 1e3, w / 1e3),
            _ => println!("{:?}: fit failed ({})", o.method, o.fit_error.as_deref().unwrap_or("unknown")),
        }
    }
    Ok(())
}
