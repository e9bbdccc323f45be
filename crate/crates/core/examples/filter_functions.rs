//! Peak position, width, gain and harmonic content of the filter functions.
//!
//! cargo run --example filter_functions

use qnoise::filters::{analytic_ff, gdysco_fwhm, peak_stats};
use qnoise::sequences::SequenceSpec;

fn main() -> qnoise::Result<()> {
    let t = 160e-6;
    println!("{:<10} {:>10} {:>8} {:>9} {:>7} {:>10}", "sequence", "f0 [Hz]", "2 f0 t", "FWHM t", "gain", "main lobe");
    let mut specs: Vec<(String, SequenceSpec)> =
        [1, 2, 4, 8, 16, 32].iter().map(|&n| (format!("CPMG-{n}"), SequenceSpec::cpmg_with_duration(n, t))).collect();
    specs.push(("DYSCO".into(), SequenceSpec::dysco(50e3, t)));
    specs.push(("gDYSCO".into(), SequenceSpec::gdysco(50e3, t)));
    for (name, spec) in specs {
        let p = peak_stats(&analytic_ff(&spec, &[])?)?;
        println!(
            "{name:<10} {:>10.1} {:>8.3} {:>9.4} {:>7.4} {:>9.1}%",
            p.f0,
            2.0 * p.f0 * t,
            p.fwhm * t,
            p.gain,
            100.0 * p.main_lobe_area / p.total_area
        );
    }
    println!("closed-form gDYSCO FWHM for sigma = t/6: {:.1} Hz", gdysco_fwhm(t / 6.0));

    let p = peak_stats(&analytic_ff(&SequenceSpec::cpmg_with_duration(8, t), &[])?)?;
    println!("\nCPMG-8 harmonics:");
    for (f, a) in p.harmonic_frequencies.iter().zip(&p.harmonic_areas) {
        println!("  {:.2} f0 carries {:.1}% of the area", f / p.f0, 100.0 * a / p.total_area);
    }
    Ok(())
}
