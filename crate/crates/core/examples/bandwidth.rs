//! Accessible frequency band of pulsed and continuous sequences.
//!
//! cargo run --example bandwidth

use qnoise::sequences::{bandwidth_report, SequenceSpec};

fn main() -> qnoise::Result<()> {
    let f_rabi = 20e6;
    let t2_echo = 400e-6;
    for spec in [
        SequenceSpec::hahn(20e-6),
        SequenceSpec::cpmg_with_duration(64, 400e-6),
        SequenceSpec::dysco(62.5e3, 200e-6),
        SequenceSpec::gdysco(62.5e3, 200e-6),
    ] {
        let r = bandwidth_report(&spec, f_rabi, Some(t2_echo))?;
        let f_max = r.f_max.map_or("unbounded".to_string(), |f| format!("{f:.3e} Hz"));
        println!("{:<7} band {:.3e} Hz .. {f_max}, resolution {:.3e} Hz", spec.family, r.f_min, r.fwhm);
        println!("        {}", r.note);
    }
    Ok(())
}
