//! Smallest and largest resolvable spectral densities for a given
//! measurement uncertainty.
//!
//! cargo run --example dynamic_range

use qnoise::reconstruct::{dynamic_range, ContrastReading};
use qnoise::sequences::SequenceSpec;

fn main() -> qnoise::Result<()> {
    let t = 200e-6;
    let eps = 0.03;
    let cpmg = dynamic_range(&SequenceSpec::cpmg_with_duration(16, t), eps, 1.0, ContrastReading::Literal)?;
    println!("CPMG    S {:.3e} .. {:.3e} rad/s, ratio {:.1}", cpmg.s_min, cpmg.s_max, cpmg.ratio());
    for reading in [ContrastReading::Literal, ContrastReading::Normalized] {
        let d = dynamic_range(&SequenceSpec::dysco(50e3, t), eps, 0.8, reading)?;
        println!("DYSCO   S {:.3e} .. {:.3e} rad/s, ratio {:.1} ({reading:?} contrast)", d.s_min, d.s_max, d.ratio());
    }
    let g = dynamic_range(&SequenceSpec::gdysco(50e3, t), eps, 1.0, ContrastReading::Literal)?;
    println!("gDYSCO  S_max is {:.2} times the CPMG S_max", g.s_max / cpmg.s_max);
    Ok(())
}
