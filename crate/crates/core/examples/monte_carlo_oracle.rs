//! Monte Carlo dephasing of simulated noise realizations against the
//! quadrature value of chi.
//!
//! cargo run --release --example monte_carlo_oracle

use qnoise::filters::analytic_ff;
use qnoise::forward::chi;
use qnoise::noise::default_experiment_spectrum;
use qnoise::oracle::{mc_coherence, McConfig};
use qnoise::sequences::{build_trace, SequenceSpec};

fn main() -> qnoise::Result<()> {
    let spectrum = default_experiment_spectrum();
    for spec in [SequenceSpec::hahn(5e-6), SequenceSpec::cpmg_with_duration(8, 40e-6), SequenceSpec::dysco(100e3, 200e-6)] {
        let rate = if spec.family.is_pulsed() { 160.0 / spec.tau_free } else { 200.0 * spec.feature_frequency() };
        let trace = build_trace(&spec, rate)?;
        let cfg = McConfig::for_trace(&spectrum, &trace, 10_000, 1);
        let mc = mc_coherence(&spectrum, &trace, &cfg)?;
        let exact = chi(&spectrum, &analytic_ff(&spec, &[])?)?;
        println!(
            "{:<7} chi MC {:.4} +- {:.4}, quadrature {exact:.4}; coherence MC {:.4} vs exp(-chi) {:.4}",
            spec.family,
            mc.chi_estimate,
            mc.chi_stderr,
            mc.coherence,
            (-exact).exp()
        );
    }
    Ok(())
}
