//! Simulates each testbed pair and reports singles, coincidences, accidentals and CAR,
//! plus a coarse view of the delay histogram around the peak.
//!
//! ```text
//! cargo run -p vqn-core --example coincidence_analysis -- [seconds]
//! ```

use vqn_core::measurement::{coincidence_count, delay_histogram_around, CoincidenceSpec};
use vqn_core::photon_source::{expected_accidental_rate, generate_pair, testbed_preset};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seconds: f64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(5.0);
    let cfg = testbed_preset().with_duration(seconds).with_seed(1);
    let spec = CoincidenceSpec::default();

    println!("pair       singles_a  singles_b  cc/s      acc/s   expected  CAR");
    for (index, pair) in cfg.pairs.iter().enumerate() {
        let (a, b) = generate_pair(&cfg, index)?;
        let r = coincidence_count(&a, &b, &spec, seconds)?;
        println!(
            "Ch{}-Ch{}  {:>9.0}  {:>9.0}  {:>8.1}  {:>6.2}  {:>8.2}  {}",
            pair.signal,
            pair.idler,
            r.rate_a_hz,
            r.rate_b_hz,
            r.coincidence_rate_hz,
            r.accidental_rate_hz,
            expected_accidental_rate(r.rate_a_hz, r.rate_b_hz, spec.window_ps as f64 * 1e-12),
            r.car.map_or("n/a".into(), |c| format!("{c:.0}"))
        );
        if index == 0 {
            let h = delay_histogram_around(&a, &b, 20, 400, r.peak_delay_ps)?;
            let max = h.counts.iter().copied().max().unwrap_or(1).max(1);
            for (k, c) in h.counts.iter().enumerate() {
                let bar = "#".repeat((c * 50 / max) as usize);
                println!("  {:>6} ps {bar}", h.bin_center(k));
            }
        }
    }
    Ok(())
}
