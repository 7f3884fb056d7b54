//! Prints the resource and population sweeps plus a head-to-head of both policies.
//!
//! ```text
//! cargo run -p vqn-core --example simulation_trends -- [seed]
//! ```

use vqn_core::allocation::Policy;
use vqn_core::simulation::{compare_policies, run_preset, Preset, PresetOutput, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(42);

    for preset in [Preset::Fig5, Preset::Fig6] {
        println!("== {preset:?} (seed {seed})");
        run_preset(preset, seed, None)?.write_to(std::io::stdout())?;
    }

    if let PresetOutput::Single(m) = run_preset(Preset::Fig7, seed, None)? {
        let max_q = m.queue_length_series.iter().map(|(_, q)| *q).max().unwrap_or(0);
        println!(
            "== Fig7: {} completions, max queue {max_q}, fairness {:.3}",
            m.throughput, m.fairness
        );
    }

    println!("== policy comparison, 6 pairs / 10 users");
    println!("seed,hungarian_fairness,fcfs_fairness,hungarian_wait,fcfs_wait");
    for s in 0..10 {
        let c = compare_policies(&SimConfig::default().with_seed(s).with_policy(Policy::Hungarian))?;
        println!(
            "{s},{:.4},{:.4},{:.2},{:.2}",
            c.hungarian.fairness, c.fcfs.fairness, c.hungarian.avg_wait, c.fcfs.avg_wait
        );
    }
    Ok(())
}
