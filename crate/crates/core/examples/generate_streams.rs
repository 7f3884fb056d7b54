//! Generates the testbed streams and writes one VQTT file per channel.
//!
//! ```text
//! cargo run -p vqn-core --example generate_streams -- [out_dir] [seconds]
//! ```

use vqn_core::photon_source::{generate_pair, testbed_preset};
use vqn_core::tagcore::{read_stream, write_stream};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = std::path::PathBuf::from(args.next().unwrap_or_else(|| "streams".into()));
    let seconds: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1.0);
    let cfg = testbed_preset().with_duration(seconds).with_seed(7);
    std::fs::create_dir_all(&dir)?;

    for (index, pair) in cfg.pairs.iter().enumerate() {
        let (signal, idler) = generate_pair(&cfg, index)?;
        for (ch, stream) in [(pair.signal, signal), (pair.idler, idler)] {
            let path = dir.join(format!("ch{ch}.vqtt"));
            write_stream(&stream, &path)?;
            let back = read_stream(&path)?;
            assert_eq!(back.records(), stream.records());
            println!(
                "{}: {} tags, {:.0} Hz (expected {:.0} Hz)",
                path.display(),
                stream.len(),
                stream.len() as f64 / seconds,
                if ch == pair.signal { pair.singles_signal_hz() } else { pair.singles_idler_hz() }
            );
        }
    }
    Ok(())
}
