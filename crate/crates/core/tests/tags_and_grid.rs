use proptest::prelude::*;
use vqn_core::tagcore::*;

#[test]
fn grid_wavelengths() {
    let printed = [
        (16, 1564.68),
        (17, 1563.86),
        (18, 1563.05),
        (19, 1562.23),
        (23, 1558.98),
        (24, 1558.17),
        (25, 1557.36),
        (26, 1556.55),
    ];
    for (ch, nm) in printed {
        let got = itu_wavelength_nm(ch).unwrap();
        assert!((got - nm).abs() <= 0.01, "ch{ch}: {got}");
        // independent: c / (190 + n/10)
        let oracle = 299_792.458 / (190.0 + ch as f64 / 10.0);
        assert!((got - oracle).abs() < 1e-9);
    }
}

#[test]
fn testbed_pairs_conserve_energy() {
    for s in SIGNAL_CHANNELS {
        let idler = partner_channel(s).unwrap();
        assert_eq!(s + idler, 42);
        let check = energy_conservation_check(s, 780.0, DEFAULT_ENERGY_TOLERANCE_THZ).unwrap();
        assert!(check.conserved);
        let pump = 299_792.458 / 780.0;
        let oracle = (itu_frequency_thz(s as i64).unwrap() + itu_frequency_thz(idler as i64).unwrap()) - pump;
        assert!((check.residual_thz.abs() - oracle.abs()).abs() < 1e-9);
    }
}

fn stream_strategy() -> impl Strategy<Value = TagStream> {
    (1i64..1_000_000_000, prop::collection::vec((0u16..64, 0.0f64..=1.0), 0..200)).prop_map(|(dur, raw)| {
        let recs = raw
            .into_iter()
            .map(|(c, f)| TagRecord::new(c, (f * dur as f64) as i64))
            .collect();
        TagStream::from_unsorted(recs, dur).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn binary_round_trip(stream in stream_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tags.vqtt");
        write_stream(&stream, &path).unwrap();
        let len = std::fs::metadata(&path).unwrap().len() as usize;
        prop_assert_eq!(len, HEADER_LEN + RECORD_LEN * stream.len());
        let back = read_stream(&path).unwrap();
        prop_assert_eq!(back.records(), stream.records());
        prop_assert_eq!(back.duration_ps(), stream.duration_ps());
    }

    #[test]
    fn csv_round_trip(stream in stream_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tags.csv");
        write_csv(&stream, &path).unwrap();
        let back = read_stream(&path).unwrap();
        prop_assert_eq!(back.records(), stream.records());
    }

    #[test]
    fn merged_streams_stay_sorted(a in stream_strategy(), b in stream_strategy()) {
        let d = a.duration_ps().max(b.duration_ps());
        let a = TagStream::new(a.into_records(), d).unwrap();
        let b = TagStream::new(b.into_records(), d).unwrap();
        let m = merge_streams(&[a.clone(), b.clone()]).unwrap();
        prop_assert_eq!(m.len(), a.len() + b.len());
        prop_assert!(m.records().windows(2).all(|w| w[0] <= w[1]));
    }
}
