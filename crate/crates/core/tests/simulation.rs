use vqn_core::allocation::Policy;
use vqn_core::simulation::*;

#[test]
fn littles_law_on_a_long_run() {
    let cfg = SimConfig {
        duration: 20_000.0,
        repetitions: 1,
        ..SimConfig::default().with_resources(5).with_population(10).with_seed(3)
    };
    let m = run_once(&cfg, 3).unwrap();
    let lambda = m.arrivals as f64 / cfg.duration;
    let predicted = lambda * m.avg_wait;
    assert!(m.avg_wait > 0.0);
    assert!(
        (m.avg_queue_length - predicted).abs() <= 0.2 * predicted,
        "L {} vs lambda W {predicted}",
        m.avg_queue_length
    );
}

#[test]
fn conservation_and_series_shape() {
    for policy in [Policy::Hungarian, Policy::Fcfs] {
        for seed in 0..5 {
            let cfg = SimConfig::default().with_policy(policy).with_seed(seed);
            for r in run(&cfg).unwrap().runs {
                assert_eq!(r.arrivals, r.completions + r.in_service_at_end + r.waiting_at_end);
                assert!(r.cumulative_throughput_series.windows(2).all(|w| w[0].1 < w[1].1));
                assert!(r.queue_length_series.windows(2).all(|w| w[0].0 <= w[1].0));
                assert!(r.in_service_at_end <= cfg.n_resources);
                assert!((0.0..=1.0 + 1e-12).contains(&r.fairness));
            }
        }
    }
}

#[test]
fn one_resource_makes_policies_agree() {
    let cfg = SimConfig::default().with_resources(1).with_population(1).with_seed(8);
    let c = compare_policies(&cfg).unwrap();
    assert_eq!(c.hungarian.runs, c.fcfs.runs);
}

#[test]
fn ample_capacity_means_no_waiting() {
    let rows = sweep_resources(&Preset::Fig6.base_config(1), FIG6_USERS, &[FIG6_USERS, 30]).unwrap();
    for r in rows {
        assert_eq!(r.metrics.avg_wait, 0.0);
    }
}

#[test]
fn fig6_endpoints() {
    let rows = sweep_resources(&Preset::Fig6.base_config(42), FIG6_USERS, &FIG6_RESOURCES).unwrap();
    let (first, last) = (&rows[0].metrics, &rows[rows.len() - 1].metrics);
    assert!(last.fairness >= first.fairness);
    assert!(last.avg_wait <= first.avg_wait);
}

#[test]
fn presets_write_output() {
    let mut buf = Vec::new();
    run_preset(Preset::Fig7, 42, None).unwrap().write_to(&mut buf).unwrap();
    let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
    assert!(v["queue_length_series"].is_array());
}
