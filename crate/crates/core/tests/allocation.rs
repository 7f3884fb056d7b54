use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vqn_core::allocation::*;

/// Best total over every injective map from the smaller side into the larger one.
fn exhaustive_best(m: &CostMatrix) -> f64 {
    fn go(m: &CostMatrix, row: usize, used: &mut Vec<bool>, acc: f64, left: usize, best: &mut f64) {
        if left == 0 || row == m.rows() {
            if left == 0 && acc > *best {
                *best = acc;
            }
            return;
        }
        // rows may be skipped only when there are more rows than columns
        if m.rows() - row > left {
            go(m, row + 1, used, acc, left, best);
        }
        for c in 0..m.cols() {
            if !used[c] {
                used[c] = true;
                go(m, row + 1, used, acc + m.get(row, c), left - 1, best);
                used[c] = false;
            }
        }
    }
    let mut best = f64::NEG_INFINITY;
    let k = m.rows().min(m.cols());
    go(m, 0, &mut vec![false; m.cols()], 0.0, k, &mut best);
    best
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, integer: bool) -> CostMatrix {
    let data: Vec<Vec<f64>> = (0..rows)
        .map(|_| {
            (0..cols)
                .map(|_| if integer { rng.random_range(0..50) as f64 } else { rng.random::<f64>() * 12.0 })
                .collect()
        })
        .collect();
    CostMatrix::from_rows(&data).unwrap()
}

fn check_injective(a: &Assignment, rows: usize, cols: usize) {
    assert_eq!(a.pairs.len(), rows.min(cols));
    let mut r: Vec<_> = a.pairs.iter().map(|p| p.0).collect();
    let mut c: Vec<_> = a.pairs.iter().map(|p| p.1).collect();
    r.dedup();
    c.sort_unstable();
    c.dedup();
    assert_eq!(r.len(), a.pairs.len());
    assert_eq!(c.len(), a.pairs.len());
    assert!(a.pairs.iter().all(|&(i, j)| i < rows && j < cols));
}

#[test]
fn matches_exhaustive_search_on_all_small_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for rows in 1..=6 {
        for cols in 1..=6 {
            for trial in 0..300 {
                let m = random_matrix(&mut rng, rows, cols, trial % 2 == 0);
                let a = hungarian_max(&m).unwrap();
                check_injective(&a, rows, cols);
                let by_pairs: f64 = a.pairs.iter().map(|&(i, j)| m.get(i, j)).sum();
                assert_eq!(a.total, by_pairs);
                assert_eq!(a.total, exhaustive_best(&m), "{rows}x{cols} trial {trial}");
            }
        }
    }
}

#[test]
fn scaling_keeps_the_assignment() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..500 {
        let (rows, cols) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let m = random_matrix(&mut rng, rows, cols, false);
        let a = hungarian_max(&m).unwrap();
        for factor in [0.25, 2.0, 1024.0] {
            let b = hungarian_max(&m.scaled(factor)).unwrap();
            assert_eq!(a.pairs, b.pairs);
            assert_eq!(b.total, a.total * factor);
        }
    }
}

fn waiting_user(id: u64, qos_value: f64, now: f64) -> UserSession {
    UserSession::new(UserId(id), now).with_history(ServiceHistory {
        received_pairs: qos_value * 100.0,
        time: 100.0,
    })
}

proptest! {
    #[test]
    fn single_free_pair_goes_to_lowest_qos(
        qos_values in prop::collection::hash_set(1u32..200_000, 2..8),
        rate in 18_000.0f64..68_000.0,
    ) {
        let now = 500.0;
        let qos_values: Vec<f64> = qos_values.into_iter().map(f64::from).collect();
        let users: Vec<UserSession> = qos_values
            .iter()
            .enumerate()
            .map(|(i, q)| waiting_user(i as u64, *q, now))
            .collect();
        let pair = ChannelPairResource::abstract_pair(PairId(0), rate).unwrap();
        let m = build_cost_matrix(&[&pair], &users.iter().collect::<Vec<_>>(), now);
        let a = hungarian_max(&m).unwrap();
        let lowest = qos_values
            .iter()
            .enumerate()
            .min_by(|x, y| x.1.total_cmp(y.1))
            .unwrap()
            .0;
        prop_assert_eq!(a.pairs, vec![(0, lowest)]);
    }

    #[test]
    fn assignments_are_injective(rows in 1usize..8, cols in 1usize..8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_matrix(&mut rng, rows, cols, seed % 2 == 0);
        check_injective(&hungarian_max(&m).unwrap(), rows, cols);
    }

    #[test]
    fn qos_ignores_how_service_is_split(
        rates in prop::collection::vec(1.0f64..70_000.0, 1..6),
        gaps in prop::collection::vec(0.1f64..20.0, 6),
    ) {
        // one span at a varying rate versus the same rates replayed through a trace
        let mut a = UserSession::new(UserId(1), 0.0);
        a.start_service(PairId(0), 1.0, rates[0]).unwrap();
        let mut t = 1.0;
        let mut expected = 0.0;
        for (i, r) in rates.iter().enumerate() {
            if i > 0 {
                a.update_rate(t, *r);
            }
            expected += r * gaps[i];
            t += gaps[i];
        }
        let q = qos(&a, t);
        prop_assert!((q - expected / t).abs() <= 1e-9 * expected.max(1.0));
    }
}

#[test]
fn fcfs_serves_in_arrival_order() {
    let mut s = AllocationState::new(HistoryMode::PerSession);
    s.add_resource(ChannelPairResource::abstract_pair(PairId(0), 50_000.0).unwrap()).unwrap();
    for (u, t) in [(3u64, 0.0), (1, 1.0), (2, 2.0)] {
        s.arrive(UserId(u), t).unwrap();
    }
    let mut order = Vec::new();
    let mut now = 3.0;
    for _ in 0..3 {
        let d = s.allocate(now, Policy::Fcfs);
        assert_eq!(d.len(), 1);
        order.push(d[0].1 .0);
        now += 1.0;
        s.release(PairId(0), now).unwrap();
    }
    assert_eq!(order, vec![3, 1, 2]);
}

#[test]
fn returning_user_yields_to_newcomer_under_hungarian() {
    let mut s = AllocationState::new(HistoryMode::Cumulative);
    s.add_resource(ChannelPairResource::abstract_pair(PairId(0), 40_000.0).unwrap()).unwrap();
    s.arrive(UserId(1), 0.0).unwrap();
    assert_eq!(s.allocate(0.0, Policy::Hungarian), vec![(PairId(0), UserId(1))]);
    s.release(PairId(0), 10.0).unwrap();
    s.arrive(UserId(1), 10.0).unwrap();
    s.arrive(UserId(2), 10.0).unwrap();
    assert_eq!(s.allocate(10.0, Policy::Hungarian), vec![(PairId(0), UserId(2))]);
}
