//! Builds the utility matrix for the three testbed pairs and four waiting users with
//! different service histories, then compares the Hungarian plan with FCFS.
//!
//! ```text
//! cargo run -p vqn-core --example hungarian_allocation
//! ```

use vqn_core::allocation::{
    build_cost_matrix, hungarian_max, jain_fairness, AllocationState, ChannelPairResource, HistoryMode, PairId, Policy,
    ServiceHistory, UserId, UserSession,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let now = 100.0;
    let pairs = [
        ChannelPairResource::new(PairId(0), 26, 53_106.45)?,
        ChannelPairResource::new(PairId(1), 25, 45_601.10)?,
        ChannelPairResource::new(PairId(2), 24, 45_738.53)?,
    ];
    // past average rates, pairs per second
    let histories = [30_000.0, 0.0, 52_000.0, 12_000.0];
    let users: Vec<UserSession> = histories
        .iter()
        .enumerate()
        .map(|(i, avg)| {
            UserSession::new(UserId(i as u64 + 1), now).with_history(ServiceHistory {
                received_pairs: avg * 60.0,
                time: 60.0,
            })
        })
        .collect();

    let m = build_cost_matrix(&pairs.iter().collect::<Vec<_>>(), &users.iter().collect::<Vec<_>>(), now);
    println!("utility ln(1 + R/QoS), rows = pairs, columns = users {:?}", histories);
    for r in 0..m.rows() {
        let row: Vec<String> = (0..m.cols()).map(|c| format!("{:7.3}", m.get(r, c))).collect();
        let (s, i) = pairs[r].channels.unwrap_or_default();
        println!("  Ch{s}-Ch{i} {}", row.join(" "));
    }
    let a = hungarian_max(&m)?;
    println!("hungarian total {:.3}:", a.total);
    for (r, c) in &a.pairs {
        println!("  pair {} -> user {}", pairs[*r].id.0, users[*c].user_id.0);
    }

    for policy in [Policy::Fcfs, Policy::Hungarian] {
        let mut state = AllocationState::new(HistoryMode::Cumulative);
        for p in &pairs {
            state.add_resource(p.clone())?;
        }
        for u in 1..=6 {
            state.arrive(UserId(u), u as f64)?;
        }
        let mut t = 10.0;
        state.allocate(t, policy);
        for round in 0..20 {
            t += 15.0;
            let pair = PairId(round % 3);
            if state.holder_of(pair).is_some() {
                let s = state.release(pair, t)?;
                state.arrive(s.user_id, t)?;
            }
            state.allocate(t, policy);
        }
        let qos: Vec<f64> = (1..=6).map(|u| state.qos_of(UserId(u), t).unwrap_or(0.0)).collect();
        println!("{policy:?}: Jain fairness of QoS after 20 releases {:.4}", jain_fairness(&qos)?);
    }
    Ok(())
}
