//! Fair assignment of entangled channel pairs to waiting users.
//!
//! Each user carries a QoS ledger: entangled pairs received divided by time spent in
//! the system (waiting plus service). A free pair `w` offered to user `i` is worth
//! `ln(1 + R_w / QoS_i)`, and the allocator picks the assignment maximising the summed
//! utility with the Hungarian method. First-come-first-served is available as a
//! baseline.

mod hungarian;

pub use hungarian::{hungarian_max, Assignment, CostMatrix};

use crate::tagcore::{partner_channel, ChannelIndex};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Floor on QoS inside the utility, in pairs per unit time. New users have QoS 0.
pub const QOS_FLOOR: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum AllocationError {
    #[error("cost matrix is empty")]
    EmptyMatrix,
    #[error("cost matrix rows have different lengths")]
    RaggedMatrix,
    #[error("cost matrix has {found} values, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite utility at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("unknown policy {0:?}, expected \"hungarian\" or \"fcfs\"")]
    UnknownPolicy(String),
    #[error("invalid session transition for {user}: {from} -> {to}")]
    InvalidTransition {
        user: UserId,
        from: &'static str,
        to: &'static str,
    },
    #[error("{0} already has a live session")]
    AlreadyActive(UserId),
    #[error("{0} has no live session")]
    NoSession(UserId),
    #[error("unknown pair {0}")]
    UnknownPair(PairId),
    #[error("duplicate pair {0}")]
    DuplicatePair(PairId),
    #[error("{0} is not assigned")]
    PairNotAssigned(PairId),
    #[error("channel {0} cannot form a signal/idler pair")]
    BadChannel(ChannelIndex),
    #[error("rate must be finite and non-negative, got {0}")]
    BadRate(f64),
    #[error("fairness index needs at least one finite non-negative value")]
    BadFairnessInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PairId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserId(pub u64);

impl fmt::Display for PairId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pair-{}", self.0)
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "user-{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Hungarian,
    #[default]
    Fcfs,
}

impl FromStr for Policy {
    type Err = AllocationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "hungarian" => Ok(Policy::Hungarian),
            "fcfs" => Ok(Policy::Fcfs),
            _ => Err(AllocationError::UnknownPolicy(s.to_string())),
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::Hungarian => "hungarian",
            Policy::Fcfs => "fcfs",
        })
    }
}

/// Piecewise-constant rate samples `(time, rate)`. Before the first sample the first
/// rate applies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTrace {
    samples: Vec<(f64, f64)>,
}

impl RateTrace {
    pub fn constant(rate: f64) -> Self {
        Self {
            samples: vec![(0.0, rate)],
        }
    }

    pub fn starting_at(time: f64, rate: f64) -> Self {
        Self {
            samples: vec![(time, rate)],
        }
    }

    /// Appends a sample. A sample at or before the latest one replaces it.
    pub fn push(&mut self, time: f64, rate: f64) {
        match self.samples.last_mut() {
            Some(last) if time <= last.0 => {
                last.1 = rate;
            }
            _ => self.samples.push((time, rate)),
        }
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    pub fn rate_at(&self, t: f64) -> f64 {
        let idx = self.samples.partition_point(|(st, _)| *st <= t);
        self.samples[idx.saturating_sub(1)].1
    }

    pub fn latest(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.1)
    }

    /// `∫ rate dt` over `[from, to]`.
    pub fn integral(&self, from: f64, to: f64) -> f64 {
        if to <= from {
            return 0.0;
        }
        let mut total = 0.0;
        for (k, &(start, rate)) in self.samples.iter().enumerate() {
            let seg_start = if k == 0 { f64::NEG_INFINITY } else { start };
            let seg_end = self.samples.get(k + 1).map_or(f64::INFINITY, |s| s.0);
            let lo = seg_start.max(from);
            let hi = seg_end.min(to);
            if hi > lo {
                total += rate * (hi - lo);
            }
        }
        total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "user")]
pub enum PairStatus {
    Free,
    Assigned(UserId),
}

/// One allocatable signal/idler pair with its coincidence-rate trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelPairResource {
    pub id: PairId,
    /// `(signal, idler)`; `None` for abstract pairs used in simulation.
    pub channels: Option<(ChannelIndex, ChannelIndex)>,
    pub rate: RateTrace,
    pub status: PairStatus,
}

impl ChannelPairResource {
    pub fn new(id: PairId, signal: ChannelIndex, rate_hz: f64) -> Result<Self, AllocationError> {
        let idler = partner_channel(signal).map_err(|_| AllocationError::BadChannel(signal))?;
        let mut r = Self::abstract_pair(id, rate_hz)?;
        r.channels = Some((signal, idler));
        Ok(r)
    }

    pub fn abstract_pair(id: PairId, rate_hz: f64) -> Result<Self, AllocationError> {
        check_rate(rate_hz)?;
        Ok(Self {
            id,
            channels: None,
            rate: RateTrace::constant(rate_hz),
            status: PairStatus::Free,
        })
    }

    pub fn is_free(&self) -> bool {
        self.status == PairStatus::Free
    }
}

fn check_rate(rate: f64) -> Result<(), AllocationError> {
    if rate >= 0.0 && rate.is_finite() {
        Ok(())
    } else {
        Err(AllocationError::BadRate(rate))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state")]
pub enum SessionState {
    Waiting,
    Served { pair: PairId, since: f64 },
    Departed { at: f64 },
}

impl SessionState {
    fn name(&self) -> &'static str {
        match self {
            SessionState::Waiting => "waiting",
            SessionState::Served { .. } => "served",
            SessionState::Departed { .. } => "departed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentSpan {
    pub pair: PairId,
    pub start: f64,
    pub end: Option<f64>,
    pub rates: RateTrace,
}

impl AssignmentSpan {
    /// Pairs delivered by this span up to `now`.
    pub fn delivered(&self, now: f64) -> f64 {
        let end = self.end.map_or(now, |e| e.min(now));
        self.rates.integral(self.start, end)
    }
}

/// Received pairs and time in system carried over from earlier sessions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ServiceHistory {
    pub received_pairs: f64,
    pub time: f64,
}

/// One visit of a user: waiting, then (optionally) served on a single pair, then gone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSession {
    pub user_id: UserId,
    pub arrival_time: f64,
    pub state: SessionState,
    /// Pairs from closed spans; see [`UserSession::received_until`] for the running total.
    pub received_pairs: f64,
    pub history: ServiceHistory,
    pub assignment_log: Vec<AssignmentSpan>,
}

impl UserSession {
    pub fn new(user_id: UserId, arrival_time: f64) -> Self {
        Self {
            user_id,
            arrival_time,
            state: SessionState::Waiting,
            received_pairs: 0.0,
            history: ServiceHistory::default(),
            assignment_log: Vec::new(),
        }
    }

    pub fn with_history(mut self, history: ServiceHistory) -> Self {
        self.history = history;
        self
    }

    fn transition_error(&self, to: &'static str) -> AllocationError {
        AllocationError::InvalidTransition {
            user: self.user_id,
            from: self.state.name(),
            to,
        }
    }

    pub fn is_waiting(&self) -> bool {
        self.state == SessionState::Waiting
    }

    pub fn start_service(&mut self, pair: PairId, now: f64, rate_hz: f64) -> Result<(), AllocationError> {
        if !self.is_waiting() {
            return Err(self.transition_error("served"));
        }
        self.state = SessionState::Served { pair, since: now };
        self.assignment_log.push(AssignmentSpan {
            pair,
            start: now,
            end: None,
            rates: RateTrace::starting_at(now, rate_hz),
        });
        Ok(())
    }

    /// Records a new rate for the pair currently held.
    pub fn update_rate(&mut self, now: f64, rate_hz: f64) {
        if let Some(span) = self.assignment_log.last_mut().filter(|s| s.end.is_none()) {
            span.rates.push(now, rate_hz);
        }
    }

    /// Ends the session: closes any open span.
    pub fn depart(&mut self, now: f64) -> Result<(), AllocationError> {
        if matches!(self.state, SessionState::Departed { .. }) {
            return Err(self.transition_error("departed"));
        }
        if let Some(span) = self.assignment_log.last_mut().filter(|s| s.end.is_none()) {
            span.end = Some(now);
            self.received_pairs += span.delivered(now);
        }
        self.state = SessionState::Departed { at: now };
        Ok(())
    }

    /// `∫ 1_w(i;t) R_w(t) dt` over this session up to `now`.
    pub fn received_until(&self, now: f64) -> f64 {
        let open = self
            .assignment_log
            .last()
            .filter(|s| s.end.is_none())
            .map_or(0.0, |s| s.delivered(now));
        self.received_pairs + open
    }

    /// Waiting plus service time so far.
    pub fn total_time(&self, now: f64) -> f64 {
        let end = match self.state {
            SessionState::Departed { at } => at.min(now),
            _ => now,
        };
        (end - self.arrival_time).max(0.0)
    }

    /// Time from arrival to the first assignment, if any.
    pub fn wait_time(&self) -> Option<f64> {
        self.assignment_log.first().map(|s| s.start - self.arrival_time)
    }
}

/// Received pairs over time in system, including carried-over history. Zero when no
/// time has elapsed.
pub fn qos(session: &UserSession, now: f64) -> f64 {
    let time = session.history.time + session.total_time(now);
    if time <= 0.0 {
        return 0.0;
    }
    (session.history.received_pairs + session.received_until(now)) / time
}

/// Proportional-fair utility `ln(1 + rate / max(qos, QOS_FLOOR))`.
pub fn utility(rate_hz: f64, qos_value: f64) -> f64 {
    (rate_hz / qos_value.max(QOS_FLOOR)).ln_1p()
}

pub fn build_cost_matrix(
    free_pairs: &[&ChannelPairResource],
    waiting: &[&UserSession],
    now: f64,
) -> CostMatrix {
    let qos_by_user: Vec<f64> = waiting.iter().map(|s| qos(s, now)).collect();
    let values = free_pairs
        .iter()
        .flat_map(|p| {
            let rate = p.rate.rate_at(now);
            qos_by_user.iter().map(move |q| utility(rate, *q))
        })
        .collect();
    CostMatrix::new(
        values,
        free_pairs.iter().map(|p| p.id).collect(),
        waiting.iter().map(|s| s.user_id).collect(),
    )
    .expect("dimensions match by construction")
}

/// Jain's index `(Σx)² / (n Σx²)`. All-zero input counts as perfectly fair.
pub fn jain_fairness(values: &[f64]) -> Result<f64, AllocationError> {
    if values.is_empty() || values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(AllocationError::BadFairnessInput);
    }
    let sum: f64 = values.iter().sum();
    let sq: f64 = values.iter().map(|v| v * v).sum();
    if sq == 0.0 {
        return Ok(1.0);
    }
    Ok((sum * sum / (values.len() as f64 * sq)).min(1.0))
}

/// Whether a returning user's earlier sessions count towards QoS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryMode {
    PerSession,
    #[default]
    Cumulative,
}

/// Pairs, live sessions and per-user history. The single owner of allocation state.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AllocationState {
    resources: Vec<ChannelPairResource>,
    sessions: BTreeMap<UserId, UserSession>,
    history: BTreeMap<UserId, ServiceHistory>,
    pub history_mode: HistoryMode,
}

impl AllocationState {
    pub fn new(history_mode: HistoryMode) -> Self {
        Self {
            history_mode,
            ..Default::default()
        }
    }

    pub fn add_resource(&mut self, resource: ChannelPairResource) -> Result<(), AllocationError> {
        if self.resources.iter().any(|r| r.id == resource.id) {
            return Err(AllocationError::DuplicatePair(resource.id));
        }
        self.resources.push(resource);
        self.resources.sort_by_key(|r| r.id);
        Ok(())
    }

    pub fn resources(&self) -> &[ChannelPairResource] {
        &self.resources
    }

    pub fn resource(&self, id: PairId) -> Option<&ChannelPairResource> {
        self.resources.iter().find(|r| r.id == id)
    }

    pub fn session(&self, user: UserId) -> Option<&UserSession> {
        self.sessions.get(&user)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &UserSession> {
        self.sessions.values()
    }

    pub fn history(&self, user: UserId) -> ServiceHistory {
        self.history.get(&user).copied().unwrap_or_default()
    }

    /// Waiting sessions in arrival order, ties by user id.
    pub fn waiting(&self) -> Vec<&UserSession> {
        let mut w: Vec<_> = self.sessions.values().filter(|s| s.is_waiting()).collect();
        w.sort_by(|a, b| a.arrival_time.total_cmp(&b.arrival_time).then(a.user_id.cmp(&b.user_id)));
        w
    }

    /// 1-based position in the waiting line.
    pub fn queue_position(&self, user: UserId) -> Option<usize> {
        self.waiting().iter().position(|s| s.user_id == user).map(|p| p + 1)
    }

    pub fn holder_of(&self, pair: PairId) -> Option<UserId> {
        match self.resource(pair)?.status {
            PairStatus::Assigned(u) => Some(u),
            PairStatus::Free => None,
        }
    }

    pub fn pair_of(&self, user: UserId) -> Option<PairId> {
        self.resources
            .iter()
            .find(|r| r.status == PairStatus::Assigned(user))
            .map(|r| r.id)
    }

    pub fn arrive(&mut self, user: UserId, now: f64) -> Result<(), AllocationError> {
        if self.sessions.contains_key(&user) {
            return Err(AllocationError::AlreadyActive(user));
        }
        let history = match self.history_mode {
            HistoryMode::Cumulative => self.history(user),
            HistoryMode::PerSession => ServiceHistory::default(),
        };
        self.sessions.insert(user, UserSession::new(user, now).with_history(history));
        Ok(())
    }

    /// Matches free pairs to waiting users. Held pairs are never touched.
    pub fn allocate(&mut self, now: f64, policy: Policy) -> Vec<(PairId, UserId)> {
        let decisions = self.plan(now, policy);
        for &(pair, user) in &decisions {
            self.assign(pair, user, now).expect("planned assignment is valid");
        }
        decisions
    }

    /// The decisions [`AllocationState::allocate`] would apply, without applying them.
    pub fn plan(&self, now: f64, policy: Policy) -> Vec<(PairId, UserId)> {
        let free: Vec<&ChannelPairResource> = self.resources.iter().filter(|r| r.is_free()).collect();
        let waiting = self.waiting();
        if free.is_empty() || waiting.is_empty() {
            return Vec::new();
        }
        match policy {
            Policy::Fcfs => free.iter().zip(&waiting).map(|(p, s)| (p.id, s.user_id)).collect(),
            Policy::Hungarian => {
                let matrix = build_cost_matrix(&free, &waiting, now);
                let assignment = hungarian_max(&matrix).expect("utilities are finite");
                assignment
                    .pairs
                    .iter()
                    .map(|&(r, c)| (matrix.row_ids[r], matrix.col_ids[c]))
                    .collect()
            }
        }
    }

    /// Applies one decision. Used by [`AllocationState::allocate`] and journal replay.
    pub fn assign(&mut self, pair: PairId, user: UserId, now: f64) -> Result<(), AllocationError> {
        let idx = self
            .resources
            .iter()
            .position(|r| r.id == pair)
            .ok_or(AllocationError::UnknownPair(pair))?;
        if !self.resources[idx].is_free() {
            return Err(AllocationError::DuplicatePair(pair));
        }
        let rate = self.resources[idx].rate.rate_at(now);
        let session = self.sessions.get_mut(&user).ok_or(AllocationError::NoSession(user))?;
        session.start_service(pair, now, rate)?;
        self.resources[idx].status = PairStatus::Assigned(user);
        Ok(())
    }

    /// Frees `pair` and ends its holder's session, which is returned.
    pub fn release(&mut self, pair: PairId, now: f64) -> Result<UserSession, AllocationError> {
        let holder = self.holder_of(pair);
        let user = match holder {
            Some(u) => u,
            None if self.resource(pair).is_some() => return Err(AllocationError::PairNotAssigned(pair)),
            None => return Err(AllocationError::UnknownPair(pair)),
        };
        let session = self.end_session(user, now)?;
        Ok(session)
    }

    /// Ends a user's live session, waiting or served.
    pub fn end_session(&mut self, user: UserId, now: f64) -> Result<UserSession, AllocationError> {
        let mut session = self.sessions.remove(&user).ok_or(AllocationError::NoSession(user))?;
        session.depart(now)?;
        if let Some(r) = self.resources.iter_mut().find(|r| r.status == PairStatus::Assigned(user)) {
            r.status = PairStatus::Free;
        }
        let h = self.history.entry(user).or_default();
        h.received_pairs += session.received_pairs;
        h.time += session.total_time(now);
        Ok(session)
    }

    /// Records a fresh rate measurement for `pair`.
    pub fn set_rate(&mut self, pair: PairId, now: f64, rate_hz: f64) -> Result<(), AllocationError> {
        check_rate(rate_hz)?;
        let r = self
            .resources
            .iter_mut()
            .find(|r| r.id == pair)
            .ok_or(AllocationError::UnknownPair(pair))?;
        r.rate.push(now, rate_hz);
        if let PairStatus::Assigned(user) = r.status {
            if let Some(s) = self.sessions.get_mut(&user) {
                s.update_rate(now, rate_hz);
            }
        }
        Ok(())
    }

    pub fn qos_of(&self, user: UserId, now: f64) -> Option<f64> {
        self.sessions.get(&user).map(|s| qos(s, now))
    }
}

/// Runs one allocation decision on `state`.
pub fn allocate(state: &mut AllocationState, now: f64, policy: Policy) -> Vec<(PairId, UserId)> {
    state.allocate(now, policy)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn served(rate: f64, arrive: f64, start: f64) -> UserSession {
        let mut s = UserSession::new(UserId(1), arrive);
        s.start_service(PairId(0), start, rate).unwrap();
        s
    }

    #[test]
    fn qos_examples() {
        let s = served(40_000.0, 0.0, 0.0);
        assert!((qos(&s, 100.0) - 40_000.0).abs() < 1e-9);
        let s = served(40_000.0, 0.0, 50.0);
        assert!((qos(&s, 100.0) - 20_000.0).abs() < 1e-9);

        let mut s = served(18_000.0, 0.0, 0.0);
        s.depart(30.0).unwrap();
        // departed at 30 s: T stops there
        assert!((qos(&s, 60.0) - 18_000.0).abs() < 1e-9);

        // served 30 s at 18k, then 30 s waiting again in a second visit with history
        let mut st = AllocationState::new(HistoryMode::Cumulative);
        st.add_resource(ChannelPairResource::abstract_pair(PairId(0), 18_000.0).unwrap()).unwrap();
        st.arrive(UserId(1), 0.0).unwrap();
        st.allocate(0.0, Policy::Fcfs);
        st.release(PairId(0), 30.0).unwrap();
        st.arrive(UserId(1), 30.0).unwrap();
        assert!((st.qos_of(UserId(1), 60.0).unwrap() - 9_000.0).abs() < 1e-9);

        assert_eq!(qos(&UserSession::new(UserId(2), 5.0), 5.0), 0.0);
    }

    #[test]
    fn qos_subdivision_invariant() {
        let mut whole = served(1000.0, 0.0, 10.0);
        whole.update_rate(40.0, 3000.0);
        let mut split = served(1000.0, 0.0, 10.0);
        split.update_rate(25.0, 1000.0);
        split.update_rate(40.0, 3000.0);
        split.update_rate(55.0, 3000.0);
        assert!((qos(&whole, 80.0) - qos(&split, 80.0)).abs() < 1e-9);
        assert!((whole.received_until(80.0) - (30.0 * 1000.0 + 40.0 * 3000.0)).abs() < 1e-6);
    }

    #[test]
    fn session_transitions() {
        let mut s = UserSession::new(UserId(3), 0.0);
        s.start_service(PairId(1), 1.0, 5.0).unwrap();
        assert!(s.start_service(PairId(2), 2.0, 5.0).is_err());
        s.depart(3.0).unwrap();
        assert!(s.depart(4.0).is_err());
        assert!(s.start_service(PairId(1), 5.0, 5.0).is_err());
        assert_eq!(s.wait_time(), Some(1.0));
    }

    #[test]
    fn utility_examples() {
        assert_eq!(utility(0.0, 123.0), 0.0);
        assert!((utility(9_000.0, 9_000.0) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((utility(50_000.0, 0.0) - 10.819_798).abs() < 1e-5);
        assert!(utility(100.0, 5.0) > utility(100.0, 6.0));
        assert!(utility(101.0, 5.0) > utility(100.0, 5.0));
    }

    #[test]
    fn cost_matrix_example() {
        let p1 = ChannelPairResource::abstract_pair(PairId(0), 18_000.0).unwrap();
        let p2 = ChannelPairResource::abstract_pair(PairId(1), 68_000.0).unwrap();
        let u1 = served_history(UserId(1), 9_000.0);
        let u2 = UserSession::new(UserId(2), 100.0);
        let m = build_cost_matrix(&[&p1, &p2], &[&u1, &u2], 100.0);
        let expect = [
            [3f64.ln(), 18_001f64.ln()],
            [(77.0f64 / 9.0).ln(), 68_001f64.ln()],
        ];
        for r in 0..2 {
            for c in 0..2 {
                assert!((m.get(r, c) - expect[r][c]).abs() < 1e-12, "({r},{c})");
            }
        }
        let zero = ChannelPairResource::abstract_pair(PairId(0), 0.0).unwrap();
        let m = build_cost_matrix(&[&zero], &[&u2], 100.0);
        assert_eq!(m.get(0, 0), 0.0);
    }

    /// A waiting user whose QoS at t=100 is `q`.
    fn served_history(user: UserId, q: f64) -> UserSession {
        UserSession::new(user, 100.0).with_history(ServiceHistory {
            received_pairs: q * 10.0,
            time: 10.0,
        })
    }

    #[test]
    fn hungarian_gives_zero_qos_user_the_fast_pair() {
        let mut st = AllocationState::new(HistoryMode::Cumulative);
        st.add_resource(ChannelPairResource::abstract_pair(PairId(0), 18_000.0).unwrap()).unwrap();
        st.add_resource(ChannelPairResource::abstract_pair(PairId(1), 68_000.0).unwrap()).unwrap();
        st.history.insert(
            UserId(1),
            ServiceHistory {
                received_pairs: 90_000.0,
                time: 10.0,
            },
        );
        st.arrive(UserId(1), 100.0).unwrap();
        st.arrive(UserId(2), 100.0).unwrap();
        let mut got = st.allocate(100.0, Policy::Hungarian);
        got.sort();
        assert_eq!(got, vec![(PairId(0), UserId(1)), (PairId(1), UserId(2))]);
        assert!(st.allocate(100.0, Policy::Hungarian).is_empty());
    }

    #[test]
    fn fcfs_serves_earliest() {
        let mut st = AllocationState::default();
        st.add_resource(ChannelPairResource::abstract_pair(PairId(7), 1.0).unwrap()).unwrap();
        st.arrive(UserId(5), 3.0).unwrap();
        st.arrive(UserId(6), 1.0).unwrap();
        st.arrive(UserId(4), 2.0).unwrap();
        assert_eq!(st.queue_position(UserId(6)), Some(1));
        assert_eq!(st.allocate(4.0, Policy::Fcfs), vec![(PairId(7), UserId(6))]);
        assert_eq!(st.queue_position(UserId(4)), Some(1));
        assert_eq!(st.queue_position(UserId(6)), None);
    }

    #[test]
    fn no_waiting_users_means_no_decisions() {
        let mut st = AllocationState::default();
        st.add_resource(ChannelPairResource::abstract_pair(PairId(0), 1.0).unwrap()).unwrap();
        assert!(st.allocate(0.0, Policy::Hungarian).is_empty());
        assert!(st.allocate(0.0, Policy::Fcfs).is_empty());
    }

    #[test]
    fn release_and_rate_updates() {
        let mut st = AllocationState::default();
        st.add_resource(ChannelPairResource::new(PairId(0), 26, 100.0).unwrap()).unwrap();
        assert_eq!(st.resources()[0].channels, Some((26, 16)));
        st.arrive(UserId(1), 0.0).unwrap();
        assert_eq!(st.arrive(UserId(1), 0.0), Err(AllocationError::AlreadyActive(UserId(1))));
        st.allocate(0.0, Policy::Fcfs);
        st.set_rate(PairId(0), 10.0, 300.0).unwrap();
        let s = st.release(PairId(0), 20.0).unwrap();
        assert!((s.received_pairs - (1000.0 + 3000.0)).abs() < 1e-9);
        assert_eq!(st.release(PairId(0), 21.0), Err(AllocationError::PairNotAssigned(PairId(0))));
        assert_eq!(st.release(PairId(9), 21.0), Err(AllocationError::UnknownPair(PairId(9))));
        assert!(st.resources()[0].is_free());
        assert_eq!(st.history(UserId(1)).time, 20.0);
        assert!(ChannelPairResource::new(PairId(1), 20, 1.0).is_err());
    }

    #[test]
    fn jain_examples() {
        assert_eq!(jain_fairness(&[5.0, 5.0, 5.0]).unwrap(), 1.0);
        assert!((jain_fairness(&[1.0, 0.0, 0.0]).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!((jain_fairness(&[3.0, 1.0]).unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(jain_fairness(&[0.0, 0.0]).unwrap(), 1.0);
        assert!(jain_fairness(&[]).is_err());
        assert!(jain_fairness(&[-1.0]).is_err());
    }

    #[test]
    fn policy_strings() {
        assert_eq!("hungarian".parse::<Policy>().unwrap(), Policy::Hungarian);
        assert_eq!("FCFS".parse::<Policy>().unwrap(), Policy::Fcfs);
        assert!("lottery".parse::<Policy>().is_err());
        assert_eq!(serde_json::to_string(&Policy::Hungarian).unwrap(), "\"hungarian\"");
    }

    #[test]
    fn rate_trace_lookup() {
        let mut t = RateTrace::starting_at(10.0, 1.0);
        t.push(20.0, 2.0);
        assert_eq!(t.rate_at(5.0), 1.0);
        assert_eq!(t.rate_at(20.0), 2.0);
        assert_eq!(t.integral(0.0, 30.0), 30.0 + 10.0);
        t.push(20.0, 4.0);
        assert_eq!(t.latest(), 4.0);
        assert_eq!(t.samples().len(), 2);
    }
}
