use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use vqn_core::allocation::{AllocationError, AllocationState, ChannelPairResource, HistoryMode, PairId, UserId};
use vqn_core::tagcore::ChannelIndex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    ChannelPair,
    Measurement,
    Release,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestStatus {
    Processing,
    Processed,
    Completed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub id: String,
    pub user: String,
    pub kind: RequestKind,
    pub status: RequestStatus,
    /// Unix seconds.
    pub created_at: f64,
    pub updated_at: f64,
    pub payload: serde_json::Value,
    /// Pair assigned to a channel-pair request.
    #[serde(default)]
    pub pair_id: Option<PairId>,
    /// Id under which a measurement result is stored.
    #[serde(default)]
    pub result_ref: Option<String>,
    /// Completed without the notification being delivered.
    #[serde(default)]
    pub delivery_failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum JournalEvent {
    /// A channel-pair request also puts its user in the waiting line.
    RequestCreated { record: RequestRecord },
    StatusChanged {
        request_id: String,
        status: RequestStatus,
        at: f64,
        #[serde(default)]
        delivery_failed: bool,
    },
    Assigned {
        pair: PairId,
        user: String,
        request_id: String,
        at: f64,
    },
    Released {
        pair: PairId,
        user: String,
        request_id: Option<String>,
        at: f64,
    },
    RateUpdated { pair: PairId, rate_hz: f64, at: f64 },
    MeasurementStored { request_id: String, result: serde_json::Value },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub seq: u64,
    pub event: JournalEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum ResourceStatus {
    Free,
    Assigned { user: String, since: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceRecord {
    pub pair_id: PairId,
    pub signal: ChannelIndex,
    pub idler: ChannelIndex,
    pub current_rate_hz: f64,
    pub status: ResourceStatus,
}

#[derive(Debug, PartialEq, thiserror::Error)]
pub enum StoreError {
    #[error("entry {found} out of order, expected {expected}")]
    OutOfOrder { expected: u64, found: u64 },
    #[error("unknown user {0:?}")]
    UnknownUser(String),
    #[error("unknown request {0}")]
    UnknownRequest(String),
    #[error("duplicate request {0}")]
    DuplicateRequest(String),
    #[error("request {id} cannot move from {from:?} to {to:?}")]
    StatusRegression {
        id: String,
        from: RequestStatus,
        to: RequestStatus,
    },
    #[error("{pair} is not held by {user}")]
    NotHolder { pair: PairId, user: String },
    #[error(transparent)]
    Allocation(#[from] AllocationError),
}

/// Everything the service knows, rebuilt from nothing but the journal.
#[derive(Debug, Clone, PartialEq)]
pub struct Store {
    alloc: AllocationState,
    channels: BTreeMap<PairId, (ChannelIndex, ChannelIndex)>,
    requests: BTreeMap<String, RequestRecord>,
    order: Vec<String>,
    user_ids: BTreeMap<String, UserId>,
    names: BTreeMap<UserId, String>,
    /// Channel-pair request of each user that is waiting or holds a pair.
    live: BTreeMap<String, String>,
    last_released: BTreeMap<PairId, String>,
    results: BTreeMap<String, serde_json::Value>,
    measurements: u64,
    last_seq: u64,
}

/// Comparable view of a store, used to check replay.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub resources: Vec<ResourceRecord>,
    pub requests: Vec<RequestRecord>,
    pub queue: Vec<String>,
    pub results: BTreeMap<String, serde_json::Value>,
    pub last_seq: u64,
}

impl Store {
    /// `pairs` are `(signal, idler, initial rate)`, given ids in order.
    pub fn new(pairs: &[(ChannelIndex, ChannelIndex, f64)], users: &[String], history_mode: HistoryMode) -> Result<Self, StoreError> {
        let mut alloc = AllocationState::new(history_mode);
        let mut channels = BTreeMap::new();
        for (i, &(signal, idler, rate)) in pairs.iter().enumerate() {
            let id = PairId(i as u32);
            alloc.add_resource(ChannelPairResource::new(id, signal, rate)?)?;
            channels.insert(id, (signal, idler));
        }
        let user_ids: BTreeMap<String, UserId> = users
            .iter()
            .enumerate()
            .map(|(i, u)| (u.clone(), UserId(i as u64 + 1)))
            .collect();
        let names = user_ids.iter().map(|(n, id)| (*id, n.clone())).collect();
        Ok(Self {
            alloc,
            channels,
            requests: BTreeMap::new(),
            order: Vec::new(),
            user_ids,
            names,
            live: BTreeMap::new(),
            last_released: BTreeMap::new(),
            results: BTreeMap::new(),
            measurements: 0,
            last_seq: 0,
        })
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    fn uid(&self, user: &str) -> Result<UserId, StoreError> {
        self.user_ids
            .get(user)
            .copied()
            .ok_or_else(|| StoreError::UnknownUser(user.to_string()))
    }

    fn record_mut(&mut self, id: &str) -> Result<&mut RequestRecord, StoreError> {
        self.requests
            .get_mut(id)
            .ok_or_else(|| StoreError::UnknownRequest(id.to_string()))
    }

    /// Applies one entry. Entries must arrive with consecutive sequence numbers.
    pub fn apply(&mut self, entry: &JournalEntry) -> Result<(), StoreError> {
        if entry.seq != self.last_seq + 1 {
            return Err(StoreError::OutOfOrder {
                expected: self.last_seq + 1,
                found: entry.seq,
            });
        }
        match &entry.event {
            JournalEvent::RequestCreated { record } => {
                if self.requests.contains_key(&record.id) {
                    return Err(StoreError::DuplicateRequest(record.id.clone()));
                }
                let uid = self.uid(&record.user)?;
                match record.kind {
                    RequestKind::ChannelPair => {
                        self.alloc.arrive(uid, record.created_at)?;
                        self.live.insert(record.user.clone(), record.id.clone());
                    }
                    RequestKind::Measurement => self.measurements += 1,
                    RequestKind::Release => {}
                }
                self.order.push(record.id.clone());
                self.requests.insert(record.id.clone(), record.clone());
            }
            JournalEvent::StatusChanged {
                request_id,
                status,
                at,
                delivery_failed,
            } => {
                let r = self.record_mut(request_id)?;
                if *status <= r.status {
                    return Err(StoreError::StatusRegression {
                        id: request_id.clone(),
                        from: r.status,
                        to: *status,
                    });
                }
                r.status = *status;
                r.updated_at = r.updated_at.max(*at);
                r.delivery_failed |= *delivery_failed;
            }
            JournalEvent::Assigned {
                pair,
                user,
                request_id,
                at,
            } => {
                let uid = self.uid(user)?;
                self.record_mut(request_id)?;
                self.alloc.assign(*pair, uid, *at)?;
                self.record_mut(request_id)?.pair_id = Some(*pair);
            }
            JournalEvent::Released { pair, user, at, .. } => {
                let uid = self.uid(user)?;
                if self.alloc.holder_of(*pair) != Some(uid) {
                    return Err(StoreError::NotHolder {
                        pair: *pair,
                        user: user.clone(),
                    });
                }
                self.alloc.release(*pair, *at)?;
                self.live.remove(user);
                self.last_released.insert(*pair, user.clone());
            }
            JournalEvent::RateUpdated { pair, rate_hz, at } => self.alloc.set_rate(*pair, *at, *rate_hz)?,
            JournalEvent::MeasurementStored { request_id, result } => {
                self.record_mut(request_id)?.result_ref = Some(request_id.clone());
                self.results.insert(request_id.clone(), result.clone());
            }
        }
        self.last_seq = entry.seq;
        Ok(())
    }

    pub fn allocation(&self) -> &AllocationState {
        &self.alloc
    }

    pub fn user_name(&self, id: UserId) -> Option<&str> {
        self.names.get(&id).map(String::as_str)
    }

    pub fn knows_user(&self, user: &str) -> bool {
        self.user_ids.contains_key(user)
    }

    pub fn request(&self, id: &str) -> Option<&RequestRecord> {
        self.requests.get(id)
    }

    /// All requests in creation order.
    pub fn requests(&self) -> impl Iterator<Item = &RequestRecord> {
        self.order.iter().map(|id| &self.requests[id])
    }

    pub fn result(&self, id: &str) -> Option<&serde_json::Value> {
        self.results.get(id)
    }

    pub fn live_request(&self, user: &str) -> Option<&RequestRecord> {
        self.live.get(user).map(|id| &self.requests[id])
    }

    pub fn channels(&self, pair: PairId) -> Option<(ChannelIndex, ChannelIndex)> {
        self.channels.get(&pair).copied()
    }

    pub fn holder(&self, pair: PairId) -> Option<&str> {
        self.alloc.holder_of(pair).and_then(|u| self.user_name(u))
    }

    pub fn pair_of(&self, user: &str) -> Option<PairId> {
        self.alloc.pair_of(self.user_ids.get(user).copied()?)
    }

    pub fn last_released_by(&self, pair: PairId) -> Option<&str> {
        self.last_released.get(&pair).map(String::as_str)
    }

    pub fn measurement_count(&self) -> u64 {
        self.measurements
    }

    /// 1-based place in the waiting line.
    pub fn queue_position(&self, user: &str) -> Option<usize> {
        self.alloc.queue_position(*self.user_ids.get(user)?)
    }

    pub fn queue(&self) -> Vec<String> {
        self.alloc
            .waiting()
            .iter()
            .filter_map(|s| self.user_name(s.user_id).map(str::to_string))
            .collect()
    }

    pub fn resources(&self) -> Vec<ResourceRecord> {
        self.alloc
            .resources()
            .iter()
            .map(|r| {
                let (signal, idler) = self.channels[&r.id];
                let status = match self.alloc.holder_of(r.id) {
                    None => ResourceStatus::Free,
                    Some(u) => ResourceStatus::Assigned {
                        user: self.user_name(u).unwrap_or_default().to_string(),
                        since: self
                            .alloc
                            .session(u)
                            .and_then(|s| s.assignment_log.first())
                            .map_or(0.0, |span| span.start),
                    },
                };
                ResourceRecord {
                    pair_id: r.id,
                    signal,
                    idler,
                    current_rate_hz: r.rate.latest(),
                    status,
                }
            })
            .collect()
    }

    /// Channel-pair requests that were assigned but whose user has not been notified.
    pub fn undelivered(&self) -> Vec<&RequestRecord> {
        self.requests()
            .filter(|r| r.kind == RequestKind::ChannelPair && r.status == RequestStatus::Processed)
            .collect()
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            resources: self.resources(),
            requests: self.requests().cloned().collect(),
            queue: self.queue(),
            results: self.results.clone(),
            last_seq: self.last_seq,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn store() -> Store {
        Store::new(
            &[(26, 16, 53_000.0), (25, 17, 45_000.0)],
            &["alice".into(), "bob".into()],
            HistoryMode::Cumulative,
        )
        .unwrap()
    }

    fn pair_request(id: &str, user: &str, at: f64) -> JournalEvent {
        JournalEvent::RequestCreated {
            record: RequestRecord {
                id: id.into(),
                user: user.into(),
                kind: RequestKind::ChannelPair,
                status: RequestStatus::Processing,
                created_at: at,
                updated_at: at,
                payload: json!({}),
                pair_id: None,
                result_ref: None,
                delivery_failed: false,
            },
        }
    }

    fn apply_all(s: &mut Store, events: Vec<JournalEvent>) -> Result<(), StoreError> {
        for event in events {
            let seq = s.last_seq() + 1;
            s.apply(&JournalEntry { seq, event })?;
        }
        Ok(())
    }

    #[test]
    fn lifecycle() {
        let mut s = store();
        apply_all(
            &mut s,
            vec![
                pair_request("r1", "alice", 1.0),
                pair_request("r2", "bob", 2.0),
            ],
        )
        .unwrap();
        assert_eq!(s.queue(), vec!["alice", "bob"]);
        assert_eq!(s.queue_position("bob"), Some(2));
        apply_all(
            &mut s,
            vec![
                JournalEvent::Assigned {
                    pair: PairId(1),
                    user: "alice".into(),
                    request_id: "r1".into(),
                    at: 3.0,
                },
                JournalEvent::StatusChanged {
                    request_id: "r1".into(),
                    status: RequestStatus::Processed,
                    at: 3.0,
                    delivery_failed: false,
                },
            ],
        )
        .unwrap();
        assert_eq!(s.queue_position("alice"), None);
        assert_eq!(s.holder(PairId(1)), Some("alice"));
        assert_eq!(s.request("r1").unwrap().pair_id, Some(PairId(1)));
        assert_eq!(s.undelivered().len(), 1);
        let res = s.resources();
        assert_eq!(res[0].status, ResourceStatus::Free);
        assert_eq!(
            res[1].status,
            ResourceStatus::Assigned {
                user: "alice".into(),
                since: 3.0
            }
        );

        let back = JournalEvent::StatusChanged {
            request_id: "r1".into(),
            status: RequestStatus::Processing,
            at: 4.0,
            delivery_failed: false,
        };
        assert!(matches!(apply_all(&mut s, vec![back]), Err(StoreError::StatusRegression { .. })));

        let stray = JournalEvent::Released {
            pair: PairId(1),
            user: "bob".into(),
            request_id: None,
            at: 5.0,
        };
        assert!(matches!(apply_all(&mut s, vec![stray]), Err(StoreError::NotHolder { .. })));
        apply_all(
            &mut s,
            vec![JournalEvent::Released {
                pair: PairId(1),
                user: "alice".into(),
                request_id: None,
                at: 5.0,
            }],
        )
        .unwrap();
        assert_eq!(s.last_released_by(PairId(1)), Some("alice"));
        assert!(s.live_request("alice").is_none());
    }

    #[test]
    fn sequence_must_be_contiguous() {
        let mut s = store();
        let e = JournalEntry {
            seq: 2,
            event: pair_request("r1", "alice", 0.0),
        };
        assert_eq!(s.apply(&e), Err(StoreError::OutOfOrder { expected: 1, found: 2 }));
    }

    #[test]
    fn unknown_user_is_rejected() {
        let mut s = store();
        assert!(matches!(
            apply_all(&mut s, vec![pair_request("r1", "mallory", 0.0)]),
            Err(StoreError::UnknownUser(_))
        ));
    }
}
