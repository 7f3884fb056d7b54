use crate::auth::{AuthError, Authenticator, Token};
use crate::backend::{Backend, BackendError, StubBackend, VirtualBackend};
use crate::bus::{EventBus, Topic};
use crate::clock::{Clock, SystemClock};
use crate::config::{BackendKind, ServiceConfig};
use crate::journal::{FileJournal, Journal, JournalError, MemoryJournal};
use crate::measure::{evaluate, MeasurementFunction, MeasurementRequest, ParamError, Plan};
use crate::notify::{Notification, Notifier};
use crate::store::{
    JournalEntry, JournalEvent, RequestKind, RequestRecord, RequestStatus, ResourceRecord, Snapshot, Store, StoreError,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::sync::{Arc, Mutex, MutexGuard};
use tokio::task::JoinHandle;
use vqn_core::allocation::PairId;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Auth(#[from] AuthError),
    #[error("{0}")]
    Forbidden(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error(transparent)]
    Invalid(#[from] ParamError),
    #[error("measurement failed: {0}")]
    Measurement(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error("state error: {0}")]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub pair_id: PairId,
    pub user: String,
    pub request_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementResponse {
    pub request_id: String,
    pub pair_id: PairId,
    pub function: MeasurementFunction,
    pub duration_s: f64,
    pub seed: u64,
    pub result: Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReleaseOutcome {
    pub pair_id: PairId,
    /// False when the pair had already been released by this user.
    pub released: bool,
}

struct Inner {
    store: Store,
    journal: Box<dyn Journal>,
}

impl Inner {
    fn commit(&mut self, event: JournalEvent) -> Result<JournalEntry, ServiceError> {
        let entry = JournalEntry {
            seq: self.store.last_seq() + 1,
            event,
        };
        self.journal.append(&entry)?;
        self.store.apply(&entry)?;
        Ok(entry)
    }
}

/// The request lifecycle. Handlers may call into it concurrently; every state change
/// goes through one lock and one journal.
pub struct Service {
    config: ServiceConfig,
    clock: Arc<dyn Clock>,
    auth: Authenticator,
    bus: EventBus,
    backend: Box<dyn Backend>,
    notifier: Notifier,
    inner: Mutex<Inner>,
}

impl Service {
    /// Opens the journal named in `config` (in memory when unset) with the system clock.
    pub fn from_config(config: ServiceConfig) -> Result<Arc<Self>, ServiceError> {
        let journal: Box<dyn Journal> = match &config.store_path {
            Some(p) => Box::new(FileJournal::open(p)?),
            None => Box::new(MemoryJournal::new()),
        };
        Self::open(config, journal, Arc::new(SystemClock))
    }

    /// Rebuilds state by replaying `journal`.
    pub fn open(config: ServiceConfig, journal: Box<dyn Journal>, clock: Arc<dyn Clock>) -> Result<Arc<Self>, ServiceError> {
        let pairs: Vec<_> = config
            .source
            .pairs
            .iter()
            .map(|p| (p.signal, p.idler, p.detected_pair_rate_hz))
            .collect();
        let creds = config.credentials();
        let names: Vec<String> = creds.iter().map(|c| c.user.clone()).collect();
        let mut store = Store::new(&pairs, &names, config.history_mode)?;
        for entry in journal.load()? {
            store.apply(&entry)?;
        }
        let backend: Box<dyn Backend> = match config.backend {
            BackendKind::Virtual => Box::new(VirtualBackend::new(config.source.clone())),
            BackendKind::Stub => Box::new(StubBackend),
        };
        Ok(Arc::new(Self {
            auth: Authenticator::new(&creds, config.token_ttl_s, clock.clone()),
            notifier: Notifier::new(&config.notification),
            bus: EventBus::new(),
            backend,
            clock,
            inner: Mutex::new(Inner { store, journal }),
            config,
        }))
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap()
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn bus(&self) -> &EventBus {
        &self.bus
    }

    pub fn notifier(&self) -> &Notifier {
        &self.notifier
    }

    pub fn now(&self) -> f64 {
        self.clock.now()
    }

    pub fn login(&self, user: &str, secret: &str) -> Result<Token, ServiceError> {
        Ok(self.auth.login(user, secret)?)
    }

    pub fn authenticate(&self, token: &str) -> Result<String, ServiceError> {
        Ok(self.auth.verify(token)?)
    }

    fn new_record(&self, user: &str, kind: RequestKind, payload: Value) -> RequestRecord {
        let now = self.now();
        RequestRecord {
            id: uuid::Uuid::new_v4().to_string(),
            user: user.to_string(),
            kind,
            status: RequestStatus::Processing,
            created_at: now,
            updated_at: now,
            payload,
            pair_id: None,
            result_ref: None,
            delivery_failed: false,
        }
    }

    fn status(id: &str, status: RequestStatus, at: f64) -> JournalEvent {
        JournalEvent::StatusChanged {
            request_id: id.to_string(),
            status,
            at,
            delivery_failed: false,
        }
    }

    /// Queues the user for a channel pair. One live request or pair per user.
    pub fn submit_pair_request(&self, user: &str) -> Result<RequestRecord, ServiceError> {
        let record = {
            let mut inner = self.lock();
            if let Some(live) = inner.store.live_request(user) {
                return Err(ServiceError::Conflict(match live.pair_id {
                    Some(p) => format!("{user} already holds {p}"),
                    None => format!("{user} already has request {} waiting", live.id),
                }));
            }
            let record = self.new_record(user, RequestKind::ChannelPair, json!({}));
            inner.commit(JournalEvent::RequestCreated { record: record.clone() })?;
            record
        };
        self.bus.publish(
            Topic::UserRequest,
            json!({"kind": "channel_pair", "request_id": record.id, "user": user}),
        );
        Ok(record)
    }

    /// One pass of the allocator over free pairs and waiting users.
    pub fn allocation_cycle(&self) -> Result<Vec<Decision>, ServiceError> {
        let (decisions, notes) = {
            let mut inner = self.lock();
            let now = self.now();
            let plan = inner.store.allocation().plan(now, self.config.policy);
            let mut decisions = Vec::new();
            let mut notes = Vec::new();
            for (pair, uid) in plan {
                let user = inner.store.user_name(uid).expect("known user").to_string();
                let request_id = inner.store.live_request(&user).expect("waiting user has a request").id.clone();
                inner.commit(JournalEvent::Assigned {
                    pair,
                    user: user.clone(),
                    request_id: request_id.clone(),
                    at: now,
                })?;
                inner.commit(Self::status(&request_id, RequestStatus::Processed, now))?;
                notes.push(self.notification_for(&inner.store, &request_id));
                decisions.push(Decision {
                    pair_id: pair,
                    user,
                    request_id,
                });
            }
            (decisions, notes)
        };
        for n in notes.into_iter().flatten() {
            self.bus.publish(Topic::Response, serde_json::to_value(n).expect("plain struct"));
        }
        Ok(decisions)
    }

    fn notification_for(&self, store: &Store, request_id: &str) -> Option<Notification> {
        let r = store.request(request_id)?;
        let pair = r.pair_id?;
        let (signal, idler) = store.channels(pair)?;
        Some(Notification {
            request_id: r.id.clone(),
            user: r.user.clone(),
            pair_id: pair,
            signal,
            idler,
            rate_hz: store.allocation().resource(pair).map_or(0.0, |p| p.rate.latest()),
        })
    }

    /// Marks a notified request completed. Repeated calls are no-ops.
    pub fn complete_request(&self, request_id: &str, delivery_failed: bool) -> Result<(), ServiceError> {
        let mut inner = self.lock();
        let status = inner
            .store
            .request(request_id)
            .ok_or_else(|| ServiceError::NotFound(format!("request {request_id}")))?
            .status;
        if status == RequestStatus::Completed {
            return Ok(());
        }
        let now = self.now();
        if status == RequestStatus::Processing {
            inner.commit(Self::status(request_id, RequestStatus::Processed, now))?;
        }
        inner.commit(JournalEvent::StatusChanged {
            request_id: request_id.to_string(),
            status: RequestStatus::Completed,
            at: now,
            delivery_failed,
        })?;
        Ok(())
    }

    /// Acquires streams for a held pair and runs one measurement on them. Blocks for
    /// the duration of the acquisition.
    pub fn run_measurement(&self, user: &str, req: &MeasurementRequest) -> Result<MeasurementResponse, ServiceError> {
        let parsed = req.parse(self.config.max_measurement_s)?;
        let (record, signal, idler, seed) = {
            let mut inner = self.lock();
            let (signal, idler) = inner
                .store
                .channels(req.pair_id)
                .ok_or_else(|| ServiceError::NotFound(format!("{}", req.pair_id)))?;
            if inner.store.holder(req.pair_id) != Some(user) {
                return Err(ServiceError::Forbidden(format!("{user} does not hold {}", req.pair_id)));
            }
            let seed = parsed
                .seed
                .unwrap_or_else(|| self.config.seed.wrapping_add(inner.store.measurement_count()));
            let record = self.new_record(
                user,
                RequestKind::Measurement,
                json!({"pair_id": req.pair_id, "function": req.function, "params": req.params, "seed": seed}),
            );
            inner.commit(JournalEvent::RequestCreated { record: record.clone() })?;
            (record, signal, idler, seed)
        };

        let outcome = self
            .backend
            .acquire(signal, idler, parsed.duration_s, seed)
            .map_err(ServiceError::from)
            .and_then(|(a, b)| evaluate(&parsed.plan, (signal, &a), (idler, &b), parsed.duration_s).map_err(Into::into));

        let mut inner = self.lock();
        let now = self.now();
        let stored = match &outcome {
            Ok(v) => v.clone(),
            Err(e) => json!({"error": e.to_string()}),
        };
        inner.commit(JournalEvent::MeasurementStored {
            request_id: record.id.clone(),
            result: stored,
        })?;
        if let (Ok(v), Plan::Coincidence(_)) = (&outcome, &parsed.plan) {
            let cc = v["cc_hz"].as_f64().unwrap_or(0.0);
            if cc > 0.0 {
                inner.commit(JournalEvent::RateUpdated {
                    pair: req.pair_id,
                    rate_hz: cc,
                    at: now,
                })?;
            }
        }
        inner.commit(Self::status(&record.id, RequestStatus::Processed, now))?;
        inner.commit(Self::status(&record.id, RequestStatus::Completed, now))?;
        drop(inner);

        let result = outcome.map_err(|e| match e {
            ServiceError::Invalid(p) if p.field == "params" => ServiceError::Measurement(p.message),
            other => other,
        })?;
        Ok(MeasurementResponse {
            request_id: record.id,
            pair_id: req.pair_id,
            function: req.function,
            duration_s: parsed.duration_s,
            seed,
            result,
        })
    }

    /// Returns a held pair to the pool. Releasing a pair one has already released is a
    /// no-op; releasing anyone else's pair is forbidden.
    pub fn release(&self, user: &str, pair: PairId) -> Result<ReleaseOutcome, ServiceError> {
        {
            let mut inner = self.lock();
            if inner.store.channels(pair).is_none() {
                return Err(ServiceError::NotFound(format!("{pair}")));
            }
            if inner.store.holder(pair) != Some(user) {
                if inner.store.last_released_by(pair) == Some(user) {
                    return Ok(ReleaseOutcome {
                        pair_id: pair,
                        released: false,
                    });
                }
                return Err(ServiceError::Forbidden(format!("{user} does not hold {pair}")));
            }
            let record = self.new_record(user, RequestKind::Release, json!({"pair_id": pair}));
            let now = record.created_at;
            let id = record.id.clone();
            inner.commit(JournalEvent::RequestCreated { record })?;
            inner.commit(JournalEvent::Released {
                pair,
                user: user.to_string(),
                request_id: Some(id.clone()),
                at: now,
            })?;
            inner.commit(Self::status(&id, RequestStatus::Processed, now))?;
            inner.commit(Self::status(&id, RequestStatus::Completed, now))?;
        }
        self.bus
            .publish(Topic::UserRequest, json!({"kind": "release", "pair_id": pair, "user": user}));
        Ok(ReleaseOutcome {
            pair_id: pair,
            released: true,
        })
    }

    /// A request as seen by its owner.
    pub fn request_status(&self, user: &str, id: &str) -> Result<RequestRecord, ServiceError> {
        let inner = self.lock();
        match inner.store.request(id) {
            Some(r) if r.user == user => Ok(r.clone()),
            _ => Err(ServiceError::NotFound(format!("request {id}"))),
        }
    }

    pub fn measurement_result(&self, user: &str, id: &str) -> Result<Value, ServiceError> {
        let inner = self.lock();
        match (inner.store.request(id), inner.store.result(id)) {
            (Some(r), Some(v)) if r.user == user => Ok(v.clone()),
            _ => Err(ServiceError::NotFound(format!("measurement {id}"))),
        }
    }

    pub fn resources(&self) -> Vec<ResourceRecord> {
        self.lock().store.resources()
    }

    pub fn queue_position(&self, user: &str) -> Option<usize> {
        self.lock().store.queue_position(user)
    }

    /// The user's live channel-pair request, waiting or served.
    pub fn current_request(&self, user: &str) -> Option<RequestRecord> {
        self.lock().store.live_request(user).cloned()
    }

    pub fn snapshot(&self) -> Snapshot {
        self.lock().store.snapshot()
    }

    pub fn journal_entries(&self) -> Result<Vec<JournalEntry>, ServiceError> {
        Ok(self.lock().journal.load()?)
    }

    /// Starts the allocation worker and the notifier. Assigned requests whose
    /// notification never went out are redelivered first.
    pub fn start(self: &Arc<Self>) -> Workers {
        let mut requests = self.bus.subscribe(Topic::UserRequest);
        let mut responses = self.bus.subscribe(Topic::Response);

        let svc = self.clone();
        let worker = tokio::spawn(async move {
            loop {
                if let Err(e) = svc.allocation_cycle() {
                    tracing::error!("allocation failed: {e}");
                }
                if requests.recv().await.is_none() {
                    break;
                }
                while requests.try_recv().is_ok() {}
            }
        });

        let pending: Vec<Notification> = {
            let inner = self.lock();
            inner
                .store
                .undelivered()
                .iter()
                .filter_map(|r| self.notification_for(&inner.store, &r.id))
                .collect()
        };
        let svc = self.clone();
        let notifier = tokio::spawn(async move {
            for n in pending {
                svc.spawn_delivery(n);
            }
            while let Some(event) = responses.recv().await {
                match serde_json::from_value::<Notification>(event.payload) {
                    Ok(n) => svc.spawn_delivery(n),
                    Err(e) => tracing::error!("malformed response event: {e}"),
                }
            }
        });
        Workers { worker, notifier }
    }

    fn spawn_delivery(self: &Arc<Self>, n: Notification) {
        let svc = self.clone();
        tokio::spawn(async move {
            let d = svc.notifier.deliver(&n).await;
            if let Err(e) = svc.complete_request(&n.request_id, !d.delivered) {
                tracing::error!(request = %n.request_id, "cannot complete request: {e}");
            }
        });
    }
}

/// Background tasks of a running service.
pub struct Workers {
    pub worker: JoinHandle<()>,
    pub notifier: JoinHandle<()>,
}

impl Workers {
    pub fn abort(&self) {
        self.worker.abort();
        self.notifier.abort();
    }
}
