use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::Mutex;
use tokio::sync::mpsc::{unbounded_channel, UnboundedReceiver, UnboundedSender};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topic {
    UserRequest,
    Response,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusEvent {
    pub topic: Topic,
    /// Strictly increasing per topic, starting at 1.
    pub seq: u64,
    pub payload: serde_json::Value,
}

/// In-process publish/subscribe with per-topic sequence numbers. Every subscriber
/// sees every event published after it subscribed.
#[derive(Default)]
pub struct EventBus {
    inner: Mutex<Inner>,
}

#[derive(Default)]
struct Inner {
    seq: HashMap<Topic, u64>,
    subscribers: HashMap<Topic, Vec<UnboundedSender<BusEvent>>>,
}

impl EventBus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn subscribe(&self, topic: Topic) -> UnboundedReceiver<BusEvent> {
        let (tx, rx) = unbounded_channel();
        self.inner.lock().unwrap().subscribers.entry(topic).or_default().push(tx);
        rx
    }

    pub fn publish(&self, topic: Topic, payload: serde_json::Value) -> BusEvent {
        let mut inner = self.inner.lock().unwrap();
        let seq = inner.seq.entry(topic).or_insert(0);
        *seq += 1;
        let event = BusEvent {
            topic,
            seq: *seq,
            payload,
        };
        if let Some(subs) = inner.subscribers.get_mut(&topic) {
            subs.retain(|tx| tx.send(event.clone()).is_ok());
        }
        event
    }

    pub fn last_seq(&self, topic: Topic) -> u64 {
        self.inner.lock().unwrap().seq.get(&topic).copied().unwrap_or(0)
    }
}
