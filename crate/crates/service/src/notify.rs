use crate::config::NotificationSink;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;
use vqn_core::allocation::PairId;
use vqn_core::tagcore::ChannelIndex;

/// Tells a user which pair they were given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Notification {
    pub request_id: String,
    pub user: String,
    pub pair_id: PairId,
    pub signal: ChannelIndex,
    pub idler: ChannelIndex,
    pub rate_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveryRecord {
    pub request_id: String,
    pub attempts: u32,
    pub delivered: bool,
    #[serde(default)]
    pub last_error: Option<String>,
}

enum Channel {
    Log {
        path: Option<PathBuf>,
    },
    Webhook {
        client: reqwest::Client,
        url: String,
        max_attempts: u32,
        base_backoff: Duration,
        dead_letter_path: Option<PathBuf>,
    },
}

pub struct Notifier {
    channel: Channel,
    deliveries: Mutex<Vec<DeliveryRecord>>,
    dead_letters: Mutex<Vec<Notification>>,
    log: Mutex<Vec<Notification>>,
}

fn append_line(path: &Path, value: &impl Serialize) -> std::io::Result<()> {
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut line = serde_json::to_vec(value)?;
    line.push(b'\n');
    f.write_all(&line)
}

impl Notifier {
    pub fn new(sink: &NotificationSink) -> Self {
        let channel = match sink {
            NotificationSink::Log { path } => Channel::Log { path: path.clone() },
            NotificationSink::Webhook {
                url,
                max_attempts,
                base_backoff_ms,
                dead_letter_path,
            } => Channel::Webhook {
                client: reqwest::Client::builder()
                    .timeout(Duration::from_secs(5))
                    .build()
                    .expect("http client"),
                url: url.clone(),
                max_attempts: (*max_attempts).max(1),
                base_backoff: Duration::from_millis(*base_backoff_ms),
                dead_letter_path: dead_letter_path.clone(),
            },
        };
        Self {
            channel,
            deliveries: Mutex::new(Vec::new()),
            dead_letters: Mutex::new(Vec::new()),
            log: Mutex::new(Vec::new()),
        }
    }

    /// Delivers once, retrying webhooks with doubling delays. Exhausted deliveries go
    /// to the dead-letter list.
    pub async fn deliver(&self, n: &Notification) -> DeliveryRecord {
        let record = match &self.channel {
            Channel::Log { path } => {
                let written = match path {
                    Some(p) => append_line(p, n).map_err(|e| e.to_string()),
                    None => Ok(()),
                };
                tracing::info!(request = %n.request_id, user = %n.user, pair = %n.pair_id, "pair assigned");
                self.log.lock().unwrap().push(n.clone());
                DeliveryRecord {
                    request_id: n.request_id.clone(),
                    attempts: 1,
                    delivered: written.is_ok(),
                    last_error: written.err(),
                }
            }
            Channel::Webhook {
                client,
                url,
                max_attempts,
                base_backoff,
                dead_letter_path,
            } => {
                let mut last_error = None;
                let mut attempts = 0;
                let mut delivered = false;
                while attempts < *max_attempts {
                    if attempts > 0 {
                        tokio::time::sleep(*base_backoff * 2u32.pow(attempts - 1)).await;
                    }
                    attempts += 1;
                    match client.post(url).json(n).send().await {
                        Ok(resp) if resp.status().is_success() => {
                            delivered = true;
                            break;
                        }
                        Ok(resp) => last_error = Some(format!("status {}", resp.status())),
                        Err(e) => last_error = Some(e.to_string()),
                    }
                }
                if !delivered {
                    tracing::warn!(request = %n.request_id, attempts, "notification dead-lettered");
                    if let Some(p) = dead_letter_path {
                        if let Err(e) = append_line(p, n) {
                            tracing::error!("dead-letter write failed: {e}");
                        }
                    }
                    self.dead_letters.lock().unwrap().push(n.clone());
                }
                DeliveryRecord {
                    request_id: n.request_id.clone(),
                    attempts,
                    delivered,
                    last_error: if delivered { None } else { last_error },
                }
            }
        };
        self.deliveries.lock().unwrap().push(record.clone());
        record
    }

    pub fn deliveries(&self) -> Vec<DeliveryRecord> {
        self.deliveries.lock().unwrap().clone()
    }

    pub fn dead_letters(&self) -> Vec<Notification> {
        self.dead_letters.lock().unwrap().clone()
    }

    /// Notifications written by the log sink.
    pub fn logged(&self) -> Vec<Notification> {
        self.log.lock().unwrap().clone()
    }
}
