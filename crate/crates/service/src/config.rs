use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use vqn_core::allocation::{HistoryMode, Policy};
use vqn_core::photon_source::{testbed_preset, SourceConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid value for {var}: {value:?}")]
    Env { var: String, value: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserCredential {
    pub user: String,
    pub secret: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Virtual,
    Stub,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NotificationSink {
    /// Appends one JSON line per notification; `path: None` keeps them in memory only.
    Log {
        #[serde(default)]
        path: Option<PathBuf>,
    },
    Webhook {
        url: String,
        #[serde(default = "default_attempts")]
        max_attempts: u32,
        #[serde(default = "default_backoff_ms")]
        base_backoff_ms: u64,
        #[serde(default)]
        dead_letter_path: Option<PathBuf>,
    },
}

fn default_attempts() -> u32 {
    5
}

fn default_backoff_ms() -> u64 {
    200
}

impl Default for NotificationSink {
    fn default() -> Self {
        NotificationSink::Log { path: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub listen: String,
    pub users: Vec<UserCredential>,
    /// Provisions `bench-0 .. bench-{n-1}`, each with its own name as secret.
    pub bench_users: usize,
    pub policy: Policy,
    pub history_mode: HistoryMode,
    pub backend: BackendKind,
    pub notification: NotificationSink,
    /// Journal file; in-memory when unset.
    pub store_path: Option<PathBuf>,
    pub token_ttl_s: f64,
    pub max_measurement_s: f64,
    pub source: SourceConfig,
    pub seed: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            users: Vec::new(),
            bench_users: 0,
            policy: Policy::Fcfs,
            history_mode: HistoryMode::default(),
            backend: BackendKind::Virtual,
            notification: NotificationSink::default(),
            store_path: None,
            token_ttl_s: 3600.0,
            max_measurement_s: 120.0,
            source: testbed_preset(),
            seed: 0,
        }
    }
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_user(mut self, user: &str, secret: &str) -> Self {
        self.users.push(UserCredential {
            user: user.into(),
            secret: secret.into(),
        });
        self
    }

    /// Every provisioned credential, explicit users first.
    pub fn credentials(&self) -> Vec<UserCredential> {
        let mut all = self.users.clone();
        all.extend((0..self.bench_users).map(|i| UserCredential {
            user: format!("bench-{i}"),
            secret: format!("bench-{i}"),
        }));
        all
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let creds = self.credentials();
        let mut names: Vec<_> = creds.iter().map(|c| c.user.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(ConfigError::Invalid("duplicate user name".into()));
        }
        if !(self.token_ttl_s > 0.0) {
            return Err(ConfigError::Invalid("token_ttl_s must be positive".into()));
        }
        if !(self.max_measurement_s > 0.0) {
            return Err(ConfigError::Invalid("max_measurement_s must be positive".into()));
        }
        self.source
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Applies `VQN_*` overrides from the process environment.
    pub fn apply_env(self) -> Result<Self, ConfigError> {
        self.apply_vars(std::env::vars())
    }

    pub fn apply_vars<I: IntoIterator<Item = (String, String)>>(mut self, vars: I) -> Result<Self, ConfigError> {
        for (var, value) in vars {
            let bad = || ConfigError::Env {
                var: var.clone(),
                value: value.clone(),
            };
            match var.as_str() {
                "VQN_LISTEN" => self.listen = value.clone(),
                "VQN_POLICY" => self.policy = value.parse().map_err(|_| bad())?,
                "VQN_BACKEND" => {
                    self.backend = serde_json::from_value(serde_json::Value::String(value.clone())).map_err(|_| bad())?
                }
                "VQN_STORE_PATH" => self.store_path = Some(PathBuf::from(&value)),
                "VQN_TOKEN_TTL_S" => self.token_ttl_s = value.parse().map_err(|_| bad())?,
                "VQN_MAX_MEASUREMENT_S" => self.max_measurement_s = value.parse().map_err(|_| bad())?,
                "VQN_SEED" => self.seed = value.parse().map_err(|_| bad())?,
                "VQN_BENCH_USERS" => self.bench_users = value.parse().map_err(|_| bad())?,
                "VQN_WEBHOOK_URL" => {
                    self.notification = NotificationSink::Webhook {
                        url: value.clone(),
                        max_attempts: default_attempts(),
                        base_backoff_ms: default_backoff_ms(),
                        dead_letter_path: None,
                    }
                }
                _ => {}
            }
        }
        self.validate()?;
        Ok(self)
    }
}
