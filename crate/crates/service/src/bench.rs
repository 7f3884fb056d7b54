use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

/// Inclusive millisecond range, written `LO-HI` or a single value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MsRange(pub u64, pub u64);

impl FromStr for MsRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse = |t: &str| t.trim().parse::<u64>().map_err(|e| format!("{t:?}: {e}"));
        let (lo, hi) = match s.split_once('-') {
            Some((a, b)) => (parse(a)?, parse(b)?),
            None => {
                let v = parse(s)?;
                (v, v)
            }
        };
        if lo > hi {
            return Err(format!("empty range {s}"));
        }
        Ok(MsRange(lo, hi))
    }
}

impl MsRange {
    fn sample(&self, rng: &mut StdRng) -> Duration {
        Duration::from_millis(rng.random_range(self.0..=self.1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub url: String,
    pub users: usize,
    pub interarrival_ms: MsRange,
    pub duration_s: f64,
    pub seed: u64,
    /// How long a client keeps its pair before releasing.
    pub hold_ms: MsRange,
    /// Runs a short count-rate measurement on every pair received.
    pub measure: bool,
    pub poll_ms: u64,
}

impl BenchConfig {
    pub fn new(url: &str, users: usize) -> Self {
        Self {
            url: url.trim_end_matches('/').to_string(),
            users,
            interarrival_ms: MsRange(50, 200),
            duration_s: 10.0,
            seed: 0,
            hold_ms: MsRange(5, 50),
            measure: true,
            poll_ms: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Latency {
    pub p50_ms: f64,
    pub p90_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub clients: usize,
    pub requests: usize,
    pub completed: usize,
    /// Requests acknowledged by the server that never reached "completed".
    pub lost: usize,
    pub api_calls: usize,
    pub failures: usize,
    pub errors: Vec<String>,
    pub latency: Latency,
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Default)]
struct Tally {
    requests: usize,
    completed: usize,
    lost: usize,
    failures: usize,
    errors: Vec<String>,
    latencies_ms: Vec<f64>,
}

struct Client {
    http: reqwest::Client,
    base: String,
    token: String,
    tally: Arc<Mutex<Tally>>,
}

impl Client {
    async fn call(&self, method: reqwest::Method, path: &str, body: Option<Value>) -> Result<Value, String> {
        let start = Instant::now();
        let mut req = self.http.request(method, format!("{}{path}", self.base));
        if !self.token.is_empty() {
            req = req.bearer_auth(&self.token);
        }
        if let Some(b) = body {
            req = req.json(&b);
        }
        let outcome = async {
            let resp = req.send().await.map_err(|e| e.to_string())?;
            let status = resp.status();
            let v: Value = resp.json().await.map_err(|e| e.to_string())?;
            if status.is_success() {
                Ok(v)
            } else {
                Err(format!("{path}: {status} {v}"))
            }
        }
        .await;
        let mut t = self.tally.lock().unwrap();
        t.latencies_ms.push(start.elapsed().as_secs_f64() * 1e3);
        if let Err(e) = &outcome {
            t.failures += 1;
            if t.errors.len() < 20 {
                t.errors.push(e.clone());
            }
        }
        outcome
    }

    /// One request from submission to release. Returns whether it completed.
    async fn lifecycle(&self, rng: &mut StdRng, cfg: &BenchConfig) -> Result<bool, String> {
        let ack = self.call(reqwest::Method::POST, "/api/v1/pair-requests", None).await?;
        self.tally.lock().unwrap().requests += 1;
        let id = ack["request_id"].as_str().ok_or("no request id")?.to_string();
        let deadline = Instant::now() + Duration::from_secs(120);
        let record = loop {
            let r = self
                .call(reqwest::Method::GET, &format!("/api/v1/pair-requests/{id}"), None)
                .await?;
            if r["status"] == "completed" {
                break r;
            }
            if Instant::now() > deadline {
                return Ok(false);
            }
            tokio::time::sleep(Duration::from_millis(cfg.poll_ms)).await;
        };
        let pair = record["pair_id"].as_u64().ok_or("completed without a pair")?;
        if cfg.measure {
            let body = json!({"pair_id": pair, "function": "count_rate", "params": {"duration_s": 0.001}});
            self.call(reqwest::Method::POST, "/api/v1/measurements", Some(body)).await?;
        }
        tokio::time::sleep(cfg.hold_ms.sample(rng)).await;
        self.call(reqwest::Method::POST, &format!("/api/v1/pairs/{pair}/release"), None)
            .await?;
        Ok(true)
    }
}

/// Runs `cfg.users` concurrent clients, each logging in as `bench-{i}` and cycling
/// through request, poll, measure, release until the duration is up.
pub async fn run_bench(cfg: &BenchConfig) -> BenchReport {
    let tally = Arc::new(Mutex::new(Tally::default()));
    let http = reqwest::Client::builder()
        .timeout(Duration::from_secs(30))
        .build()
        .expect("http client");
    let stop_at = Instant::now() + Duration::from_secs_f64(cfg.duration_s);
    let mut tasks = Vec::new();
    for i in 0..cfg.users {
        let cfg = cfg.clone();
        let tally = tally.clone();
        let http = http.clone();
        tasks.push(tokio::spawn(async move {
            let mut rng = StdRng::seed_from_u64(cfg.seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut client = Client {
                http,
                base: cfg.url.clone(),
                token: String::new(),
                tally,
            };
            let name = format!("bench-{i}");
            match client
                .call(reqwest::Method::POST, "/api/v1/auth/login", Some(json!({"user": name, "secret": name})))
                .await
            {
                Ok(v) => client.token = v["token"].as_str().unwrap_or_default().to_string(),
                Err(_) => return,
            }
            loop {
                tokio::time::sleep(cfg.interarrival_ms.sample(&mut rng)).await;
                if Instant::now() >= stop_at {
                    break;
                }
                match client.lifecycle(&mut rng, &cfg).await {
                    Ok(true) => client.tally.lock().unwrap().completed += 1,
                    Ok(false) => client.tally.lock().unwrap().lost += 1,
                    Err(_) => break,
                }
            }
        }));
    }
    for t in tasks {
        let _ = t.await;
    }
    let mut t = std::mem::take(&mut *tally.lock().unwrap());
    t.latencies_ms.sort_by(f64::total_cmp);
    let lost = t.lost + t.requests.saturating_sub(t.completed + t.lost);
    BenchReport {
        clients: cfg.users,
        requests: t.requests,
        completed: t.completed,
        lost,
        api_calls: t.latencies_ms.len(),
        failures: t.failures,
        errors: t.errors,
        latency: Latency {
            p50_ms: percentile(&t.latencies_ms, 50.0),
            p90_ms: percentile(&t.latencies_ms, 90.0),
            p99_ms: percentile(&t.latencies_ms, 99.0),
            max_ms: t.latencies_ms.last().copied().unwrap_or(0.0),
        },
    }
}
