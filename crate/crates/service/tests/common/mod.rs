#![allow(dead_code)]

use serde_json::{json, Value};
use std::sync::Arc;
use std::time::{Duration, Instant};
use vqn_service::clock::Clock;
use vqn_service::http::{spawn, Running};
use vqn_service::journal::Journal;
use vqn_service::{Service, ServiceConfig};

pub fn config(users: &[&str]) -> ServiceConfig {
    users
        .iter()
        .fold(ServiceConfig::default(), |c, u| c.with_user(u, &format!("{u}-pw")))
}

pub async fn start(cfg: ServiceConfig, journal: Box<dyn Journal>, clock: Arc<dyn Clock>) -> Running {
    let svc = Service::open(cfg, journal, clock).unwrap();
    spawn(svc, "127.0.0.1:0").await.unwrap()
}

pub struct Api {
    pub base: String,
    pub token: String,
    http: reqwest::Client,
}

impl Api {
    pub fn new(base: &str) -> Self {
        Self {
            base: base.to_string(),
            token: String::new(),
            http: reqwest::Client::new(),
        }
    }

    pub async fn login(base: &str, user: &str) -> Self {
        let mut api = Self::new(base);
        let (status, v) = api
            .send("POST", "/api/v1/auth/login", Some(json!({"user": user, "secret": format!("{user}-pw")})))
            .await;
        assert_eq!(status, 200, "{v}");
        api.token = v["token"].as_str().unwrap().to_string();
        api
    }

    pub async fn send(&self, method: &str, path: &str, body: Option<Value>) -> (u16, Value) {
        let method = reqwest::Method::from_bytes(method.as_bytes()).unwrap();
        let mut req = self.http.request(method, format!("{}{path}", self.base));
        if !self.token.is_empty() {
            req = req.bearer_auth(&self.token);
        }
        if let Some(b) = body {
            req = req.json(&b);
        }
        let resp = req.send().await.unwrap();
        let status = resp.status().as_u16();
        let text = resp.text().await.unwrap();
        (status, serde_json::from_str(&text).unwrap_or(Value::String(text)))
    }

    pub async fn get(&self, path: &str) -> (u16, Value) {
        self.send("GET", path, None).await
    }

    pub async fn post(&self, path: &str, body: Value) -> (u16, Value) {
        self.send("POST", path, Some(body)).await
    }

    pub async fn request_pair(&self) -> String {
        let (status, v) = self.send("POST", "/api/v1/pair-requests", None).await;
        assert_eq!(status, 202, "{v}");
        assert_eq!(v["status"], "processing");
        v["request_id"].as_str().unwrap().to_string()
    }

    /// Polls a request until it reaches `status`.
    pub async fn wait_for(&self, id: &str, status: &str) -> Value {
        let deadline = Instant::now() + Duration::from_secs(20);
        loop {
            let (code, v) = self.get(&format!("/api/v1/pair-requests/{id}")).await;
            assert_eq!(code, 200, "{v}");
            if v["status"] == status {
                return v;
            }
            assert!(Instant::now() < deadline, "request {id} stuck at {}", v["status"]);
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
    }
}

pub async fn eventually<F: Fn() -> bool>(what: &str, f: F) {
    let deadline = Instant::now() + Duration::from_secs(20);
    while !f() {
        assert!(Instant::now() < deadline, "timed out waiting for {what}");
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
}
