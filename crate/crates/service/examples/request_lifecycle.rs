//! Starts the service on a free port and walks one user through the HTTP API: log in,
//! request a pair, wait for completion, measure coincidences, release.
//!
//! ```text
//! cargo run -p vqn-service --example request_lifecycle
//! ```

use serde_json::{json, Value};
use std::time::Duration;
use vqn_service::{Service, ServiceConfig};

async fn call(http: &reqwest::Client, method: reqwest::Method, url: String, token: &str, body: Option<Value>) -> Value {
    let mut req = http.request(method, url).bearer_auth(token);
    if let Some(b) = body {
        req = req.json(&b);
    }
    req.send().await.expect("request").json().await.expect("json body")
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ServiceConfig::default().with_user("alice", "wonderland");
    let running = vqn_service::http::spawn(Service::from_config(cfg)?, "127.0.0.1:0").await?;
    let base = format!("{}/api/v1", running.url());
    let http = reqwest::Client::new();
    println!("service at {base}");

    let login: Value = http
        .post(format!("{base}/auth/login"))
        .json(&json!({"user": "alice", "secret": "wonderland"}))
        .send()
        .await?
        .json()
        .await?;
    let token = login["token"].as_str().unwrap_or_default().to_string();

    let ack = call(&http, reqwest::Method::POST, format!("{base}/pair-requests"), &token, None).await;
    println!("submitted: {ack}");
    let id = ack["request_id"].as_str().unwrap_or_default();
    let record = loop {
        let r = call(&http, reqwest::Method::GET, format!("{base}/pair-requests/{id}"), &token, None).await;
        println!("  status {}", r["status"]);
        if r["status"] == "completed" {
            break r;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    };
    let pair = record["pair_id"].as_u64().unwrap_or_default();

    let body = json!({"pair_id": pair, "function": "coincidence", "params": {"duration_s": 2.0, "seed": 1}});
    let m = call(&http, reqwest::Method::POST, format!("{base}/measurements"), &token, Some(body)).await;
    println!("coincidence on pair {pair}: {}", m["result"]);

    let r = call(&http, reqwest::Method::POST, format!("{base}/pairs/{pair}/release"), &token, None).await;
    println!("released: {r}");
    let resources = call(&http, reqwest::Method::GET, format!("{base}/resources"), &token, None).await;
    println!("resources: {resources}");
    running.kill();
    Ok(())
}
