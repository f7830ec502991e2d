//! Thin async client for the serving HTTP API.

use serde::de::DeserializeOwned;
use serde_json::{json, Value};
use thiserror::Error;

pub use sumrec_core::serving::{EventMessage, ItemPayload, ScoreRequest, ScoreResponse};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    Http(#[from] reqwest::Error),

    #[error("server rejected request: {0}")]
    Rejected(String),

    #[error("malformed server response: {0}")]
    Malformed(String),
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone, serde::Deserialize)]
pub struct EventAck {
    pub user_id: String,
    pub version: u64,
}

#[derive(Debug, Clone, serde::Deserialize)]
pub struct Stats {
    pub users: usize,
    pub d: usize,
    pub k: usize,
    pub encoder: String,
}

#[derive(Debug, Clone, serde::Deserialize)]
pub struct SnapshotAck {
    pub users: usize,
}

pub struct ServingClient {
    base: String,
    http: reqwest::Client,
}

impl ServingClient {
    /// `base` is the server root, e.g. "http://127.0.0.1:8080".
    pub fn new(base: impl Into<String>) -> Self {
        ServingClient {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    fn parse<T: DeserializeOwned>(body: Value) -> Result<T> {
        if body["ok"].as_bool() != Some(true) {
            return Err(ClientError::Rejected(
                body["error"]
                    .as_str()
                    .unwrap_or("unknown server error")
                    .to_string(),
            ));
        }
        serde_json::from_value(body).map_err(|e| ClientError::Malformed(e.to_string()))
    }

    async fn post<T: DeserializeOwned>(&self, path: &str, payload: &Value) -> Result<T> {
        let body: Value = self
            .http
            .post(format!("{}{path}", self.base))
            .json(payload)
            .send()
            .await?
            .json()
            .await?;
        Self::parse(body)
    }

    pub async fn event(&self, msg: &EventMessage) -> Result<EventAck> {
        let payload = serde_json::to_value(msg).expect("serializable message");
        self.post("/v1/event", &payload).await
    }

    pub async fn score(&self, req: &ScoreRequest) -> Result<ScoreResponse> {
        let payload = serde_json::to_value(req).expect("serializable request");
        self.post("/v1/score", &payload).await
    }

    pub async fn snapshot(&self, path: &str) -> Result<SnapshotAck> {
        self.post("/v1/snapshot", &json!({ "path": path })).await
    }

    pub async fn restore(&self, path: &str) -> Result<SnapshotAck> {
        self.post("/v1/restore", &json!({ "path": path })).await
    }

    pub async fn stats(&self) -> Result<Stats> {
        let body: Value = self
            .http
            .get(format!("{}/v1/stats", self.base))
            .send()
            .await?
            .json()
            .await?;
        Self::parse(body)
    }

    pub async fn health(&self) -> Result<bool> {
        let resp = self.http.get(format!("{}/healthz", self.base)).send().await?;
        Ok(resp.status().is_success())
    }
}
