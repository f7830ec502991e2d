//! Serving front end. One dispatch core handles the operation protocol;
//! it is exposed two ways: an axum HTTP/JSON API for multi-client use and
//! a line-delimited JSON loop over stdin/stdout for pipe deployments.
//!
//! Protocol (pipe mode sends the same payloads with an `"op"` field):
//!   {"op":"event","user_id":u,"embedding":[..]|"item_id":id,"timestamp":t}
//!     → {"ok":true,"user_id":u,"version":n}
//!   {"op":"score","user_id":u,"candidates":[[..]|"id",...]}
//!     → {"ok":true,"user_id":u,"version":n,"scores":[{"score":s}|{"error":e},..]}
//!   {"op":"snapshot","path":p} → {"ok":true,"users":n,"path":p}
//!   {"op":"restore","path":p}  → {"ok":true,"users":n}
//!   {"op":"stats"}             → {"ok":true,"users":n,"d":d,"k":k,"encoder":kind}
//! Errors → {"ok":false,"error":msg} (HTTP also sets a 4xx/5xx status).

use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use parking_lot::RwLock;
use serde::Deserialize;
use serde_json::{json, Value};

use sumrec_core::encoder::EncoderKind;
use sumrec_core::error::Error as CoreError;
use sumrec_core::serving::{EventMessage, ObjectStore, ScoreRequest, ServingContext};

pub struct AppState {
    ctx: ServingContext,
    store: RwLock<ObjectStore>,
    kind: EncoderKind,
}

impl AppState {
    pub fn new(ctx: ServingContext, kind: EncoderKind) -> Self {
        let store = ObjectStore::new(ctx.k(), ctx.d());
        AppState {
            ctx,
            store: RwLock::new(store),
            kind,
        }
    }

    pub fn with_store(ctx: ServingContext, kind: EncoderKind, store: ObjectStore) -> Result<Self, CoreError> {
        if store.d() != ctx.d() || store.k() != ctx.k() {
            return Err(CoreError::InvalidInput(format!(
                "restored store is {}x{}, checkpoint expects {}x{}",
                store.k(),
                store.d(),
                ctx.k(),
                ctx.d()
            )));
        }
        Ok(AppState {
            ctx,
            store: RwLock::new(store),
            kind,
        })
    }
}

/// One operation of the serving protocol.
#[derive(Debug, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum OpRequest {
    Event(EventMessage),
    Score(ScoreRequest),
    Snapshot { path: String },
    Restore { path: String },
    Stats,
}

fn err_value(e: impl std::fmt::Display) -> Value {
    json!({"ok": false, "error": e.to_string()})
}

/// Applies one protocol operation to the state. Infallible at this level:
/// failures become {"ok":false,...} values.
pub fn dispatch(state: &AppState, op: OpRequest) -> Value {
    match op {
        OpRequest::Event(msg) => match state.store.read().apply_event(&state.ctx, &msg) {
            Ok(version) => json!({"ok": true, "user_id": msg.user_id, "version": version}),
            Err(e) => err_value(e),
        },
        OpRequest::Score(req) => match state.store.read().score(&state.ctx, &req) {
            Ok(resp) => {
                let mut v = serde_json::to_value(&resp).expect("serializable response");
                v["ok"] = json!(true);
                v
            }
            Err(e) => err_value(e),
        },
        OpRequest::Snapshot { path } => {
            match state.store.read().snapshot(std::path::Path::new(&path)) {
                Ok(users) => json!({"ok": true, "users": users, "path": path}),
                Err(e) => err_value(e),
            }
        }
        OpRequest::Restore { path } => {
            match ObjectStore::restore(std::path::Path::new(&path)) {
                Ok(new_store) => {
                    if new_store.d() != state.ctx.d() || new_store.k() != state.ctx.k() {
                        return err_value(format!(
                            "snapshot is {}x{}, checkpoint expects {}x{}",
                            new_store.k(),
                            new_store.d(),
                            state.ctx.k(),
                            state.ctx.d()
                        ));
                    }
                    let users = new_store.len();
                    *state.store.write() = new_store;
                    json!({"ok": true, "users": users})
                }
                Err(e) => err_value(e),
            }
        }
        OpRequest::Stats => {
            let store = state.store.read();
            json!({
                "ok": true,
                "users": store.len(),
                "d": store.d(),
                "k": store.k(),
                "encoder": state.kind,
            })
        }
    }
}

fn http_status(body: &Value) -> StatusCode {
    if body["ok"].as_bool().unwrap_or(false) {
        StatusCode::OK
    } else {
        StatusCode::BAD_REQUEST
    }
}

async fn handle_event(
    State(state): State<Arc<AppState>>,
    Json(msg): Json<EventMessage>,
) -> (StatusCode, Json<Value>) {
    let body = dispatch(&state, OpRequest::Event(msg));
    (http_status(&body), Json(body))
}

async fn handle_score(
    State(state): State<Arc<AppState>>,
    Json(req): Json<ScoreRequest>,
) -> (StatusCode, Json<Value>) {
    let body = dispatch(&state, OpRequest::Score(req));
    (http_status(&body), Json(body))
}

#[derive(Deserialize)]
struct PathArg {
    path: String,
}

async fn handle_snapshot(
    State(state): State<Arc<AppState>>,
    Json(arg): Json<PathArg>,
) -> (StatusCode, Json<Value>) {
    let body = dispatch(&state, OpRequest::Snapshot { path: arg.path });
    (http_status(&body), Json(body))
}

async fn handle_restore(
    State(state): State<Arc<AppState>>,
    Json(arg): Json<PathArg>,
) -> (StatusCode, Json<Value>) {
    let body = dispatch(&state, OpRequest::Restore { path: arg.path });
    (http_status(&body), Json(body))
}

async fn handle_stats(State(state): State<Arc<AppState>>) -> Json<Value> {
    Json(dispatch(&state, OpRequest::Stats))
}

async fn handle_health() -> &'static str {
    "ok"
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/event", post(handle_event))
        .route("/v1/score", post(handle_score))
        .route("/v1/snapshot", post(handle_snapshot))
        .route("/v1/restore", post(handle_restore))
        .route("/v1/stats", get(handle_stats))
        .route("/healthz", get(handle_health))
        .with_state(state)
}

/// Binds and serves the HTTP API until the process is terminated. Reports
/// the bound address through `on_bind` (useful with port 0).
pub async fn run_http(
    state: Arc<AppState>,
    addr: SocketAddr,
    on_bind: impl FnOnce(SocketAddr),
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    on_bind(listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

/// Line-delimited JSON loop: one request object per input line, one
/// response object per output line. Malformed lines produce an error
/// response and the loop continues; EOF ends it.
pub fn run_pipe(
    state: &AppState,
    input: impl BufRead,
    mut output: impl Write,
) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<OpRequest>(&line) {
            Ok(op) => dispatch(state, op),
            Err(e) => err_value(format!("bad request: {e}")),
        };
        serde_json::to_writer(&mut output, &response)?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}
