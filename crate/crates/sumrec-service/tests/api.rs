//! End-to-end protocol tests: the pipe loop and the HTTP API, both backed
//! by the same dispatch core.

use std::io::Cursor;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use sumrec_core::encoder::EncoderKind;
use sumrec_core::serving::ServingContext;
use sumrec_core::trainer::{build_model, TrainConfig};
use sumrec_service::{run_http, run_pipe, AppState};

fn state(d: usize, k: usize, seed: u64) -> Arc<AppState> {
    let cfg = TrainConfig {
        d,
        k,
        hidden: 8,
        ..TrainConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = build_model(&cfg, &mut rng).unwrap();
    Arc::new(AppState::new(
        ServingContext::new(model, None),
        EncoderKind::Sum,
    ))
}

fn rand_vec(d: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
    (0..d).map(|_| r.random_range(-1.0..1.0)).collect()
}

fn pipe_roundtrip(state: &AppState, requests: &[Value]) -> Vec<Value> {
    let input = requests
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("\n");
    let mut output = Vec::new();
    run_pipe(state, Cursor::new(input), &mut output).unwrap();
    String::from_utf8(output)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn pipe_mode_full_session() {
    let dir = tempfile::tempdir().unwrap();
    let snap = dir.path().join("pipe.snap");
    let st = state(4, 3, 1);
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let x1 = rand_vec(4, &mut r);
    let x2 = rand_vec(4, &mut r);
    let cand = rand_vec(4, &mut r);

    let responses = pipe_roundtrip(
        &st,
        &[
            json!({"op":"event","user_id":"alice","embedding":x1,"timestamp":10}),
            json!({"op":"event","user_id":"alice","embedding":x2,"timestamp":11}),
            json!({"op":"score","user_id":"alice","candidates":[cand.clone(), [0.0,0.0]]}),
            json!({"op":"stats"}),
            json!({"op":"snapshot","path": snap.to_str().unwrap()}),
            json!({"op":"restore","path": snap.to_str().unwrap()}),
            json!({"op":"nonsense"}),
            json!({"op":"event","user_id":"bob","item_id":"unknown-item","timestamp":1}),
        ],
    );

    assert_eq!(responses[0], json!({"ok":true,"user_id":"alice","version":1}));
    assert_eq!(responses[1]["version"], 2);
    assert_eq!(responses[2]["ok"], json!(true));
    assert_eq!(responses[2]["version"], 2);
    assert!(responses[2]["scores"][0]["score"].is_f64());
    // wrong-dimension candidate errors in place, the request still succeeds
    assert!(responses[2]["scores"][1]["error"].is_string());
    assert_eq!(responses[3]["users"], 1);
    assert_eq!(responses[3]["d"], 4);
    assert_eq!(responses[3]["k"], 3);
    assert_eq!(responses[3]["encoder"], "sum");
    assert_eq!(responses[4]["ok"], json!(true));
    assert_eq!(responses[4]["users"], 1);
    assert_eq!(responses[5], json!({"ok":true,"users":1}));
    assert_eq!(responses[6]["ok"], json!(false));
    // no embedding tables in this checkpoint: item ids are rejected
    assert_eq!(responses[7]["ok"], json!(false));
}

#[test]
fn pipe_event_then_score_read_your_writes() {
    let st = state(4, 3, 3);
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let responses = pipe_roundtrip(
        &st,
        &[
            json!({"op":"event","user_id":"u","embedding":rand_vec(4, &mut r),"timestamp":0}),
            json!({"op":"score","user_id":"u","candidates":[rand_vec(4, &mut r)]}),
        ],
    );
    let ack = responses[0]["version"].as_u64().unwrap();
    let seen = responses[1]["version"].as_u64().unwrap();
    assert!(seen >= ack);
}

#[tokio::test]
async fn typed_client_round_trip() {
    use sumrec_client::{EventMessage, ItemPayload, ScoreRequest, ServingClient};

    let st = state(4, 3, 7);
    let (tx, rx) = tokio::sync::oneshot::channel();
    let server = tokio::spawn(run_http(
        st,
        "127.0.0.1:0".parse().unwrap(),
        move |addr| {
            tx.send(addr).unwrap();
        },
    ));
    let addr = rx.await.unwrap();
    let client = ServingClient::new(format!("http://{addr}"));
    assert!(client.health().await.unwrap());

    let mut r = ChaCha8Rng::seed_from_u64(8);
    let ack = client
        .event(&EventMessage::from_embedding("carol", rand_vec(4, &mut r), 5))
        .await
        .unwrap();
    assert_eq!(ack.version, 1);

    let resp = client
        .score(&ScoreRequest {
            user_id: "carol".into(),
            candidates: vec![ItemPayload::Embedding(rand_vec(4, &mut r))],
        })
        .await
        .unwrap();
    assert_eq!(resp.version, 1);
    assert_eq!(resp.scores.len(), 1);

    let stats = client.stats().await.unwrap();
    assert_eq!(stats.users, 1);
    assert_eq!(stats.encoder, "sum");

    // rejected call surfaces the server's message
    let err = client
        .event(&EventMessage::from_embedding("dave", vec![1.0], 0))
        .await;
    assert!(matches!(err, Err(sumrec_client::ClientError::Rejected(_))));

    server.abort();
}

#[tokio::test]
async fn http_api_full_session() {
    let st = state(4, 3, 5);
    let (tx, rx) = tokio::sync::oneshot::channel();
    let server = tokio::spawn(run_http(
        st,
        "127.0.0.1:0".parse().unwrap(),
        move |addr| {
            tx.send(addr).unwrap();
        },
    ));
    let addr = rx.await.unwrap();
    let base = format!("http://{addr}");
    let client = reqwest::Client::new();

    let health = client.get(format!("{base}/healthz")).send().await.unwrap();
    assert!(health.status().is_success());

    let mut r = ChaCha8Rng::seed_from_u64(6);
    let x = rand_vec(4, &mut r);
    let resp: Value = client
        .post(format!("{base}/v1/event"))
        .json(&json!({"user_id":"alice","embedding":x,"timestamp":42}))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(resp, json!({"ok":true,"user_id":"alice","version":1}));

    let resp: Value = client
        .post(format!("{base}/v1/score"))
        .json(&json!({"user_id":"alice","candidates":[rand_vec(4, &mut r)]}))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(resp["ok"], json!(true));
    assert_eq!(resp["version"], 1);
    assert!(resp["scores"][0]["score"].is_f64());

    // dimension mismatch → 400 with ok:false, store untouched
    let bad = client
        .post(format!("{base}/v1/event"))
        .json(&json!({"user_id":"bob","embedding":[1.0,2.0],"timestamp":0}))
        .send()
        .await
        .unwrap();
    assert_eq!(bad.status(), reqwest::StatusCode::BAD_REQUEST);
    let body: Value = bad.json().await.unwrap();
    assert_eq!(body["ok"], json!(false));

    let stats: Value = client
        .get(format!("{base}/v1/stats"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(stats["users"], 1);

    // snapshot over HTTP, then restore
    let dir = tempfile::tempdir().unwrap();
    let snap = dir.path().join("http.snap");
    let resp: Value = client
        .post(format!("{base}/v1/snapshot"))
        .json(&json!({"path": snap.to_str().unwrap()}))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(resp["ok"], json!(true));
    assert!(snap.exists());
    let resp: Value = client
        .post(format!("{base}/v1/restore"))
        .json(&json!({"path": snap.to_str().unwrap()}))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(resp["ok"], json!(true));

    server.abort();
}
