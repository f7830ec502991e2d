use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};

use sumrec_client::ServingClient;
use sumrec_core::checkpoint::load_checkpoint;
use sumrec_core::serving::{EventMessage, ItemPayload, ObjectStore, ScoreRequest, ServingContext};
use sumrec_service::{run_http, run_pipe, AppState};

use crate::common::{ensure_dir, Outputs, RunManifest};

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Trained checkpoint to serve.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// HTTP listen address (ignored with --pipe).
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub http: String,
    /// Serve line-delimited JSON over stdin/stdout instead of HTTP.
    #[arg(long)]
    pub pipe: bool,
    /// Restore the user-state store from a snapshot before serving.
    #[arg(long)]
    pub restore: Option<PathBuf>,
    /// Directory for the run manifest.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

pub fn run_serve(args: &ServeArgs, outputs: &mut Outputs) -> Result<()> {
    let ck = load_checkpoint(&args.checkpoint)?;
    let kind = ck.hyperparams.encoder;
    let ctx = ServingContext::new(ck.model, ck.embeddings);

    let state = match &args.restore {
        Some(path) => {
            let store = ObjectStore::restore(path)?;
            let users = store.len();
            eprintln!("restored {users} user states from {}", path.display());
            Arc::new(AppState::with_store(ctx, kind, store)?)
        }
        None => Arc::new(AppState::new(ctx, kind)),
    };

    let mut echo = BTreeMap::new();
    echo.insert("checkpoint".into(), args.checkpoint.display().to_string());
    echo.insert(
        "mode".into(),
        if args.pipe { "pipe".into() } else { format!("http {}", args.http) },
    );
    let (mut manifest, started) = RunManifest::new("serve", 0, echo);
    manifest.checkpoint = Some(args.checkpoint.display().to_string());
    ensure_dir(&args.out)?;
    manifest.write(&args.out, started, outputs)?;

    if args.pipe {
        let stdin = std::io::stdin().lock();
        let stdout = std::io::stdout().lock();
        run_pipe(&state, stdin, stdout)?;
        Ok(())
    } else {
        let addr: std::net::SocketAddr = args
            .http
            .parse()
            .with_context(|| format!("bad listen address '{}'", args.http))?;
        let runtime = tokio::runtime::Runtime::new()?;
        runtime.block_on(async {
            run_http(state, addr, |bound| {
                eprintln!("serving HTTP on http://{bound}");
            })
            .await
        })?;
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct ClientArgs {
    /// Server base URL.
    #[arg(long, default_value = "http://127.0.0.1:8080")]
    pub addr: String,
    #[command(subcommand)]
    pub op: ClientOp,
}

#[derive(Debug, Subcommand)]
pub enum ClientOp {
    /// Apply one user event.
    Event {
        #[arg(long)]
        user: String,
        /// Comma-separated embedding values.
        #[arg(long, conflicts_with = "item_id")]
        embedding: Option<String>,
        #[arg(long)]
        item_id: Option<String>,
        #[arg(long, default_value_t = 0)]
        timestamp: i64,
    },
    /// Score candidates against the user's latest state.
    Score {
        #[arg(long)]
        user: String,
        /// Semicolon-separated candidates, each a comma-separated embedding.
        #[arg(long, conflicts_with = "item_ids")]
        embeddings: Option<String>,
        /// Comma-separated candidate item ids.
        #[arg(long)]
        item_ids: Option<String>,
    },
    /// Store statistics.
    Stats,
    /// Ask the server to write a snapshot.
    Snapshot {
        #[arg(long)]
        path: String,
    },
    /// Ask the server to load a snapshot.
    Restore {
        #[arg(long)]
        path: String,
    },
}

fn parse_floats(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().context("bad float"))
        .collect()
}

pub fn run_client(args: &ClientArgs) -> Result<()> {
    let client = ServingClient::new(&args.addr);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        match &args.op {
            ClientOp::Event {
                user,
                embedding,
                item_id,
                timestamp,
            } => {
                let msg = match (embedding, item_id) {
                    (Some(e), None) => EventMessage::from_embedding(user, parse_floats(e)?, *timestamp),
                    (None, Some(id)) => EventMessage::from_item_id(user, id, *timestamp),
                    _ => bail!("provide exactly one of --embedding / --item-id"),
                };
                let ack = client.event(&msg).await?;
                println!("{}", serde_json::json!({"user_id": ack.user_id, "version": ack.version}));
            }
            ClientOp::Score {
                user,
                embeddings,
                item_ids,
            } => {
                let candidates: Vec<ItemPayload> = match (embeddings, item_ids) {
                    (Some(e), None) => e
                        .split(';')
                        .map(|one| Ok(ItemPayload::Embedding(parse_floats(one)?)))
                        .collect::<Result<_>>()?,
                    (None, Some(ids)) => ids
                        .split(',')
                        .map(|id| ItemPayload::ItemId(id.trim().to_string()))
                        .collect(),
                    _ => bail!("provide exactly one of --embeddings / --item-ids"),
                };
                let resp = client
                    .score(&ScoreRequest {
                        user_id: user.clone(),
                        candidates,
                    })
                    .await?;
                println!("{}", serde_json::to_string(&resp)?);
            }
            ClientOp::Stats => {
                let stats = client.stats().await?;
                println!(
                    "{}",
                    serde_json::json!({
                        "users": stats.users,
                        "d": stats.d,
                        "k": stats.k,
                        "encoder": stats.encoder,
                    })
                );
            }
            ClientOp::Snapshot { path } => {
                let ack = client.snapshot(path).await?;
                println!("{}", serde_json::json!({"users": ack.users, "path": path}));
            }
            ClientOp::Restore { path } => {
                let ack = client.restore(path).await?;
                println!("{}", serde_json::json!({"users": ack.users}));
            }
        }
        Ok(())
    })
}
