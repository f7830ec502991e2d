//! Single-node near-real-time pipeline: an in-memory store of per-user
//! memory states, an event path applying one-step incremental writes, a
//! scoring path reading the latest state, and checksummed snapshot
//! persistence. Updates are serialized per user while different users
//! proceed in parallel.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::MemoryState;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::Vector;
use crate::ranker;
use crate::trainer::{EmbeddingTables, Vocab};

pub const SNAPSHOT_FORMAT_VERSION: u32 = 1;

/// Frozen model plus the item lookup needed to resolve id-based payloads.
pub struct ServingContext {
    pub model: Model,
    items: Option<ItemIndex>,
}

struct ItemIndex {
    vocab: Vocab,
    tables: EmbeddingTables,
    by_id: HashMap<String, u32>,
}

impl ServingContext {
    pub fn new(model: Model, embeddings: Option<(Vocab, EmbeddingTables)>) -> Self {
        let items = embeddings.map(|(vocab, tables)| {
            let by_id = vocab
                .item_ids
                .iter()
                .enumerate()
                .map(|(i, id)| (id.clone(), i as u32))
                .collect();
            ItemIndex {
                vocab,
                tables,
                by_id,
            }
        });
        ServingContext { model, items }
    }

    pub fn d(&self) -> usize {
        self.model.d()
    }

    pub fn k(&self) -> usize {
        self.model.k()
    }

    /// Resolves a payload to a validated D-dimensional embedding.
    fn resolve(&self, payload: &ItemPayload) -> Result<Vector> {
        match payload {
            ItemPayload::Embedding(values) => {
                let v = Vector::new(values.clone())?;
                if v.len() != self.d() {
                    return Err(Error::shape("event embedding", self.d(), v.len()));
                }
                Ok(v)
            }
            ItemPayload::ItemId(id) => {
                let index = self
                    .items
                    .as_ref()
                    .ok_or_else(|| {
                        Error::InvalidInput(
                            "checkpoint has no embedding tables; item ids unavailable".into(),
                        )
                    })?;
                let idx = *index
                    .by_id
                    .get(id)
                    .ok_or_else(|| Error::InvalidInput(format!("unknown item id '{id}'")))?;
                index.tables.embed(&index.vocab, idx)
            }
        }
    }
}

/// Either a raw embedding or an item id resolved through the checkpoint's
/// embedding tables. On the wire an embedding is a bare number array and an
/// item id a bare string.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ItemPayload {
    Embedding(Vec<f64>),
    ItemId(String),
}

/// One user behavior on the wire: exactly one of `embedding` / `item_id`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventMessage {
    pub user_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_id: Option<String>,
    #[serde(default)]
    pub timestamp: i64,
}

impl EventMessage {
    pub fn from_embedding(user_id: impl Into<String>, embedding: Vec<f64>, timestamp: i64) -> Self {
        EventMessage {
            user_id: user_id.into(),
            embedding: Some(embedding),
            item_id: None,
            timestamp,
        }
    }

    pub fn from_item_id(user_id: impl Into<String>, item_id: impl Into<String>, timestamp: i64) -> Self {
        EventMessage {
            user_id: user_id.into(),
            embedding: None,
            item_id: Some(item_id.into()),
            timestamp,
        }
    }

    fn payload(&self) -> Result<ItemPayload> {
        match (&self.embedding, &self.item_id) {
            (Some(e), None) => Ok(ItemPayload::Embedding(e.clone())),
            (None, Some(id)) => Ok(ItemPayload::ItemId(id.clone())),
            _ => Err(Error::InvalidInput(
                "event must carry exactly one of embedding / item_id".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub user_id: String,
    pub candidates: Vec<ItemPayload>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScoreOutcome {
    Score { score: f64 },
    Error { error: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub user_id: String,
    /// State version the scores were computed against (0 = fresh user).
    pub version: u64,
    pub scores: Vec<ScoreOutcome>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserEntry {
    pub state: MemoryState,
    pub version: u64,
    pub last_update: i64,
}

/// In-memory user-state store. The map lock is held briefly for lookups and
/// inserts; each user's entry has its own mutex, serializing updates per
/// user while different users proceed concurrently. Snapshots take the map
/// write lock plus each entry lock, yielding a consistent cut.
pub struct ObjectStore {
    users: RwLock<HashMap<String, Arc<Mutex<UserEntry>>>>,
    d: usize,
    k: usize,
}

impl ObjectStore {
    pub fn new(k: usize, d: usize) -> Self {
        ObjectStore {
            users: RwLock::new(HashMap::new()),
            d,
            k,
        }
    }

    pub fn len(&self) -> usize {
        self.users.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }

    fn entry(&self, user_id: &str) -> Option<Arc<Mutex<UserEntry>>> {
        self.users.read().get(user_id).cloned()
    }

    fn entry_or_insert(&self, user_id: &str) -> Arc<Mutex<UserEntry>> {
        if let Some(e) = self.entry(user_id) {
            return e;
        }
        let mut map = self.users.write();
        map.entry(user_id.to_string())
            .or_insert_with(|| {
                Arc::new(Mutex::new(UserEntry {
                    state: MemoryState::zeros(self.k, self.d),
                    version: 0,
                    last_update: 0,
                }))
            })
            .clone()
    }

    /// Snapshot of one user's state, if present.
    pub fn get(&self, user_id: &str) -> Option<UserEntry> {
        self.entry(user_id).map(|e| e.lock().clone())
    }

    /// Applies one event: read-modify-write of the user's state through the
    /// encoder, strictly serialized per user. Unknown users start from the
    /// zero state. Returns the new version. Invalid messages leave the
    /// store untouched.
    pub fn apply_event(&self, ctx: &ServingContext, msg: &EventMessage) -> Result<u64> {
        if ctx.d() != self.d || ctx.k() != self.k {
            return Err(Error::shape(
                "serving context",
                format!("{}x{}", self.k, self.d),
                format!("{}x{}", ctx.k(), ctx.d()),
            ));
        }
        let x = ctx.resolve(&msg.payload()?)?;
        let entry = self.entry_or_insert(&msg.user_id);
        let mut guard = entry.lock();
        let (next, _) = ctx.model.encoder.write(&guard.state, &x)?;
        guard.state = next;
        guard.version += 1;
        guard.last_update = msg.timestamp;
        Ok(guard.version)
    }

    /// Scores candidates against the user's latest state (fresh users score
    /// against the zero state at version 0). Per-candidate resolution errors
    /// are reported in place; remaining candidates still score.
    pub fn score(&self, ctx: &ServingContext, req: &ScoreRequest) -> Result<ScoreResponse> {
        if ctx.d() != self.d || ctx.k() != self.k {
            return Err(Error::shape(
                "serving context",
                format!("{}x{}", self.k, self.d),
                format!("{}x{}", ctx.k(), ctx.d()),
            ));
        }
        let (state, version) = match self.entry(&req.user_id) {
            Some(e) => {
                let guard = e.lock();
                (guard.state.clone(), guard.version)
            }
            None => (MemoryState::zeros(self.k, self.d), 0),
        };
        let mut scores = Vec::with_capacity(req.candidates.len());
        for cand in &req.candidates {
            let outcome = ctx.resolve(cand).and_then(|v| {
                let (u, _) = ctx.model.encoder.read(&state, &v)?;
                ranker::score(&ctx.model.ranker, &u, &v)
            });
            scores.push(match outcome {
                Ok(score) => ScoreOutcome::Score { score },
                Err(e) => ScoreOutcome::Error {
                    error: e.to_string(),
                },
            });
        }
        Ok(ScoreResponse {
            user_id: req.user_id.clone(),
            version,
            scores,
        })
    }

    /// Writes a checksummed snapshot: a JSON header line carrying the SHA-256
    /// of the body, then one JSON record per user, sorted by user id.
    pub fn snapshot(&self, path: &Path) -> Result<usize> {
        let map = self.users.write();
        let mut ordered: BTreeMap<&String, &Arc<Mutex<UserEntry>>> = BTreeMap::new();
        for (k, v) in map.iter() {
            ordered.insert(k, v);
        }
        let mut body = Vec::new();
        for (user_id, entry) in &ordered {
            let guard = entry.lock();
            let rec = SnapRecord {
                user_id: (*user_id).clone(),
                version: guard.version,
                last_update: guard.last_update,
                steps: guard.state.steps,
                prev_x: guard.state.prev_x.as_ref().map(|v| v.as_slice().to_vec()),
                channels: (0..guard.state.k())
                    .map(|k| guard.state.channels.row(k).to_vec())
                    .collect(),
            };
            serde_json::to_writer(&mut body, &rec)?;
            body.push(b'\n');
        }
        let checksum = hex_digest(&body);
        let header = SnapHeader {
            format_version: SNAPSHOT_FORMAT_VERSION,
            d: self.d,
            k: self.k,
            users: ordered.len(),
            checksum,
        };
        let mut out = Vec::new();
        serde_json::to_writer(&mut out, &header)?;
        out.push(b'\n');
        out.extend_from_slice(&body);
        let mut file = std::fs::File::create(path)?;
        file.write_all(&out)?;
        file.sync_all()?;
        Ok(ordered.len())
    }

    /// Restores a snapshot, refusing files whose checksum does not match
    /// (truncation, corruption). Nothing is loaded on failure.
    pub fn restore(path: &Path) -> Result<ObjectStore> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Snapshot(format!("cannot open {}: {e}", path.display())))?;
        let mut reader = BufReader::new(file);
        let mut header_line = String::new();
        reader.read_line(&mut header_line)?;
        let header: SnapHeader = serde_json::from_str(header_line.trim_end())
            .map_err(|e| Error::Snapshot(format!("bad header: {e}")))?;
        if header.format_version != SNAPSHOT_FORMAT_VERSION {
            return Err(Error::Snapshot(format!(
                "unsupported format_version {}",
                header.format_version
            )));
        }
        let mut body = Vec::new();
        reader.read_to_end(&mut body)?;
        if hex_digest(&body) != header.checksum {
            return Err(Error::Snapshot(
                "checksum mismatch: snapshot truncated or corrupted".into(),
            ));
        }

        let store = ObjectStore::new(header.k, header.d);
        {
            let mut map = store.users.write();
            for line in body.split(|&b| b == b'\n') {
                if line.is_empty() {
                    continue;
                }
                let rec: SnapRecord = serde_json::from_slice(line)
                    .map_err(|e| Error::Snapshot(format!("bad record: {e}")))?;
                let entry = rec.into_entry(header.k, header.d)?;
                map.insert(entry.0, Arc::new(Mutex::new(entry.1)));
            }
            if map.len() != header.users {
                return Err(Error::Snapshot(format!(
                    "header says {} users, snapshot has {}",
                    header.users,
                    map.len()
                )));
            }
        }
        Ok(store)
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut s = String::with_capacity(64);
    for b in digest {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

#[derive(Serialize, Deserialize)]
struct SnapHeader {
    format_version: u32,
    d: usize,
    k: usize,
    users: usize,
    checksum: String,
}

#[derive(Serialize, Deserialize)]
struct SnapRecord {
    user_id: String,
    version: u64,
    last_update: i64,
    steps: u64,
    prev_x: Option<Vec<f64>>,
    channels: Vec<Vec<f64>>,
}

impl SnapRecord {
    fn into_entry(self, k: usize, d: usize) -> Result<(String, UserEntry)> {
        if self.channels.len() != k || self.channels.iter().any(|r| r.len() != d) {
            return Err(Error::Snapshot(format!(
                "user {}: channel matrix is not {k}x{d}",
                self.user_id
            )));
        }
        let mut flat = Vec::with_capacity(k * d);
        for row in &self.channels {
            flat.extend_from_slice(row);
        }
        let state = MemoryState {
            channels: crate::numerics::Matrix::new(k, d, flat)
                .map_err(|e| Error::Snapshot(format!("user {}: {e}", self.user_id)))?,
            prev_x: match self.prev_x {
                Some(v) => Some(
                    Vector::new(v).map_err(|e| Error::Snapshot(format!("user {}: {e}", self.user_id)))?,
                ),
                None => None,
            },
            steps: self.steps,
        };
        state
            .validate(k, d)
            .map_err(|e| Error::Snapshot(format!("user {}: {e}", self.user_id)))?;
        Ok((
            self.user_id,
            UserEntry {
                state,
                version: self.version,
                last_update: self.last_update,
            },
        ))
    }
}

/// Structural equality of two stores, versions included (for tests and the
/// snapshot round-trip contract).
pub fn stores_identical(a: &ObjectStore, b: &ObjectStore) -> bool {
    if a.d != b.d || a.k != b.k {
        return false;
    }
    let ma = a.users.read();
    let mb = b.users.read();
    if ma.len() != mb.len() {
        return false;
    }
    ma.iter().all(|(k, va)| {
        mb.get(k)
            .map(|vb| *va.lock() == *vb.lock())
            .unwrap_or(false)
    })
}
