//! Synthetic multi-interest sequence generation and behavior-log ingestion,
//! plus the line-oriented dataset file formats.

mod format;
mod synthetic;
mod taobao;


pub use format::{
    read_dense, read_id_samples, read_items, read_vocab, write_dense, write_id_samples,
    write_items, write_vocab,
};
pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticData};
pub use taobao::{ingest_taobao, BehaviorRecord, BehaviorType, IngestReport, TaobaoConfig};
