//! A multi-channel sequential user encoder with incrementally updatable
//! per-user state, trained end-to-end with hand-derived gradients,
//! evaluated with per-user ranking metrics, and served through a
//! near-real-time in-memory state store.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod ranker;
pub mod serving;
pub mod trainer;

pub use error::{Error, Result};
