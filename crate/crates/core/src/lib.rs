//! Core of the cohort engine: compressed column storage, concept hierarchies,
//! the query model and the per-entity query engine.
//!
//! Data flows through the crate roughly in this order:
//!
//! - [`storage`] encodes rows into immutable, bit-packed [`storage::Bucket`]s,
//!   one per (table, import, entity hash slice).
//! - [`concepts`] parses operator-defined hierarchies and resolves codes to
//!   tree nodes through a prefix trie; assignments are computed once per
//!   dictionary at load time.
//! - [`query`] turns query documents into validated ASTs against a
//!   [`registry::Registry`].
//! - [`engine`] plans an AST and evaluates it entity by entity, producing
//!   [`engine::ResultLine`]s whose dates are coalesced [`engine::DateSet`]s.
//! - [`render`] writes result lines as CSV.

pub mod concepts;
pub mod engine;
pub mod error;
pub mod query;
pub mod registry;
pub mod render;
pub mod storage;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
