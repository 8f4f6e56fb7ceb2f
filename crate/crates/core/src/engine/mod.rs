//! Planning and per-entity evaluation.
//!
//! A query is evaluated independently for every entity, over that entity's
//! events in all imports of a bucket. A CONCEPT node holds when one of its
//! tables has at least one matching event and all aggregation filters hold;
//! its dates are the union of the matching events' validity. AND intersects
//! the dates of its children, OR unites those of the children that hold.
//! NEGATION holds when its child does not; its dates are the enclosing date
//! restriction, or empty without one.

mod dateset;
mod eval;
mod exec;
mod plan;
mod result;
mod store;

pub use dateset::{DateSet, Mask};
pub use eval::{can_skip, prepare_bucket, PreparedBucket};
pub use exec::{evaluate_all, execute, ExecError, ExecOptions, ExecStats, DEFAULT_BATCH_SIZE};
pub use plan::{plan, QueryPlan};
pub use result::{saved_table, ResultLine, SavedTable, SelectValue};
pub use store::{DataStore, LoadedImport};
