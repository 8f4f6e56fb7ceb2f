//! Column-oriented, compressed, immutable event storage.

pub mod bitpack;
mod bitset;
mod bucket;
mod column;
pub mod container;
mod schema;
mod stats;

pub use bitset::BitSet;
pub use bucket::{bucket_of, build_bucket, Bucket, EntitySpan, EventRow};
pub use column::{encode_column, ColumnBlock, Encoding};
pub use schema::{ColumnDef, TableSchema};
pub use stats::{compute_statistics, ColumnAssignment, ColumnStats, ConceptNodeSet, ImportStatistics};

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}
