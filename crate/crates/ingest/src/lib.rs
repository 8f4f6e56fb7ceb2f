//! Preprocessing of raw delimiter-separated event files into import
//! containers: header mapping, per-type parsing and normalization,
//! partitioning into buckets and encoding, plus a size report.

mod descriptor;
mod pipeline;

use std::path::Path;

pub use descriptor::{ColumnMapping, ImportDescriptor, ResolvedDescriptor};
pub use pipeline::{
    container_name, detect_delimiter, gzip_size, prepare, write_containers, ColumnReport, OnError, Options, Prepared,
    Report, RowError,
};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    /// Descriptor, dataset or header problems.
    #[error("invalid import: {}", .0.join("; "))]
    Invalid(Vec<String>),
    /// Bad rows in fail-fast mode.
    #[error("{} bad rows: {}", .0.len(), .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Rows(Vec<RowError>),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl IngestError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        IngestError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Process exit code: 1 for validation problems, 2 for I/O failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            IngestError::Invalid(_) | IngestError::Rows(_) => 1,
            IngestError::Io { .. } => 2,
        }
    }
}

/// Reads the input file and runs [`prepare`]; the default import id is the
/// input file stem.
pub fn prepare_file(resolved: &ResolvedDescriptor, input: &Path, options: &Options) -> Result<Prepared, IngestError> {
    let bytes = std::fs::read(input).map_err(|e| IngestError::io(input, e))?;
    let stem = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| resolved.descriptor.table.clone());
    prepare(resolved, &bytes, &stem, options)
}
