//! Manager/worker distribution of the cohort engine.
//!
//! The manager assigns buckets round-robin to registered workers, ships
//! import containers to their owners and broadcasts queries. Workers evaluate
//! their buckets and stream result batches back. An execution is DONE once
//! every worker reported completion and FAILED as soon as one reports a
//! failure, disconnects or misses its heartbeats; the others are then sent
//! CANCEL.
//!
//! See [`protocol`] for the wire format.

pub mod config;
pub mod manager;
pub mod protocol;
pub mod worker;

use std::time::Duration;

pub use config::{ClusterConfig, ManagerConfig, WorkerConfig};
pub use manager::{ExecutionInfo, ExecutionResult, ExecutionState, Manager, WorkerInfo};
pub use protocol::{ProtocolError, PROTOCOL_VERSION};
pub use worker::Worker;

#[derive(Debug, thiserror::Error)]
pub enum ClusterError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("registration rejected: {0}")]
    Rejected(String),
    #[error(transparent)]
    Core(#[from] cohort_core::Error),
    #[error("no dataset has been set")]
    NoDataset,
    #[error("no workers registered")]
    NoWorkers,
    #[error("load failed: {0}")]
    Load(String),
    #[error("static assignment: {0}")]
    StaticAssignment(String),
    #[error("timed out: {0}")]
    Timeout(String),
}

/// A manager with workers in the same process, connected over loopback
/// with the same message path as a distributed deployment.
pub struct LocalCluster {
    pub manager: Manager,
    pub workers: Vec<Worker>,
}

impl LocalCluster {
    /// Starts a manager on an ephemeral loopback port and `workers` workers
    /// with `pool_size` threads each.
    pub fn start(workers: usize, pool_size: usize, mut config: ManagerConfig) -> Result<LocalCluster, ClusterError> {
        config.listen = "127.0.0.1:0".into();
        let manager = Manager::start(config, None)?;
        let addr = manager.local_addr().to_string();
        let mut handles = Vec::with_capacity(workers);
        for i in 0..workers {
            handles.push(Worker::connect(&addr, &format!("local-{}", i + 1), pool_size)?);
        }
        manager.wait_for_workers(workers, Duration::from_secs(10))?;
        Ok(LocalCluster {
            manager,
            workers: handles,
        })
    }

    /// The single-machine setup: one manager, one worker.
    pub fn single(pool_size: usize) -> Result<LocalCluster, ClusterError> {
        LocalCluster::start(1, pool_size, ManagerConfig::default())
    }
}
