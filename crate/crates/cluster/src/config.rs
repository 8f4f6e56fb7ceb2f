//! Cluster configuration: a TOML file with environment overrides.
//!
//! ```toml
//! bucket_count = 100
//!
//! [manager]
//! listen = "0.0.0.0:7700"
//! heartbeat_ms = 5000
//! heartbeat_misses = 3
//!
//! [worker]
//! id = "worker-1"
//! manager = "manager.local:7700"
//! pool_size = 8
//! ```
//!
//! Environment variables override file values: `COHORT_MANAGER_LISTEN`,
//! `COHORT_MANAGER_ADDRESS` (the address workers connect to),
//! `COHORT_WORKER_ID`, `COHORT_POOL_SIZE`, `COHORT_BUCKET_COUNT`,
//! `COHORT_HEARTBEAT_MS` and `COHORT_HEARTBEAT_MISSES`.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::ClusterError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManagerConfig {
    pub listen: String,
    pub heartbeat_ms: u64,
    pub heartbeat_misses: u32,
    /// How long to wait for a worker to acknowledge a loaded import.
    pub load_timeout_ms: u64,
    /// Lines per RESULT_BATCH.
    pub batch_size: usize,
}

impl Default for ManagerConfig {
    fn default() -> Self {
        ManagerConfig {
            listen: "127.0.0.1:7700".into(),
            heartbeat_ms: 5000,
            heartbeat_misses: 3,
            load_timeout_ms: 120_000,
            batch_size: cohort_core::engine::DEFAULT_BATCH_SIZE,
        }
    }
}

impl ManagerConfig {
    pub fn heartbeat(&self) -> Duration {
        Duration::from_millis(self.heartbeat_ms.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkerConfig {
    /// Defaults to the host name and process id.
    pub id: Option<String>,
    pub manager: String,
    /// Execution threads; 0 uses every available core.
    pub pool_size: usize,
}

impl Default for WorkerConfig {
    fn default() -> Self {
        WorkerConfig {
            id: None,
            manager: "127.0.0.1:7700".into(),
            pool_size: 0,
        }
    }
}

impl WorkerConfig {
    pub fn effective_pool_size(&self) -> usize {
        if self.pool_size > 0 {
            self.pool_size
        } else {
            std::thread::available_parallelism().map_or(1, usize::from)
        }
    }

    pub fn effective_id(&self) -> String {
        self.id.clone().unwrap_or_else(|| {
            let host = std::env::var("HOSTNAME").unwrap_or_else(|_| "worker".into());
            format!("{host}-{}", std::process::id())
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    /// When set, datasets and imports with another bucket count are refused.
    pub bucket_count: Option<u32>,
    pub manager: ManagerConfig,
    pub worker: WorkerConfig,
}

impl ClusterConfig {
    pub fn from_toml(text: &str) -> Result<ClusterConfig, ClusterError> {
        toml::from_str(text).map_err(|e| ClusterError::Config(e.to_string()))
    }

    /// Reads the file (if any), then applies the process environment.
    pub fn load(path: Option<&Path>) -> Result<ClusterConfig, ClusterError> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ClusterError::Config(format!("{}: {e}", p.display())))?;
                ClusterConfig::from_toml(&text)?
            }
            None => ClusterConfig::default(),
        };
        config.apply_env(|k| std::env::var(k).ok())?;
        Ok(config)
    }

    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<(), ClusterError> {
        fn number<T: std::str::FromStr>(key: &str, text: String) -> Result<T, ClusterError> {
            text.trim()
                .parse()
                .map_err(|_| ClusterError::Config(format!("{key}: '{text}' is not a number")))
        }
        if let Some(v) = var("COHORT_MANAGER_LISTEN") {
            self.manager.listen = v;
        }
        if let Some(v) = var("COHORT_MANAGER_ADDRESS") {
            self.worker.manager = v;
        }
        if let Some(v) = var("COHORT_WORKER_ID") {
            self.worker.id = Some(v);
        }
        if let Some(v) = var("COHORT_POOL_SIZE") {
            self.worker.pool_size = number("COHORT_POOL_SIZE", v)?;
        }
        if let Some(v) = var("COHORT_BUCKET_COUNT") {
            self.bucket_count = Some(number("COHORT_BUCKET_COUNT", v)?);
        }
        if let Some(v) = var("COHORT_HEARTBEAT_MS") {
            self.manager.heartbeat_ms = number("COHORT_HEARTBEAT_MS", v)?;
        }
        if let Some(v) = var("COHORT_HEARTBEAT_MISSES") {
            self.manager.heartbeat_misses = number("COHORT_HEARTBEAT_MISSES", v)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn file_then_environment() {
        let mut config = ClusterConfig::from_toml(
            r#"
            bucket_count = 64
            [manager]
            listen = "0.0.0.0:9000"
            [worker]
            manager = "m:9000"
            pool_size = 2
            "#,
        )
        .unwrap();
        assert_eq!(config.bucket_count, Some(64));
        assert_eq!(config.manager.heartbeat_ms, 5000);
        assert_eq!(config.manager.heartbeat_misses, 3);
        let env: HashMap<&str, &str> = [("COHORT_POOL_SIZE", "6"), ("COHORT_MANAGER_ADDRESS", "other:1")].into();
        config.apply_env(|k| env.get(k).map(|v| v.to_string())).unwrap();
        assert_eq!(config.worker.pool_size, 6);
        assert_eq!(config.worker.manager, "other:1");
        assert_eq!(config.manager.listen, "0.0.0.0:9000");
    }

    #[test]
    fn bad_values_are_reported() {
        assert!(ClusterConfig::from_toml("[manager]\nlisten = 5").is_err());
        assert!(ClusterConfig::from_toml("unknown = 1").is_err());
        let mut config = ClusterConfig::default();
        assert!(config.apply_env(|k| (k == "COHORT_BUCKET_COUNT").then(|| "many".into())).is_err());
    }
}
