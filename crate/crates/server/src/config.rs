//! Service configuration: a TOML file with environment overrides.
//!
//! ```toml
//! listen = "0.0.0.0:8080"
//! data_dir = "/var/lib/cohort"
//! retention_days = 30
//! separator = ";"
//! dataset = "dataset.json"
//! concepts = ["icd.concept.json"]
//! imports = ["imports/"]
//! local_workers = 1
//!
//! [cluster.manager]
//! listen = "0.0.0.0:7700"
//! ```
//!
//! `local_workers` workers run inside the service process; with
//! `expected_workers` the service also waits for that many remote workers
//! before loading data. Relative paths are resolved against the directory
//! of the configuration file.
//!
//! Environment overrides: `COHORT_LISTEN`, `COHORT_DATA_DIR`,
//! `COHORT_RETENTION_DAYS`, `COHORT_SEPARATOR`, `COHORT_LOCAL_WORKERS`,
//! `COHORT_EXPECTED_WORKERS`, plus the cluster variables.

use std::path::{Path, PathBuf};

use cohort_cluster::ClusterConfig;
use serde::{Deserialize, Serialize};

use crate::ServerError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub listen: String,
    pub data_dir: PathBuf,
    /// Result files older than this are deleted; `None` keeps them.
    pub retention_days: Option<u32>,
    pub separator: char,
    pub dataset: Option<PathBuf>,
    pub concepts: Vec<PathBuf>,
    /// Container files or directories holding them.
    pub imports: Vec<PathBuf>,
    pub local_workers: usize,
    pub expected_workers: usize,
    /// How long to wait for remote workers, in seconds.
    pub worker_wait_secs: u64,
    pub cluster: ClusterConfig,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            listen: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("data"),
            retention_days: None,
            separator: ';',
            dataset: None,
            concepts: Vec::new(),
            imports: Vec::new(),
            local_workers: 1,
            expected_workers: 0,
            worker_wait_secs: 300,
            cluster: ClusterConfig::default(),
        }
    }
}

impl ServerConfig {
    pub fn from_toml(text: &str) -> Result<ServerConfig, ServerError> {
        let config: ServerConfig = toml::from_str(text).map_err(|e| ServerError::Config(e.to_string()))?;
        config.check()?;
        Ok(config)
    }

    pub fn load(path: Option<&Path>) -> Result<ServerConfig, ServerError> {
        let mut config = match path {
            Some(p) => {
                let text =
                    std::fs::read_to_string(p).map_err(|e| ServerError::Config(format!("{}: {e}", p.display())))?;
                let mut config = ServerConfig::from_toml(&text)?;
                if let Some(base) = p.parent() {
                    config.rebase(base);
                }
                config
            }
            None => ServerConfig::default(),
        };
        config.apply_env(|k| std::env::var(k).ok())?;
        Ok(config)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data_dir);
        if let Some(d) = &mut self.dataset {
            fix(d);
        }
        self.concepts.iter_mut().for_each(fix);
        self.imports.iter_mut().for_each(fix);
    }

    fn check(&self) -> Result<(), ServerError> {
        if !self.separator.is_ascii() || self.separator == '"' || self.separator == '\n' {
            return Err(ServerError::Config(format!("separator {:?} is not usable", self.separator)));
        }
        Ok(())
    }

    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<(), ServerError> {
        fn number<T: std::str::FromStr>(key: &str, text: &str) -> Result<T, ServerError> {
            text.trim()
                .parse()
                .map_err(|_| ServerError::Config(format!("{key}: '{text}' is not a number")))
        }
        if let Some(v) = var("COHORT_LISTEN") {
            self.listen = v;
        }
        if let Some(v) = var("COHORT_DATA_DIR") {
            self.data_dir = v.into();
        }
        if let Some(v) = var("COHORT_RETENTION_DAYS") {
            self.retention_days = Some(number("COHORT_RETENTION_DAYS", &v)?);
        }
        if let Some(v) = var("COHORT_SEPARATOR") {
            let mut chars = v.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) => self.separator = c,
                _ => return Err(ServerError::Config(format!("COHORT_SEPARATOR: '{v}' is not one character"))),
            }
        }
        if let Some(v) = var("COHORT_LOCAL_WORKERS") {
            self.local_workers = number("COHORT_LOCAL_WORKERS", &v)?;
        }
        if let Some(v) = var("COHORT_EXPECTED_WORKERS") {
            self.expected_workers = number("COHORT_EXPECTED_WORKERS", &v)?;
        }
        self.cluster
            .apply_env(&var)
            .map_err(|e| ServerError::Config(e.to_string()))?;
        self.check()
    }

    pub fn separator_byte(&self) -> u8 {
        self.separator as u8
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let mut config = ServerConfig::from_toml("retention_days = 7\n[cluster]\nbucket_count = 10").unwrap();
        assert_eq!(config.separator, ';');
        assert_eq!(config.retention_days, Some(7));
        assert_eq!(config.cluster.bucket_count, Some(10));
        config
            .apply_env(|k| match k {
                "COHORT_SEPARATOR" => Some(",".into()),
                "COHORT_POOL_SIZE" => Some("3".into()),
                _ => None,
            })
            .unwrap();
        assert_eq!(config.separator_byte(), b',');
        assert_eq!(config.cluster.worker.pool_size, 3);
        assert!(config.apply_env(|k| (k == "COHORT_SEPARATOR").then(|| ";;".into())).is_err());
        assert!(ServerConfig::from_toml("separator = \"\\\"\"").is_err());
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let mut config = ServerConfig::from_toml("dataset = \"d.json\"\nimports = [\"/abs\", \"rel\"]").unwrap();
        config.rebase(Path::new("/etc/cohort"));
        assert_eq!(config.dataset.unwrap(), PathBuf::from("/etc/cohort/d.json"));
        assert_eq!(config.imports, vec![PathBuf::from("/abs"), PathBuf::from("/etc/cohort/rel")]);
    }
}
