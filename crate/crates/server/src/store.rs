//! Persistent execution history.
//!
//! Records live in `executions.jsonl` under the data directory, one JSON
//! object per line: `{"put": record}` or `{"delete": id}`. The log is
//! replayed and compacted on open. Result bytes are written next to it as
//! `results/{id}.csv`, together with `results/{id}.saved.json` holding the
//! entity dates later used by saved-query references. Files are written to a
//! temporary name and renamed, so a crash never leaves a partial result.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use chrono::{DateTime, Duration, Utc};
use cohort_cluster::ExecutionState;
use cohort_core::engine::SavedTable;
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::ServerError;

const LOG: &str = "executions.jsonl";
const RESULTS: &str = "results";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StoredExecution {
    pub execution_id: String,
    pub owner: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub query: Json,
    pub state: ExecutionState,
    pub created_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Result file name, present while the result can be downloaded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<String>,
    /// Set once retention removed the result files.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub expired: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
enum LogEntry {
    Put(StoredExecution),
    Delete(String),
}

struct Inner {
    records: HashMap<String, StoredExecution>,
    /// Insertion order, for a stable history listing.
    order: Vec<String>,
    log: File,
}

/// Thread-safe handle; clones share the same store.
#[derive(Clone)]
pub struct ExecutionStore {
    dir: PathBuf,
    retention: Option<Duration>,
    inner: Arc<Mutex<Inner>>,
}

impl ExecutionStore {
    /// Opens or creates the store under `dir`. Executions that were not
    /// terminal when the previous process stopped become FAILED.
    pub fn open(dir: &Path, retention_days: Option<u32>) -> Result<ExecutionStore, ServerError> {
        fs::create_dir_all(dir.join(RESULTS))?;
        let path = dir.join(LOG);
        let mut records = HashMap::new();
        let mut order = Vec::new();
        if path.exists() {
            for (n, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<LogEntry>(&line) {
                    Ok(LogEntry::Put(r)) => {
                        if !records.contains_key(&r.execution_id) {
                            order.push(r.execution_id.clone());
                        }
                        records.insert(r.execution_id.clone(), r);
                    }
                    Ok(LogEntry::Delete(id)) => {
                        records.remove(&id);
                        order.retain(|o| *o != id);
                    }
                    // A torn last line after a crash is dropped; anything else is corruption.
                    Err(e) => tracing::warn!("{}:{}: skipping unreadable record: {e}", path.display(), n + 1),
                }
            }
        }
        let now = Utc::now();
        for r in records.values_mut() {
            if !r.state.is_terminal() {
                r.state = ExecutionState::Failed;
                r.error = Some("interrupted by a restart".into());
                r.finished_at = Some(now);
            }
        }

        let tmp = dir.join(format!("{LOG}.tmp"));
        {
            let mut out = File::create(&tmp)?;
            for id in &order {
                writeln!(out, "{}", serde_json::to_string(&LogEntry::Put(records[id].clone()))?)?;
            }
            out.sync_all()?;
        }
        fs::rename(&tmp, &path)?;
        let log = OpenOptions::new().append(true).open(&path)?;

        let store = ExecutionStore {
            dir: dir.to_path_buf(),
            retention: retention_days.map(|d| Duration::days(d.into())),
            inner: Arc::new(Mutex::new(Inner { records, order, log })),
        };
        store.expire(now)?;
        Ok(store)
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().expect("execution store lock")
    }

    fn append(inner: &mut Inner, entry: &LogEntry) -> Result<(), ServerError> {
        writeln!(inner.log, "{}", serde_json::to_string(entry)?)?;
        inner.log.flush()?;
        Ok(())
    }

    pub fn put(&self, record: StoredExecution) -> Result<(), ServerError> {
        let mut inner = self.lock();
        Self::append(&mut inner, &LogEntry::Put(record.clone()))?;
        if !inner.records.contains_key(&record.execution_id) {
            inner.order.push(record.execution_id.clone());
        }
        inner.records.insert(record.execution_id.clone(), record);
        Ok(())
    }

    /// Applies `change` to an existing record and persists it; `None` if the
    /// record does not exist (for instance, deleted meanwhile).
    pub fn update(
        &self,
        id: &str,
        change: impl FnOnce(&mut StoredExecution),
    ) -> Result<Option<StoredExecution>, ServerError> {
        let mut inner = self.lock();
        let Some(record) = inner.records.get(id) else { return Ok(None) };
        let mut record = record.clone();
        change(&mut record);
        Self::append(&mut inner, &LogEntry::Put(record.clone()))?;
        inner.records.insert(id.to_string(), record.clone());
        Ok(Some(record))
    }

    pub fn get(&self, id: &str) -> Option<StoredExecution> {
        self.lock().records.get(id).cloned()
    }

    /// History in submission order, restricted to `owner` if given.
    pub fn list(&self, owner: Option<&str>) -> Vec<StoredExecution> {
        let inner = self.lock();
        inner
            .order
            .iter()
            .map(|id| &inner.records[id])
            .filter(|r| owner.is_none_or(|o| r.owner == o))
            .cloned()
            .collect()
    }

    /// Removes the record and its files.
    pub fn delete(&self, id: &str) -> Result<Option<StoredExecution>, ServerError> {
        let mut inner = self.lock();
        if !inner.records.contains_key(id) {
            return Ok(None);
        }
        Self::append(&mut inner, &LogEntry::Delete(id.to_string()))?;
        inner.order.retain(|o| o != id);
        let record = inner.records.remove(id);
        drop(inner);
        self.remove_files(id);
        Ok(record)
    }

    fn csv_path(&self, id: &str) -> PathBuf {
        self.dir.join(RESULTS).join(format!("{id}.csv"))
    }

    fn saved_path(&self, id: &str) -> PathBuf {
        self.dir.join(RESULTS).join(format!("{id}.saved.json"))
    }

    pub(crate) fn remove_files(&self, id: &str) {
        for path in [self.csv_path(id), self.saved_path(id)] {
            if let Err(e) = fs::remove_file(&path) {
                if e.kind() != std::io::ErrorKind::NotFound {
                    tracing::warn!("removing {}: {e}", path.display());
                }
            }
        }
    }

    fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ServerError> {
        let tmp = path.with_extension("tmp");
        let mut file = File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Writes the result files and returns the CSV file name.
    pub fn write_result(&self, id: &str, csv: &[u8], saved: &SavedTable) -> Result<String, ServerError> {
        Self::write_atomic(&self.saved_path(id), &serde_json::to_vec(saved)?)?;
        Self::write_atomic(&self.csv_path(id), csv)?;
        Ok(format!("{id}.csv"))
    }

    pub fn read_result(&self, id: &str) -> Result<Vec<u8>, ServerError> {
        Ok(fs::read(self.csv_path(id))?)
    }

    pub fn read_saved(&self, id: &str) -> Result<SavedTable, ServerError> {
        Ok(serde_json::from_slice(&fs::read(self.saved_path(id))?)?)
    }

    /// Drops result files of executions finished before `now - retention`.
    /// Records stay in the history, marked expired. Returns the affected ids.
    pub fn expire(&self, now: DateTime<Utc>) -> Result<Vec<String>, ServerError> {
        let Some(retention) = self.retention else { return Ok(Vec::new()) };
        let cutoff = now - retention;
        let due: Vec<String> = self
            .list(None)
            .into_iter()
            .filter(|r| !r.expired && r.finished_at.is_some_and(|f| f < cutoff))
            .map(|r| r.execution_id)
            .collect();
        for id in &due {
            self.update(id, |r| {
                r.expired = true;
                r.result = None;
            })?;
            self.remove_files(id);
        }
        if !due.is_empty() {
            tracing::info!("expired {} results", due.len());
        }
        Ok(due)
    }
}
