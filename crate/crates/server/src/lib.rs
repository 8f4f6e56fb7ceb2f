//! HTTP service in front of a cohort cluster.
//!
//! [`App`] owns a [`Manager`], the in-process workers and the
//! [`ExecutionStore`]. Queries are validated and submitted synchronously;
//! a waiter thread per execution renders the CSV once it terminates, so
//! status polls never wait on query evaluation.

pub mod api;
pub mod config;
pub mod store;

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{DateTime, Utc};
use cohort_cluster::{ClusterError, ExecutionState, Manager, Worker};
use cohort_core::engine::saved_table;
use cohort_core::query::parse_query;
use cohort_core::registry::{DatasetConfig, Registry};
use cohort_core::render::render_csv;
use cohort_core::storage::container::FILE_EXTENSION;
use serde_json::Value as Json;

pub use config::ServerConfig;
pub use store::{ExecutionStore, StoredExecution};

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Core(#[from] cohort_core::Error),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
}

/// Why a submission was refused.
#[derive(Debug)]
pub enum SubmitError {
    /// The document or its saved-query references are invalid.
    Invalid(Vec<String>),
    Unavailable(String),
}

/// Owner recorded when a request carries no owner header.
pub const DEFAULT_OWNER: &str = "anonymous";

struct Inner {
    config: ServerConfig,
    manager: Manager,
    workers: Mutex<Vec<Worker>>,
    store: ExecutionStore,
    /// Serializes registry changes.
    admin: Mutex<()>,
}

/// The running service; clones share it.
#[derive(Clone)]
pub struct App {
    inner: Arc<Inner>,
}

impl App {
    /// Opens the store, starts the manager and local workers, installs the
    /// configured dataset and concepts and loads the configured imports.
    pub fn start(config: ServerConfig) -> Result<App, ServerError> {
        let store = ExecutionStore::open(&config.data_dir, config.retention_days)?;
        let manager = Manager::start(config.cluster.manager.clone(), config.cluster.bucket_count)?;
        let addr = manager.local_addr().to_string();
        let mut workers = Vec::with_capacity(config.local_workers);
        for i in 0..config.local_workers {
            let pool = config.cluster.worker.effective_pool_size();
            workers.push(Worker::connect(&addr, &format!("local-{}", i + 1), pool)?);
        }
        let total = config.local_workers + config.expected_workers;
        if total > 0 {
            tracing::info!("waiting for {total} workers");
            manager.wait_for_workers(total, Duration::from_secs(config.worker_wait_secs))?;
        }

        let app = App {
            inner: Arc::new(Inner {
                config,
                manager,
                workers: Mutex::new(workers),
                store,
                admin: Mutex::new(()),
            }),
        };
        let config = &app.inner.config;
        if let Some(path) = &config.dataset {
            let dataset = DatasetConfig::from_json(&read_text(path)?)?;
            let mut registry = Registry::new(dataset)?;
            for path in &config.concepts {
                let doc: Json = serde_json::from_str(&read_text(path)?)?;
                registry.add_concept(doc)?;
            }
            app.inner.manager.set_registry(registry)?;
        } else if !config.concepts.is_empty() {
            return Err(ServerError::Config("concepts are configured without a dataset".into()));
        }
        for path in &config.imports {
            for file in containers(path)? {
                app.inner.manager.load_import(&std::fs::read(&file)?)?;
                tracing::info!("loaded {}", file.display());
            }
        }
        if config.retention_days.is_some() {
            app.spawn_expiry();
        }
        Ok(app)
    }

    fn spawn_expiry(&self) {
        let weak = Arc::downgrade(&self.inner);
        std::thread::spawn(move || loop {
            std::thread::sleep(Duration::from_secs(3600));
            let Some(inner) = weak.upgrade() else { break };
            if let Err(e) = inner.store.expire(Utc::now()) {
                tracing::warn!("retention: {e}");
            }
        });
    }

    pub fn config(&self) -> &ServerConfig {
        &self.inner.config
    }

    pub fn manager(&self) -> &Manager {
        &self.inner.manager
    }

    pub fn store(&self) -> &ExecutionStore {
        &self.inner.store
    }

    /// Runs `f` against the in-process workers.
    pub fn with_workers<T>(&self, f: impl FnOnce(&[Worker]) -> T) -> T {
        f(&self.inner.workers.lock().expect("worker list lock"))
    }

    pub fn router(&self) -> axum::Router {
        api::router(self.clone())
    }

    /// Validates `query`, resolves its saved-query references against the
    /// history and submits it.
    pub fn submit(&self, owner: &str, label: Option<String>, query: Json) -> Result<StoredExecution, SubmitError> {
        let manager = &self.inner.manager;
        let registry = manager
            .registry()
            .ok_or_else(|| SubmitError::Unavailable("no dataset is loaded".into()))?;
        let parsed = parse_query(&query, &registry).map_err(invalid)?;

        let mut saved = std::collections::HashMap::new();
        let mut errors = Vec::new();
        for id in parsed.root.saved_queries() {
            match self.inner.store.get(id) {
                None => errors.push(format!("unknown saved query id '{id}'")),
                Some(r) if r.state != ExecutionState::Done => {
                    errors.push(format!("saved query '{id}' is {}, not DONE", r.state))
                }
                Some(r) if r.expired => errors.push(format!("saved query '{id}' has expired")),
                Some(_) => match self.inner.store.read_saved(id) {
                    Ok(table) => {
                        saved.insert(id.to_string(), table);
                    }
                    Err(e) => errors.push(format!("saved query '{id}' cannot be read: {e}")),
                },
            }
        }
        if !errors.is_empty() {
            return Err(SubmitError::Invalid(errors));
        }

        let id = manager.submit(&query, saved).map_err(|e| match e {
            ClusterError::Core(e) => invalid(e),
            other => SubmitError::Unavailable(other.to_string()),
        })?;
        let status = manager.status(&id);
        let record = StoredExecution {
            execution_id: id.clone(),
            owner: owner.to_string(),
            label,
            query,
            // Even if the execution already ended, the outcome is recorded
            // by the waiter together with its line count and result file.
            state: ExecutionState::Running,
            created_at: status.as_ref().map_or_else(Utc::now, |s| DateTime::<Utc>::from(s.created)),
            finished_at: None,
            line_count: None,
            error: None,
            result: None,
            expired: false,
        };
        if let Err(e) = self.inner.store.put(record.clone()) {
            manager.cancel(&id);
            manager.forget(&id);
            return Err(SubmitError::Unavailable(format!("history store: {e}")));
        }
        let app = self.clone();
        let waiter = id.clone();
        std::thread::Builder::new()
            .name("execution-waiter".into())
            .spawn(move || app.finalize(&waiter))
            .map_err(|e| SubmitError::Unavailable(e.to_string()))?;
        Ok(record)
    }

    /// Waits for the execution and persists its outcome.
    fn finalize(&self, id: &str) {
        let manager = &self.inner.manager;
        let store = &self.inner.store;
        let Some(state) = manager.wait(id, None) else { return };
        let info = manager.status(id);
        let finished = info.as_ref().and_then(|i| i.finished).map(DateTime::<Utc>::from).unwrap_or_else(Utc::now);
        let mut error = info.as_ref().and_then(|i| i.error.clone());
        let mut outcome = (state, None, None);

        if state == ExecutionState::Done {
            if let Some(result) = manager.result(id) {
                let csv = render_csv(
                    &result.header,
                    &result.lines,
                    result.with_secondary,
                    self.inner.config.separator_byte(),
                );
                if store.get(id).is_some() {
                    match store.write_result(id, &csv, &saved_table(&result.lines)) {
                        Ok(name) => outcome = (state, Some(result.lines.len()), Some(name)),
                        Err(e) => {
                            error = Some(format!("writing result: {e}"));
                            outcome = (ExecutionState::Failed, None, None);
                        }
                    }
                }
            }
        }
        let (state, line_count, result) = outcome;
        let updated = store.update(id, |r| {
            r.state = state;
            r.finished_at = Some(finished);
            r.line_count = line_count;
            r.error = error;
            r.result = result;
        });
        match updated {
            // Deleted while running: leave nothing behind.
            Ok(None) => store.remove_files(id),
            Ok(Some(_)) => tracing::info!(execution = id, %state, "execution finished"),
            Err(e) => tracing::error!(execution = id, "persisting outcome: {e}"),
        }
        manager.forget(id);
    }

    /// Replaces the dataset. Concepts registered so far are dropped.
    pub fn set_dataset(&self, doc: &Json) -> Result<(), ServerError> {
        let _guard = self.inner.admin.lock().expect("admin lock");
        let registry = Registry::new(DatasetConfig::from_json(&doc.to_string())?)?;
        self.inner.manager.set_registry(registry)?;
        Ok(())
    }

    /// Registers a concept descriptor with the current dataset.
    pub fn add_concept(&self, doc: Json) -> Result<(), ServerError> {
        let _guard = self.inner.admin.lock().expect("admin lock");
        let current = self.inner.manager.registry().ok_or(ClusterError::NoDataset)?;
        let mut registry = (*current).clone();
        registry.add_concept(doc)?;
        self.inner.manager.set_registry(registry)?;
        Ok(())
    }

    /// Loads one import container into the cluster.
    pub fn load_import(&self, container: &[u8]) -> Result<(), ServerError> {
        Ok(self.inner.manager.load_import(container)?)
    }

    /// Stops the cluster; in-process workers are disconnected.
    pub fn shutdown(&self) {
        self.inner.manager.shutdown();
        for w in self.inner.workers.lock().expect("worker list lock").iter() {
            w.kill();
        }
    }
}

fn invalid(e: cohort_core::Error) -> SubmitError {
    match e {
        cohort_core::Error::Validation(v) => SubmitError::Invalid(v),
        other => SubmitError::Invalid(vec![other.to_string()]),
    }
}

fn read_text(path: &Path) -> Result<String, ServerError> {
    std::fs::read_to_string(path).map_err(|e| ServerError::Config(format!("{}: {e}", path.display())))
}

/// A container file, or the container files of a directory in name order.
fn containers(path: &Path) -> Result<Vec<PathBuf>, ServerError> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files = Vec::new();
    for entry in std::fs::read_dir(path)? {
        let p = entry?.path();
        if p.extension().is_some_and(|e| e == FILE_EXTENSION) {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

/// Binds the configured address and serves until ctrl-c.
pub async fn serve(app: App) -> Result<(), ServerError> {
    let listener = tokio::net::TcpListener::bind(&app.config().listen).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app.router())
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    app.shutdown();
    Ok(())
}
