//! The worker node: holds the imports of its buckets and evaluates queries
//! on a local thread pool, streaming result batches to the manager.

use std::collections::HashMap;
use std::io::BufReader;
use std::net::{Shutdown, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;

use base64::Engine as _;
use cohort_core::engine::{execute, plan, DataStore, ExecError, ExecOptions, LoadedImport};
use cohort_core::query::parse_query;
use cohort_core::registry::Registry;
use cohort_core::storage::container::read_bucket;

use crate::config::WorkerConfig;
use crate::protocol::{read_envelope, Envelope, ExecuteQuery, ImportLoaded, LoadImport, Message, Outbox, Register};
use crate::ClusterError;

#[derive(Default)]
struct Assignment {
    bucket_count: u32,
    buckets: Vec<u32>,
}

struct Shared {
    id: String,
    outbox: Outbox,
    stream: TcpStream,
    pool: rayon::ThreadPool,
    registry: RwLock<Option<Arc<Registry>>>,
    /// Replaced wholesale on load so running queries keep their snapshot.
    store: RwLock<Arc<DataStore>>,
    assignment: Mutex<Assignment>,
    running: Mutex<HashMap<String, Arc<AtomicBool>>>,
    killed: AtomicBool,
    connected: AtomicBool,
    cancels: AtomicUsize,
    started: AtomicUsize,
}

impl Shared {
    fn send(&self, envelope: Envelope) {
        if !self.killed.load(Ordering::Relaxed) {
            self.outbox.send(&envelope);
        }
    }

    fn cancel_all(&self) {
        for flag in self.running.lock().expect("running lock").values() {
            flag.store(true, Ordering::Relaxed);
        }
    }

    fn handle(self: &Arc<Self>, envelope: Envelope) {
        let exec_id = envelope.execution_id;
        match envelope.message {
            Message::Ping => self.send(Envelope::new(Message::Pong)),
            Message::AssignBuckets(a) => {
                tracing::info!(worker = self.id, buckets = a.buckets.len(), "buckets assigned");
                *self.assignment.lock().expect("assignment lock") = Assignment {
                    bucket_count: a.bucket_count,
                    buckets: a.buckets,
                };
            }
            Message::UpdateDataset { snapshot } => match Registry::from_snapshot(&snapshot) {
                Ok(registry) => {
                    let mut store = self.store.write().expect("store lock");
                    if store.import_count() > 0 {
                        let mut fresh = DataStore::clone(&store);
                        fresh.reassign(&registry);
                        *store = Arc::new(fresh);
                    }
                    *self.registry.write().expect("registry lock") = Some(Arc::new(registry));
                }
                Err(e) => tracing::error!(worker = self.id, "dataset update rejected: {e}"),
            },
            Message::LoadImport(load) => {
                let ticket = load.ticket;
                let error = self.load(load).err();
                if let Some(e) = &error {
                    tracing::error!(worker = self.id, "load failed: {e}");
                }
                self.send(Envelope::new(Message::ImportLoaded(ImportLoaded { ticket, error })));
            }
            Message::ExecuteQuery(request) => {
                let Some(id) = exec_id else {
                    tracing::warn!(worker = self.id, "query without execution id ignored");
                    return;
                };
                self.start(id, request);
            }
            Message::Cancel => {
                self.cancels.fetch_add(1, Ordering::Relaxed);
                let id = exec_id.unwrap_or_default();
                match self.running.lock().expect("running lock").get(&id) {
                    Some(flag) => flag.store(true, Ordering::Relaxed),
                    None => tracing::debug!(worker = self.id, execution = id, "cancel for unknown execution"),
                }
            }
            other => tracing::warn!(worker = self.id, kind = other.kind(), "unexpected message ignored"),
        }
    }

    fn load(&self, load: LoadImport) -> Result<(), String> {
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(load.container.as_bytes())
            .map_err(|e| format!("container is not base64: {e}"))?;
        let bucket = read_bucket(&bytes).map_err(|e| e.to_string())?;
        {
            let a = self.assignment.lock().expect("assignment lock");
            if !a.buckets.contains(&bucket.bucket_id()) || a.bucket_count != bucket.bucket_count() {
                return Err(format!("bucket {} is not assigned to this worker", bucket.bucket_id()));
            }
        }
        let registry = self
            .registry
            .read()
            .expect("registry lock")
            .clone()
            .ok_or("no dataset received")?;
        let import = LoadedImport::new(bucket, &registry).map_err(|e| e.to_string())?;
        let mut store = self.store.write().expect("store lock");
        let mut next = DataStore::clone(&store);
        next.add(import);
        *store = Arc::new(next);
        Ok(())
    }

    fn start(self: &Arc<Self>, id: String, request: ExecuteQuery) {
        let cancel = Arc::new(AtomicBool::new(false));
        self.running
            .lock()
            .expect("running lock")
            .insert(id.clone(), Arc::clone(&cancel));
        self.started.fetch_add(1, Ordering::Relaxed);
        let shared = Arc::clone(self);
        let spawned = std::thread::Builder::new().name(format!("exec-{id}")).spawn(move || {
            let outcome = shared.run(&id, request, &cancel);
            shared.running.lock().expect("running lock").remove(&id);
            match outcome {
                Ok(lines) => shared.send(Envelope::for_execution(&id, Message::WorkerDone { lines })),
                Err(ExecError::Canceled) => tracing::info!(worker = shared.id, execution = id, "execution canceled"),
                Err(ExecError::Failed(error)) => {
                    shared.send(Envelope::for_execution(&id, Message::WorkerFailed { error }))
                }
            }
        });
        if let Err(e) = spawned {
            tracing::error!(worker = self.id, "cannot start execution: {e}");
        }
    }

    fn run(&self, id: &str, request: ExecuteQuery, cancel: &AtomicBool) -> Result<u64, ExecError> {
        let registry = self
            .registry
            .read()
            .expect("registry lock")
            .clone()
            .ok_or_else(|| ExecError::Failed("no dataset received".into()))?;
        let query = parse_query(&request.query, &registry).map_err(|e| ExecError::Failed(e.to_string()))?;
        let saved = request.saved.into_iter().map(|(k, v)| (k, Arc::new(v))).collect();
        let planned = plan(&query, &registry, &saved).map_err(|e| ExecError::Failed(e.to_string()))?;
        let store = Arc::clone(&self.store.read().expect("store lock"));
        let buckets = self.assignment.lock().expect("assignment lock").buckets.clone();
        let options = ExecOptions {
            batch_size: request.batch_size,
            ..ExecOptions::default()
        };
        let sink = |lines| self.send(Envelope::for_execution(id, Message::ResultBatch { lines }));
        let stats = execute(&planned, &store, &buckets, &self.pool, options, cancel, &sink)?;
        Ok(stats.lines as u64)
    }
}

/// A connected worker. Dropping the handle leaves the worker running.
pub struct Worker {
    shared: Arc<Shared>,
    receiver: Option<JoinHandle<()>>,
}

impl Worker {
    /// Connects to the manager and registers. Fails if the manager refuses
    /// the registration.
    pub fn connect(manager: &str, id: &str, pool_size: usize) -> Result<Worker, ClusterError> {
        let stream = TcpStream::connect(manager)?;
        let _ = stream.set_nodelay(true);
        let address = stream.local_addr().map(|a| a.to_string()).unwrap_or_default();
        let outbox = Outbox::spawn(stream.try_clone()?, format!("send-{id}"))?;
        let pool_size = pool_size.max(1);
        outbox.send_message(Message::Register(Register {
            worker_id: id.to_string(),
            address,
            pool_size,
        }));
        let mut reader = BufReader::new(stream.try_clone()?);
        let first = read_envelope(&mut reader)?
            .ok_or_else(|| ClusterError::Rejected("connection closed during registration".into()))?;
        if let Message::Rejected { reason } = &first.message {
            return Err(ClusterError::Rejected(reason.clone()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(pool_size)
            .thread_name({
                let id = id.to_string();
                move |i| format!("{id}-pool-{i}")
            })
            .build()
            .map_err(|e| ClusterError::Config(e.to_string()))?;
        let shared = Arc::new(Shared {
            id: id.to_string(),
            outbox,
            stream,
            pool,
            registry: RwLock::new(None),
            store: RwLock::new(Arc::new(DataStore::new())),
            assignment: Mutex::new(Assignment::default()),
            running: Mutex::new(HashMap::new()),
            killed: AtomicBool::new(false),
            connected: AtomicBool::new(true),
            cancels: AtomicUsize::new(0),
            started: AtomicUsize::new(0),
        });
        shared.handle(first);
        let loop_shared = Arc::clone(&shared);
        let receiver = std::thread::Builder::new().name(format!("recv-{id}")).spawn(move || {
            loop {
                match read_envelope(&mut reader) {
                    Ok(Some(envelope)) => loop_shared.handle(envelope),
                    Ok(None) => break,
                    Err(e) => {
                        tracing::warn!(worker = loop_shared.id, "connection failed: {e}");
                        break;
                    }
                }
            }
            loop_shared.connected.store(false, Ordering::Relaxed);
            loop_shared.cancel_all();
        })?;
        tracing::info!(worker = id, manager, "registered");
        Ok(Worker {
            shared,
            receiver: Some(receiver),
        })
    }

    pub fn from_config(config: &WorkerConfig) -> Result<Worker, ClusterError> {
        Worker::connect(&config.manager, &config.effective_id(), config.effective_pool_size())
    }

    pub fn id(&self) -> &str {
        &self.shared.id
    }

    pub fn buckets(&self) -> Vec<u32> {
        self.shared.assignment.lock().expect("assignment lock").buckets.clone()
    }

    pub fn import_count(&self) -> usize {
        self.shared.store.read().expect("store lock").import_count()
    }

    /// CANCEL messages received so far.
    pub fn cancels_received(&self) -> usize {
        self.shared.cancels.load(Ordering::Relaxed)
    }

    pub fn executions_started(&self) -> usize {
        self.shared.started.load(Ordering::Relaxed)
    }

    pub fn running(&self) -> usize {
        self.shared.running.lock().expect("running lock").len()
    }

    pub fn is_connected(&self) -> bool {
        self.shared.connected.load(Ordering::Relaxed)
    }

    /// Simulates a crash: stops all work and drops the connection without
    /// any further message.
    pub fn kill(&self) {
        self.shared.killed.store(true, Ordering::Relaxed);
        self.shared.cancel_all();
        let _ = self.shared.stream.shutdown(Shutdown::Both);
    }

    /// Blocks until the manager closes the connection.
    pub fn join(mut self) {
        if let Some(handle) = self.receiver.take() {
            let _ = handle.join();
        }
    }
}
