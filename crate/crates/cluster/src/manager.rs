//! The manager node: registers workers, assigns buckets, ships imports and
//! queries, and folds worker messages into execution states.
//!
//! All state lives behind one mutex, so transitions are serialized; network
//! reads happen on one thread per worker and writes on per-connection
//! writer threads, so no transition ever waits on a socket.

use std::collections::{HashMap, HashSet};
use std::io::BufReader;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant, SystemTime};

use base64::Engine as _;
use cohort_core::engine::{plan, ResultLine, SavedTable};
use cohort_core::query::parse_query;
use cohort_core::registry::Registry;
use cohort_core::storage::container::read_bucket;
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::config::ManagerConfig;
use crate::protocol::{
    read_envelope, AssignBuckets, Envelope, ExecuteQuery, LoadImport, Message, Outbox, ProtocolError, Register,
};
use crate::ClusterError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExecutionState {
    Created,
    Running,
    Done,
    Failed,
    Canceled,
}

impl ExecutionState {
    pub fn is_terminal(self) -> bool {
        matches!(self, ExecutionState::Done | ExecutionState::Failed | ExecutionState::Canceled)
    }
}

impl std::fmt::Display for ExecutionState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let text = match self {
            ExecutionState::Created => "CREATED",
            ExecutionState::Running => "RUNNING",
            ExecutionState::Done => "DONE",
            ExecutionState::Failed => "FAILED",
            ExecutionState::Canceled => "CANCELED",
        };
        f.write_str(text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct WorkerInfo {
    pub worker_id: String,
    pub address: String,
    pub pool_size: usize,
    pub buckets: Vec<u32>,
    pub alive: bool,
}

/// Snapshot of an execution without its lines.
#[derive(Debug, Clone)]
pub struct ExecutionInfo {
    pub id: String,
    pub state: ExecutionState,
    pub line_count: usize,
    pub error: Option<String>,
    pub header: Vec<String>,
    pub with_secondary: bool,
    pub created: SystemTime,
    pub finished: Option<SystemTime>,
}

/// Lines of a DONE execution, in arrival order.
#[derive(Debug, Clone)]
pub struct ExecutionResult {
    pub header: Vec<String>,
    pub with_secondary: bool,
    pub lines: Vec<ResultLine>,
}

struct WorkerEntry {
    id: String,
    address: String,
    pool_size: usize,
    buckets: Vec<u32>,
    alive: bool,
    last_seen: Instant,
    outbox: Outbox,
    stream: TcpStream,
}

struct Execution {
    state: ExecutionState,
    header: Vec<String>,
    with_secondary: bool,
    /// Workers the query was sent to.
    workers: Vec<String>,
    /// Workers that have not reported WORKER_DONE.
    pending: HashSet<String>,
    /// Lines received per worker.
    received: HashMap<String, u64>,
    lines: Vec<ResultLine>,
    error: Option<String>,
    created: SystemTime,
    finished: Option<SystemTime>,
}

#[derive(Default)]
struct State {
    workers: Vec<WorkerEntry>,
    registry: Option<Arc<Registry>>,
    bucket_count: u32,
    /// Set by the first import; freezes the bucket assignment.
    loaded: bool,
    /// Outstanding loads: ticket to worker id.
    loads: HashMap<u64, String>,
    /// Finished loads: ticket to error, if any.
    acks: HashMap<u64, Option<String>>,
    executions: HashMap<String, Execution>,
}

impl State {
    fn worker_mut(&mut self, id: &str) -> Option<&mut WorkerEntry> {
        self.workers.iter_mut().find(|w| w.id == id)
    }

    /// Bucket `b` goes to the `b mod n`-th worker in registration order.
    fn assign(&mut self) {
        let n = self.workers.len();
        if n == 0 {
            return;
        }
        for w in &mut self.workers {
            w.buckets.clear();
        }
        for b in 0..self.bucket_count {
            self.workers[b as usize % n].buckets.push(b);
        }
        for w in &self.workers {
            w.outbox.send_message(Message::AssignBuckets(AssignBuckets {
                bucket_count: self.bucket_count,
                buckets: w.buckets.clone(),
            }));
        }
    }

    /// Fails a running execution and sends CANCEL to every participant
    /// except `culprit`. Partial lines are discarded.
    fn fail(&mut self, execution: &str, error: String, culprit: Option<&str>) {
        let Some(exec) = self.executions.get_mut(execution) else {
            return;
        };
        if exec.state.is_terminal() {
            return;
        }
        tracing::warn!(execution, "execution failed: {error}");
        exec.state = ExecutionState::Failed;
        exec.error = Some(error);
        exec.finished = Some(SystemTime::now());
        exec.lines = Vec::new();
        let targets: Vec<String> = exec.workers.iter().filter(|w| Some(w.as_str()) != culprit).cloned().collect();
        for w in &self.workers {
            if w.alive && targets.contains(&w.id) {
                w.outbox.send(&Envelope::for_execution(execution, Message::Cancel));
            }
        }
    }
}

struct Shared {
    config: ManagerConfig,
    required_bucket_count: Option<u32>,
    state: Mutex<State>,
    changed: Condvar,
    stop: AtomicBool,
    tickets: AtomicU64,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().expect("manager state lock")
    }

    /// Marks a worker dead and fails everything that waited on it.
    fn worker_lost(&self, id: &str, reason: &str) {
        let mut st = self.lock();
        let Some(w) = st.worker_mut(id) else { return };
        if !w.alive {
            return;
        }
        tracing::warn!(worker = id, "worker lost: {reason}");
        w.alive = false;
        let _ = w.stream.shutdown(Shutdown::Both);
        let running: Vec<String> = st
            .executions
            .iter()
            .filter(|(_, e)| e.state == ExecutionState::Running && e.pending.contains(id))
            .map(|(k, _)| k.clone())
            .collect();
        for exec in running {
            st.fail(&exec, format!("worker {id} failed: {reason}"), Some(id));
        }
        let tickets: Vec<u64> = st.loads.iter().filter(|(_, w)| w.as_str() == id).map(|(t, _)| *t).collect();
        for t in tickets {
            st.loads.remove(&t);
            st.acks.insert(t, Some(format!("worker {id} failed: {reason}")));
        }
        drop(st);
        self.changed.notify_all();
    }

    fn handle(&self, worker: &str, envelope: Envelope) {
        let mut st = self.lock();
        if let Some(w) = st.worker_mut(worker) {
            w.last_seen = Instant::now();
        }
        let exec_id = envelope.execution_id;
        match envelope.message {
            Message::Pong => return,
            Message::ImportLoaded(ack) => {
                st.loads.remove(&ack.ticket);
                st.acks.insert(ack.ticket, ack.error);
            }
            Message::ResultBatch { lines } => {
                let Some(exec) = exec_id.as_deref().and_then(|id| st.executions.get_mut(id)) else {
                    tracing::warn!(worker, execution = ?exec_id, "batch for unknown execution ignored");
                    return;
                };
                if exec.state.is_terminal() || !exec.pending.contains(worker) {
                    tracing::warn!(worker, execution = ?exec_id, state = %exec.state, "late batch dropped");
                    return;
                }
                *exec.received.entry(worker.to_string()).or_default() += lines.len() as u64;
                exec.lines.extend(lines);
            }
            Message::WorkerDone { lines } => {
                let Some(id) = exec_id else { return };
                let Some(exec) = st.executions.get_mut(&id) else {
                    tracing::warn!(worker, execution = id, "completion for unknown execution ignored");
                    return;
                };
                if exec.state.is_terminal() || !exec.pending.contains(worker) {
                    tracing::debug!(worker, execution = id, "repeated or late completion ignored");
                    return;
                }
                let received = exec.received.get(worker).copied().unwrap_or(0);
                if received == lines {
                    exec.pending.remove(worker);
                    if exec.pending.is_empty() {
                        exec.state = ExecutionState::Done;
                        exec.finished = Some(SystemTime::now());
                    }
                } else {
                    let error = format!("worker {worker} reported {lines} lines but {received} arrived");
                    st.fail(&id, error, Some(worker));
                }
            }
            Message::WorkerFailed { error } => {
                let Some(id) = exec_id else { return };
                if !st.executions.contains_key(&id) {
                    tracing::warn!(worker, execution = id, "failure for unknown execution ignored");
                    return;
                }
                st.fail(&id, format!("worker {worker}: {error}"), Some(worker));
            }
            other => {
                tracing::warn!(worker, kind = other.kind(), "unexpected message ignored");
                return;
            }
        }
        drop(st);
        self.changed.notify_all();
    }

    fn reject(stream: TcpStream, reason: String) {
        tracing::warn!("registration rejected: {reason}");
        if let Ok(outbox) = Outbox::spawn(stream, "reject".into()) {
            outbox.send_message(Message::Rejected { reason });
        }
    }

    fn accept(self: &Arc<Self>, stream: TcpStream) {
        let _ = stream.set_nodelay(true);
        let _ = stream.set_read_timeout(Some(Duration::from_secs(10)));
        let Ok(read_half) = stream.try_clone() else { return };
        let mut reader = BufReader::new(read_half);
        let register: Register = match read_envelope(&mut reader) {
            Ok(Some(Envelope {
                message: Message::Register(r),
                ..
            })) => r,
            Ok(Some(other)) => {
                return Shared::reject(stream, format!("expected REGISTER, got {}", other.message.kind()));
            }
            Ok(None) => return,
            Err(ProtocolError::Io(e)) => {
                tracing::warn!("handshake failed: {e}");
                return;
            }
            Err(e) => return Shared::reject(stream, e.to_string()),
        };
        let _ = stream.set_read_timeout(None);
        let mut st = self.lock();
        if st.loaded {
            drop(st);
            return Shared::reject(stream, "static assignment: data is already loaded".into());
        }
        if st.workers.iter().any(|w| w.id == register.worker_id) {
            drop(st);
            return Shared::reject(stream, format!("duplicate worker id '{}'", register.worker_id));
        }
        let Ok(control) = stream.try_clone() else { return };
        let outbox = match Outbox::spawn(stream, format!("send-{}", register.worker_id)) {
            Ok(o) => o,
            Err(e) => {
                tracing::error!("cannot start writer: {e}");
                return;
            }
        };
        tracing::info!(worker = register.worker_id, address = register.address, "worker registered");
        st.workers.push(WorkerEntry {
            id: register.worker_id.clone(),
            address: register.address,
            pool_size: register.pool_size,
            buckets: Vec::new(),
            alive: true,
            last_seen: Instant::now(),
            outbox: outbox.clone(),
            stream: control,
        });
        st.assign();
        if let Some(registry) = &st.registry {
            outbox.send_message(Message::UpdateDataset {
                snapshot: registry.snapshot(),
            });
        }
        drop(st);
        self.changed.notify_all();

        let shared = Arc::clone(self);
        let id = register.worker_id;
        let spawned = std::thread::Builder::new().name(format!("recv-{id}")).spawn(move || {
            let reason = loop {
                match read_envelope(&mut reader) {
                    Ok(Some(envelope)) => shared.handle(&id, envelope),
                    Ok(None) => break "connection closed".to_string(),
                    Err(e) => break e.to_string(),
                }
            };
            shared.worker_lost(&id, &reason);
        });
        if let Err(e) = spawned {
            tracing::error!("cannot start reader: {e}");
        }
    }

    fn heartbeat(&self) {
        let interval = self.config.heartbeat();
        let limit = interval * self.config.heartbeat_misses.max(1);
        while !self.stop.load(Ordering::Relaxed) {
            std::thread::sleep(interval);
            let mut lost = Vec::new();
            {
                let st = self.lock();
                for w in st.workers.iter().filter(|w| w.alive) {
                    if w.last_seen.elapsed() > limit {
                        lost.push(w.id.clone());
                    } else {
                        w.outbox.send_message(Message::Ping);
                    }
                }
            }
            for id in lost {
                let misses = self.config.heartbeat_misses;
                self.worker_lost(&id, &format!("no answer to {misses} heartbeats"));
            }
        }
    }
}

/// Handle to a running manager; clones share the same node.
#[derive(Clone)]
pub struct Manager {
    shared: Arc<Shared>,
    addr: SocketAddr,
}

impl Manager {
    /// Binds the listen address and starts accepting workers.
    pub fn start(config: ManagerConfig, required_bucket_count: Option<u32>) -> Result<Manager, ClusterError> {
        let listener = TcpListener::bind(&config.listen)?;
        let addr = listener.local_addr()?;
        let shared = Arc::new(Shared {
            config,
            required_bucket_count,
            state: Mutex::new(State {
                bucket_count: required_bucket_count.unwrap_or(0),
                ..State::default()
            }),
            changed: Condvar::new(),
            stop: AtomicBool::new(false),
            tickets: AtomicU64::new(1),
        });
        let acceptor = Arc::clone(&shared);
        std::thread::Builder::new().name("accept".into()).spawn(move || {
            for stream in listener.incoming() {
                if acceptor.stop.load(Ordering::Relaxed) {
                    break;
                }
                match stream {
                    Ok(s) => {
                        let shared = Arc::clone(&acceptor);
                        let _ = std::thread::Builder::new()
                            .name("handshake".into())
                            .spawn(move || shared.accept(s));
                    }
                    Err(e) => tracing::warn!("accept failed: {e}"),
                }
            }
        })?;
        let beat = Arc::clone(&shared);
        std::thread::Builder::new()
            .name("heartbeat".into())
            .spawn(move || beat.heartbeat())?;
        tracing::info!(%addr, "manager listening");
        Ok(Manager { shared, addr })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn workers(&self) -> Vec<WorkerInfo> {
        self.shared
            .lock()
            .workers
            .iter()
            .map(|w| WorkerInfo {
                worker_id: w.id.clone(),
                address: w.address.clone(),
                pool_size: w.pool_size,
                buckets: w.buckets.clone(),
                alive: w.alive,
            })
            .collect()
    }

    /// Blocks until at least `count` workers are registered.
    pub fn wait_for_workers(&self, count: usize, timeout: Duration) -> Result<(), ClusterError> {
        let deadline = Instant::now() + timeout;
        let mut st = self.shared.lock();
        while st.workers.len() < count {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(ClusterError::Timeout(format!(
                    "{} of {count} workers registered",
                    st.workers.len()
                )));
            }
            st = self.shared.changed.wait_timeout(st, left).expect("manager state lock").0;
        }
        Ok(())
    }

    pub fn registry(&self) -> Option<Arc<Registry>> {
        self.shared.lock().registry.clone()
    }

    /// Installs a dataset and its concepts and sends them to every worker.
    /// The bucket count may only change before data is loaded.
    pub fn set_registry(&self, registry: Registry) -> Result<(), ClusterError> {
        let count = registry.dataset().bucket_count;
        if let Some(required) = self.shared.required_bucket_count {
            if required != count {
                return Err(ClusterError::Load(format!(
                    "dataset uses {count} buckets, cluster is configured for {required}"
                )));
            }
        }
        let mut st = self.shared.lock();
        if st.loaded && st.bucket_count != count {
            return Err(ClusterError::StaticAssignment(format!(
                "bucket count cannot change from {} to {count} after data is loaded",
                st.bucket_count
            )));
        }
        let snapshot = registry.snapshot();
        let reassign = st.bucket_count != count;
        st.bucket_count = count;
        st.registry = Some(Arc::new(registry));
        if reassign {
            st.assign();
        }
        for w in st.workers.iter().filter(|w| w.alive) {
            w.outbox.send_message(Message::UpdateDataset {
                snapshot: snapshot.clone(),
            });
        }
        Ok(())
    }

    /// Sends a container to the worker owning its bucket and waits until the
    /// worker has loaded it. Freezes the bucket assignment.
    pub fn load_import(&self, container: &[u8]) -> Result<(), ClusterError> {
        let bucket = read_bucket(container)?;
        let ticket = self.shared.tickets.fetch_add(1, Ordering::Relaxed);
        let mut st = self.shared.lock();
        if st.registry.is_none() {
            return Err(ClusterError::NoDataset);
        }
        if bucket.bucket_count() != st.bucket_count {
            return Err(ClusterError::Load(format!(
                "import '{}' uses {} buckets, dataset {}",
                bucket.import_id(),
                bucket.bucket_count(),
                st.bucket_count
            )));
        }
        if st.workers.is_empty() {
            return Err(ClusterError::NoWorkers);
        }
        let owner = &st.workers[bucket.bucket_id() as usize % st.workers.len()];
        if !owner.alive {
            return Err(ClusterError::Load(format!("worker {} is unreachable", owner.id)));
        }
        let message = Message::LoadImport(LoadImport {
            ticket,
            container: base64::engine::general_purpose::STANDARD.encode(container),
        });
        if !owner.outbox.send_message(message) {
            return Err(ClusterError::Load(format!("worker {} is unreachable", owner.id)));
        }
        let owner = owner.id.clone();
        st.loads.insert(ticket, owner.clone());
        st.loaded = true;
        let deadline = Instant::now() + Duration::from_millis(self.shared.config.load_timeout_ms);
        loop {
            if let Some(outcome) = st.acks.remove(&ticket) {
                return match outcome {
                    None => Ok(()),
                    Some(e) => Err(ClusterError::Load(format!("worker {owner}: {e}"))),
                };
            }
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                st.loads.remove(&ticket);
                return Err(ClusterError::Timeout(format!("worker {owner} did not acknowledge import")));
            }
            st = self.shared.changed.wait_timeout(st, left).expect("manager state lock").0;
        }
    }

    /// Validates and plans the query, then broadcasts it. `saved` holds the
    /// tables of the saved queries it references. If a worker is down the
    /// execution is created FAILED.
    pub fn submit(&self, query: &Json, saved: HashMap<String, SavedTable>) -> Result<String, ClusterError> {
        let registry = self.registry().ok_or(ClusterError::NoDataset)?;
        let parsed = parse_query(query, &registry)?;
        let shared_saved = saved.iter().map(|(k, v)| (k.clone(), Arc::new(v.clone()))).collect();
        let planned = plan(&parsed, &registry, &shared_saved)?;
        let referenced: HashSet<&str> = parsed.root.saved_queries().into_iter().collect();
        let saved: HashMap<String, SavedTable> = saved.into_iter().filter(|(k, _)| referenced.contains(k.as_str())).collect();

        let id = uuid::Uuid::new_v4().to_string();
        let mut st = self.shared.lock();
        if st.workers.is_empty() {
            return Err(ClusterError::NoWorkers);
        }
        let workers: Vec<String> = st.workers.iter().map(|w| w.id.clone()).collect();
        st.executions.insert(
            id.clone(),
            Execution {
                state: ExecutionState::Created,
                header: planned.header().to_vec(),
                with_secondary: parsed.secondary_id.is_some(),
                pending: workers.iter().cloned().collect(),
                workers,
                received: HashMap::new(),
                lines: Vec::new(),
                error: None,
                created: SystemTime::now(),
                finished: None,
            },
        );
        if let Some(dead) = st.workers.iter().find(|w| !w.alive) {
            let error = format!("worker {} is unreachable", dead.id);
            tracing::warn!(execution = id, "{error}");
            let exec = st.executions.get_mut(&id).expect("just inserted");
            exec.state = ExecutionState::Failed;
            exec.error = Some(error);
            exec.finished = Some(SystemTime::now());
            return Ok(id);
        }
        st.executions.get_mut(&id).expect("just inserted").state = ExecutionState::Running;
        let message = Envelope::for_execution(
            &id,
            Message::ExecuteQuery(ExecuteQuery {
                query: query.clone(),
                saved,
                batch_size: self.shared.config.batch_size,
            }),
        );
        let unreachable = st.workers.iter().find(|w| !w.outbox.send(&message)).map(|w| w.id.clone());
        if let Some(w) = unreachable {
            st.fail(&id, format!("worker {w} is unreachable"), Some(&w));
        }
        tracing::info!(execution = id, "query submitted");
        Ok(id)
    }

    pub fn status(&self, id: &str) -> Option<ExecutionInfo> {
        let st = self.shared.lock();
        let e = st.executions.get(id)?;
        Some(ExecutionInfo {
            id: id.to_string(),
            state: e.state,
            line_count: e.lines.len(),
            error: e.error.clone(),
            header: e.header.clone(),
            with_secondary: e.with_secondary,
            created: e.created,
            finished: e.finished,
        })
    }

    /// Blocks until the execution is terminal or the timeout passes, and
    /// returns its state then.
    pub fn wait(&self, id: &str, timeout: Option<Duration>) -> Option<ExecutionState> {
        let deadline = timeout.map(|t| Instant::now() + t);
        let mut st = self.shared.lock();
        loop {
            let state = st.executions.get(id)?.state;
            if state.is_terminal() {
                return Some(state);
            }
            st = match deadline {
                None => self.shared.changed.wait(st).expect("manager state lock"),
                Some(d) => {
                    let left = d.saturating_duration_since(Instant::now());
                    if left.is_zero() {
                        return Some(state);
                    }
                    self.shared.changed.wait_timeout(st, left).expect("manager state lock").0
                }
            };
        }
    }

    /// Lines of a DONE execution.
    pub fn result(&self, id: &str) -> Option<ExecutionResult> {
        let st = self.shared.lock();
        let e = st.executions.get(id).filter(|e| e.state == ExecutionState::Done)?;
        Some(ExecutionResult {
            header: e.header.clone(),
            with_secondary: e.with_secondary,
            lines: e.lines.clone(),
        })
    }

    /// Cancels a running execution; false if it is unknown or terminal.
    pub fn cancel(&self, id: &str) -> bool {
        let mut st = self.shared.lock();
        let Some(e) = st.executions.get_mut(id) else { return false };
        if e.state.is_terminal() {
            return false;
        }
        e.state = ExecutionState::Canceled;
        e.finished = Some(SystemTime::now());
        e.lines = Vec::new();
        let targets = e.workers.clone();
        for w in st.workers.iter().filter(|w| w.alive && targets.contains(&w.id)) {
            w.outbox.send(&Envelope::for_execution(id, Message::Cancel));
        }
        drop(st);
        self.shared.changed.notify_all();
        true
    }

    /// Drops a terminal execution from memory.
    pub fn forget(&self, id: &str) -> bool {
        let mut st = self.shared.lock();
        match st.executions.get(id) {
            Some(e) if e.state.is_terminal() => st.executions.remove(id).is_some(),
            _ => false,
        }
    }

    /// Stops accepting workers and closes every worker connection.
    pub fn shutdown(&self) {
        self.shared.stop.store(true, Ordering::Relaxed);
        let _ = TcpStream::connect(self.addr);
        let st = self.shared.lock();
        for w in &st.workers {
            let _ = w.stream.shutdown(Shutdown::Both);
        }
    }
}
