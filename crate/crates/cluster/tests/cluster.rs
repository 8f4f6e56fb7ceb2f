use std::collections::HashMap;
use std::io::{BufReader, Write};
use std::net::TcpStream;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use cohort_cluster::protocol::{
    encode_with_version, read_envelope, write_frame, Envelope, ImportLoaded, Message, Register,
};
use cohort_cluster::{ClusterError, ExecutionState, LocalCluster, Manager, ManagerConfig, Worker};
use cohort_core::engine::{DateSet, ResultLine};
use cohort_testkit::{gen, run_engine, sorted, RawData};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value as Json;

const WAIT: Option<Duration> = Some(Duration::from_secs(60));

fn config() -> ManagerConfig {
    ManagerConfig {
        listen: "127.0.0.1:0".into(),
        ..ManagerConfig::default()
    }
}

fn dataset(seed: u64, buckets: u32) -> (RawData, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = gen::random_dataset(&mut rng, 120, 3000);
    data.config.bucket_count = buckets;
    (data, rng)
}

fn load(manager: &Manager, data: &RawData) {
    manager.set_registry(gen::registry(data)).unwrap();
    for container in gen::containers(data) {
        manager.load_import(&container).unwrap();
    }
}

fn eventually(what: &str, mut check: impl FnMut() -> bool) {
    let deadline = Instant::now() + Duration::from_secs(20);
    while !check() {
        assert!(Instant::now() < deadline, "timed out waiting for {what}");
        thread::sleep(Duration::from_millis(10));
    }
}

fn run(manager: &Manager, query: &Json) -> (ExecutionState, Vec<ResultLine>) {
    let id = manager.submit(query, HashMap::new()).unwrap();
    let state = manager.wait(&id, WAIT).unwrap();
    let lines = manager.result(&id).map(|r| sorted(r.lines)).unwrap_or_default();
    (state, lines)
}

fn line(entity: &str) -> ResultLine {
    ResultLine {
        entity: entity.into(),
        secondary: None,
        dates: DateSet::new(),
        values: Vec::new(),
    }
}

/// Scripted stand-in for a worker speaking the raw protocol.
#[derive(Clone)]
struct FakeLink {
    stream: Arc<Mutex<TcpStream>>,
}

impl FakeLink {
    fn send(&self, envelope: Envelope) {
        let mut s = self.stream.lock().unwrap();
        let _ = write_frame(&mut *s, &envelope.encode());
    }

    fn close(&self) {
        let _ = self.stream.lock().unwrap().shutdown(std::net::Shutdown::Both);
    }
}

/// Registers a fake worker. Loads are acknowledged and pings answered
/// unless `silent`; every other message goes to `on_message`.
fn fake_worker(
    addr: &str,
    id: &str,
    silent: bool,
    mut on_message: impl FnMut(&FakeLink, Envelope) + Send + 'static,
) -> FakeLink {
    let stream = TcpStream::connect(addr).unwrap();
    let link = FakeLink {
        stream: Arc::new(Mutex::new(stream.try_clone().unwrap())),
    };
    link.send(Envelope::new(Message::Register(Register {
        worker_id: id.into(),
        address: "fake".into(),
        pool_size: 1,
    })));
    let mut reader = BufReader::new(stream);
    let reply = link.clone();
    thread::spawn(move || {
        while let Ok(Some(envelope)) = read_envelope(&mut reader) {
            match envelope.message {
                Message::Ping if silent => {}
                Message::Ping => reply.send(Envelope::new(Message::Pong)),
                Message::LoadImport(l) => reply.send(Envelope::new(Message::ImportLoaded(ImportLoaded {
                    ticket: l.ticket,
                    error: None,
                }))),
                Message::AssignBuckets(_) | Message::UpdateDataset { .. } => {}
                _ => on_message(&reply, envelope),
            }
        }
    });
    link
}

fn query_for(data: &RawData, rng: &mut ChaCha8Rng) -> Json {
    gen::QueryGen::new(data, Vec::new()).query(rng)
}

#[test]
fn buckets_are_dealt_round_robin() {
    let (data, _) = dataset(1, 100);
    let cluster = LocalCluster::start(3, 1, config()).unwrap();
    cluster.manager.set_registry(gen::registry(&data)).unwrap();
    let infos = cluster.manager.workers();
    let sizes: Vec<usize> = infos.iter().map(|w| w.buckets.len()).collect();
    assert_eq!(sizes, vec![34, 33, 33]);
    for (i, info) in infos.iter().enumerate() {
        assert!(info.buckets.iter().all(|b| *b as usize % 3 == i));
    }
    for (worker, info) in cluster.workers.iter().zip(&infos) {
        eventually("assignment", || worker.buckets() == info.buckets);
    }
}

#[test]
fn a_single_worker_holds_every_bucket() {
    let (data, _) = dataset(2, 100);
    let cluster = LocalCluster::single(1).unwrap();
    load(&cluster.manager, &data);
    assert_eq!(cluster.manager.workers()[0].buckets, (0..100).collect::<Vec<u32>>());
    assert_eq!(cluster.workers[0].import_count(), gen::containers(&data).len());
}

#[test]
fn joining_after_load_is_rejected() {
    let (data, _) = dataset(3, 10);
    let cluster = LocalCluster::start(2, 1, config()).unwrap();
    load(&cluster.manager, &data);
    let addr = cluster.manager.local_addr().to_string();
    match Worker::connect(&addr, "late", 1) {
        Err(ClusterError::Rejected(reason)) => assert!(reason.contains("static assignment"), "{reason}"),
        other => panic!("late worker accepted: {:?}", other.map(|w| w.id().to_string())),
    }
    assert_eq!(cluster.manager.workers().len(), 2);
}

#[test]
fn duplicate_worker_ids_are_rejected() {
    let cluster = LocalCluster::single(1).unwrap();
    let addr = cluster.manager.local_addr().to_string();
    match Worker::connect(&addr, "local-1", 1) {
        Err(ClusterError::Rejected(reason)) => assert!(reason.contains("duplicate"), "{reason}"),
        other => panic!("duplicate accepted: {:?}", other.map(|w| w.id().to_string())),
    }
}

#[test]
fn unknown_protocol_version_is_rejected_at_handshake() {
    let manager = Manager::start(config(), None).unwrap();
    let mut stream = TcpStream::connect(manager.local_addr()).unwrap();
    let hello = Envelope::new(Message::Register(Register {
        worker_id: "old".into(),
        address: "x".into(),
        pool_size: 1,
    }));
    write_frame(&mut stream, &encode_with_version(&hello, 7)).unwrap();
    stream.flush().unwrap();
    let reply = read_envelope(&mut BufReader::new(stream)).unwrap().unwrap();
    match reply.message {
        Message::Rejected { reason } => assert!(reason.contains("version 7"), "{reason}"),
        other => panic!("expected rejection, got {other:?}"),
    }
    assert!(manager.workers().is_empty());
}

#[test]
fn results_do_not_depend_on_the_number_of_workers() {
    let (data, mut rng) = dataset(4, 100);
    let registry = gen::registry(&data);
    let store = gen::store(&data, &registry);
    let one = LocalCluster::single(2).unwrap();
    let three = LocalCluster::start(3, 1, config()).unwrap();
    load(&one.manager, &data);
    load(&three.manager, &data);
    for _ in 0..25 {
        let query = query_for(&data, &mut rng);
        let expected = run_engine(&registry, &store, &query, &HashMap::new(), true).unwrap();
        let (state, single) = run(&one.manager, &query);
        assert_eq!(state, ExecutionState::Done);
        let (state, spread) = run(&three.manager, &query);
        assert_eq!(state, ExecutionState::Done);
        assert_eq!(single, expected, "{query}");
        assert_eq!(spread, expected, "{query}");
    }
}

#[test]
fn concurrent_submissions_complete_independently() {
    let (data, mut rng) = dataset(5, 30);
    let registry = gen::registry(&data);
    let store = gen::store(&data, &registry);
    let cluster = LocalCluster::start(3, 2, config()).unwrap();
    load(&cluster.manager, &data);
    let queries: Vec<Json> = (0..10).map(|_| query_for(&data, &mut rng)).collect();
    let handles: Vec<_> = queries
        .iter()
        .cloned()
        .map(|q| {
            let manager = cluster.manager.clone();
            thread::spawn(move || run(&manager, &q))
        })
        .collect();
    for (query, handle) in queries.iter().zip(handles) {
        let (state, lines) = handle.join().unwrap();
        assert_eq!(state, ExecutionState::Done);
        let expected = run_engine(&registry, &store, query, &HashMap::new(), true).unwrap();
        assert_eq!(lines, expected, "{query}");
    }
}

#[test]
fn collects_every_batch_and_ignores_repeated_completion() {
    let (data, mut rng) = dataset(6, 9);
    let manager = Manager::start(config(), None).unwrap();
    let addr = manager.local_addr().to_string();
    for w in 0..3 {
        let name = format!("w{w}");
        fake_worker(&addr, &name.clone(), false, move |link, env| {
            if let (Message::ExecuteQuery(_), Some(id)) = (env.message, env.execution_id) {
                for batch in 0..2 {
                    let lines = vec![line(&format!("{name}-{batch}-a")), line(&format!("{name}-{batch}-b"))];
                    link.send(Envelope::for_execution(&id, Message::ResultBatch { lines }));
                }
                link.send(Envelope::for_execution(&id, Message::WorkerDone { lines: 4 }));
                link.send(Envelope::for_execution(&id, Message::WorkerDone { lines: 4 }));
                link.send(Envelope::for_execution("no-such-execution", Message::WorkerDone { lines: 0 }));
            }
        });
    }
    manager.wait_for_workers(3, Duration::from_secs(5)).unwrap();
    manager.set_registry(gen::registry(&data)).unwrap();
    let id = manager.submit(&query_for(&data, &mut rng), HashMap::new()).unwrap();
    assert_eq!(manager.wait(&id, WAIT), Some(ExecutionState::Done));
    let lines = manager.result(&id).unwrap().lines;
    assert_eq!(lines.len(), 12);
    let mut entities: Vec<String> = lines.into_iter().map(|l| l.entity).collect();
    entities.sort();
    entities.dedup();
    assert_eq!(entities.len(), 12);
    thread::sleep(Duration::from_millis(100));
    assert_eq!(manager.status(&id).unwrap().line_count, 12);
}

#[test]
fn a_worker_failure_fails_the_execution_and_cancels_the_others() {
    let (data, mut rng) = dataset(7, 12);
    let manager = Manager::start(config(), None).unwrap();
    let addr = manager.local_addr().to_string();
    let first = Worker::connect(&addr, "w1", 1).unwrap();
    fake_worker(&addr, "w2", false, |link, env| {
        if let (Message::ExecuteQuery(_), Some(id)) = (env.message, env.execution_id) {
            link.send(Envelope::for_execution(&id, Message::ResultBatch { lines: vec![line("x")] }));
            link.send(Envelope::for_execution(&id, Message::WorkerFailed { error: "disk on fire".into() }));
            link.send(Envelope::for_execution(&id, Message::ResultBatch { lines: vec![line("late")] }));
        }
    });
    let third = Worker::connect(&addr, "w3", 1).unwrap();
    manager.wait_for_workers(3, Duration::from_secs(5)).unwrap();
    load(&manager, &data);
    let id = manager.submit(&query_for(&data, &mut rng), HashMap::new()).unwrap();
    assert_eq!(manager.wait(&id, WAIT), Some(ExecutionState::Failed));
    let status = manager.status(&id).unwrap();
    assert!(status.error.as_deref().unwrap().contains("disk on fire"), "{status:?}");
    assert!(manager.result(&id).is_none());
    eventually("cancel at w1", || first.cancels_received() == 1);
    eventually("cancel at w3", || third.cancels_received() == 1);
    thread::sleep(Duration::from_millis(100));
    assert_eq!(manager.status(&id).unwrap().line_count, 0);
}

#[test]
fn a_dropped_connection_fails_running_executions() {
    let (data, mut rng) = dataset(8, 12);
    let manager = Manager::start(config(), None).unwrap();
    let addr = manager.local_addr().to_string();
    let first = Worker::connect(&addr, "w1", 1).unwrap();
    fake_worker(&addr, "w2", false, |link, env| {
        if let Message::ExecuteQuery(_) = env.message {
            link.close();
        }
    });
    manager.wait_for_workers(2, Duration::from_secs(5)).unwrap();
    load(&manager, &data);
    let id = manager.submit(&query_for(&data, &mut rng), HashMap::new()).unwrap();
    assert_eq!(manager.wait(&id, WAIT), Some(ExecutionState::Failed));
    assert!(manager.status(&id).unwrap().error.unwrap().contains("w2"));
    eventually("cancel at w1", || first.cancels_received() == 1);

    let again = manager.submit(&query_for(&data, &mut rng), HashMap::new()).unwrap();
    let status = manager.status(&again).unwrap();
    assert_eq!(status.state, ExecutionState::Failed);
    assert!(status.error.unwrap().contains("unreachable"));
}

#[test]
fn killing_a_worker_process_is_detected() {
    let (data, mut rng) = dataset(9, 12);
    let cluster = LocalCluster::start(2, 1, config()).unwrap();
    load(&cluster.manager, &data);
    cluster.workers[1].kill();
    eventually("worker marked dead", || cluster.manager.workers().iter().any(|w| !w.alive));
    let id = cluster.manager.submit(&query_for(&data, &mut rng), HashMap::new()).unwrap();
    assert_eq!(cluster.manager.status(&id).unwrap().state, ExecutionState::Failed);
}

#[test]
fn missed_heartbeats_fail_the_execution() {
    let (data, mut rng) = dataset(10, 4);
    let manager = Manager::start(
        ManagerConfig {
            heartbeat_ms: 40,
            heartbeat_misses: 3,
            ..config()
        },
        None,
    )
    .unwrap();
    let addr = manager.local_addr().to_string();
    let _link = fake_worker(&addr, "mute", true, |_, _| {});
    manager.wait_for_workers(1, Duration::from_secs(5)).unwrap();
    manager.set_registry(gen::registry(&data)).unwrap();
    let id = manager.submit(&query_for(&data, &mut rng), HashMap::new()).unwrap();
    assert_eq!(manager.wait(&id, WAIT), Some(ExecutionState::Failed));
    let error = manager.status(&id).unwrap().error.unwrap();
    assert!(error.contains("heartbeat"), "{error}");
}

#[test]
fn line_counts_must_match_what_arrived() {
    let (data, mut rng) = dataset(11, 4);
    let manager = Manager::start(config(), None).unwrap();
    let addr = manager.local_addr().to_string();
    fake_worker(&addr, "liar", false, |link, env| {
        if let (Message::ExecuteQuery(_), Some(id)) = (env.message, env.execution_id) {
            link.send(Envelope::for_execution(&id, Message::ResultBatch { lines: vec![line("1"), line("2")] }));
            link.send(Envelope::for_execution(&id, Message::WorkerDone { lines: 3 }));
        }
    });
    manager.wait_for_workers(1, Duration::from_secs(5)).unwrap();
    manager.set_registry(gen::registry(&data)).unwrap();
    let id = manager.submit(&query_for(&data, &mut rng), HashMap::new()).unwrap();
    assert_eq!(manager.wait(&id, WAIT), Some(ExecutionState::Failed));
    assert!(manager.status(&id).unwrap().error.unwrap().contains("3 lines"));
}

#[test]
fn cancel_reaches_workers_and_discards_lines() {
    let (data, mut rng) = dataset(12, 6);
    let manager = Manager::start(config(), None).unwrap();
    let addr = manager.local_addr().to_string();
    let real = Worker::connect(&addr, "w1", 1).unwrap();
    let canceled = Arc::new(Mutex::new(Vec::new()));
    let seen = Arc::clone(&canceled);
    // Never completes, so the execution is still running when canceled.
    fake_worker(&addr, "w2", false, move |_, env| {
        if env.message == Message::Cancel {
            seen.lock().unwrap().push(env.execution_id.unwrap());
        }
    });
    manager.wait_for_workers(2, Duration::from_secs(5)).unwrap();
    load(&manager, &data);
    let id = manager.submit(&query_for(&data, &mut rng), HashMap::new()).unwrap();
    assert!(manager.cancel(&id));
    assert!(!manager.cancel(&id));
    assert_eq!(manager.status(&id).unwrap().state, ExecutionState::Canceled);
    assert!(manager.result(&id).is_none());
    eventually("cancel at w1", || real.cancels_received() == 1);
    eventually("cancel at w2", || canceled.lock().unwrap().as_slice() == [id.clone()]);
}

#[test]
fn invalid_queries_are_refused_before_broadcast() {
    let (data, _) = dataset(13, 6);
    let cluster = LocalCluster::single(1).unwrap();
    load(&cluster.manager, &data);
    let bad = serde_json::json!({"type": "CONCEPT", "ids": ["synthetic.nope"]});
    assert!(matches!(
        cluster.manager.submit(&bad, HashMap::new()),
        Err(ClusterError::Core(_))
    ));
    assert_eq!(cluster.workers[0].executions_started(), 0);
}

#[test]
fn imports_with_another_bucket_count_are_refused() {
    let (data, _) = dataset(14, 6);
    let cluster = LocalCluster::single(1).unwrap();
    cluster.manager.set_registry(gen::registry(&data)).unwrap();
    let mut other = data.clone();
    other.config.bucket_count = 7;
    let container = &gen::containers(&other)[0];
    assert!(matches!(cluster.manager.load_import(container), Err(ClusterError::Load(_))));
}
