#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use cohort_ingest::{prepare_file, write_containers, ImportDescriptor, Options};
use cohort_server::{App, ServerConfig};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/parkinson")
}

/// Runs both fixture imports through the ingest pipeline into `out`.
pub fn ingest_fixture(out: &Path) {
    for name in ["outpatient.import.json", "inpatient.import.json"] {
        let resolved = ImportDescriptor::load(&fixture_dir().join(name), None).unwrap();
        let source = resolved.base.join(resolved.descriptor.source.as_ref().unwrap());
        let mut prepared = prepare_file(&resolved, &source, &Options::default()).unwrap();
        write_containers(&mut prepared, out).unwrap();
    }
}

/// Service configuration over the fixture with `workers` local workers.
pub fn fixture_config(data_dir: &Path, imports: &Path, workers: usize) -> ServerConfig {
    let mut config = ServerConfig {
        data_dir: data_dir.to_path_buf(),
        dataset: Some(fixture_dir().join("dataset.json")),
        concepts: vec![fixture_dir().join("icd.concept.json")],
        imports: vec![imports.to_path_buf()],
        local_workers: workers,
        ..ServerConfig::default()
    };
    config.cluster.worker.pool_size = 1;
    config.cluster.manager.listen = "127.0.0.1:0".into();
    config
}

pub fn fixture_query() -> Value {
    serde_json::from_str(&std::fs::read_to_string(fixture_dir().join("query.json")).unwrap()).unwrap()
}

pub struct Reply {
    pub status: StatusCode,
    pub content_type: Option<String>,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.body)))
    }

    pub fn text(&self) -> String {
        String::from_utf8(self.body.clone()).unwrap()
    }
}

/// Drives the router on a private runtime, one request at a time.
pub struct Client {
    router: Router,
    runtime: tokio::runtime::Runtime,
    pub owner: Option<String>,
}

impl Client {
    pub fn new(app: &App) -> Client {
        Client {
            router: app.router(),
            runtime: tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
                .unwrap(),
            owner: None,
        }
    }

    pub fn request(&self, method: &str, uri: &str, body: Vec<u8>) -> Reply {
        let mut builder = Request::builder().method(method).uri(uri);
        if let Some(o) = &self.owner {
            builder = builder.header("x-owner", o);
        }
        let request = builder.body(Body::from(body)).unwrap();
        self.runtime.block_on(async {
            let response = self.router.clone().oneshot(request).await.unwrap();
            let status = response.status();
            let content_type = response
                .headers()
                .get("content-type")
                .map(|v| v.to_str().unwrap().to_string());
            let body = response.into_body().collect().await.unwrap().to_bytes().to_vec();
            Reply {
                status,
                content_type,
                body,
            }
        })
    }

    pub fn get(&self, uri: &str) -> Reply {
        self.request("GET", uri, Vec::new())
    }

    pub fn post(&self, uri: &str, doc: &Value) -> Reply {
        self.request("POST", uri, serde_json::to_vec(doc).unwrap())
    }

    /// Submits and returns the execution id, panicking unless 201.
    pub fn submit(&self, doc: &Value) -> String {
        let reply = self.post("/api/queries", doc);
        assert_eq!(reply.status, StatusCode::CREATED, "{}", reply.text());
        reply.json()["executionId"].as_str().unwrap().to_string()
    }

    /// Polls until the execution is terminal and returns its status body.
    pub fn poll(&self, id: &str) -> Value {
        let deadline = Instant::now() + Duration::from_secs(120);
        loop {
            let status = self.get(&format!("/api/queries/{id}")).json();
            match status["state"].as_str().unwrap() {
                "DONE" | "FAILED" | "CANCELED" => return status,
                _ if Instant::now() > deadline => panic!("execution {id} did not finish: {status}"),
                _ => std::thread::sleep(Duration::from_millis(10)),
            }
        }
    }
}

/// A worker speaking the raw protocol that acknowledges loads, answers
/// pings and records every other message without ever answering a query.
#[derive(Clone)]
pub struct FakeWorker {
    stream: std::sync::Arc<std::sync::Mutex<std::net::TcpStream>>,
    pub received: std::sync::Arc<std::sync::Mutex<Vec<cohort_cluster::protocol::Envelope>>>,
}

impl FakeWorker {
    pub fn connect(addr: &str, id: &str) -> FakeWorker {
        use cohort_cluster::protocol::{read_envelope, Envelope, ImportLoaded, Message, Register};
        let stream = std::net::TcpStream::connect(addr).unwrap();
        let fake = FakeWorker {
            stream: std::sync::Arc::new(std::sync::Mutex::new(stream.try_clone().unwrap())),
            received: Default::default(),
        };
        fake.send(Envelope::new(Message::Register(Register {
            worker_id: id.into(),
            address: "fake".into(),
            pool_size: 1,
        })));
        let mut reader = std::io::BufReader::new(stream);
        let reply = fake.clone();
        std::thread::spawn(move || {
            while let Ok(Some(envelope)) = read_envelope(&mut reader) {
                match envelope.message {
                    Message::Ping => reply.send(Envelope::new(Message::Pong)),
                    Message::LoadImport(l) => reply.send(Envelope::new(Message::ImportLoaded(ImportLoaded {
                        ticket: l.ticket,
                        error: None,
                    }))),
                    _ => reply.received.lock().unwrap().push(envelope),
                }
            }
        });
        fake
    }

    pub fn send(&self, envelope: cohort_cluster::protocol::Envelope) {
        let mut s = self.stream.lock().unwrap();
        let _ = cohort_cluster::protocol::write_frame(&mut *s, &envelope.encode());
    }

    /// Kinds of the messages received for `execution`.
    pub fn kinds(&self, execution: &str) -> Vec<&'static str> {
        self.received
            .lock()
            .unwrap()
            .iter()
            .filter(|e| e.execution_id.as_deref() == Some(execution))
            .map(|e| e.message.kind())
            .collect()
    }
}

/// Starts the service over the fixture with `local` in-process workers and
/// one fake worker registered last, which never completes a query.
pub fn app_with_fake(data_dir: &Path, imports: &Path, local: usize) -> (App, FakeWorker) {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let mut config = fixture_config(data_dir, imports, local);
    config.expected_workers = 1;
    config.worker_wait_secs = 20;
    config.cluster.manager.listen = addr.clone();
    let starter = std::thread::spawn(move || App::start(config).unwrap());
    let deadline = Instant::now() + Duration::from_secs(20);
    let fake = loop {
        if std::net::TcpStream::connect(&addr).is_ok() {
            // Give the local workers time to register first.
            std::thread::sleep(Duration::from_millis(300));
            break FakeWorker::connect(&addr, "fake");
        }
        assert!(Instant::now() < deadline, "manager did not come up");
        std::thread::sleep(Duration::from_millis(10));
    };
    (starter.join().unwrap(), fake)
}
