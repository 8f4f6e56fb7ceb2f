//! Wire protocol between manager and workers.
//!
//! Every frame is a 4-byte big-endian length followed by that many bytes of
//! UTF-8 JSON:
//!
//! ```text
//! {"protocolVersion": 1, "kind": "RESULT_BATCH", "executionId": "…", "payload": {…}}
//! ```
//!
//! `executionId` is present on execution-scoped messages only. The payload
//! shape depends on `kind`; it is decoded only after the version has been
//! checked.

use std::collections::HashMap;
use std::io::{self, Read, Write};
use std::net::{Shutdown, TcpStream};
use std::sync::mpsc;

use cohort_core::engine::{ResultLine, SavedTable};
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use serde_json::Value as Json;

pub const PROTOCOL_VERSION: u32 = 1;

/// Frames above this size are treated as corrupt.
pub const MAX_FRAME: usize = 1 << 30;

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("unsupported protocol version {0}, expected {PROTOCOL_VERSION}")]
    Version(u32),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Register {
    pub worker_id: String,
    /// Address the worker reports for diagnostics.
    pub address: String,
    pub pool_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AssignBuckets {
    pub bucket_count: u32,
    pub buckets: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LoadImport {
    /// Correlates the acknowledgement.
    pub ticket: u64,
    /// Base64 of the container file.
    pub container: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ImportLoaded {
    pub ticket: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExecuteQuery {
    pub query: Json,
    /// Tables of the saved queries the query references.
    #[serde(default)]
    pub saved: HashMap<String, SavedTable>,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Register(Register),
    /// Answer to a refused REGISTER; the connection is closed afterwards.
    Rejected { reason: String },
    AssignBuckets(AssignBuckets),
    /// Dataset and concept documents, see `Registry::snapshot`.
    UpdateDataset { snapshot: Json },
    LoadImport(LoadImport),
    ImportLoaded(ImportLoaded),
    ExecuteQuery(ExecuteQuery),
    ResultBatch { lines: Vec<ResultLine> },
    /// `lines` is the number of lines the worker emitted in batches.
    WorkerDone { lines: u64 },
    WorkerFailed { error: String },
    Cancel,
    Ping,
    Pong,
}

#[derive(Serialize, Deserialize)]
struct LinesPayload<L> {
    lines: L,
}

#[derive(Serialize, Deserialize)]
struct ErrorPayload {
    error: String,
}

#[derive(Serialize, Deserialize)]
struct ReasonPayload {
    reason: String,
}

#[derive(Serialize, Deserialize)]
struct SnapshotPayload {
    snapshot: Json,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct OutEnvelope<'a> {
    protocol_version: u32,
    kind: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    execution_id: Option<&'a str>,
    payload: &'a RawValue,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct InEnvelope<'a> {
    protocol_version: u32,
    kind: String,
    #[serde(default)]
    execution_id: Option<String>,
    #[serde(borrow, default)]
    payload: Option<&'a RawValue>,
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Register(_) => "REGISTER",
            Message::Rejected { .. } => "REJECTED",
            Message::AssignBuckets(_) => "ASSIGN_BUCKETS",
            Message::UpdateDataset { .. } => "UPDATE_DATASET",
            Message::LoadImport(_) => "LOAD_IMPORT",
            Message::ImportLoaded(_) => "IMPORT_LOADED",
            Message::ExecuteQuery(_) => "EXECUTE_QUERY",
            Message::ResultBatch { .. } => "RESULT_BATCH",
            Message::WorkerDone { .. } => "WORKER_DONE",
            Message::WorkerFailed { .. } => "WORKER_FAILED",
            Message::Cancel => "CANCEL",
            Message::Ping => "PING",
            Message::Pong => "PONG",
        }
    }

    fn payload(&self) -> serde_json::Result<String> {
        use serde_json::to_string;
        match self {
            Message::Register(p) => to_string(p),
            Message::Rejected { reason } => to_string(&ReasonPayload { reason: reason.clone() }),
            Message::AssignBuckets(p) => to_string(p),
            Message::UpdateDataset { snapshot } => to_string(&SnapshotPayload {
                snapshot: snapshot.clone(),
            }),
            Message::LoadImport(p) => to_string(p),
            Message::ImportLoaded(p) => to_string(p),
            Message::ExecuteQuery(p) => to_string(p),
            Message::ResultBatch { lines } => to_string(&LinesPayload { lines }),
            Message::WorkerDone { lines } => to_string(&LinesPayload { lines }),
            Message::WorkerFailed { error } => to_string(&ErrorPayload { error: error.clone() }),
            Message::Cancel | Message::Ping | Message::Pong => Ok("{}".into()),
        }
    }

    fn from_payload(kind: &str, payload: &str) -> Result<Message, ProtocolError> {
        fn parse<'a, T: Deserialize<'a>>(kind: &str, text: &'a str) -> Result<T, ProtocolError> {
            serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(format!("{kind} payload: {e}")))
        }
        Ok(match kind {
            "REGISTER" => Message::Register(parse(kind, payload)?),
            "REJECTED" => Message::Rejected {
                reason: parse::<ReasonPayload>(kind, payload)?.reason,
            },
            "ASSIGN_BUCKETS" => Message::AssignBuckets(parse(kind, payload)?),
            "UPDATE_DATASET" => Message::UpdateDataset {
                snapshot: parse::<SnapshotPayload>(kind, payload)?.snapshot,
            },
            "LOAD_IMPORT" => Message::LoadImport(parse(kind, payload)?),
            "IMPORT_LOADED" => Message::ImportLoaded(parse(kind, payload)?),
            "EXECUTE_QUERY" => Message::ExecuteQuery(parse(kind, payload)?),
            "RESULT_BATCH" => Message::ResultBatch {
                lines: parse::<LinesPayload<Vec<ResultLine>>>(kind, payload)?.lines,
            },
            "WORKER_DONE" => Message::WorkerDone {
                lines: parse::<LinesPayload<u64>>(kind, payload)?.lines,
            },
            "WORKER_FAILED" => Message::WorkerFailed {
                error: parse::<ErrorPayload>(kind, payload)?.error,
            },
            "CANCEL" => Message::Cancel,
            "PING" => Message::Ping,
            "PONG" => Message::Pong,
            other => return Err(ProtocolError::Malformed(format!("unknown message kind '{other}'"))),
        })
    }
}

/// A decoded frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub execution_id: Option<String>,
    pub message: Message,
}

impl Envelope {
    pub fn new(message: Message) -> Self {
        Envelope {
            execution_id: None,
            message,
        }
    }

    pub fn for_execution(execution_id: impl Into<String>, message: Message) -> Self {
        Envelope {
            execution_id: Some(execution_id.into()),
            message,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        encode_with_version(self, PROTOCOL_VERSION)
    }

    /// Checks the version before looking at the payload.
    pub fn decode(bytes: &[u8]) -> Result<Envelope, ProtocolError> {
        let text = std::str::from_utf8(bytes).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
        let raw: InEnvelope = serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
        if raw.protocol_version != PROTOCOL_VERSION {
            return Err(ProtocolError::Version(raw.protocol_version));
        }
        let payload = raw.payload.map_or("{}", RawValue::get);
        Ok(Envelope {
            execution_id: raw.execution_id,
            message: Message::from_payload(&raw.kind, payload)?,
        })
    }
}

/// Encodes with an arbitrary version, to exercise the handshake.
pub fn encode_with_version(envelope: &Envelope, version: u32) -> Vec<u8> {
    let payload = envelope.message.payload().expect("payloads serialize");
    let payload = RawValue::from_string(payload).expect("serializer emits valid JSON");
    serde_json::to_vec(&OutEnvelope {
        protocol_version: version,
        kind: envelope.message.kind(),
        execution_id: envelope.execution_id.as_deref(),
        payload: &payload,
    })
    .expect("envelope serializes")
}

pub fn write_frame(w: &mut impl Write, body: &[u8]) -> io::Result<()> {
    if body.len() > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "frame too large"));
    }
    w.write_all(&(body.len() as u32).to_be_bytes())?;
    w.write_all(body)?;
    w.flush()
}

/// Reads one frame; `None` on a clean end of stream before a length prefix.
pub fn read_frame(r: &mut impl Read) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        match r.read(&mut len[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame of {len} bytes")));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}

pub fn read_envelope(r: &mut impl Read) -> Result<Option<Envelope>, ProtocolError> {
    match read_frame(r)? {
        None => Ok(None),
        Some(body) => Envelope::decode(&body).map(Some),
    }
}

/// Sending half of a connection. Frames are queued and written by a
/// dedicated thread so senders never block on a slow peer.
#[derive(Debug, Clone)]
pub struct Outbox {
    tx: mpsc::Sender<Vec<u8>>,
}

impl Outbox {
    /// Spawns the writer thread. A write error shuts the socket down, which
    /// the peer's and our own reader observe as end of stream.
    pub fn spawn(stream: TcpStream, name: String) -> io::Result<Outbox> {
        let (tx, rx) = mpsc::channel::<Vec<u8>>();
        std::thread::Builder::new().name(name).spawn(move || {
            let mut writer = io::BufWriter::new(&stream);
            for frame in rx {
                if let Err(e) = write_frame(&mut writer, &frame) {
                    tracing::debug!("write failed: {e}");
                    let _ = stream.shutdown(Shutdown::Both);
                    break;
                }
            }
        })?;
        Ok(Outbox { tx })
    }

    /// Queues an envelope; false when the connection is gone.
    pub fn send(&self, envelope: &Envelope) -> bool {
        self.tx.send(envelope.encode()).is_ok()
    }

    pub fn send_message(&self, message: Message) -> bool {
        self.send(&Envelope::new(message))
    }
}
