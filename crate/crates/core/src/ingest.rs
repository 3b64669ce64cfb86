//! Device-message ingestion: parse, gate through the cache's Bloom filter,
//! and apply to the datasource cache.
//!
//! Wire format is one JSON object per line:
//!
//! ```text
//! {"device_id":"1","device_type":"Portable","temperature":23.4,"humidity":41.0}
//! ```
//!
//! `device_id` and `device_type` are reserved; every other key with a
//! numeric value is an attribute.

use std::collections::{BTreeMap, HashMap};
use std::io::{self, BufRead, BufReader};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::Serialize;
use serde_json::Value as Json;
use thiserror::Error;

use crate::dsb::{Dsb, UpdateOutcome};
use crate::dsl::{filter_key, Index};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IngestError {
    #[error("not a JSON object: {0}")]
    Malformed(String),
    #[error("missing or empty `{0}`")]
    MissingField(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceMessage {
    pub device_id: String,
    pub device_type: String,
    pub attributes: BTreeMap<String, f64>,
    pub received_at: DateTime<Utc>,
}

fn identity(value: Option<&Json>) -> Option<String> {
    match value? {
        Json::String(s) if !s.is_empty() => Some(s.clone()),
        Json::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

impl DeviceMessage {
    /// Parses one line. Also returns how many non-numeric attribute values
    /// were ignored. A key repeated in the line keeps its last value.
    pub fn parse(line: &str) -> Result<(DeviceMessage, usize), IngestError> {
        let object: serde_json::Map<String, Json> =
            serde_json::from_str(line).map_err(|e| IngestError::Malformed(e.to_string()))?;
        let device_id =
            identity(object.get("device_id")).ok_or(IngestError::MissingField("device_id"))?;
        let device_type =
            identity(object.get("device_type")).ok_or(IngestError::MissingField("device_type"))?;
        let mut attributes = BTreeMap::new();
        let mut ignored = 0;
        for (key, value) in object {
            if key == "device_id" || key == "device_type" {
                continue;
            }
            match value.as_f64() {
                Some(v) if v.is_finite() => {
                    attributes.insert(key, v);
                }
                _ => ignored += 1,
            }
        }
        Ok((
            DeviceMessage {
                device_id,
                device_type,
                attributes,
                received_at: Utc::now(),
            },
            ignored,
        ))
    }

    /// Wire form of this message.
    pub fn to_line(&self) -> String {
        let mut object = serde_json::Map::new();
        object.insert("device_id".into(), Json::String(self.device_id.clone()));
        object.insert("device_type".into(), Json::String(self.device_type.clone()));
        for (k, v) in &self.attributes {
            object.insert(k.clone(), Json::from(*v));
        }
        Json::Object(object).to_string()
    }
}

#[derive(Debug, Default)]
struct Counters {
    messages: AtomicU64,
    malformed: AtomicU64,
    ignored_values: AtomicU64,
    attributes: AtomicU64,
    gated_out: AtomicU64,
    applied: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IngestStats {
    pub messages: u64,
    pub malformed: u64,
    pub ignored_values: u64,
    pub attributes: u64,
    /// Attributes the Bloom gate kept away from the cache.
    pub gated_out: u64,
    pub applied: u64,
}

/// Turns device messages into cache updates. Safe to share between any
/// number of connection readers.
pub struct Ingestor {
    dsb: Arc<Dsb>,
    counters: Counters,
}

impl Ingestor {
    pub fn new(dsb: Arc<Dsb>) -> Self {
        Ingestor {
            dsb,
            counters: Counters::default(),
        }
    }

    pub fn dsb(&self) -> &Arc<Dsb> {
        &self.dsb
    }

    /// Applies every registered attribute of `msg`; returns how many were
    /// applied.
    pub fn handle_message(&self, msg: &DeviceMessage) -> usize {
        self.counters.messages.fetch_add(1, Ordering::Relaxed);
        let mut applied = 0;
        for (attribute, value) in &msg.attributes {
            self.counters.attributes.fetch_add(1, Ordering::Relaxed);
            if !self
                .dsb
                .maybe_relevant(&filter_key(&msg.device_id, &msg.device_type, attribute))
            {
                self.counters.gated_out.fetch_add(1, Ordering::Relaxed);
                continue;
            }
            let index = Index::new(
                msg.device_id.as_str(),
                msg.device_type.as_str(),
                attribute.as_str(),
            );
            if let UpdateOutcome::Applied(_) = self.dsb.update(&index, *value) {
                applied += 1;
            }
        }
        self.counters
            .applied
            .fetch_add(applied as u64, Ordering::Relaxed);
        applied
    }

    /// Parses and applies one wire line.
    pub fn handle_line(&self, line: &str) -> Result<usize, IngestError> {
        match DeviceMessage::parse(line) {
            Ok((msg, ignored)) => {
                self.counters
                    .ignored_values
                    .fetch_add(ignored as u64, Ordering::Relaxed);
                Ok(self.handle_message(&msg))
            }
            Err(e) => {
                self.counters.malformed.fetch_add(1, Ordering::Relaxed);
                Err(e)
            }
        }
    }

    pub fn stats(&self) -> IngestStats {
        let l = |c: &AtomicU64| c.load(Ordering::Relaxed);
        IngestStats {
            messages: l(&self.counters.messages),
            malformed: l(&self.counters.malformed),
            ignored_values: l(&self.counters.ignored_values),
            attributes: l(&self.counters.attributes),
            gated_out: l(&self.counters.gated_out),
            applied: l(&self.counters.applied),
        }
    }
}

/// A source of device messages feeding an [`Ingestor`]. TCP is the one
/// shipped transport; others (HTTP polling, MQTT) plug in here.
pub trait Accepter: Send {
    fn describe(&self) -> String;

    /// Stops accepting and closes open connections.
    fn shutdown(&mut self);
}

#[derive(Debug, Clone, Copy)]
pub struct AccepterConfig {
    pub max_connections: usize,
}

impl Default for AccepterConfig {
    fn default() -> Self {
        AccepterConfig {
            max_connections: 256,
        }
    }
}

struct Shared {
    ingestor: Arc<Ingestor>,
    stop: AtomicBool,
    connections: Mutex<HashMap<u64, TcpStream>>,
    accepted: AtomicU64,
    rejected: AtomicU64,
}

/// Newline-delimited TCP ingestion; one reader thread per connection.
pub struct TcpAccepter {
    addr: SocketAddr,
    shared: Arc<Shared>,
    thread: Option<JoinHandle<()>>,
}

impl TcpAccepter {
    pub fn bind(
        addr: impl ToSocketAddrs,
        ingestor: Arc<Ingestor>,
        config: AccepterConfig,
    ) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let shared = Arc::new(Shared {
            ingestor,
            stop: AtomicBool::new(false),
            connections: Mutex::new(HashMap::new()),
            accepted: AtomicU64::new(0),
            rejected: AtomicU64::new(0),
        });
        let accept_shared = Arc::clone(&shared);
        let thread = std::thread::Builder::new()
            .name("iotrule-accept".into())
            .spawn(move || accept_loop(listener, accept_shared, config))?;
        Ok(TcpAccepter {
            addr,
            shared,
            thread: Some(thread),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn ingestor(&self) -> &Arc<Ingestor> {
        &self.shared.ingestor
    }

    pub fn open_connections(&self) -> usize {
        self.shared.connections.lock().len()
    }

    /// (accepted, rejected for exceeding the connection limit)
    pub fn connection_counts(&self) -> (u64, u64) {
        (
            self.shared.accepted.load(Ordering::Relaxed),
            self.shared.rejected.load(Ordering::Relaxed),
        )
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>, config: AccepterConfig) {
    let mut next_id = 0u64;
    for stream in listener.incoming() {
        if shared.stop.load(Ordering::Acquire) {
            break;
        }
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                log::warn!("accept failed: {e}");
                continue;
            }
        };
        let id = next_id;
        next_id += 1;
        {
            let mut open = shared.connections.lock();
            if open.len() >= config.max_connections {
                shared.rejected.fetch_add(1, Ordering::Relaxed);
                let _ = stream.shutdown(Shutdown::Both);
                continue;
            }
            match stream.try_clone() {
                Ok(handle) => {
                    open.insert(id, handle);
                }
                Err(e) => {
                    log::warn!("cannot track connection: {e}");
                    continue;
                }
            }
        }
        shared.accepted.fetch_add(1, Ordering::Relaxed);
        let conn_shared = Arc::clone(&shared);
        let spawned = std::thread::Builder::new()
            .name(format!("iotrule-at-{id}"))
            .spawn(move || {
                read_connection(stream, &conn_shared.ingestor);
                conn_shared.connections.lock().remove(&id);
            });
        if let Err(e) = spawned {
            log::error!("cannot spawn reader: {e}");
            shared.connections.lock().remove(&id);
        }
    }
}

fn read_connection(stream: TcpStream, ingestor: &Ingestor) {
    let peer = stream.peer_addr().ok();
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let line = match line {
            Ok(l) => l,
            Err(e) => {
                // invalid UTF-8 ends up here too; the stream position is lost
                log::debug!("connection {peer:?} closed: {e}");
                break;
            }
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Err(e) = ingestor.handle_line(line) {
            log::debug!("skipping line from {peer:?}: {e}");
        }
    }
}

impl Accepter for TcpAccepter {
    fn describe(&self) -> String {
        format!("tcp://{}", self.addr)
    }

    fn shutdown(&mut self) {
        if self.shared.stop.swap(true, Ordering::AcqRel) {
            return;
        }
        // wake the blocking accept
        let _ = TcpStream::connect(self.addr);
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
        for (_, stream) in self.shared.connections.lock().drain() {
            let _ = stream.shutdown(Shutdown::Both);
        }
    }
}

impl Drop for TcpAccepter {
    fn drop(&mut self) {
        self.shutdown();
    }
}
