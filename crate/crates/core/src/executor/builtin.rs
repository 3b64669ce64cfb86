//! Built-in execution functions.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;

use crate::api::ClientRegistry;
use crate::dsb::{Dsb, UpdateOutcome};
use crate::dsl::{parse_decimal_value, Index};
use crate::mqtt::MqttClient;

use super::{ActionHandler, ActionRequest, ActionSink, ExecError};

/// Separator between fields of a log line (ASCII unit separator).
pub const FIELD_SEPARATOR: char = '\u{1f}';

/// Splits `params` into `head` comma-separated leading fields (trimmed) and
/// the remainder (trimmed at the ends only, so it may contain commas).
pub fn split_params(params: &str, head: usize) -> Result<(Vec<&str>, &str), ExecError> {
    let mut fields = Vec::with_capacity(head);
    let mut rest = params;
    for n in 0..head {
        let comma = rest.find(',').ok_or_else(|| {
            ExecError::BadParams(format!(
                "expected {} comma-separated fields, found {n}",
                head + 1
            ))
        })?;
        fields.push(rest[..comma].trim());
        rest = &rest[comma + 1..];
    }
    Ok((fields, rest.trim()))
}

type ConnectionKey = (String, u16, String);

/// `Mqtt: host, port, username, password, topic, message`
///
/// Publishes at QoS 0. Connections are kept per (host, port, username) and
/// reopened once if a cached one has gone stale.
pub struct MqttAction {
    connections: Mutex<HashMap<ConnectionKey, MqttClient>>,
    timeout: Duration,
    published: AtomicU64,
}

impl Default for MqttAction {
    fn default() -> Self {
        MqttAction::new(Duration::from_secs(3))
    }
}

impl MqttAction {
    pub fn new(timeout: Duration) -> Self {
        MqttAction {
            connections: Mutex::new(HashMap::new()),
            timeout,
            published: AtomicU64::new(0),
        }
    }

    pub fn published(&self) -> u64 {
        self.published.load(Ordering::Relaxed)
    }

    fn connect(
        &self,
        host: &str,
        port: u16,
        user: &str,
        password: &str,
    ) -> Result<MqttClient, ExecError> {
        let client_id = format!("iotrule-{}", std::process::id());
        MqttClient::connect(
            (host, port),
            &client_id,
            Some((user, password)),
            self.timeout,
        )
        .map_err(|e| ExecError::ConnectionFailed(format!("{host}:{port}: {e}")))
    }
}

impl ActionHandler for MqttAction {
    fn execute(&self, request: &ActionRequest) -> Result<(), ExecError> {
        let (head, message) = split_params(&request.params, 5)?;
        let (host, port, user, password, topic) = (head[0], head[1], head[2], head[3], head[4]);
        let port: u16 = port
            .parse()
            .map_err(|_| ExecError::BadParams(format!("invalid port `{port}`")))?;
        let key = (host.to_string(), port, user.to_string());

        let mut connections = self.connections.lock();
        if let Some(client) = connections.get_mut(&key) {
            if client.publish(topic, message.as_bytes()).is_ok() {
                self.published.fetch_add(1, Ordering::Relaxed);
                return Ok(());
            }
            connections.remove(&key);
        }
        let mut client = self.connect(host, port, user, password)?;
        client
            .publish(topic, message.as_bytes())
            .map_err(|e| ExecError::PublishFailed(e.to_string()))?;
        connections.insert(key, client);
        self.published.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }
}

/// `WebSocket: client_id, message`
pub struct WebSocketAction {
    registry: Arc<ClientRegistry>,
    dropped: AtomicU64,
}

impl WebSocketAction {
    pub fn new(registry: Arc<ClientRegistry>) -> Self {
        WebSocketAction {
            registry,
            dropped: AtomicU64::new(0),
        }
    }

    /// Frames addressed to clients that were not connected.
    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }
}

impl ActionHandler for WebSocketAction {
    fn execute(&self, request: &ActionRequest) -> Result<(), ExecError> {
        let (head, message) = split_params(&request.params, 1)?;
        let client_id = head[0];
        if self.registry.send(client_id, message.to_string()) {
            Ok(())
        } else {
            self.dropped.fetch_add(1, Ordering::Relaxed);
            Err(ExecError::ClientNotConnected(client_id.to_string()))
        }
    }
}

/// `Log: anything` — appends `timestamp␟rule_id␟params` lines to a sink.
pub struct LogAction {
    out: Mutex<Box<dyn Write + Send>>,
}

impl LogAction {
    pub fn new(out: impl Write + Send + 'static) -> Self {
        LogAction {
            out: Mutex::new(Box::new(out)),
        }
    }

    pub fn to_file(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(LogAction::new(file))
    }

    /// A log sink backed by a shared in-memory buffer.
    pub fn in_memory() -> (Self, Arc<Mutex<Vec<u8>>>) {
        let buffer = Arc::new(Mutex::new(Vec::new()));
        (LogAction::new(SharedBuffer(Arc::clone(&buffer))), buffer)
    }
}

struct SharedBuffer(Arc<Mutex<Vec<u8>>>);

impl Write for SharedBuffer {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

impl ActionHandler for LogAction {
    fn execute(&self, request: &ActionRequest) -> Result<(), ExecError> {
        let line = format!(
            "{}{FIELD_SEPARATOR}{}{FIELD_SEPARATOR}{}\n",
            chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Micros, true),
            request.rule_id,
            request.params
        );
        let mut out = self.out.lock();
        out.write_all(line.as_bytes())
            .and_then(|_| out.flush())
            .map_err(|e| ExecError::Io(e.to_string()))
    }
}

/// `SetCell: device_id, device_type, attribute, value` — writes a cache
/// cell, which lets one rule trigger another.
pub struct SetCellAction {
    dsb: Arc<Dsb>,
}

impl SetCellAction {
    pub fn new(dsb: Arc<Dsb>) -> Self {
        SetCellAction { dsb }
    }
}

impl ActionHandler for SetCellAction {
    fn execute(&self, request: &ActionRequest) -> Result<(), ExecError> {
        let (head, value) = split_params(&request.params, 3)?;
        let value =
            parse_decimal_value(value).ok_or_else(|| ExecError::ValueParse(value.to_string()))?;
        let index = Index::new(head[0], head[1], head[2]);
        match self.dsb.update(&index, value) {
            UpdateOutcome::Applied(_) => Ok(()),
            UpdateOutcome::NotRegistered => Err(ExecError::NotRegistered(index)),
        }
    }
}

/// An [`ActionSink`] that records requests instead of executing them.
#[derive(Default)]
pub struct RecordingSink {
    accepted: Vec<String>,
    requests: Mutex<Vec<ActionRequest>>,
}

impl RecordingSink {
    pub fn accepting<I, S>(types: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        RecordingSink {
            accepted: types.into_iter().map(Into::into).collect(),
            requests: Mutex::default(),
        }
    }

    pub fn take(&self) -> Vec<ActionRequest> {
        std::mem::take(&mut *self.requests.lock())
    }

    pub fn len(&self) -> usize {
        self.requests.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ActionSink for RecordingSink {
    fn dispatch(&self, request: ActionRequest) -> Result<(), ExecError> {
        if !self.accepts(&request.action_type) {
            return Err(ExecError::UnknownActionType(request.action_type));
        }
        self.requests.lock().push(request);
        Ok(())
    }

    fn accepts(&self, action_type: &str) -> bool {
        self.accepted.iter().any(|t| t == action_type)
    }
}
