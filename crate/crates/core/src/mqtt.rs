//! Minimal MQTT 3.1.1 over TCP: QoS 0 publish/subscribe client and a small
//! in-process broker used by the harness and the tests.

use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use parking_lot::Mutex;

const CONNECT: u8 = 1;
const CONNACK: u8 = 2;
const PUBLISH: u8 = 3;
const SUBSCRIBE: u8 = 8;
const SUBACK: u8 = 9;
const PINGREQ: u8 = 12;
const PINGRESP: u8 = 13;
const DISCONNECT: u8 = 14;

/// A raw control packet: fixed-header type and flags plus the body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub kind: u8,
    pub flags: u8,
    pub body: Vec<u8>,
}

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

fn put_str(buf: &mut Vec<u8>, s: &[u8]) {
    buf.extend_from_slice(&(s.len() as u16).to_be_bytes());
    buf.extend_from_slice(s);
}

fn take_str<'a>(body: &'a [u8], pos: &mut usize) -> io::Result<&'a [u8]> {
    if body.len() < *pos + 2 {
        return Err(invalid("truncated string length"));
    }
    let len = u16::from_be_bytes([body[*pos], body[*pos + 1]]) as usize;
    *pos += 2;
    let s = body
        .get(*pos..*pos + len)
        .ok_or_else(|| invalid("truncated string"))?;
    *pos += len;
    Ok(s)
}

pub fn encode(kind: u8, flags: u8, body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(body.len() + 5);
    out.push((kind << 4) | (flags & 0x0f));
    let mut len = body.len();
    loop {
        let mut byte = (len % 128) as u8;
        len /= 128;
        if len > 0 {
            byte |= 0x80;
        }
        out.push(byte);
        if len == 0 {
            break;
        }
    }
    out.extend_from_slice(body);
    out
}

pub fn read_packet(reader: &mut impl Read) -> io::Result<Packet> {
    let mut first = [0u8; 1];
    reader.read_exact(&mut first)?;
    let mut len = 0usize;
    let mut shift = 0;
    loop {
        let mut b = [0u8; 1];
        reader.read_exact(&mut b)?;
        len |= ((b[0] & 0x7f) as usize) << shift;
        if b[0] & 0x80 == 0 {
            break;
        }
        shift += 7;
        if shift > 21 {
            return Err(invalid("remaining length too long"));
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body)?;
    Ok(Packet {
        kind: first[0] >> 4,
        flags: first[0] & 0x0f,
        body,
    })
}

pub fn connect_packet(
    client_id: &str,
    credentials: Option<(&str, &str)>,
    keep_alive: u16,
) -> Vec<u8> {
    let mut body = Vec::new();
    put_str(&mut body, b"MQTT");
    body.push(4);
    let mut flags = 0x02; // clean session
    if credentials.is_some() {
        flags |= 0x80 | 0x40;
    }
    body.push(flags);
    body.extend_from_slice(&keep_alive.to_be_bytes());
    put_str(&mut body, client_id.as_bytes());
    if let Some((user, password)) = credentials {
        put_str(&mut body, user.as_bytes());
        put_str(&mut body, password.as_bytes());
    }
    encode(CONNECT, 0, &body)
}

pub fn publish_packet(topic: &str, payload: &[u8]) -> Vec<u8> {
    let mut body = Vec::with_capacity(topic.len() + payload.len() + 2);
    put_str(&mut body, topic.as_bytes());
    body.extend_from_slice(payload);
    encode(PUBLISH, 0, &body)
}

pub fn subscribe_packet(packet_id: u16, filter: &str) -> Vec<u8> {
    let mut body = Vec::new();
    body.extend_from_slice(&packet_id.to_be_bytes());
    put_str(&mut body, filter.as_bytes());
    body.push(0);
    encode(SUBSCRIBE, 0x02, &body)
}

/// Topic and payload of a QoS 0 PUBLISH body.
pub fn parse_publish(packet: &Packet) -> io::Result<(String, Vec<u8>)> {
    let mut pos = 0;
    let topic = take_str(&packet.body, &mut pos)?;
    let qos = (packet.flags >> 1) & 0x03;
    if qos > 0 {
        pos += 2;
    }
    let topic = String::from_utf8(topic.to_vec()).map_err(|_| invalid("topic is not UTF-8"))?;
    Ok((topic, packet.body.get(pos..).unwrap_or_default().to_vec()))
}

/// MQTT topic filter matching with `+` and `#` wildcards.
pub fn topic_matches(filter: &str, topic: &str) -> bool {
    let mut f = filter.split('/');
    let mut t = topic.split('/');
    loop {
        match (f.next(), t.next()) {
            (Some("#"), _) => return true,
            (Some("+"), Some(_)) => {}
            (Some(a), Some(b)) if a == b => {}
            (None, None) => return true,
            _ => return false,
        }
    }
}

/// A blocking QoS 0 client.
pub struct MqttClient {
    stream: TcpStream,
    next_packet_id: u16,
}

impl MqttClient {
    pub fn connect(
        addr: impl ToSocketAddrs,
        client_id: &str,
        credentials: Option<(&str, &str)>,
        timeout: Duration,
    ) -> io::Result<Self> {
        let mut last_err = io::Error::new(io::ErrorKind::NotFound, "address did not resolve");
        for candidate in addr.to_socket_addrs()? {
            match TcpStream::connect_timeout(&candidate, timeout) {
                Ok(mut stream) => {
                    stream.set_nodelay(true)?;
                    stream.set_read_timeout(Some(timeout))?;
                    stream.set_write_timeout(Some(timeout))?;
                    stream.write_all(&connect_packet(client_id, credentials, 0))?;
                    let ack = read_packet(&mut stream)?;
                    if ack.kind != CONNACK || ack.body.len() != 2 {
                        return Err(invalid("expected CONNACK"));
                    }
                    if ack.body[1] != 0 {
                        return Err(io::Error::new(
                            io::ErrorKind::PermissionDenied,
                            format!("connection refused, return code {}", ack.body[1]),
                        ));
                    }
                    stream.set_read_timeout(None)?;
                    return Ok(MqttClient {
                        stream,
                        next_packet_id: 1,
                    });
                }
                Err(e) => last_err = e,
            }
        }
        Err(last_err)
    }

    /// False once the broker has closed the connection.
    pub fn is_alive(&self) -> bool {
        if self.stream.set_nonblocking(true).is_err() {
            return false;
        }
        let mut probe = [0u8; 1];
        let alive = match self.stream.peek(&mut probe) {
            Ok(0) => false,
            Ok(_) => true,
            Err(e) => e.kind() == io::ErrorKind::WouldBlock,
        };
        let _ = self.stream.set_nonblocking(false);
        alive
    }

    pub fn publish(&mut self, topic: &str, payload: &[u8]) -> io::Result<()> {
        if !self.is_alive() {
            return Err(io::Error::new(
                io::ErrorKind::BrokenPipe,
                "broker closed the connection",
            ));
        }
        self.stream.write_all(&publish_packet(topic, payload))
    }

    pub fn subscribe(&mut self, filter: &str, timeout: Duration) -> io::Result<()> {
        let id = self.next_packet_id;
        self.next_packet_id = self.next_packet_id.wrapping_add(1).max(1);
        self.stream.write_all(&subscribe_packet(id, filter))?;
        self.stream.set_read_timeout(Some(timeout))?;
        let ack = read_packet(&mut self.stream)?;
        self.stream.set_read_timeout(None)?;
        if ack.kind != SUBACK {
            return Err(invalid("expected SUBACK"));
        }
        Ok(())
    }

    /// Waits up to `timeout` for the next PUBLISH. `Ok(None)` on timeout.
    pub fn recv_publish(&mut self, timeout: Duration) -> io::Result<Option<(String, Vec<u8>)>> {
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Ok(None);
            }
            self.stream.set_read_timeout(Some(left))?;
            match read_packet(&mut self.stream) {
                Ok(p) if p.kind == PUBLISH => return parse_publish(&p).map(Some),
                Ok(_) => continue,
                Err(e)
                    if matches!(
                        e.kind(),
                        io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut
                    ) =>
                {
                    return Ok(None)
                }
                Err(e) => return Err(e),
            }
        }
    }

    pub fn disconnect(mut self) -> io::Result<()> {
        self.stream.write_all(&encode(DISCONNECT, 0, &[]))
    }
}

/// A message the broker accepted from a publisher.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReceivedPublish {
    pub client_id: String,
    pub topic: String,
    pub payload: Vec<u8>,
}

impl ReceivedPublish {
    pub fn payload_str(&self) -> String {
        String::from_utf8_lossy(&self.payload).into_owned()
    }
}

struct Subscription {
    connection: u64,
    filter: String,
    writer: Arc<Mutex<TcpStream>>,
}

#[derive(Default)]
struct BrokerState {
    subscriptions: Mutex<Vec<Subscription>>,
    received: Mutex<Vec<ReceivedPublish>>,
    connections: Mutex<Vec<(u64, TcpStream)>>,
    credentials: Option<(String, String)>,
}

/// A tiny QoS 0 broker: CONNECT, SUBSCRIBE, PUBLISH fan-out, PING.
pub struct MiniBroker {
    addr: SocketAddr,
    state: Arc<BrokerState>,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl MiniBroker {
    pub fn bind(addr: impl ToSocketAddrs) -> io::Result<Self> {
        Self::bind_with_credentials(addr, None)
    }

    /// Only clients presenting exactly these credentials are accepted.
    pub fn bind_with_credentials(
        addr: impl ToSocketAddrs,
        credentials: Option<(&str, &str)>,
    ) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let state = Arc::new(BrokerState {
            credentials: credentials.map(|(u, p)| (u.to_string(), p.to_string())),
            ..BrokerState::default()
        });
        let stop = Arc::new(AtomicBool::new(false));
        let accept = {
            let state = Arc::clone(&state);
            let stop = Arc::clone(&stop);
            std::thread::Builder::new()
                .name("mqtt-broker".into())
                .spawn(move || accept_loop(listener, state, stop))?
        };
        Ok(MiniBroker {
            addr,
            state,
            stop,
            accept: Some(accept),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Every PUBLISH received so far, in arrival order.
    pub fn received(&self) -> Vec<ReceivedPublish> {
        self.state.received.lock().clone()
    }

    pub fn received_on(&self, topic: &str) -> Vec<String> {
        self.state
            .received
            .lock()
            .iter()
            .filter(|p| p.topic == topic)
            .map(ReceivedPublish::payload_str)
            .collect()
    }

    pub fn shutdown(&mut self) {
        if self.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        let _ = TcpStream::connect(self.addr);
        for (_, stream) in self.state.connections.lock().drain(..) {
            let _ = stream.shutdown(Shutdown::Both);
        }
        if let Some(handle) = self.accept.take() {
            let _ = handle.join();
        }
    }
}

impl Drop for MiniBroker {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn accept_loop(listener: TcpListener, state: Arc<BrokerState>, stop: Arc<AtomicBool>) {
    let ids = AtomicU64::new(1);
    for stream in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let Ok(stream) = stream else { continue };
        let id = ids.fetch_add(1, Ordering::Relaxed);
        if let Ok(clone) = stream.try_clone() {
            state.connections.lock().push((id, clone));
        }
        let state = Arc::clone(&state);
        let _ = std::thread::Builder::new()
            .name(format!("mqtt-broker-conn-{id}"))
            .spawn(move || {
                if let Err(e) = serve_connection(id, stream, &state) {
                    log::debug!("broker connection {id} ended: {e}");
                }
                state.subscriptions.lock().retain(|s| s.connection != id);
                state.connections.lock().retain(|(c, _)| *c != id);
            });
    }
}

fn serve_connection(id: u64, mut stream: TcpStream, state: &BrokerState) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let writer = Arc::new(Mutex::new(stream.try_clone()?));
    let connect = read_packet(&mut stream)?;
    if connect.kind != CONNECT {
        return Err(invalid("first packet must be CONNECT"));
    }
    let (client_id, credentials) = parse_connect(&connect.body)?;
    let accepted = match (&state.credentials, &credentials) {
        (None, _) => true,
        (Some(expected), Some(given)) => expected == given,
        (Some(_), None) => false,
    };
    let code = if accepted { 0 } else { 5 };
    writer.lock().write_all(&encode(CONNACK, 0, &[0, code]))?;
    if !accepted {
        return Ok(());
    }
    loop {
        let packet = read_packet(&mut stream)?;
        match packet.kind {
            PUBLISH => {
                let (topic, payload) = parse_publish(&packet)?;
                state.received.lock().push(ReceivedPublish {
                    client_id: client_id.clone(),
                    topic: topic.clone(),
                    payload: payload.clone(),
                });
                let out = publish_packet(&topic, &payload);
                let targets: Vec<Arc<Mutex<TcpStream>>> = state
                    .subscriptions
                    .lock()
                    .iter()
                    .filter(|s| topic_matches(&s.filter, &topic))
                    .map(|s| Arc::clone(&s.writer))
                    .collect();
                for target in targets {
                    let _ = target.lock().write_all(&out);
                }
            }
            SUBSCRIBE => {
                let packet_id = packet
                    .body
                    .get(..2)
                    .ok_or_else(|| invalid("truncated SUBSCRIBE"))?
                    .to_vec();
                let mut pos = 2;
                let mut codes = Vec::new();
                while pos < packet.body.len() {
                    let filter =
                        String::from_utf8_lossy(take_str(&packet.body, &mut pos)?).into_owned();
                    pos += 1;
                    state.subscriptions.lock().push(Subscription {
                        connection: id,
                        filter,
                        writer: Arc::clone(&writer),
                    });
                    codes.push(0);
                }
                let mut body = packet_id;
                body.extend(codes);
                writer.lock().write_all(&encode(SUBACK, 0, &body))?;
            }
            PINGREQ => writer.lock().write_all(&encode(PINGRESP, 0, &[]))?,
            DISCONNECT => return Ok(()),
            _ => {}
        }
    }
}

fn parse_connect(body: &[u8]) -> io::Result<(String, Option<(String, String)>)> {
    let mut pos = 0;
    let protocol = take_str(body, &mut pos)?;
    if protocol != b"MQTT" {
        return Err(invalid("unsupported protocol name"));
    }
    let flags = *body
        .get(pos + 1)
        .ok_or_else(|| invalid("truncated CONNECT"))?;
    pos += 4; // level, flags, keep-alive
    let client_id = String::from_utf8_lossy(take_str(body, &mut pos)?).into_owned();
    if flags & 0x04 != 0 {
        take_str(body, &mut pos)?;
        take_str(body, &mut pos)?;
    }
    let credentials = if flags & 0x80 != 0 {
        let user = String::from_utf8_lossy(take_str(body, &mut pos)?).into_owned();
        let password = if flags & 0x40 != 0 {
            String::from_utf8_lossy(take_str(body, &mut pos)?).into_owned()
        } else {
            String::new()
        };
        Some((user, password))
    } else {
        None
    };
    Ok((client_id, credentials))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn remaining_length_encoding() {
        let big = vec![7u8; 200];
        let encoded = encode(PUBLISH, 0, &big);
        assert_eq!(&encoded[..3], &[0x30, 0xc8, 0x01]);
        let packet = read_packet(&mut encoded.as_slice()).unwrap();
        assert_eq!(packet.body, big);
    }

    #[test]
    fn publish_round_trip() {
        let bytes = publish_packet("test", b"control temperature");
        let packet = read_packet(&mut bytes.as_slice()).unwrap();
        assert_eq!(
            parse_publish(&packet).unwrap(),
            ("test".to_string(), b"control temperature".to_vec())
        );
    }

    #[test]
    fn connect_fields() {
        let bytes = connect_packet("cid", Some(("admin", "emqx@123456")), 0);
        let packet = read_packet(&mut bytes.as_slice()).unwrap();
        assert_eq!(packet.kind, CONNECT);
        let (id, creds) = parse_connect(&packet.body).unwrap();
        assert_eq!(id, "cid");
        assert_eq!(creds, Some(("admin".into(), "emqx@123456".into())));
    }

    #[test]
    fn wildcards() {
        assert!(topic_matches("test", "test"));
        assert!(topic_matches("#", "a/b"));
        assert!(topic_matches("a/+/c", "a/b/c"));
        assert!(!topic_matches("a/+", "a/b/c"));
        assert!(!topic_matches("test", "command"));
    }

    #[test]
    fn broker_fan_out() {
        let broker = MiniBroker::bind("127.0.0.1:0").unwrap();
        let timeout = Duration::from_secs(2);
        let mut sub = MqttClient::connect(broker.local_addr(), "sub", None, timeout).unwrap();
        sub.subscribe("test", timeout).unwrap();
        let mut publisher =
            MqttClient::connect(broker.local_addr(), "pub", Some(("u", "p")), timeout).unwrap();
        publisher.publish("test", b"hello").unwrap();
        publisher.publish("other", b"ignored").unwrap();
        let got = sub.recv_publish(timeout).unwrap().unwrap();
        assert_eq!(got, ("test".into(), b"hello".to_vec()));
        assert_eq!(sub.recv_publish(Duration::from_millis(200)).unwrap(), None);
        std::thread::sleep(Duration::from_millis(50));
        assert_eq!(broker.received().len(), 2);
        assert_eq!(broker.received_on("test"), vec!["hello".to_string()]);
    }

    #[test]
    fn broker_checks_credentials() {
        let broker =
            MiniBroker::bind_with_credentials("127.0.0.1:0", Some(("admin", "secret"))).unwrap();
        let t = Duration::from_secs(2);
        assert!(
            MqttClient::connect(broker.local_addr(), "a", Some(("admin", "wrong")), t).is_err()
        );
        assert!(
            MqttClient::connect(broker.local_addr(), "b", Some(("admin", "secret")), t).is_ok()
        );
    }
}
