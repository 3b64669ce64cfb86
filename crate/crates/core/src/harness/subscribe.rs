use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam::channel::bounded;
use futures::StreamExt;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use tokio_tungstenite::tungstenite::Message;

use super::HarnessError;
use crate::mqtt::MqttClient;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MqttExpectation {
    /// `host:port`
    pub broker: String,
    pub topic: String,
    #[serde(default)]
    pub credentials: Option<(String, String)>,
    pub messages: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WebSocketExpectation {
    /// Full endpoint including the client id, e.g. `ws://host:8080/ws?client_id=1`.
    pub url: String,
    pub messages: Vec<String>,
}

/// What each subscriber should receive, in order, and nothing else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expectations {
    #[serde(default)]
    pub mqtt: Vec<MqttExpectation>,
    #[serde(default)]
    pub websocket: Vec<WebSocketExpectation>,
    /// How long to wait for the expected messages.
    pub timeout_seconds: f64,
    /// Extra listening time after the expected messages arrived, to catch
    /// unexpected ones.
    #[serde(default)]
    pub settle_seconds: f64,
}

impl Expectations {
    /// The first experiment: one MQTT publish on `test` and one frame to
    /// client `1`.
    pub fn test1(broker: &str, ws_base: &str) -> Self {
        Expectations {
            mqtt: vec![MqttExpectation {
                broker: broker.to_string(),
                topic: "test".into(),
                credentials: None,
                messages: vec!["control temperature".into()],
            }],
            websocket: vec![WebSocketExpectation {
                url: format!("{}/ws?client_id=1", ws_base.trim_end_matches('/')),
                messages: vec!["rule Matched, temperature is 23.4!".into()],
            }],
            timeout_seconds: 15.0,
            settle_seconds: 2.0,
        }
    }

    pub fn load(path: &str) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| HarnessError::InvalidProfile(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelReport {
    pub name: String,
    pub expected: Vec<String>,
    pub received: Vec<String>,
    pub error: Option<String>,
}

impl ChannelReport {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.expected == self.received
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubscriberReport {
    pub channels: Vec<ChannelReport>,
}

impl SubscriberReport {
    pub fn passed(&self) -> bool {
        self.channels.iter().all(ChannelReport::passed)
    }
}

impl fmt::Display for SubscriberReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.channels {
            writeln!(f, "{} {}", if c.passed() { "PASS" } else { "FAIL" }, c.name)?;
            if c.passed() {
                continue;
            }
            if let Some(e) = &c.error {
                writeln!(f, "  error: {e}")?;
            }
            let n = c.expected.len().max(c.received.len());
            for i in 0..n {
                let (e, r) = (c.expected.get(i), c.received.get(i));
                if e != r {
                    writeln!(f, "  #{i}: expected {e:?}, received {r:?}")?;
                }
            }
        }
        Ok(())
    }
}

struct Channel {
    name: String,
    expected: Vec<String>,
    received: Arc<Mutex<Vec<String>>>,
    error: Arc<Mutex<Option<String>>>,
    thread: JoinHandle<()>,
}

/// Live subscribers. Connect them before triggering anything, then call
/// [`TestSubscribers::finish`].
pub struct TestSubscribers {
    channels: Vec<Channel>,
    stop: Arc<AtomicBool>,
    timeout: Duration,
    settle: Duration,
}

const POLL: Duration = Duration::from_millis(100);

impl TestSubscribers {
    pub fn connect(expectations: &Expectations) -> Result<Self, HarnessError> {
        let stop = Arc::new(AtomicBool::new(false));
        let mut channels = Vec::new();
        let result = (|| {
            for (i, exp) in expectations.mqtt.iter().enumerate() {
                channels.push(spawn_mqtt(i, exp.clone(), Arc::clone(&stop))?);
            }
            for exp in &expectations.websocket {
                channels.push(spawn_websocket(exp.clone(), Arc::clone(&stop))?);
            }
            Ok(())
        })();
        if let Err(e) = result {
            stop.store(true, Ordering::Release);
            for c in channels {
                let _ = c.thread.join();
            }
            return Err(e);
        }
        Ok(TestSubscribers {
            channels,
            stop,
            timeout: Duration::from_secs_f64(expectations.timeout_seconds.max(0.0)),
            settle: Duration::from_secs_f64(expectations.settle_seconds.max(0.0)),
        })
    }

    /// Messages received so far, per subscriber.
    pub fn received(&self) -> Vec<Vec<String>> {
        self.channels
            .iter()
            .map(|c| c.received.lock().clone())
            .collect()
    }

    /// Waits for the expected messages (or the timeout), listens for the
    /// settle period, and compares.
    pub fn finish(self) -> SubscriberReport {
        let deadline = Instant::now() + self.timeout;
        while Instant::now() < deadline
            && self
                .channels
                .iter()
                .any(|c| c.received.lock().len() < c.expected.len() && c.error.lock().is_none())
        {
            std::thread::sleep(Duration::from_millis(20));
        }
        std::thread::sleep(self.settle);
        self.stop.store(true, Ordering::Release);
        let channels = self
            .channels
            .into_iter()
            .map(|c| {
                let _ = c.thread.join();
                let received = c.received.lock().clone();
                let error = c.error.lock().clone();
                ChannelReport {
                    name: c.name,
                    expected: c.expected,
                    received,
                    error,
                }
            })
            .collect();
        SubscriberReport { channels }
    }
}

fn spawn_mqtt(
    i: usize,
    exp: MqttExpectation,
    stop: Arc<AtomicBool>,
) -> Result<Channel, HarnessError> {
    let creds = exp.credentials.clone();
    let mut client = MqttClient::connect(
        exp.broker.as_str(),
        &format!("iotrule-subscriber-{}-{i}", std::process::id()),
        creds.as_ref().map(|(u, p)| (u.as_str(), p.as_str())),
        Duration::from_secs(5),
    )?;
    client.subscribe(&exp.topic, Duration::from_secs(5))?;
    let received = Arc::new(Mutex::new(Vec::new()));
    let error = Arc::new(Mutex::new(None));
    let (r, e) = (Arc::clone(&received), Arc::clone(&error));
    let thread = std::thread::Builder::new()
        .name("mqtt-subscriber".into())
        .spawn(move || {
            while !stop.load(Ordering::Acquire) {
                match client.recv_publish(POLL) {
                    Ok(Some((_, payload))) => r
                        .lock()
                        .push(String::from_utf8_lossy(&payload).into_owned()),
                    Ok(None) => {}
                    Err(err) => {
                        *e.lock() = Some(err.to_string());
                        return;
                    }
                }
            }
            let _ = client.disconnect();
        })?;
    Ok(Channel {
        name: format!("mqtt {} topic {}", exp.broker, exp.topic),
        expected: exp.messages,
        received,
        error,
        thread,
    })
}

fn spawn_websocket(
    exp: WebSocketExpectation,
    stop: Arc<AtomicBool>,
) -> Result<Channel, HarnessError> {
    let received = Arc::new(Mutex::new(Vec::new()));
    let error = Arc::new(Mutex::new(None));
    let (r, e) = (Arc::clone(&received), Arc::clone(&error));
    let (ready_tx, ready_rx) = bounded::<Result<(), String>>(1);
    let url = exp.url.clone();
    let thread = std::thread::Builder::new()
        .name("ws-subscriber".into())
        .spawn(move || {
            let runtime = match tokio::runtime::Builder::new_current_thread()
                .enable_all()
                .build()
            {
                Ok(rt) => rt,
                Err(err) => {
                    let _ = ready_tx.send(Err(err.to_string()));
                    return;
                }
            };
            runtime.block_on(async move {
                let mut socket = match tokio_tungstenite::connect_async(url.as_str()).await {
                    Ok((socket, _)) => {
                        let _ = ready_tx.send(Ok(()));
                        socket
                    }
                    Err(err) => {
                        let _ = ready_tx.send(Err(err.to_string()));
                        return;
                    }
                };
                while !stop.load(Ordering::Acquire) {
                    match tokio::time::timeout(POLL, socket.next()).await {
                        Err(_) => {}
                        Ok(Some(Ok(Message::Text(text)))) => r.lock().push(text),
                        Ok(Some(Ok(Message::Close(_)))) | Ok(None) => {
                            *e.lock() = Some("server closed the connection".into());
                            return;
                        }
                        Ok(Some(Ok(_))) => {}
                        Ok(Some(Err(err))) => {
                            *e.lock() = Some(err.to_string());
                            return;
                        }
                    }
                }
                let _ = socket.close(None).await;
            });
        })?;
    match ready_rx.recv() {
        Ok(Ok(())) => {}
        Ok(Err(message)) => {
            let _ = thread.join();
            return Err(HarnessError::WebSocket(message));
        }
        Err(_) => {
            let _ = thread.join();
            return Err(HarnessError::WebSocket("subscriber thread exited".into()));
        }
    }
    Ok(Channel {
        name: format!("websocket {}", exp.url),
        expected: exp.messages,
        received,
        error,
        thread,
    })
}

/// Connects, waits, and reports in one call.
pub fn run_test_subscribers(expectations: &Expectations) -> Result<SubscriberReport, HarnessError> {
    Ok(TestSubscribers::connect(expectations)?.finish())
}
