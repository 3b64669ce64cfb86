use std::sync::atomic::{AtomicU64, Ordering};

use dashmap::DashMap;
use tokio::sync::mpsc::{unbounded_channel, UnboundedReceiver, UnboundedSender};

/// Identifies one live connection of a client.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConnectionId(u64);

/// client_id → live WebSocket connection. A new connection under an
/// existing id replaces the old one, whose outbound channel is closed.
#[derive(Default)]
pub struct ClientRegistry {
    clients: DashMap<String, (ConnectionId, UnboundedSender<String>)>,
    next_id: AtomicU64,
    delivered: AtomicU64,
    dropped: AtomicU64,
}

impl ClientRegistry {
    pub fn new() -> Self {
        ClientRegistry::default()
    }

    /// Registers a connection and returns the receiving end of its
    /// outbound text frames.
    pub fn connect(&self, client_id: &str) -> (ConnectionId, UnboundedReceiver<String>) {
        let id = ConnectionId(self.next_id.fetch_add(1, Ordering::Relaxed));
        let (tx, rx) = unbounded_channel();
        self.clients.insert(client_id.to_string(), (id, tx));
        (id, rx)
    }

    /// Removes the entry if it still belongs to `connection`.
    pub fn disconnect(&self, client_id: &str, connection: ConnectionId) {
        self.clients
            .remove_if(client_id, |_, (id, _)| *id == connection);
    }

    /// Queues a frame for `client_id`. False if the client is not connected.
    pub fn send(&self, client_id: &str, message: String) -> bool {
        let sent = self
            .clients
            .get(client_id)
            .map(|entry| entry.value().1.send(message).is_ok())
            .unwrap_or(false);
        if sent {
            self.delivered.fetch_add(1, Ordering::Relaxed);
        } else {
            self.dropped.fetch_add(1, Ordering::Relaxed);
        }
        sent
    }

    pub fn is_connected(&self, client_id: &str) -> bool {
        self.clients
            .get(client_id)
            .is_some_and(|e| !e.value().1.is_closed())
    }

    pub fn len(&self) -> usize {
        self.clients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clients.is_empty()
    }

    pub fn delivered(&self) -> u64 {
        self.delivered.load(Ordering::Relaxed)
    }

    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }
}
