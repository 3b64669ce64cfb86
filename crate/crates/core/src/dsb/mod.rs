//! Datasource cache: latest value per [`Index`], reference counted by the
//! rules that read it, with a Bloom-filter front gate for ingestion and
//! optional push subscriptions.

mod bloom;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crossbeam::channel::Sender;
use dashmap::mapref::entry::Entry as MapEntry;
use dashmap::DashMap;
use parking_lot::{Mutex, RwLock};
use thiserror::Error;

pub use bloom::{BloomFilter, DEFAULT_BITS, DEFAULT_HASHES};

use crate::dsl::Index;

pub type RuleId = u64;

/// Default capacity of a push-mode subscriber queue.
pub const DEFAULT_SUBSCRIBER_CAPACITY: usize = 1024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DsbError {
    #[error("unknown datasource {0}")]
    UnknownDatasource(Index),
}

#[derive(Debug, Clone, Copy)]
pub struct DsbConfig {
    pub filter_bits: usize,
    pub filter_hashes: u32,
}

impl Default for DsbConfig {
    fn default() -> Self {
        DsbConfig {
            filter_bits: DEFAULT_BITS,
            filter_hashes: DEFAULT_HASHES,
        }
    }
}

/// Result of [`Dsb::update`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateOutcome {
    Applied(u64),
    NotRegistered,
}

/// Result of [`Dsb::get`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lookup {
    Absent,
    /// Registered, but no update has arrived yet.
    NoDataYet,
    Value {
        value: f64,
        session: u64,
    },
}

/// What a push subscriber receives for every applied update.
#[derive(Debug, Clone, PartialEq)]
pub struct PushMessage {
    pub index: Arc<Index>,
    pub value: f64,
    pub session: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct DsbStats {
    pub entries: usize,
    pub probes: u64,
    pub updates_applied: u64,
    pub filter_rebuilds: u64,
    pub stale_filter_keys: usize,
}

struct EntryState {
    reference: usize,
    data: Option<f64>,
    session: u64,
    subscribers: Vec<(RuleId, Sender<PushMessage>)>,
    removed: bool,
}

struct Entry {
    index: Arc<Index>,
    state: Mutex<EntryState>,
}

impl Entry {
    fn new(index: Index) -> Arc<Self> {
        Arc::new(Entry {
            index: Arc::new(index),
            state: Mutex::new(EntryState {
                reference: 1,
                data: None,
                session: 0,
                subscribers: Vec::new(),
                removed: false,
            }),
        })
    }
}

struct FilterState {
    bloom: BloomFilter,
    /// keys removed from the cache since the filter was last rebuilt
    stale: usize,
}

/// The global datasource cache.
pub struct Dsb {
    entries: DashMap<Index, Arc<Entry>>,
    filter: RwLock<FilterState>,
    config: DsbConfig,
    probes: AtomicU64,
    applied: AtomicU64,
    rebuilds: AtomicU64,
}

impl Default for Dsb {
    fn default() -> Self {
        Dsb::new(DsbConfig::default())
    }
}

impl Dsb {
    pub fn new(config: DsbConfig) -> Self {
        Dsb {
            entries: DashMap::new(),
            filter: RwLock::new(FilterState {
                bloom: BloomFilter::new(config.filter_bits, config.filter_hashes),
                stale: 0,
            }),
            config,
            probes: AtomicU64::new(0),
            applied: AtomicU64::new(0),
            rebuilds: AtomicU64::new(0),
        }
    }

    /// Adds one reference to `index`, creating the entry if needed.
    pub fn register(&self, index: &Index) {
        match self.entries.entry(index.clone()) {
            MapEntry::Occupied(mut occupied) => {
                let fresh = {
                    let mut state = occupied.get().state.lock();
                    if state.removed {
                        true
                    } else {
                        state.reference += 1;
                        false
                    }
                };
                if fresh {
                    occupied.insert(Entry::new(index.clone()));
                }
            }
            MapEntry::Vacant(vacant) => {
                vacant.insert(Entry::new(index.clone()));
            }
        }
        self.filter.write().bloom.insert(&index.filter_key());
    }

    /// Drops one reference; the entry disappears when none remain.
    pub fn unregister(&self, index: &Index) -> Result<(), DsbError> {
        let entry = self
            .entries
            .get(index)
            .map(|e| Arc::clone(e.value()))
            .ok_or_else(|| DsbError::UnknownDatasource(index.clone()))?;
        let emptied = {
            let mut state = entry.state.lock();
            if state.removed {
                return Err(DsbError::UnknownDatasource(index.clone()));
            }
            state.reference -= 1;
            if state.reference == 0 {
                state.removed = true;
                state.subscribers.clear();
                true
            } else {
                false
            }
        };
        if emptied {
            self.entries
                .remove_if(index, |_, current| Arc::ptr_eq(current, &entry));
            self.note_removed_key();
        }
        Ok(())
    }

    fn note_removed_key(&self) {
        let mut filter = self.filter.write();
        filter.stale += 1;
        if filter.stale > self.entries.len() {
            let mut bloom = BloomFilter::new(self.config.filter_bits, self.config.filter_hashes);
            for entry in self.entries.iter() {
                bloom.insert(&entry.key().filter_key());
            }
            filter.bloom = bloom;
            filter.stale = 0;
            self.rebuilds.fetch_add(1, Ordering::Relaxed);
        }
    }

    /// Bloom gate: false means `key` is definitely not registered.
    pub fn maybe_relevant(&self, key: &str) -> bool {
        self.filter.read().bloom.contains(key)
    }

    /// Stores a new value. Push subscribers receive a copy, in session
    /// order; a full subscriber queue blocks the caller.
    pub fn update(&self, index: &Index, value: f64) -> UpdateOutcome {
        self.probes.fetch_add(1, Ordering::Relaxed);
        let Some(entry) = self.entries.get(index).map(|e| Arc::clone(e.value())) else {
            return UpdateOutcome::NotRegistered;
        };
        let mut state = entry.state.lock();
        if state.removed {
            return UpdateOutcome::NotRegistered;
        }
        state.data = Some(value);
        state.session += 1;
        let session = state.session;
        for (_, queue) in &state.subscribers {
            // a disconnected queue belongs to a push loop that is shutting down
            let _ = queue.send(PushMessage {
                index: Arc::clone(&entry.index),
                value,
                session,
            });
        }
        self.applied.fetch_add(1, Ordering::Relaxed);
        UpdateOutcome::Applied(session)
    }

    pub fn get(&self, index: &Index) -> Lookup {
        let Some(entry) = self.entries.get(index).map(|e| Arc::clone(e.value())) else {
            return Lookup::Absent;
        };
        let state = entry.state.lock();
        match (state.removed, state.data) {
            (true, _) => Lookup::Absent,
            (false, None) => Lookup::NoDataYet,
            (false, Some(value)) => Lookup::Value {
                value,
                session: state.session,
            },
        }
    }

    pub fn subscribe(
        &self,
        index: &Index,
        rule: RuleId,
        queue: Sender<PushMessage>,
    ) -> Result<(), DsbError> {
        let entry = self.live_entry(index)?;
        let mut state = entry.state.lock();
        if state.removed {
            return Err(DsbError::UnknownDatasource(index.clone()));
        }
        state.subscribers.retain(|(r, _)| *r != rule);
        state.subscribers.push((rule, queue));
        Ok(())
    }

    pub fn unsubscribe(&self, index: &Index, rule: RuleId) -> Result<(), DsbError> {
        let entry = self.live_entry(index)?;
        let mut state = entry.state.lock();
        if state.removed {
            return Err(DsbError::UnknownDatasource(index.clone()));
        }
        state.subscribers.retain(|(r, _)| *r != rule);
        Ok(())
    }

    fn live_entry(&self, index: &Index) -> Result<Arc<Entry>, DsbError> {
        self.entries
            .get(index)
            .map(|e| Arc::clone(e.value()))
            .ok_or_else(|| DsbError::UnknownDatasource(index.clone()))
    }

    /// Current reference count, `None` if the entry does not exist.
    pub fn reference(&self, index: &Index) -> Option<usize> {
        let entry = self.entries.get(index).map(|e| Arc::clone(e.value()))?;
        let state = entry.state.lock();
        (!state.removed).then_some(state.reference)
    }

    pub fn subscriber_count(&self, index: &Index) -> usize {
        self.entries
            .get(index)
            .map(|e| Arc::clone(e.value()))
            .map(|e| e.state.lock().subscribers.len())
            .unwrap_or(0)
    }

    /// Snapshot of every live entry's reference count.
    pub fn references(&self) -> HashMap<Index, usize> {
        let entries: Vec<Arc<Entry>> = self.entries.iter().map(|e| Arc::clone(e.value())).collect();
        entries
            .into_iter()
            .filter_map(|e| {
                let state = e.state.lock();
                (!state.removed).then(|| ((*e.index).clone(), state.reference))
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn stats(&self) -> DsbStats {
        DsbStats {
            entries: self.entries.len(),
            probes: self.probes.load(Ordering::Relaxed),
            updates_applied: self.applied.load(Ordering::Relaxed),
            filter_rebuilds: self.rebuilds.load(Ordering::Relaxed),
            stale_filter_keys: self.filter.read().stale,
        }
    }
}
