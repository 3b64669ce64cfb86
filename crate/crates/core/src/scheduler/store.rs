//! Rule database backends.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsb::RuleId;
use crate::dsl::RuleText;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt record on line {line}: {message}")]
    Corrupt { line: usize, message: String },
}

/// Lifecycle state of a stored rule. A rule that is not stored is
/// "undefined".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleState {
    Inactive,
    Scheduled,
    Active,
}

impl fmt::Display for RuleState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RuleState::Inactive => "inactive",
            RuleState::Scheduled => "scheduled",
            RuleState::Active => "active",
        })
    }
}

/// How a started rule is triggered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerMode {
    /// Evaluate every period.
    #[default]
    Periodic,
    /// Evaluate every period, but only when some datasource has new data.
    PeriodicDedup,
    /// Evaluate as soon as every datasource has pushed fresh data.
    Push,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleRecord {
    pub rid: RuleId,
    pub name: String,
    pub datasource: String,
    pub condition: String,
    pub action: String,
    pub state: RuleState,
    pub period_seconds: u64,
    pub trigger_mode: TriggerMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fire_at: Option<DateTime<Utc>>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

impl RuleRecord {
    pub fn text(&self) -> RuleText {
        RuleText::new(&self.datasource, &self.condition, &self.action)
    }
}

/// Persistent storage of rule records. Implementations must tolerate
/// concurrent writers working on different rids.
pub trait RuleStore: Send + Sync {
    fn allocate_rid(&self) -> Result<RuleId, StoreError>;
    fn put(&self, record: &RuleRecord) -> Result<(), StoreError>;
    fn get(&self, rid: RuleId) -> Result<Option<RuleRecord>, StoreError>;
    fn remove(&self, rid: RuleId) -> Result<bool, StoreError>;
    fn list(&self) -> Result<Vec<RuleRecord>, StoreError>;
}

#[derive(Default)]
pub struct InMemoryStore {
    records: RwLock<BTreeMap<RuleId, RuleRecord>>,
    next: AtomicU64,
}

impl InMemoryStore {
    pub fn new() -> Self {
        InMemoryStore {
            records: RwLock::default(),
            next: AtomicU64::new(1),
        }
    }
}

impl RuleStore for InMemoryStore {
    fn allocate_rid(&self) -> Result<RuleId, StoreError> {
        Ok(self.next.fetch_add(1, Ordering::SeqCst).max(1))
    }

    fn put(&self, record: &RuleRecord) -> Result<(), StoreError> {
        self.records.write().insert(record.rid, record.clone());
        Ok(())
    }

    fn get(&self, rid: RuleId) -> Result<Option<RuleRecord>, StoreError> {
        Ok(self.records.read().get(&rid).cloned())
    }

    fn remove(&self, rid: RuleId) -> Result<bool, StoreError> {
        Ok(self.records.write().remove(&rid).is_some())
    }

    fn list(&self) -> Result<Vec<RuleRecord>, StoreError> {
        Ok(self.records.read().values().cloned().collect())
    }
}

/// One line of the file store's log.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
enum LogLine {
    Meta { next_rid: RuleId },
    Put { record: RuleRecord },
    Delete { rid: RuleId },
}

/// Single-file store: an append-only log of JSON lines (`put`, `delete`,
/// and a leading `meta` line carrying the rid counter). The log is
/// compacted to one `put` per live rule every time the file is opened.
pub struct FileStore {
    path: PathBuf,
    records: RwLock<BTreeMap<RuleId, RuleRecord>>,
    writer: Mutex<BufWriter<File>>,
    next: AtomicU64,
}

impl FileStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let mut records = BTreeMap::new();
        let mut next: RuleId = 1;
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let parsed: LogLine =
                    serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
                        line: n + 1,
                        message: e.to_string(),
                    })?;
                match parsed {
                    LogLine::Meta { next_rid } => next = next.max(next_rid),
                    LogLine::Put { record } => {
                        next = next.max(record.rid + 1);
                        records.insert(record.rid, record);
                    }
                    LogLine::Delete { rid } => {
                        next = next.max(rid + 1);
                        records.remove(&rid);
                    }
                }
            }
        }
        let tmp = path.with_extension("compact");
        {
            let mut out = BufWriter::new(File::create(&tmp)?);
            write_line(&mut out, &LogLine::Meta { next_rid: next })?;
            for record in records.values() {
                write_line(
                    &mut out,
                    &LogLine::Put {
                        record: record.clone(),
                    },
                )?;
            }
            out.flush()?;
            out.get_ref().sync_all()?;
        }
        std::fs::rename(&tmp, &path)?;
        let file = OpenOptions::new().append(true).open(&path)?;
        Ok(FileStore {
            path,
            records: RwLock::new(records),
            writer: Mutex::new(BufWriter::new(file)),
            next: AtomicU64::new(next),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn append(&self, line: &LogLine) -> Result<(), StoreError> {
        let mut writer = self.writer.lock();
        write_line(&mut *writer, line)?;
        writer.flush()?;
        Ok(())
    }
}

fn write_line(out: &mut impl Write, line: &LogLine) -> Result<(), StoreError> {
    let json = serde_json::to_string(line).map_err(|e| StoreError::Io(e.into()))?;
    out.write_all(json.as_bytes())?;
    out.write_all(b"\n")?;
    Ok(())
}

impl RuleStore for FileStore {
    fn allocate_rid(&self) -> Result<RuleId, StoreError> {
        let rid = self.next.fetch_add(1, Ordering::SeqCst);
        self.append(&LogLine::Meta { next_rid: rid + 1 })?;
        Ok(rid)
    }

    fn put(&self, record: &RuleRecord) -> Result<(), StoreError> {
        self.append(&LogLine::Put {
            record: record.clone(),
        })?;
        self.records.write().insert(record.rid, record.clone());
        Ok(())
    }

    fn get(&self, rid: RuleId) -> Result<Option<RuleRecord>, StoreError> {
        Ok(self.records.read().get(&rid).cloned())
    }

    fn remove(&self, rid: RuleId) -> Result<bool, StoreError> {
        if !self.records.read().contains_key(&rid) {
            return Ok(false);
        }
        self.append(&LogLine::Delete { rid })?;
        Ok(self.records.write().remove(&rid).is_some())
    }

    fn list(&self) -> Result<Vec<RuleRecord>, StoreError> {
        Ok(self.records.read().values().cloned().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(rid: RuleId, state: RuleState) -> RuleRecord {
        let now = Utc::now();
        RuleRecord {
            rid,
            name: format!("rule {rid}"),
            datasource: "tem{1, Portable, temperature}".into(),
            condition: "tem > 22.1".into(),
            action: "Log: $tem".into(),
            state,
            period_seconds: 5,
            trigger_mode: TriggerMode::Periodic,
            fire_at: None,
            created_at: now,
            updated_at: now,
        }
    }

    fn exercise(store: &dyn RuleStore) {
        let a = store.allocate_rid().unwrap();
        let b = store.allocate_rid().unwrap();
        assert_ne!(a, b);
        store.put(&record(a, RuleState::Inactive)).unwrap();
        store.put(&record(b, RuleState::Active)).unwrap();
        assert_eq!(store.get(a).unwrap().unwrap().state, RuleState::Inactive);
        assert_eq!(store.list().unwrap().len(), 2);
        assert!(store.remove(a).unwrap());
        assert!(!store.remove(a).unwrap());
        assert_eq!(store.get(a).unwrap(), None);
    }

    #[test]
    fn in_memory_store() {
        exercise(&InMemoryStore::new());
    }

    #[test]
    fn file_store_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rules.db");
        let (kept, gone);
        {
            let store = FileStore::open(&path).unwrap();
            exercise(&store);
            kept = store.list().unwrap()[0].clone();
            gone = store.allocate_rid().unwrap();
            store.put(&record(gone, RuleState::Inactive)).unwrap();
            store.remove(gone).unwrap();
        }
        let reopened = FileStore::open(&path).unwrap();
        assert_eq!(reopened.list().unwrap(), vec![kept.clone()]);
        // rids are never reused, even for deleted rules
        assert!(reopened.allocate_rid().unwrap() > gone);
        // compaction leaves meta + one put
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().count() <= 3);
        assert!(text.contains("\"state\":\"active\""));
    }

    #[test]
    fn corrupt_line_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rules.db");
        std::fs::write(&path, "{\"op\":\"meta\",\"next_rid\":3}\nnot json\n").unwrap();
        assert!(matches!(
            FileStore::open(&path),
            Err(StoreError::Corrupt { line: 2, .. })
        ));
    }
}
