//! The periodic engine: one ticker thread and a pool of workers invoking
//! registered jobs once per period.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam::channel::{unbounded, Receiver, Sender};
use parking_lot::Mutex;

pub const DEFAULT_TICK: Duration = Duration::from_millis(100);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntryId(u64);

type Job = Box<dyn FnMut() + Send>;

struct Entry {
    period: Duration,
    next_fire: Mutex<Instant>,
    job: Mutex<Job>,
    running: AtomicBool,
    cancelled: AtomicBool,
    invocations: AtomicU64,
    skips: AtomicU64,
}

struct Inner {
    entries: Mutex<HashMap<EntryId, Arc<Entry>>>,
    next_id: AtomicU64,
    stop: AtomicBool,
    tick: Duration,
}

/// Invokes each job every `period`, at most one invocation per job at a
/// time. A firing that comes due while the previous run is still going is
/// skipped and counted.
pub struct PeriodicEngine {
    inner: Arc<Inner>,
    threads: Mutex<Vec<JoinHandle<()>>>,
}

impl PeriodicEngine {
    pub fn start(tick: Duration, workers: usize) -> Self {
        let inner = Arc::new(Inner {
            entries: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
            stop: AtomicBool::new(false),
            tick: tick.max(Duration::from_millis(1)),
        });
        let (tx, rx) = unbounded::<Arc<Entry>>();
        let mut threads = Vec::new();
        for n in 0..workers.max(1) {
            let rx = rx.clone();
            threads.push(
                std::thread::Builder::new()
                    .name(format!("matcher-{n}"))
                    .spawn(move || worker_loop(rx))
                    .expect("spawn matcher worker"),
            );
        }
        let ticker = {
            let inner = Arc::clone(&inner);
            std::thread::Builder::new()
                .name("matcher-tick".into())
                .spawn(move || tick_loop(inner, tx))
                .expect("spawn ticker")
        };
        threads.push(ticker);
        PeriodicEngine {
            inner,
            threads: Mutex::new(threads),
        }
    }

    pub fn tick(&self) -> Duration {
        self.inner.tick
    }

    /// Adds a job; the first invocation comes one period from now.
    pub fn add(&self, period: Duration, job: impl FnMut() + Send + 'static) -> EntryId {
        let period = period.max(self.inner.tick);
        let id = EntryId(self.inner.next_id.fetch_add(1, Ordering::Relaxed));
        let entry = Arc::new(Entry {
            period,
            next_fire: Mutex::new(Instant::now() + period),
            job: Mutex::new(Box::new(job)),
            running: AtomicBool::new(false),
            cancelled: AtomicBool::new(false),
            invocations: AtomicU64::new(0),
            skips: AtomicU64::new(0),
        });
        self.inner.entries.lock().insert(id, entry);
        id
    }

    /// Removes a job and waits for an in-flight invocation to finish, so no
    /// invocation happens after this returns.
    pub fn remove(&self, id: EntryId) -> bool {
        let Some(entry) = self.inner.entries.lock().remove(&id) else {
            return false;
        };
        entry.cancelled.store(true, Ordering::SeqCst);
        while entry.running.load(Ordering::SeqCst) {
            std::thread::sleep(Duration::from_millis(1));
        }
        true
    }

    pub fn contains(&self, id: EntryId) -> bool {
        self.inner.entries.lock().contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.inner.entries.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// (invocations, overrun skips) for a job.
    pub fn counters(&self, id: EntryId) -> Option<(u64, u64)> {
        self.inner.entries.lock().get(&id).map(|e| {
            (
                e.invocations.load(Ordering::Relaxed),
                e.skips.load(Ordering::Relaxed),
            )
        })
    }

    pub fn shutdown(&self) {
        if self.inner.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        for handle in self.threads.lock().drain(..) {
            let _ = handle.join();
        }
    }
}

impl Drop for PeriodicEngine {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn tick_loop(inner: Arc<Inner>, jobs: Sender<Arc<Entry>>) {
    let mut next_tick = Instant::now() + inner.tick;
    let mut due: Vec<Arc<Entry>> = Vec::new();
    while !inner.stop.load(Ordering::SeqCst) {
        let now = Instant::now();
        if now < next_tick {
            std::thread::sleep(next_tick - now);
            continue;
        }
        next_tick += inner.tick;
        if next_tick <= now {
            next_tick = now + inner.tick;
        }

        {
            let entries = inner.entries.lock();
            for entry in entries.values() {
                let mut next_fire = entry.next_fire.lock();
                if *next_fire > now {
                    continue;
                }
                if entry.running.load(Ordering::SeqCst) {
                    entry.skips.fetch_add(1, Ordering::Relaxed);
                } else {
                    entry.running.store(true, Ordering::SeqCst);
                    due.push(Arc::clone(entry));
                }
                while *next_fire <= now {
                    *next_fire += entry.period;
                }
            }
        }
        for entry in due.drain(..) {
            if jobs.send(entry).is_err() {
                return;
            }
        }
    }
}

fn worker_loop(jobs: Receiver<Arc<Entry>>) {
    while let Ok(entry) = jobs.recv() {
        if !entry.cancelled.load(Ordering::SeqCst) {
            entry.invocations.fetch_add(1, Ordering::Relaxed);
            let mut job = entry.job.lock();
            if catch_unwind(AssertUnwindSafe(|| (*job)())).is_err() {
                log::error!("periodic job panicked");
            }
        }
        entry.running.store(false, Ordering::SeqCst);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;

    #[test]
    fn fires_once_per_period() {
        let engine = PeriodicEngine::start(Duration::from_millis(20), 2);
        let count = Arc::new(AtomicUsize::new(0));
        let c = Arc::clone(&count);
        let id = engine.add(Duration::from_millis(200), move || {
            c.fetch_add(1, Ordering::SeqCst);
        });
        std::thread::sleep(Duration::from_millis(1050));
        engine.remove(id);
        let n = count.load(Ordering::SeqCst);
        assert!((4..=6).contains(&n), "{n} invocations");
    }

    #[test]
    fn overruns_are_skipped_not_overlapped() {
        let engine = PeriodicEngine::start(Duration::from_millis(10), 4);
        let active = Arc::new(AtomicUsize::new(0));
        let overlap = Arc::new(AtomicBool::new(false));
        let (a, o) = (Arc::clone(&active), Arc::clone(&overlap));
        let id = engine.add(Duration::from_millis(50), move || {
            if a.fetch_add(1, Ordering::SeqCst) > 0 {
                o.store(true, Ordering::SeqCst);
            }
            std::thread::sleep(Duration::from_millis(160));
            a.fetch_sub(1, Ordering::SeqCst);
        });
        std::thread::sleep(Duration::from_millis(700));
        let (runs, skips) = engine.counters(id).unwrap();
        engine.remove(id);
        assert!(!overlap.load(Ordering::SeqCst));
        assert!(runs >= 2);
        assert!(skips >= 3, "{skips} skips");
    }

    #[test]
    fn remove_stops_invocations() {
        let engine = PeriodicEngine::start(Duration::from_millis(5), 1);
        let count = Arc::new(AtomicUsize::new(0));
        let c = Arc::clone(&count);
        let id = engine.add(Duration::from_millis(10), move || {
            c.fetch_add(1, Ordering::SeqCst);
        });
        std::thread::sleep(Duration::from_millis(100));
        assert!(engine.remove(id));
        let after = count.load(Ordering::SeqCst);
        std::thread::sleep(Duration::from_millis(100));
        assert_eq!(count.load(Ordering::SeqCst), after);
        assert!(!engine.remove(id));
        assert!(engine.is_empty());
    }

    #[test]
    fn panicking_job_keeps_engine_alive() {
        let engine = PeriodicEngine::start(Duration::from_millis(5), 2);
        let count = Arc::new(AtomicUsize::new(0));
        engine.add(Duration::from_millis(10), || panic!("job failure"));
        let c = Arc::clone(&count);
        engine.add(Duration::from_millis(10), move || {
            c.fetch_add(1, Ordering::SeqCst);
        });
        std::thread::sleep(Duration::from_millis(400));
        assert!(count.load(Ordering::SeqCst) >= 5);
    }
}
