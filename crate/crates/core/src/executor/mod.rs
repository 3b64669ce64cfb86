//! Action execution, decoupled from matching.
//!
//! Each action type owns a bounded FIFO queue. One action-executor thread
//! listens on all queues and hands requests to a fixed pool of workers
//! that run the registered handler. A type has at most one request in
//! flight at a time, so handlers of one type run in dispatch order while
//! different types run in parallel.

mod builtin;

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use crossbeam::channel::{bounded, unbounded, Receiver, Select, Sender};
use parking_lot::{Mutex, RwLock};
use serde::Serialize;
use thiserror::Error;

use crate::dsb::RuleId;
use crate::dsl::Index;

pub use builtin::{
    split_params, LogAction, MqttAction, RecordingSink, SetCellAction, WebSocketAction,
    FIELD_SEPARATOR,
};

pub const DEFAULT_WORKERS: usize = 8;
pub const DEFAULT_QUEUE_CAPACITY: usize = 1024;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecError {
    #[error("unknown action type `{0}`")]
    UnknownActionType(String),
    #[error("action type `{0}` is already registered")]
    DuplicateActionType(String),
    #[error("executor is shut down")]
    Closed,
    #[error("bad action parameters: {0}")]
    BadParams(String),
    #[error("connection failed: {0}")]
    ConnectionFailed(String),
    #[error("publish failed: {0}")]
    PublishFailed(String),
    #[error("client `{0}` is not connected")]
    ClientNotConnected(String),
    #[error("cannot parse value `{0}`")]
    ValueParse(String),
    #[error("datasource {0} is not registered")]
    NotRegistered(Index),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("handler panicked: {0}")]
    Panicked(String),
}

/// A fully substituted action on its way to a handler.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionRequest {
    pub rule_id: RuleId,
    pub action_type: String,
    pub params: String,
    pub enqueued_at: DateTime<Utc>,
}

impl ActionRequest {
    pub fn new(rule_id: RuleId, action_type: impl Into<String>, params: impl Into<String>) -> Self {
        ActionRequest {
            rule_id,
            action_type: action_type.into(),
            params: params.into(),
            enqueued_at: Utc::now(),
        }
    }
}

/// Where match functions send their actions.
pub trait ActionSink: Send + Sync {
    fn dispatch(&self, request: ActionRequest) -> Result<(), ExecError>;

    /// Whether requests of this type would be accepted.
    fn accepts(&self, action_type: &str) -> bool;
}

/// An execution function for one action type.
pub trait ActionHandler: Send + Sync {
    fn execute(&self, request: &ActionRequest) -> Result<(), ExecError>;
}

impl<F> ActionHandler for F
where
    F: Fn(&ActionRequest) -> Result<(), ExecError> + Send + Sync,
{
    fn execute(&self, request: &ActionRequest) -> Result<(), ExecError> {
        self(request)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ExecutorConfig {
    pub workers: usize,
    pub queue_capacity: usize,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        ExecutorConfig {
            workers: DEFAULT_WORKERS,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
        }
    }
}

#[derive(Debug, Default)]
struct LaneCounters {
    dispatched: AtomicU64,
    executed: AtomicU64,
    failed: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LaneStats {
    pub dispatched: u64,
    pub executed: u64,
    pub failed: u64,
}

impl LaneStats {
    /// Dispatched but neither executed nor failed yet.
    pub fn in_flight(&self) -> u64 {
        self.dispatched - self.executed - self.failed
    }
}

struct Lane {
    action_type: String,
    tx: Sender<ActionRequest>,
    rx: Receiver<ActionRequest>,
    handler: Arc<dyn ActionHandler>,
    counters: LaneCounters,
}

enum Control {
    NewLane(Arc<Lane>),
    Shutdown,
}

struct Job {
    lane_slot: usize,
    lane: Arc<Lane>,
    request: ActionRequest,
}

struct Shared {
    running: AtomicUsize,
    peak_running: AtomicUsize,
}

/// The executor map plus the action-executor loop and its worker pool.
pub struct Executor {
    lanes: RwLock<HashMap<String, Arc<Lane>>>,
    control: Sender<Control>,
    closed: AtomicBool,
    shared: Arc<Shared>,
    config: ExecutorConfig,
    threads: Mutex<Vec<JoinHandle<()>>>,
}

impl Executor {
    /// Starts the action-executor loop and `config.workers` workers.
    pub fn start(config: ExecutorConfig) -> Arc<Self> {
        let workers = config.workers.max(1);
        let (control_tx, control_rx) = unbounded();
        let (job_tx, job_rx) = unbounded::<Job>();
        let (done_tx, done_rx) = unbounded::<usize>();
        let shared = Arc::new(Shared {
            running: AtomicUsize::new(0),
            peak_running: AtomicUsize::new(0),
        });

        let mut threads = Vec::with_capacity(workers + 1);
        for n in 0..workers {
            let job_rx = job_rx.clone();
            let done_tx = done_tx.clone();
            let shared = Arc::clone(&shared);
            threads.push(
                std::thread::Builder::new()
                    .name(format!("action-worker-{n}"))
                    .spawn(move || worker_loop(job_rx, done_tx, shared))
                    .expect("spawn action worker"),
            );
        }
        threads.push(
            std::thread::Builder::new()
                .name("action-executor".into())
                .spawn(move || executor_loop(control_rx, job_tx, done_rx))
                .expect("spawn action executor"),
        );

        Arc::new(Executor {
            lanes: RwLock::new(HashMap::new()),
            control: control_tx,
            closed: AtomicBool::new(false),
            shared,
            config,
            threads: Mutex::new(threads),
        })
    }

    pub fn register(
        &self,
        action_type: &str,
        handler: impl ActionHandler + 'static,
    ) -> Result<(), ExecError> {
        self.register_with_capacity(action_type, handler, self.config.queue_capacity)
    }

    pub fn register_with_capacity(
        &self,
        action_type: &str,
        handler: impl ActionHandler + 'static,
        queue_capacity: usize,
    ) -> Result<(), ExecError> {
        let mut lanes = self.lanes.write();
        if lanes.contains_key(action_type) {
            return Err(ExecError::DuplicateActionType(action_type.to_string()));
        }
        let (tx, rx) = bounded(queue_capacity.max(1));
        let lane = Arc::new(Lane {
            action_type: action_type.to_string(),
            tx,
            rx,
            handler: Arc::new(handler),
            counters: LaneCounters::default(),
        });
        lanes.insert(action_type.to_string(), Arc::clone(&lane));
        self.control
            .send(Control::NewLane(lane))
            .map_err(|_| ExecError::Closed)
    }

    pub fn action_types(&self) -> Vec<String> {
        let mut types: Vec<String> = self.lanes.read().keys().cloned().collect();
        types.sort();
        types
    }

    pub fn lane_stats(&self, action_type: &str) -> Option<LaneStats> {
        self.lanes.read().get(action_type).map(|lane| LaneStats {
            dispatched: lane.counters.dispatched.load(Ordering::SeqCst),
            executed: lane.counters.executed.load(Ordering::SeqCst),
            failed: lane.counters.failed.load(Ordering::SeqCst),
        })
    }

    /// Sum over all action types.
    pub fn totals(&self) -> LaneStats {
        let lanes = self.lanes.read();
        lanes
            .values()
            .map(|lane| LaneStats {
                dispatched: lane.counters.dispatched.load(Ordering::SeqCst),
                executed: lane.counters.executed.load(Ordering::SeqCst),
                failed: lane.counters.failed.load(Ordering::SeqCst),
            })
            .fold(LaneStats::default(), |acc, s| LaneStats {
                dispatched: acc.dispatched + s.dispatched,
                executed: acc.executed + s.executed,
                failed: acc.failed + s.failed,
            })
    }

    /// Highest number of handlers ever observed running at once.
    pub fn peak_concurrency(&self) -> usize {
        self.shared.peak_running.load(Ordering::SeqCst)
    }

    pub fn workers(&self) -> usize {
        self.config.workers.max(1)
    }

    /// Blocks until nothing is queued or running, or `timeout` passes.
    pub fn wait_idle(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        loop {
            if self.totals().in_flight() == 0 {
                return true;
            }
            if Instant::now() >= deadline {
                return false;
            }
            std::thread::sleep(Duration::from_millis(2));
        }
    }

    /// Stops accepting requests, runs what is already queued, and joins
    /// all threads.
    pub fn shutdown(&self) {
        if self.closed.swap(true, Ordering::SeqCst) {
            return;
        }
        let _ = self.control.send(Control::Shutdown);
        for handle in self.threads.lock().drain(..) {
            let _ = handle.join();
        }
    }

    pub fn is_closed(&self) -> bool {
        self.closed.load(Ordering::SeqCst)
    }
}

impl ActionSink for Executor {
    fn dispatch(&self, request: ActionRequest) -> Result<(), ExecError> {
        if self.is_closed() {
            return Err(ExecError::Closed);
        }
        let lane = self
            .lanes
            .read()
            .get(&request.action_type)
            .cloned()
            .ok_or_else(|| ExecError::UnknownActionType(request.action_type.clone()))?;
        lane.counters.dispatched.fetch_add(1, Ordering::SeqCst);
        if lane.tx.send(request).is_err() {
            lane.counters.dispatched.fetch_sub(1, Ordering::SeqCst);
            return Err(ExecError::Closed);
        }
        Ok(())
    }

    fn accepts(&self, action_type: &str) -> bool {
        self.lanes.read().contains_key(action_type)
    }
}

impl Drop for Executor {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn executor_loop(control: Receiver<Control>, jobs: Sender<Job>, done: Receiver<usize>) {
    let mut lanes: Vec<Arc<Lane>> = Vec::new();
    let mut busy: Vec<bool> = Vec::new();
    let mut draining = false;
    loop {
        if draining && busy.iter().all(|b| !b) && lanes.iter().all(|l| l.rx.is_empty()) {
            break;
        }
        let mut select = Select::new();
        let control_op = (!draining).then(|| select.recv(&control));
        let done_op = select.recv(&done);
        let mut lane_ops: Vec<(usize, usize)> = Vec::new();
        for (slot, lane) in lanes.iter().enumerate() {
            if !busy[slot] {
                lane_ops.push((select.recv(&lane.rx), slot));
            }
        }
        let op = select.select();
        let index = op.index();
        if Some(index) == control_op {
            match op.recv(&control) {
                Ok(Control::NewLane(lane)) => {
                    lanes.push(lane);
                    busy.push(false);
                }
                Ok(Control::Shutdown) | Err(_) => draining = true,
            }
        } else if index == done_op {
            if let Ok(slot) = op.recv(&done) {
                busy[slot] = false;
            }
        } else if let Some(&(_, slot)) = lane_ops.iter().find(|(i, _)| *i == index) {
            let lane = &lanes[slot];
            if let Ok(request) = op.recv(&lane.rx) {
                busy[slot] = true;
                let job = Job {
                    lane_slot: slot,
                    lane: Arc::clone(lane),
                    request,
                };
                if jobs.send(job).is_err() {
                    break;
                }
            }
        }
    }
    log::debug!("action executor stopped");
}

fn worker_loop(jobs: Receiver<Job>, done: Sender<usize>, shared: Arc<Shared>) {
    while let Ok(job) = jobs.recv() {
        let now = shared.running.fetch_add(1, Ordering::SeqCst) + 1;
        shared.peak_running.fetch_max(now, Ordering::SeqCst);
        let result = catch_unwind(AssertUnwindSafe(|| job.lane.handler.execute(&job.request)))
            .unwrap_or_else(|panic| {
                Err(ExecError::Panicked(crate::matcher::panic_message(&panic)))
            });
        shared.running.fetch_sub(1, Ordering::SeqCst);
        match result {
            Ok(()) => {
                job.lane.counters.executed.fetch_add(1, Ordering::SeqCst);
            }
            Err(e) => {
                job.lane.counters.failed.fetch_add(1, Ordering::SeqCst);
                log::warn!(
                    "rule {}: {} action failed: {e}",
                    job.request.rule_id,
                    job.lane.action_type
                );
            }
        }
        if done.send(job.lane_slot).is_err() {
            break;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn collector() -> (Arc<Mutex<Vec<String>>>, impl ActionHandler) {
        let seen = Arc::new(Mutex::new(Vec::new()));
        let sink = Arc::clone(&seen);
        (seen, move |req: &ActionRequest| {
            sink.lock().push(req.params.clone());
            Ok(())
        })
    }

    #[test]
    fn dispatch_reaches_handler() {
        let exec = Executor::start(ExecutorConfig::default());
        let (seen, handler) = collector();
        exec.register("Log", handler).unwrap();
        exec.dispatch(ActionRequest::new(1, "Log", "hello"))
            .unwrap();
        assert!(exec.wait_idle(Duration::from_secs(5)));
        assert_eq!(*seen.lock(), vec!["hello".to_string()]);
    }

    #[test]
    fn duplicate_and_unknown_types() {
        let exec = Executor::start(ExecutorConfig::default());
        exec.register("Mqtt", |_: &ActionRequest| Ok(())).unwrap();
        assert_eq!(
            exec.register("Mqtt", |_: &ActionRequest| Ok(())),
            Err(ExecError::DuplicateActionType("Mqtt".into()))
        );
        assert_eq!(
            exec.dispatch(ActionRequest::new(1, "Nope", "")),
            Err(ExecError::UnknownActionType("Nope".into()))
        );
        assert!(exec.accepts("Mqtt"));
        assert!(!exec.accepts("Nope"));
    }

    #[test]
    fn fifo_per_type() {
        let exec = Executor::start(ExecutorConfig {
            workers: 4,
            queue_capacity: 8,
        });
        let (seen, handler) = collector();
        exec.register("Log", handler).unwrap();
        for i in 0..100 {
            exec.dispatch(ActionRequest::new(1, "Log", i.to_string()))
                .unwrap();
        }
        assert!(exec.wait_idle(Duration::from_secs(5)));
        let expected: Vec<String> = (0..100).map(|i| i.to_string()).collect();
        assert_eq!(*seen.lock(), expected);
        assert_eq!(exec.lane_stats("Log").unwrap().executed, 100);
    }

    #[test]
    fn interleaved_types_keep_their_order() {
        let exec = Executor::start(ExecutorConfig::default());
        let (a_seen, a) = collector();
        let (b_seen, b) = collector();
        exec.register("A", a).unwrap();
        exec.register("B", b).unwrap();
        for i in 0..50 {
            exec.dispatch(ActionRequest::new(1, "A", i.to_string()))
                .unwrap();
            exec.dispatch(ActionRequest::new(1, "B", i.to_string()))
                .unwrap();
        }
        assert!(exec.wait_idle(Duration::from_secs(5)));
        let expected: Vec<String> = (0..50).map(|i| i.to_string()).collect();
        assert_eq!(*a_seen.lock(), expected);
        assert_eq!(*b_seen.lock(), expected);
    }

    #[test]
    fn failing_handler_does_not_affect_others() {
        let exec = Executor::start(ExecutorConfig::default());
        exec.register("Bad", |_: &ActionRequest| Err(ExecError::Io("nope".into())))
            .unwrap();
        exec.register("Panics", |_: &ActionRequest| -> Result<(), ExecError> {
            panic!("boom")
        })
        .unwrap();
        let (seen, good) = collector();
        exec.register("Good", good).unwrap();
        for i in 0..20 {
            exec.dispatch(ActionRequest::new(1, "Bad", "")).unwrap();
            exec.dispatch(ActionRequest::new(1, "Panics", "")).unwrap();
            exec.dispatch(ActionRequest::new(1, "Good", i.to_string()))
                .unwrap();
        }
        assert!(exec.wait_idle(Duration::from_secs(5)));
        assert_eq!(seen.lock().len(), 20);
        assert_eq!(exec.lane_stats("Good").unwrap().executed, 20);
        assert_eq!(exec.lane_stats("Bad").unwrap().failed, 20);
        assert_eq!(exec.lane_stats("Panics").unwrap().failed, 20);
    }

    #[test]
    fn shutdown_drains_and_rejects() {
        let exec = Executor::start(ExecutorConfig::default());
        let (seen, handler) = collector();
        exec.register("Log", move |req: &ActionRequest| {
            std::thread::sleep(Duration::from_millis(5));
            handler.execute(req)
        })
        .unwrap();
        for i in 0..10 {
            exec.dispatch(ActionRequest::new(1, "Log", i.to_string()))
                .unwrap();
        }
        exec.shutdown();
        assert_eq!(seen.lock().len(), 10);
        assert_eq!(
            exec.dispatch(ActionRequest::new(1, "Log", "late")),
            Err(ExecError::Closed)
        );
    }

    #[test]
    fn concurrency_bounded_by_pool() {
        let exec = Executor::start(ExecutorConfig {
            workers: 2,
            queue_capacity: 16,
        });
        for t in 0..6 {
            exec.register(&format!("T{t}"), |_: &ActionRequest| {
                std::thread::sleep(Duration::from_millis(10));
                Ok(())
            })
            .unwrap();
        }
        for _ in 0..5 {
            for t in 0..6 {
                exec.dispatch(ActionRequest::new(1, format!("T{t}"), ""))
                    .unwrap();
            }
        }
        assert!(exec.wait_idle(Duration::from_secs(10)));
        assert!(exec.peak_concurrency() <= 2);
        assert_eq!(exec.totals().executed, 30);
    }
}
