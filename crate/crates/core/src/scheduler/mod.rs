//! Rule lifecycle and the runtime that executes started rules.
//!
//! States and the interfaces that move between them:
//!
//! ```text
//!            create            start
//! (undefined) ────► inactive ─────────► active
//!                   │  ▲  ▲                │
//!          schedule │  │  └──── end ───────┘
//!                   ▼  │ end
//!                 scheduled ── timer fires ──► active
//! ```
//!
//! `update` and `delete` only apply to inactive rules. Every interface call
//! on one rid is serialized; calls on different rids run in parallel.

mod periodic;
mod push;
mod store;
mod timer;

use std::collections::HashMap;
use std::sync::{Arc, Weak};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use crossbeam::channel::bounded;
use dashmap::DashMap;
use parking_lot::Mutex;
use serde::Serialize;
use thiserror::Error;

use crate::api::ClientRegistry;
use crate::dsb::{Dsb, DsbConfig, DsbError, DsbStats, RuleId, DEFAULT_SUBSCRIBER_CAPACITY};
use crate::dsl::{parse_rule, CompiledRule, DslError, Index, RuleText, DEFAULT_PERIOD_SECONDS};
use crate::executor::{
    ActionHandler, ActionSink, ExecError, Executor, ExecutorConfig, LaneStats, LogAction,
    MqttAction, SetCellAction, WebSocketAction,
};
use crate::matcher::{
    generate_match_function, ConditionMatcher, MatchError, MatcherMap, RuleStats, RuleStatsSnapshot,
};

pub use periodic::{EntryId, PeriodicEngine, DEFAULT_TICK};
pub use push::{run_push_loop, PushLoop};
pub use store::{
    FileStore, InMemoryStore, RuleRecord, RuleState, RuleStore, StoreError, TriggerMode,
};
pub use timer::{TimerId, TimerService};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Dsl(#[from] DslError),
    #[error("unknown condition type `{0}`")]
    UnknownConditionType(String),
    #[error("unknown action type `{0}`")]
    UnknownActionType(String),
    #[error("invalid condition: {0}")]
    InvalidCondition(MatchError),
    #[error("rule {rid} is {state}; cannot {operation}")]
    InvalidStateTransition {
        rid: RuleId,
        state: RuleState,
        operation: &'static str,
    },
    #[error("fire time {0} is not in the future")]
    PastTimestamp(DateTime<Utc>),
    #[error("unknown rule {0}")]
    UnknownRule(RuleId),
    #[error("period must be at least one second")]
    InvalidPeriod,
    #[error(transparent)]
    Storage(#[from] StoreError),
    #[error(transparent)]
    Datasource(#[from] DsbError),
    #[error(transparent)]
    Action(#[from] ExecError),
    #[error("cannot spawn rule task: {0}")]
    Spawn(String),
}

impl From<MatchError> for EngineError {
    fn from(e: MatchError) -> Self {
        match e {
            MatchError::UnknownConditionType(t) => EngineError::UnknownConditionType(t),
            MatchError::UnknownActionType(t) => EngineError::UnknownActionType(t),
            other => EngineError::InvalidCondition(other),
        }
    }
}

/// A rule as submitted for creation.
#[derive(Debug, Clone, PartialEq)]
pub struct NewRule {
    pub name: String,
    pub text: RuleText,
    pub period_seconds: u64,
    pub trigger_mode: TriggerMode,
}

impl NewRule {
    pub fn new(name: impl Into<String>, text: RuleText) -> Self {
        NewRule {
            name: name.into(),
            text,
            period_seconds: DEFAULT_PERIOD_SECONDS,
            trigger_mode: TriggerMode::Periodic,
        }
    }

    pub fn period(mut self, seconds: u64) -> Self {
        self.period_seconds = seconds;
        self
    }

    pub fn trigger(mut self, mode: TriggerMode) -> Self {
        self.trigger_mode = mode;
        self
    }
}

/// Fields to change on an inactive rule; `None` keeps the current value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RuleUpdate {
    pub name: Option<String>,
    pub datasource: Option<String>,
    pub condition: Option<String>,
    pub action: Option<String>,
    pub period_seconds: Option<u64>,
    pub trigger_mode: Option<TriggerMode>,
}

/// A stored rule plus its runtime counters.
#[derive(Debug, Clone, Serialize)]
pub struct RuleView {
    #[serde(flatten)]
    pub record: RuleRecord,
    pub stats: RuleStatsSnapshot,
}

#[derive(Debug, Clone, Copy)]
pub struct EngineConfig {
    pub tick: Duration,
    pub matcher_workers: usize,
    pub executor: ExecutorConfig,
    pub dsb: DsbConfig,
    pub subscriber_capacity: usize,
    /// Overrides every rule's period. Meant for tests that need
    /// sub-second periods.
    pub period_override: Option<Duration>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            tick: DEFAULT_TICK,
            matcher_workers: std::thread::available_parallelism()
                .map_or(4, |n| n.get())
                .clamp(2, 16),
            executor: ExecutorConfig::default(),
            dsb: DsbConfig::default(),
            subscriber_capacity: DEFAULT_SUBSCRIBER_CAPACITY,
            period_override: None,
        }
    }
}

enum Runtime {
    Periodic(EntryId),
    Push(PushLoop),
}

struct ActiveRule {
    runtime: Runtime,
    indices: Vec<Index>,
}

struct ScheduledRule {
    timer: TimerId,
    fire_at: DateTime<Utc>,
}

struct Inner {
    config: EngineConfig,
    dsb: Arc<Dsb>,
    matchers: MatcherMap,
    executor: Arc<Executor>,
    registry: Arc<ClientRegistry>,
    store: Arc<dyn RuleStore>,
    periodic: PeriodicEngine,
    timers: TimerService,
    active: DashMap<RuleId, ActiveRule>,
    scheduled: DashMap<RuleId, ScheduledRule>,
    locks: DashMap<RuleId, Arc<Mutex<()>>>,
    stats: DashMap<RuleId, Arc<RuleStats>>,
}

/// Builds an [`Engine`]. The cache, executor and client registry exist
/// from the start so that action handlers can be wired to them.
pub struct EngineBuilder {
    config: EngineConfig,
    dsb: Arc<Dsb>,
    executor: Arc<Executor>,
    registry: Arc<ClientRegistry>,
    matchers: MatcherMap,
    store: Option<Arc<dyn RuleStore>>,
}

impl EngineBuilder {
    pub fn new(config: EngineConfig) -> Self {
        EngineBuilder {
            dsb: Arc::new(Dsb::new(config.dsb)),
            executor: Executor::start(config.executor),
            registry: Arc::new(ClientRegistry::new()),
            matchers: MatcherMap::with_builtins(),
            store: None,
            config,
        }
    }

    pub fn dsb(&self) -> &Arc<Dsb> {
        &self.dsb
    }

    pub fn registry(&self) -> &Arc<ClientRegistry> {
        &self.registry
    }

    pub fn executor(&self) -> &Arc<Executor> {
        &self.executor
    }

    pub fn store(mut self, store: Arc<dyn RuleStore>) -> Self {
        self.store = Some(store);
        self
    }

    pub fn condition(
        mut self,
        condition_type: &str,
        matcher: impl ConditionMatcher + 'static,
    ) -> Result<Self, EngineError> {
        self.matchers.register(condition_type, matcher)?;
        Ok(self)
    }

    pub fn action(
        self,
        action_type: &str,
        handler: impl ActionHandler + 'static,
    ) -> Result<Self, EngineError> {
        self.executor.register(action_type, handler)?;
        Ok(self)
    }

    /// Registers `Mqtt`, `WebSocket` and `SetCell`, plus `Log` when a log
    /// sink is given.
    pub fn builtin_actions(self, log: Option<LogAction>) -> Result<Self, EngineError> {
        let registry = Arc::clone(&self.registry);
        let dsb = Arc::clone(&self.dsb);
        let mut builder = self
            .action("Mqtt", MqttAction::default())?
            .action("WebSocket", WebSocketAction::new(registry))?
            .action("SetCell", SetCellAction::new(dsb))?;
        if let Some(log) = log {
            builder = builder.action("Log", log)?;
        }
        Ok(builder)
    }

    /// Starts the runtime and restores persisted rules: active rules are
    /// started again, scheduled rules are re-armed (or started right away
    /// if their time has passed).
    pub fn build(self) -> Result<Engine, EngineError> {
        let inner = Arc::new(Inner {
            periodic: PeriodicEngine::start(self.config.tick, self.config.matcher_workers),
            timers: TimerService::start(),
            store: self.store.unwrap_or_else(|| Arc::new(InMemoryStore::new())),
            config: self.config,
            dsb: self.dsb,
            matchers: self.matchers,
            executor: self.executor,
            registry: self.registry,
            active: DashMap::new(),
            scheduled: DashMap::new(),
            locks: DashMap::new(),
            stats: DashMap::new(),
        });
        let engine = Engine { inner };
        engine.recover()?;
        Ok(engine)
    }
}

/// The rule engine. Cheap to clone; all clones share one runtime.
#[derive(Clone)]
pub struct Engine {
    inner: Arc<Inner>,
}

impl Engine {
    pub fn builder(config: EngineConfig) -> EngineBuilder {
        EngineBuilder::new(config)
    }

    pub fn dsb(&self) -> &Arc<Dsb> {
        &self.inner.dsb
    }

    pub fn executor(&self) -> &Arc<Executor> {
        &self.inner.executor
    }

    pub fn registry(&self) -> &Arc<ClientRegistry> {
        &self.inner.registry
    }

    pub fn matchers(&self) -> &MatcherMap {
        &self.inner.matchers
    }

    fn lock(&self, rid: RuleId) -> Arc<Mutex<()>> {
        Arc::clone(self.inner.locks.entry(rid).or_default().value())
    }

    fn load(&self, rid: RuleId) -> Result<RuleRecord, EngineError> {
        self.inner
            .store
            .get(rid)?
            .ok_or(EngineError::UnknownRule(rid))
    }

    /// Parses the rule and checks that its condition and action types are
    /// known.
    pub fn validate(&self, text: &RuleText) -> Result<CompiledRule, EngineError> {
        let rule = parse_rule(text)?;
        let matcher = self
            .inner
            .matchers
            .get(&rule.condition_type)
            .ok_or_else(|| EngineError::UnknownConditionType(rule.condition_type.clone()))?;
        matcher
            .validate(&rule.program)
            .map_err(EngineError::InvalidCondition)?;
        if let Some(action) = rule
            .actions
            .iter()
            .find(|a| !self.inner.executor.accepts(&a.action_type))
        {
            return Err(EngineError::UnknownActionType(action.action_type.clone()));
        }
        Ok(rule)
    }

    pub fn create_rule(&self, rule: NewRule) -> Result<RuleId, EngineError> {
        if rule.period_seconds == 0 {
            return Err(EngineError::InvalidPeriod);
        }
        self.validate(&rule.text)?;
        let rid = self.inner.store.allocate_rid()?;
        let now = Utc::now();
        self.inner.store.put(&RuleRecord {
            rid,
            name: rule.name,
            datasource: rule.text.datasource,
            condition: rule.text.condition,
            action: rule.text.action,
            state: RuleState::Inactive,
            period_seconds: rule.period_seconds,
            trigger_mode: rule.trigger_mode,
            fire_at: None,
            created_at: now,
            updated_at: now,
        })?;
        Ok(rid)
    }

    pub fn start_rule(&self, rid: RuleId) -> Result<(), EngineError> {
        let lock = self.lock(rid);
        let _guard = lock.lock();
        let record = self.load(rid)?;
        if record.state != RuleState::Inactive {
            return Err(EngineError::InvalidStateTransition {
                rid,
                state: record.state,
                operation: "start",
            });
        }
        self.activate(&record)?;
        self.persist_state(record, RuleState::Active, None)
    }

    pub fn schedule_rule(&self, rid: RuleId, fire_at: DateTime<Utc>) -> Result<(), EngineError> {
        let lock = self.lock(rid);
        let _guard = lock.lock();
        let record = self.load(rid)?;
        if record.state != RuleState::Inactive {
            return Err(EngineError::InvalidStateTransition {
                rid,
                state: record.state,
                operation: "schedule",
            });
        }
        if fire_at <= Utc::now() {
            return Err(EngineError::PastTimestamp(fire_at));
        }
        self.arm_timer(rid, fire_at);
        if let Err(e) = self.persist_state(record, RuleState::Scheduled, Some(fire_at)) {
            if let Some((_, s)) = self.inner.scheduled.remove(&rid) {
                self.inner.timers.cancel(s.timer);
            }
            return Err(e);
        }
        Ok(())
    }

    pub fn update_rule(&self, rid: RuleId, update: RuleUpdate) -> Result<(), EngineError> {
        let lock = self.lock(rid);
        let _guard = lock.lock();
        let mut record = self.load(rid)?;
        if record.state != RuleState::Inactive {
            return Err(EngineError::InvalidStateTransition {
                rid,
                state: record.state,
                operation: "update",
            });
        }
        if update.period_seconds == Some(0) {
            return Err(EngineError::InvalidPeriod);
        }
        let text = RuleText::new(
            update.datasource.unwrap_or(record.datasource),
            update.condition.unwrap_or(record.condition),
            update.action.unwrap_or(record.action),
        );
        self.validate(&text)?;
        record.datasource = text.datasource;
        record.condition = text.condition;
        record.action = text.action;
        if let Some(name) = update.name {
            record.name = name;
        }
        if let Some(period) = update.period_seconds {
            record.period_seconds = period;
        }
        if let Some(mode) = update.trigger_mode {
            record.trigger_mode = mode;
        }
        record.updated_at = Utc::now();
        self.inner.store.put(&record)?;
        Ok(())
    }

    pub fn end_rule(&self, rid: RuleId) -> Result<(), EngineError> {
        let lock = self.lock(rid);
        let _guard = lock.lock();
        let record = self.load(rid)?;
        match record.state {
            RuleState::Inactive => {
                return Err(EngineError::InvalidStateTransition {
                    rid,
                    state: record.state,
                    operation: "end",
                })
            }
            RuleState::Scheduled => {
                if let Some((_, scheduled)) = self.inner.scheduled.remove(&rid) {
                    self.inner.timers.cancel(scheduled.timer);
                }
            }
            RuleState::Active => self.deactivate(rid),
        }
        self.persist_state(record, RuleState::Inactive, None)
    }

    pub fn delete_rule(&self, rid: RuleId) -> Result<(), EngineError> {
        let lock = self.lock(rid);
        let _guard = lock.lock();
        let record = self.load(rid)?;
        if record.state != RuleState::Inactive {
            return Err(EngineError::InvalidStateTransition {
                rid,
                state: record.state,
                operation: "delete",
            });
        }
        self.inner.store.remove(rid)?;
        self.inner.stats.remove(&rid);
        self.inner.locks.remove(&rid);
        Ok(())
    }

    pub fn get_rule(&self, rid: RuleId) -> Result<RuleView, EngineError> {
        let record = self.load(rid)?;
        Ok(self.view(record))
    }

    pub fn list_rules(&self) -> Result<Vec<RuleView>, EngineError> {
        Ok(self
            .inner
            .store
            .list()?
            .into_iter()
            .map(|r| self.view(r))
            .collect())
    }

    pub fn state(&self, rid: RuleId) -> Result<RuleState, EngineError> {
        Ok(self.load(rid)?.state)
    }

    pub fn rule_stats(&self, rid: RuleId) -> RuleStatsSnapshot {
        let mut snapshot = self
            .inner
            .stats
            .get(&rid)
            .map(|s| s.snapshot())
            .unwrap_or_default();
        if let Some(active) = self.inner.active.get(&rid) {
            if let Runtime::Periodic(entry) = active.runtime {
                if let Some((_, skips)) = self.inner.periodic.counters(entry) {
                    snapshot.overrun_skips = skips;
                }
            }
        }
        snapshot
    }

    fn view(&self, record: RuleRecord) -> RuleView {
        let stats = self.rule_stats(record.rid);
        RuleView { record, stats }
    }

    fn persist_state(
        &self,
        mut record: RuleRecord,
        state: RuleState,
        fire_at: Option<DateTime<Utc>>,
    ) -> Result<(), EngineError> {
        let previous = record.state;
        record.state = state;
        record.fire_at = fire_at;
        record.updated_at = Utc::now();
        if let Err(e) = self.inner.store.put(&record) {
            // undo runtime changes so that memory matches storage
            if state == RuleState::Active && previous != RuleState::Active {
                self.deactivate(record.rid);
            }
            return Err(e.into());
        }
        Ok(())
    }

    /// Allocates the runtime of a rule: cache references, match function,
    /// and its periodic entry or push loop. All or nothing.
    fn activate(&self, record: &RuleRecord) -> Result<(), EngineError> {
        let inner = &self.inner;
        let rule = parse_rule(&record.text())?.with_period(record.period_seconds);
        let mut registered: Vec<Index> = Vec::with_capacity(rule.ost.len());
        let rollback = |registered: &[Index]| {
            for index in registered {
                let _ = inner.dsb.unregister(index);
            }
        };
        for decl in &rule.ost {
            inner.dsb.register(&decl.index);
            registered.push(decl.index.clone());
        }

        let stats = Arc::new(RuleStats::default());
        let sink: Arc<dyn ActionSink> = inner.executor.clone();
        let dedup = record.trigger_mode == TriggerMode::PeriodicDedup;
        let mf = match generate_match_function(
            record.rid,
            &rule,
            &inner.matchers,
            Arc::clone(&inner.dsb),
            sink,
            dedup,
            Arc::clone(&stats),
        ) {
            Ok(mf) => mf,
            Err(e) => {
                rollback(&registered);
                return Err(e.into());
            }
        };

        let runtime = match record.trigger_mode {
            TriggerMode::Push => {
                let mut queues = Vec::with_capacity(rule.ost.len());
                for decl in &rule.ost {
                    let (tx, rx) = bounded(inner.config.subscriber_capacity.max(1));
                    if let Err(e) = inner.dsb.subscribe(&decl.index, record.rid, tx) {
                        for d in &rule.ost {
                            let _ = inner.dsb.unsubscribe(&d.index, record.rid);
                        }
                        rollback(&registered);
                        return Err(e.into());
                    }
                    queues.push((decl.symbol.clone(), rx));
                }
                match PushLoop::spawn(mf, queues) {
                    Ok(push) => Runtime::Push(push),
                    Err(e) => {
                        for d in &rule.ost {
                            let _ = inner.dsb.unsubscribe(&d.index, record.rid);
                        }
                        rollback(&registered);
                        return Err(EngineError::Spawn(e.to_string()));
                    }
                }
            }
            TriggerMode::Periodic | TriggerMode::PeriodicDedup => {
                let period = inner
                    .config
                    .period_override
                    .unwrap_or(Duration::from_secs(rule.period_seconds));
                let mut mf = mf;
                Runtime::Periodic(inner.periodic.add(period, move || mf.invoke()))
            }
        };
        inner.stats.insert(record.rid, stats);
        inner.active.insert(
            record.rid,
            ActiveRule {
                runtime,
                indices: registered,
            },
        );
        Ok(())
    }

    /// Releases everything `activate` allocated.
    fn deactivate(&self, rid: RuleId) {
        let Some((_, active)) = self.inner.active.remove(&rid) else {
            return;
        };
        match active.runtime {
            Runtime::Periodic(entry) => {
                self.inner.periodic.remove(entry);
            }
            Runtime::Push(push) => {
                push.stop();
                for index in &active.indices {
                    let _ = self.inner.dsb.unsubscribe(index, rid);
                }
            }
        }
        for index in &active.indices {
            if let Err(e) = self.inner.dsb.unregister(index) {
                log::error!("rule {rid}: {e} while releasing datasources");
            }
        }
    }

    fn arm_timer(&self, rid: RuleId, fire_at: DateTime<Utc>) {
        let delay = (fire_at - Utc::now()).to_std().unwrap_or_default();
        let weak: Weak<Inner> = Arc::downgrade(&self.inner);
        let timer = self.inner.timers.schedule(Instant::now() + delay, move || {
            if let Some(inner) = weak.upgrade() {
                Engine { inner }.fire_scheduled(rid);
            }
        });
        self.inner
            .scheduled
            .insert(rid, ScheduledRule { timer, fire_at });
    }

    /// Timer callback: scheduled → active.
    fn fire_scheduled(&self, rid: RuleId) {
        let lock = self.lock(rid);
        let _guard = lock.lock();
        // a rule ended (or re-scheduled) since the timer was armed no longer
        // has this entry
        if self.inner.scheduled.remove(&rid).is_none() {
            return;
        }
        let result = self.load(rid).and_then(|record| {
            if record.state != RuleState::Scheduled {
                return Ok(());
            }
            match self.activate(&record) {
                Ok(()) => self.persist_state(record, RuleState::Active, None),
                Err(e) => {
                    let _ = self.persist_state(record, RuleState::Inactive, None);
                    Err(e)
                }
            }
        });
        if let Err(e) = result {
            log::error!("scheduled start of rule {rid} failed: {e}");
        }
    }

    fn recover(&self) -> Result<(), EngineError> {
        for record in self.inner.store.list()? {
            let rid = record.rid;
            let lock = self.lock(rid);
            let _guard = lock.lock();
            match record.state {
                RuleState::Inactive => {}
                RuleState::Active => {
                    if let Err(e) = self.activate(&record) {
                        log::error!("rule {rid} could not be restarted: {e}");
                        self.persist_state(record, RuleState::Inactive, None)?;
                    }
                }
                RuleState::Scheduled => match record.fire_at {
                    Some(at) if at > Utc::now() => self.arm_timer(rid, at),
                    _ => match self.activate(&record) {
                        Ok(()) => self.persist_state(record, RuleState::Active, None)?,
                        Err(e) => {
                            log::error!("rule {rid} could not be started: {e}");
                            self.persist_state(record, RuleState::Inactive, None)?;
                        }
                    },
                },
            }
        }
        Ok(())
    }

    /// Cross-checks stored states, runtime maps, and cache references.
    /// Only meaningful while no lifecycle call is in progress.
    pub fn check_consistency(&self) -> ConsistencyReport {
        let mut problems = Vec::new();
        let records = match self.inner.store.list() {
            Ok(r) => r,
            Err(e) => {
                return ConsistencyReport {
                    problems: vec![format!("store: {e}")],
                    ..Default::default()
                };
            }
        };
        let mut expected_refs: HashMap<Index, usize> = HashMap::new();
        let (mut active, mut scheduled) = (0, 0);
        for record in &records {
            let in_active = self.inner.active.contains_key(&record.rid);
            let in_scheduled = self.inner.scheduled.contains_key(&record.rid);
            match record.state {
                RuleState::Active => {
                    active += 1;
                    if !in_active {
                        problems.push(format!("rule {} is active but has no runtime", record.rid));
                    }
                    match parse_rule(&record.text()) {
                        Ok(rule) => {
                            for decl in rule.ost {
                                *expected_refs.entry(decl.index).or_default() += 1;
                            }
                        }
                        Err(e) => {
                            problems.push(format!("rule {} no longer parses: {e}", record.rid))
                        }
                    }
                }
                RuleState::Scheduled => {
                    scheduled += 1;
                    if !in_scheduled {
                        problems.push(format!("rule {} is scheduled but has no timer", record.rid));
                    }
                }
                RuleState::Inactive => {}
            }
            if record.state != RuleState::Active && in_active {
                problems.push(format!(
                    "rule {} is {} but has a runtime",
                    record.rid, record.state
                ));
            }
            if record.state != RuleState::Scheduled && in_scheduled {
                problems.push(format!(
                    "rule {} is {} but has a timer",
                    record.rid, record.state
                ));
            }
        }
        let known: std::collections::HashSet<RuleId> = records.iter().map(|r| r.rid).collect();
        for entry in self.inner.active.iter() {
            if !known.contains(entry.key()) {
                problems.push(format!("runtime for unknown rule {}", entry.key()));
            }
        }
        for entry in self.inner.scheduled.iter() {
            if !known.contains(entry.key()) {
                problems.push(format!("timer for unknown rule {}", entry.key()));
            }
        }
        let actual_refs = self.inner.dsb.references();
        if actual_refs != expected_refs {
            for (index, n) in &expected_refs {
                let got = actual_refs.get(index).copied().unwrap_or(0);
                if got != *n {
                    problems.push(format!(
                        "datasource {index}: {got} reference(s), expected {n}"
                    ));
                }
            }
            for (index, n) in &actual_refs {
                if !expected_refs.contains_key(index) {
                    problems.push(format!("datasource {index}: {n} stray reference(s)"));
                }
            }
        }
        let periodic_rules = self
            .inner
            .active
            .iter()
            .filter(|e| matches!(e.runtime, Runtime::Periodic(_)))
            .count();
        if periodic_rules != self.inner.periodic.len() {
            problems.push(format!(
                "{} periodic entries for {} periodic rules",
                self.inner.periodic.len(),
                periodic_rules
            ));
        }
        if self.inner.timers.pending() != self.inner.scheduled.len() {
            problems.push(format!(
                "{} pending timers for {} scheduled rules",
                self.inner.timers.pending(),
                self.inner.scheduled.len()
            ));
        }
        ConsistencyReport {
            rules: records.len(),
            active,
            scheduled,
            datasources: actual_refs.len(),
            problems,
        }
    }

    /// Fire time of a scheduled rule.
    pub fn fire_time(&self, rid: RuleId) -> Option<DateTime<Utc>> {
        self.inner.scheduled.get(&rid).map(|s| s.fire_at)
    }

    pub fn stats(&self) -> EngineStats {
        EngineStats {
            rules: self.inner.store.list().map(|r| r.len()).unwrap_or(0),
            active: self.inner.active.len(),
            scheduled: self.inner.scheduled.len(),
            periodic_entries: self.inner.periodic.len(),
            dsb: self.inner.dsb.stats(),
            actions: self.inner.executor.totals(),
            websocket_clients: self.inner.registry.len(),
            resident_memory_bytes: crate::harness::resident_memory_bytes(),
        }
    }

    /// Stops every rule runtime and background thread. Stored states are
    /// left as they are so that a restart resumes them.
    pub fn shutdown(&self) {
        let rids: Vec<RuleId> = self.inner.active.iter().map(|e| *e.key()).collect();
        for rid in rids {
            self.deactivate(rid);
        }
        for entry in self.inner.scheduled.iter() {
            self.inner.timers.cancel(entry.timer);
        }
        self.inner.scheduled.clear();
        self.inner.timers.shutdown();
        self.inner.periodic.shutdown();
        self.inner.executor.shutdown();
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ConsistencyReport {
    pub rules: usize,
    pub active: usize,
    pub scheduled: usize,
    pub datasources: usize,
    pub problems: Vec<String>,
}

impl ConsistencyReport {
    pub fn is_consistent(&self) -> bool {
        self.problems.is_empty()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EngineStats {
    pub rules: usize,
    pub active: usize,
    pub scheduled: usize,
    pub periodic_entries: usize,
    pub dsb: DsbStats,
    pub actions: LaneStats,
    pub websocket_clients: usize,
    pub resident_memory_bytes: Option<u64>,
}
