//! Condition evaluation and match-function generation.
//!
//! A [`MatchFunction`] is the runtime form of a started rule. Each call
//! reads the rule's datasources from the [`Dsb`] into an inner symbol
//! table, runs the condition's matcher from the [`MatcherMap`], and on a
//! match hands every action (with `$symbol`s substituted) to the executor.

mod eval;
mod geometry;

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::dsb::{Dsb, Lookup, RuleId};
use crate::dsl::{
    symbol_references, CompiledRule, DatasourceDecl, Index, Token, EXPRESSION_CONDITION,
};
use crate::executor::{ActionRequest, ActionSink, ExecError};

pub use eval::{apply, eval_postfix, fm_expression, Value};
pub use geometry::{fm_point_surface, point_in_polygon, PointSurface};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatchError {
    #[error("operator `{op}` cannot combine {lhs} and {rhs}")]
    TypeMismatch {
        op: &'static str,
        lhs: Value,
        rhs: Value,
    },
    #[error("division by zero")]
    DivisionByZero,
    #[error("unresolved variable `{0}`")]
    UnresolvedVariable(String),
    #[error("malformed program")]
    MalformedProgram,
    #[error("condition evaluated to the number {0}, not a boolean")]
    NonBooleanCondition(f64),
    #[error("arity error: {0}")]
    Arity(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown condition type `{0}`")]
    UnknownConditionType(String),
    #[error("condition type `{0}` is already registered")]
    DuplicateConditionType(String),
    #[error("condition type `{0}` is reserved")]
    ReservedConditionType(String),
    #[error("unknown action type `{0}`")]
    UnknownActionType(String),
    #[error("unknown datasource {0}")]
    UnknownDatasource(Index),
    #[error("matcher panicked: {0}")]
    Panicked(String),
    #[error(transparent)]
    Dispatch(#[from] ExecError),
}

/// One datasource reading inside an [`Ist`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub value: f64,
    pub session: u64,
}

/// Inner symbol table: symbol → latest reading, for one evaluation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ist {
    entries: Vec<(String, Sample)>,
}

impl Ist {
    pub fn new() -> Self {
        Ist::default()
    }

    /// Builds a table with session 0 for every value. Handy in tests.
    pub fn from_values(values: impl IntoIterator<Item = (String, f64)>) -> Self {
        let mut ist = Ist::new();
        for (symbol, value) in values {
            ist.insert(symbol, Sample { value, session: 0 });
        }
        ist
    }

    pub fn insert(&mut self, symbol: impl Into<String>, sample: Sample) {
        let symbol = symbol.into();
        match self.entries.iter_mut().find(|(s, _)| *s == symbol) {
            Some((_, slot)) => *slot = sample,
            None => self.entries.push((symbol, sample)),
        }
    }

    pub fn get(&self, symbol: &str) -> Option<Sample> {
        self.entries
            .iter()
            .find(|(s, _)| s == symbol)
            .map(|(_, v)| *v)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Sample)> {
        self.entries.iter().map(|(s, v)| (s.as_str(), *v))
    }
}

/// Result of [`build_ist`].
#[derive(Debug, Clone, PartialEq)]
pub enum IstBuild {
    Ready(Ist),
    /// At least one datasource has not received data yet.
    Incomplete,
}

/// Reads every datasource of `ost` from the cache.
pub fn build_ist(ost: &[DatasourceDecl], dsb: &Dsb) -> Result<IstBuild, MatchError> {
    let mut ist = Ist {
        entries: Vec::with_capacity(ost.len()),
    };
    for decl in ost {
        match dsb.get(&decl.index) {
            Lookup::Value { value, session } => {
                ist.insert(decl.symbol.clone(), Sample { value, session })
            }
            Lookup::NoDataYet => return Ok(IstBuild::Incomplete),
            Lookup::Absent => return Err(MatchError::UnknownDatasource(decl.index.clone())),
        }
    }
    Ok(IstBuild::Ready(ist))
}

/// Renders a value for substitution: shortest round-trip decimal, no
/// trailing `.0` for integral values.
pub fn render_number(value: f64) -> String {
    format!("{value}")
}

/// Replaces every `$symbol` in `params` with its value from `ist`.
pub fn substitute_symbols(params: &str, ist: &Ist) -> Result<String, MatchError> {
    let mut out = String::with_capacity(params.len() + 8);
    let mut last = 0;
    for (at, name) in symbol_references(params) {
        let sample = ist
            .get(name)
            .ok_or_else(|| MatchError::UnresolvedVariable(name.to_string()))?;
        out.push_str(&params[last..at]);
        out.push_str(&render_number(sample.value));
        last = at + 1 + name.len();
    }
    out.push_str(&params[last..]);
    Ok(out)
}

/// A matching function for one condition type.
pub trait ConditionMatcher: Send + Sync {
    /// Start-time check of a rule's argument list.
    fn validate(&self, _args: &[Token]) -> Result<(), MatchError> {
        Ok(())
    }

    fn matches(&self, ist: &Ist, args: &[Token]) -> Result<bool, MatchError>;
}

impl<F> ConditionMatcher for F
where
    F: Fn(&Ist, &[Token]) -> Result<bool, MatchError> + Send + Sync,
{
    fn matches(&self, ist: &Ist, args: &[Token]) -> Result<bool, MatchError> {
        self(ist, args)
    }
}

struct ExpressionMatcher;

impl ConditionMatcher for ExpressionMatcher {
    fn validate(&self, args: &[Token]) -> Result<(), MatchError> {
        if crate::dsl::is_well_formed_postfix(args) {
            Ok(())
        } else {
            Err(MatchError::MalformedProgram)
        }
    }

    fn matches(&self, ist: &Ist, args: &[Token]) -> Result<bool, MatchError> {
        fm_expression(ist, args)
    }
}

/// condition type → matching function.
pub struct MatcherMap {
    entries: HashMap<String, Arc<dyn ConditionMatcher>>,
}

impl Default for MatcherMap {
    fn default() -> Self {
        MatcherMap::new()
    }
}

impl MatcherMap {
    /// A map holding only the expression matcher.
    pub fn new() -> Self {
        let mut entries: HashMap<String, Arc<dyn ConditionMatcher>> = HashMap::new();
        entries.insert(
            EXPRESSION_CONDITION.to_string(),
            Arc::new(ExpressionMatcher),
        );
        MatcherMap { entries }
    }

    /// The expression matcher plus the built-in `PointSurface`.
    pub fn with_builtins() -> Self {
        let mut map = MatcherMap::new();
        map.register(PointSurface::CONDITION_TYPE, PointSurface)
            .expect("fresh map has no PointSurface");
        map
    }

    pub fn register(
        &mut self,
        condition_type: &str,
        matcher: impl ConditionMatcher + 'static,
    ) -> Result<(), MatchError> {
        if condition_type == EXPRESSION_CONDITION {
            return Err(MatchError::ReservedConditionType(
                condition_type.to_string(),
            ));
        }
        if self.entries.contains_key(condition_type) {
            return Err(MatchError::DuplicateConditionType(
                condition_type.to_string(),
            ));
        }
        self.entries
            .insert(condition_type.to_string(), Arc::new(matcher));
        Ok(())
    }

    pub fn get(&self, condition_type: &str) -> Option<Arc<dyn ConditionMatcher>> {
        self.entries.get(condition_type).cloned()
    }

    pub fn contains(&self, condition_type: &str) -> bool {
        self.entries.contains_key(condition_type)
    }

    pub fn condition_types(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

/// Per-rule counters, shared between the match function and introspection.
#[derive(Debug, Default)]
pub struct RuleStats {
    pub invocations: AtomicU64,
    pub evaluations: AtomicU64,
    pub matches: AtomicU64,
    pub dispatches: AtomicU64,
    pub errors: AtomicU64,
    pub skipped_incomplete: AtomicU64,
    pub skipped_duplicate: AtomicU64,
    pub overrun_skips: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RuleStatsSnapshot {
    pub invocations: u64,
    pub evaluations: u64,
    pub matches: u64,
    pub dispatches: u64,
    pub errors: u64,
    pub skipped_incomplete: u64,
    pub skipped_duplicate: u64,
    pub overrun_skips: u64,
}

impl RuleStats {
    pub fn snapshot(&self) -> RuleStatsSnapshot {
        let l = |c: &AtomicU64| c.load(Ordering::Relaxed);
        RuleStatsSnapshot {
            invocations: l(&self.invocations),
            evaluations: l(&self.evaluations),
            matches: l(&self.matches),
            dispatches: l(&self.dispatches),
            errors: l(&self.errors),
            skipped_incomplete: l(&self.skipped_incomplete),
            skipped_duplicate: l(&self.skipped_duplicate),
            overrun_skips: l(&self.overrun_skips),
        }
    }
}

fn bump(counter: &AtomicU64) {
    counter.fetch_add(1, Ordering::Relaxed);
}

/// What one invocation of a match function did.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Incomplete,
    /// Dedup is on and no datasource has a newer session.
    Duplicate,
    NoMatch,
    Matched {
        dispatched: usize,
    },
    Failed(MatchError),
}

/// The compiled, parameterless per-rule procedure.
pub struct MatchFunction {
    rule_id: RuleId,
    ost: Vec<DatasourceDecl>,
    program: Vec<Token>,
    actions: Vec<crate::dsl::Action>,
    matcher: Arc<dyn ConditionMatcher>,
    dsb: Arc<Dsb>,
    sink: Arc<dyn ActionSink>,
    dedup: bool,
    last_seen: Vec<u64>,
    stats: Arc<RuleStats>,
}

/// Builds the match function for a compiled rule. Condition and action
/// types are checked here so that a rule either starts cleanly or not at
/// all.
pub fn generate_match_function(
    rule_id: RuleId,
    rule: &CompiledRule,
    matchers: &MatcherMap,
    dsb: Arc<Dsb>,
    sink: Arc<dyn ActionSink>,
    dedup: bool,
    stats: Arc<RuleStats>,
) -> Result<MatchFunction, MatchError> {
    let matcher = matchers
        .get(&rule.condition_type)
        .ok_or_else(|| MatchError::UnknownConditionType(rule.condition_type.clone()))?;
    matcher.validate(&rule.program)?;
    if let Some(action) = rule.actions.iter().find(|a| !sink.accepts(&a.action_type)) {
        return Err(MatchError::UnknownActionType(action.action_type.clone()));
    }
    Ok(MatchFunction {
        rule_id,
        ost: rule.ost.clone(),
        program: rule.program.clone(),
        actions: rule.actions.clone(),
        matcher,
        dsb,
        sink,
        dedup,
        last_seen: vec![0; rule.ost.len()],
        stats,
    })
}

impl MatchFunction {
    pub fn rule_id(&self) -> RuleId {
        self.rule_id
    }

    pub fn ost(&self) -> &[DatasourceDecl] {
        &self.ost
    }

    pub fn stats(&self) -> &Arc<RuleStats> {
        &self.stats
    }

    /// One scheduled run. Errors are counted and logged, never returned.
    pub fn invoke(&mut self) {
        self.run_once();
    }

    /// Read → evaluate → dispatch, reporting what happened.
    pub fn run_once(&mut self) -> Outcome {
        bump(&self.stats.invocations);
        let ist = match build_ist(&self.ost, &self.dsb) {
            Ok(IstBuild::Ready(ist)) => ist,
            Ok(IstBuild::Incomplete) => {
                bump(&self.stats.skipped_incomplete);
                return Outcome::Incomplete;
            }
            Err(e) => return self.fail(e),
        };
        if self.dedup {
            let sessions: Vec<u64> = self
                .ost
                .iter()
                .map(|d| ist.get(&d.symbol).map_or(0, |s| s.session))
                .collect();
            if sessions
                .iter()
                .zip(&self.last_seen)
                .all(|(now, seen)| now <= seen)
            {
                bump(&self.stats.skipped_duplicate);
                return Outcome::Duplicate;
            }
            self.last_seen = sessions;
        }
        self.evaluate(&ist)
    }

    /// Runs the condition against `ist` and dispatches on a match. Used
    /// directly by push-mode loops, which fill the table themselves.
    pub fn evaluate(&self, ist: &Ist) -> Outcome {
        bump(&self.stats.evaluations);
        let verdict = catch_unwind(AssertUnwindSafe(|| {
            self.matcher.matches(ist, &self.program)
        }))
        .unwrap_or_else(|panic| Err(MatchError::Panicked(panic_message(&panic))));
        match verdict {
            Ok(false) => Outcome::NoMatch,
            Ok(true) => {
                bump(&self.stats.matches);
                let mut dispatched = 0;
                let mut first_error = None;
                for action in &self.actions {
                    let sent = substitute_symbols(&action.params, ist).and_then(|params| {
                        self.sink
                            .dispatch(ActionRequest::new(
                                self.rule_id,
                                &action.action_type,
                                params,
                            ))
                            .map_err(MatchError::from)
                    });
                    match sent {
                        Ok(()) => {
                            dispatched += 1;
                            bump(&self.stats.dispatches);
                        }
                        Err(e) => {
                            bump(&self.stats.errors);
                            log::warn!(
                                "rule {}: action {} not dispatched: {e}",
                                self.rule_id,
                                action.action_type
                            );
                            first_error.get_or_insert(e);
                        }
                    }
                }
                match first_error {
                    Some(e) if dispatched == 0 => Outcome::Failed(e),
                    _ => Outcome::Matched { dispatched },
                }
            }
            Err(e) => self.fail(e),
        }
    }

    fn fail(&self, error: MatchError) -> Outcome {
        bump(&self.stats.errors);
        log::warn!("rule {}: match failed: {error}", self.rule_id);
        Outcome::Failed(error)
    }
}

pub(crate) fn panic_message(panic: &Box<dyn std::any::Any + Send>) -> String {
    panic
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| panic.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".to_string())
}
