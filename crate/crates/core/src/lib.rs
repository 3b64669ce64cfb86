//! An embeddable rule engine for IoT device dataflows.
//!
//! Rules are three lines of text:
//!
//! ```text
//! Datasource: tem{1, Portable, temperature}
//! Condition:  tem > 22.1
//! Action:     WebSocket: 1,rule Matched, temperature is $tem!;Mqtt: localhost, 1883, admin, secret, test, control temperature
//! ```
//!
//! [`dsl`] compiles them; [`matcher`] turns the result into a match
//! function that reads the datasource cache ([`dsb`]), evaluates the
//! condition and hands actions to the [`executor`]. [`scheduler`] owns
//! the rule lifecycle and runs match functions periodically or on push.
//! [`ingest`] feeds device messages into the cache, [`api`] exposes the
//! lifecycle over REST and WebSocket, and [`harness`] holds the tools used
//! to exercise a running engine.
//!
//! ```
//! use iotrule::dsl::RuleText;
//! use iotrule::scheduler::{Engine, EngineConfig, NewRule};
//! use iotrule::executor::LogAction;
//!
//! let (log, _buffer) = LogAction::in_memory();
//! let engine = Engine::builder(EngineConfig::default())
//!     .builtin_actions(Some(log))?
//!     .build()?;
//! let rid = engine.create_rule(NewRule::new(
//!     "hot",
//!     RuleText::new("t{1, Portable, temperature}", "t > 22.1", "Log: hot $t"),
//! ))?;
//! engine.start_rule(rid)?;
//! engine.shutdown();
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod api;
pub mod dsb;
pub mod dsl;
pub mod executor;
pub mod harness;
pub mod ingest;
pub mod matcher;
pub mod mqtt;
pub mod scheduler;

pub use dsl::{parse_rule, CompiledRule, Index, RuleText};
pub use scheduler::{Engine, EngineConfig, EngineError, NewRule};
