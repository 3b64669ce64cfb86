//! Tooling that reproduces the prototype experiments: a device simulator,
//! MQTT/WebSocket test subscribers, and a memory benchmark.

mod membench;
mod simulate;
mod subscribe;

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use membench::{run_memory_benchmark, MembenchOptions, MembenchReport, MemorySample};
pub use simulate::{simulate_devices, Scenario, SimulateOptions, SimulateReport};
pub use subscribe::{
    run_test_subscribers, ChannelReport, Expectations, MqttExpectation, SubscriberReport,
    TestSubscribers, WebSocketExpectation,
};

use crate::dsl::RuleText;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("http: {0}")]
    Http(String),
    #[error("websocket: {0}")]
    WebSocket(String),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("rule creation failed after {created} rule(s): {message}")]
    RuleCreation { created: usize, message: String },
}

/// Load parameters for the simulator and the memory benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadProfile {
    pub rule_count: usize,
    pub threads: usize,
    pub period_seconds: u64,
    /// Messages per second per device.
    pub message_rate: u64,
    pub duration_seconds: u64,
}

impl LoadProfile {
    /// 10,000 rules over 20 creator threads for ten minutes.
    pub const DESK: LoadProfile = LoadProfile {
        rule_count: 10_000,
        threads: 20,
        period_seconds: 5,
        message_rate: 1,
        duration_seconds: 600,
    };
    pub const SMALL: LoadProfile = LoadProfile {
        rule_count: 100,
        threads: 4,
        period_seconds: 5,
        message_rate: 1,
        duration_seconds: 60,
    };
    pub const SMOKE: LoadProfile = LoadProfile {
        rule_count: 10,
        threads: 2,
        period_seconds: 1,
        message_rate: 2,
        duration_seconds: 5,
    };

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fields = [
            ("rule_count", self.rule_count as u64),
            ("threads", self.threads as u64),
            ("period_seconds", self.period_seconds),
            ("message_rate", self.message_rate),
            ("duration_seconds", self.duration_seconds),
        ];
        match fields.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(HarnessError::InvalidProfile(format!(
                "{name} must be positive"
            ))),
            None => Ok(()),
        }
    }

    pub fn duration(&self) -> Duration {
        Duration::from_secs(self.duration_seconds)
    }

    /// A preset name (`desk`, `small`, `smoke`) or a path to a JSON file.
    pub fn load(name_or_path: &str) -> Result<Self, HarnessError> {
        let profile = match name_or_path {
            "desk" => Self::DESK,
            "small" => Self::SMALL,
            "smoke" => Self::SMOKE,
            path => {
                let text = std::fs::read_to_string(Path::new(path))?;
                serde_json::from_str(&text)
                    .map_err(|e| HarnessError::InvalidProfile(e.to_string()))?
            }
        };
        profile.validate()?;
        Ok(profile)
    }
}

/// Resident set size of this process, from `/proc/self/status`.
pub fn resident_memory_bytes() -> Option<u64> {
    resident_memory_from_status(&std::fs::read_to_string("/proc/self/status").ok()?)
}

/// Resident set size of another process.
pub fn resident_memory_of(pid: u32) -> Option<u64> {
    resident_memory_from_status(&std::fs::read_to_string(format!("/proc/{pid}/status")).ok()?)
}

fn resident_memory_from_status(status: &str) -> Option<u64> {
    let line = status.lines().find(|l| l.starts_with("VmRSS:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

/// A synthetic quadrilateral around (116.40, 39.90), standing in for the
/// masked geofence of the original experiments.
pub const GEOFENCE: [(f64, f64); 4] = [
    (116.403512, 39.924655),
    (116.417702, 39.895455),
    (116.404892, 39.873353),
    (116.383846, 39.891365),
];

/// Example rules from the original experiments, with the broker address
/// made configurable.
pub mod rules {
    use super::GEOFENCE;
    use crate::dsl::RuleText;

    pub fn rule_1(mqtt_host: &str, mqtt_port: u16) -> RuleText {
        RuleText::new(
            "tem{1, Portable, temperature}",
            "tem > 22.1",
            format!(
                "WebSocket: 1,rule Matched, temperature is $tem!;Mqtt: {mqtt_host}, {mqtt_port}, admin, emqx@123456, test, control temperature"
            ),
        )
    }

    pub fn rule_2(mqtt_host: &str, mqtt_port: u16) -> RuleText {
        RuleText::new(
            "tem_1{1, Portable, temperature}; tem_2{1, Fixed, temperature}",
            "(tem_2 > 25.3) & (tem_1 > tem_2 +3 )",
            format!(
                "WebSocket: 1,rule Matched, temperature is $tem_2 and $tem_1!;Mqtt: {mqtt_host}, {mqtt_port}, admin, emqx@123456, command, open fan"
            ),
        )
    }

    pub fn rule_3(mqtt_host: &str, mqtt_port: u16) -> RuleText {
        RuleText::new(
            "longitude{3, Portable, longitude}; latitude{3, Portable, latitude}",
            point_surface_condition("longitude", "latitude", &GEOFENCE),
            format!(
                "WebSocket: 1,rule Matched, position is $longitude $latitude!;Mqtt: {mqtt_host}, {mqtt_port}, admin, emqx@123456, command, find device"
            ),
        )
    }

    pub fn point_surface_condition(x: &str, y: &str, polygon: &[(f64, f64)]) -> String {
        let mut condition = format!("PointSurface: {x}, {y}");
        for (px, py) in polygon {
            condition.push_str(&format!(", {px}, {py}"));
        }
        condition
    }
}

/// The geofence rule used by the memory benchmark, one device per rule.
pub fn benchmark_rule(device: usize) -> RuleText {
    RuleText::new(
        format!(
            "lon{{bench-{device}, Tracker, longitude}}; lat{{bench-{device}, Tracker, latitude}}"
        ),
        rules::point_surface_condition("lon", "lat", &GEOFENCE),
        format!("WebSocket: bench-{device},device {device} at $lon $lat"),
    )
}
