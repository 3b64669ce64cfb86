use std::io::Write;
use std::net::TcpStream;
use std::str::FromStr;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::HarnessError;
use crate::ingest::DeviceMessage;

/// The value sequence one simulated device sends.
#[derive(Debug, Clone, PartialEq)]
pub enum Scenario {
    Fixed(Vec<f64>),
    /// `steps` evenly spaced values from `from` to `to` inclusive.
    Ramp {
        from: f64,
        to: f64,
        steps: usize,
    },
    /// Seeded random walk with uniform steps in `[-step, step]`.
    RandomWalk {
        start: f64,
        step: f64,
        count: usize,
    },
}

impl Scenario {
    /// 21.0, 22.1, 23.4: below, at, and above the 22.1 threshold.
    pub fn test1() -> Self {
        Scenario::Fixed(vec![21.0, 22.1, 23.4])
    }

    pub fn values(&self, seed: u64) -> Vec<f64> {
        match *self {
            Scenario::Fixed(ref values) => values.clone(),
            Scenario::Ramp { from, to, steps } => match steps {
                0 => vec![],
                1 => vec![from],
                n => (0..n)
                    .map(|i| from + (to - from) * i as f64 / (n - 1) as f64)
                    .collect(),
            },
            Scenario::RandomWalk { start, step, count } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut value = start;
                (0..count)
                    .map(|i| {
                        if i > 0 {
                            value += rng.gen_range(-step..=step);
                        }
                        value
                    })
                    .collect()
            }
        }
    }
}

impl FromStr for Scenario {
    type Err = HarnessError;

    /// `test1`, `ramp:FROM:TO:STEPS`, `walk:START:STEP:COUNT`, or a
    /// comma-separated list of values.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || HarnessError::InvalidProfile(format!("unknown scenario `{s}`"));
        let num = |p: &str| p.trim().parse::<f64>().map_err(|_| bad());
        let int = |p: &str| p.trim().parse::<usize>().map_err(|_| bad());
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["test1"] => Ok(Scenario::test1()),
            ["ramp", from, to, steps] => Ok(Scenario::Ramp {
                from: num(from)?,
                to: num(to)?,
                steps: int(steps)?,
            }),
            ["walk", start, step, count] => Ok(Scenario::RandomWalk {
                start: num(start)?,
                step: num(step)?,
                count: int(count)?,
            }),
            [list] => list
                .split(',')
                .map(num)
                .collect::<Result<_, _>>()
                .map(Scenario::Fixed),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulateOptions {
    /// Ingestion address, `host:port`.
    pub target: String,
    pub device_id: String,
    pub device_type: String,
    pub attribute: String,
    pub scenario: Scenario,
    pub interval: Duration,
    pub seed: u64,
}

impl SimulateOptions {
    /// The device of the first experiment: `{1, Portable, temperature}`.
    pub fn test1(target: impl Into<String>) -> Self {
        SimulateOptions {
            target: target.into(),
            device_id: "1".into(),
            device_type: "Portable".into(),
            attribute: "temperature".into(),
            scenario: Scenario::test1(),
            interval: Duration::from_secs(2),
            seed: 0,
        }
    }

    /// The exact lines that will be sent.
    pub fn stream(&self) -> Vec<String> {
        self.scenario
            .values(self.seed)
            .into_iter()
            .map(|v| {
                DeviceMessage {
                    device_id: self.device_id.clone(),
                    device_type: self.device_type.clone(),
                    attributes: [(self.attribute.clone(), v)].into_iter().collect(),
                    received_at: chrono::DateTime::UNIX_EPOCH,
                }
                .to_line()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimulateReport {
    pub sent: usize,
}

/// Streams the scenario to the ingestion socket, `interval` apart.
pub fn simulate_devices(options: &SimulateOptions) -> Result<SimulateReport, HarnessError> {
    let mut stream = TcpStream::connect(&options.target)?;
    stream.set_nodelay(true)?;
    let lines = options.stream();
    for (i, line) in lines.iter().enumerate() {
        if i > 0 {
            std::thread::sleep(options.interval);
        }
        stream.write_all(line.as_bytes())?;
        stream.write_all(b"\n")?;
        stream.flush()?;
    }
    Ok(SimulateReport { sent: lines.len() })
}
