use std::io::Write;
use std::net::TcpStream;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value as Json};

use super::{benchmark_rule, resident_memory_of, HarnessError, LoadProfile, GEOFENCE};

#[derive(Debug, Clone)]
pub struct MembenchOptions {
    /// Engine base URL, e.g. `http://127.0.0.1:8080`.
    pub target: String,
    pub profile: LoadProfile,
    pub seed: u64,
    /// Ingestion address; when set, every benchmark device sends
    /// `profile.message_rate` position updates per second.
    pub ingest: Option<String>,
    /// Engine pid, for an outside RSS reading next to the self-reported one.
    pub engine_pid: Option<u32>,
    pub sample_interval: Duration,
    /// Where to write the CSV.
    pub out: Option<PathBuf>,
}

impl MembenchOptions {
    pub fn new(target: impl Into<String>, profile: LoadProfile) -> Self {
        MembenchOptions {
            target: target.into(),
            profile,
            seed: 0,
            ingest: None,
            engine_pid: None,
            sample_interval: Duration::from_secs(5),
            out: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MemorySample {
    /// Seconds since the Unix epoch.
    pub timestamp: f64,
    pub resident_bytes: u64,
    pub live_rules: u64,
    /// RSS read from `/proc/<pid>` by the benchmark itself.
    pub external_resident_bytes: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MembenchReport {
    pub rule_count: usize,
    pub baseline_bytes: u64,
    pub peak_bytes: u64,
    pub bytes_per_rule: f64,
    pub creation_seconds: f64,
    pub messages_sent: u64,
    pub samples: Vec<MemorySample>,
}

impl MembenchReport {
    pub fn to_csv(&self) -> String {
        let mut csv = String::from("timestamp,resident_bytes,live_rules,external_resident_bytes\n");
        for s in &self.samples {
            let external = s
                .external_resident_bytes
                .map(|b| b.to_string())
                .unwrap_or_default();
            csv.push_str(&format!(
                "{:.3},{},{},{}\n",
                s.timestamp, s.resident_bytes, s.live_rules, external
            ));
        }
        csv
    }
}

fn http_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Http(e.to_string())
}

fn sample(
    client: &reqwest::blocking::Client,
    options: &MembenchOptions,
) -> Result<MemorySample, HarnessError> {
    let stats: Json = client
        .get(format!("{}/stats", options.target))
        .send()
        .and_then(|r| r.error_for_status())
        .and_then(|r| r.json())
        .map_err(http_err)?;
    let resident_bytes = stats["resident_memory_bytes"]
        .as_u64()
        .ok_or_else(|| HarnessError::Http("engine does not report resident memory".into()))?;
    Ok(MemorySample {
        timestamp: chrono::Utc::now().timestamp_millis() as f64 / 1000.0,
        resident_bytes,
        live_rules: stats["active"].as_u64().unwrap_or(0),
        external_resident_bytes: options.engine_pid.and_then(resident_memory_of),
    })
}

fn create_rules(
    client: &reqwest::blocking::Client,
    options: &MembenchOptions,
) -> Result<(), HarnessError> {
    let profile = options.profile;
    let created = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let per_thread = profile.rule_count.div_ceil(profile.threads);
    let results: Vec<Result<(), HarnessError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..profile.threads)
            .map(|t| {
                let (created, failed) = (&created, &failed);
                scope.spawn(move || -> Result<(), HarnessError> {
                    let end = ((t + 1) * per_thread).min(profile.rule_count);
                    for device in t * per_thread..end {
                        if failed.load(Ordering::Relaxed) {
                            return Ok(());
                        }
                        let text = benchmark_rule(device);
                        let body = json!({
                            "name": format!("bench-{device}"),
                            "datasource": text.datasource,
                            "condition": text.condition,
                            "action": text.action,
                            "period_seconds": profile.period_seconds,
                        });
                        let outcome = client
                            .post(format!("{}/rules", options.target))
                            .json(&body)
                            .send()
                            .and_then(|r| r.error_for_status())
                            .and_then(|r| r.json::<Json>())
                            .map_err(http_err)
                            .and_then(|created| {
                                let rid = created["rid"]
                                    .as_u64()
                                    .ok_or_else(|| http_err("response has no rid"))?;
                                client
                                    .post(format!("{}/rules/{rid}/start", options.target))
                                    .send()
                                    .and_then(|r| r.error_for_status())
                                    .map(|_| ())
                                    .map_err(http_err)
                            });
                        if let Err(e) = outcome {
                            failed.store(true, Ordering::Relaxed);
                            return Err(e);
                        }
                        created.fetch_add(1, Ordering::Relaxed);
                    }
                    Ok(())
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(http_err("creator panicked")))
            })
            .collect()
    });
    if let Some(Err(e)) = results.into_iter().find(Result::is_err) {
        return Err(HarnessError::RuleCreation {
            created: created.load(Ordering::Relaxed),
            message: e.to_string(),
        });
    }
    Ok(())
}

/// Sends position updates for every benchmark device until `stop`.
fn feed(
    addr: &str,
    profile: LoadProfile,
    seed: u64,
    stop: &AtomicBool,
) -> Result<u64, HarnessError> {
    let mut stream = std::io::BufWriter::new(TcpStream::connect(addr)?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (min_x, max_x) = GEOFENCE
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (min_y, max_y) = GEOFENCE
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.1), b.max(p.1)));
    let mut sent = 0u64;
    let mut next = Instant::now();
    while !stop.load(Ordering::Relaxed) {
        for device in 0..profile.rule_count {
            for _ in 0..profile.message_rate {
                let lon = rng.gen_range(min_x - 0.01..max_x + 0.01);
                let lat = rng.gen_range(min_y - 0.01..max_y + 0.01);
                writeln!(
                    stream,
                    r#"{{"device_id":"bench-{device}","device_type":"Tracker","longitude":{lon},"latitude":{lat}}}"#
                )?;
                sent += 1;
            }
        }
        stream.flush()?;
        next += Duration::from_secs(1);
        while Instant::now() < next && !stop.load(Ordering::Relaxed) {
            std::thread::sleep(Duration::from_millis(20));
        }
    }
    Ok(sent)
}

/// Creates and starts `profile.rule_count` geofence rules through the REST
/// interface, then samples resident memory for `profile.duration`.
/// bytes per rule = (peak − baseline) / rule_count.
pub fn run_memory_benchmark(options: &MembenchOptions) -> Result<MembenchReport, HarnessError> {
    let profile = options.profile;
    profile.validate()?;
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(30))
        .pool_max_idle_per_host(profile.threads)
        .build()
        .map_err(http_err)?;
    client
        .get(format!("{}/health", options.target))
        .send()
        .and_then(|r| r.error_for_status())
        .map_err(http_err)?;

    let baseline = sample(&client, options)?;
    let mut samples = vec![baseline];

    let started = Instant::now();
    create_rules(&client, options)?;
    let creation_seconds = started.elapsed().as_secs_f64();
    samples.push(sample(&client, options)?);

    let stop = AtomicBool::new(false);
    let (messages_sent, sampled) = std::thread::scope(|scope| {
        let feeder = options
            .ingest
            .as_deref()
            .map(|addr| scope.spawn(|| feed(addr, profile, options.seed, &stop)));
        let sampled = (|| {
            let deadline = Instant::now() + profile.duration();
            let mut taken = Vec::new();
            while Instant::now() < deadline {
                std::thread::sleep(options.sample_interval.min(deadline - Instant::now()));
                taken.push(sample(&client, options)?);
            }
            Ok::<_, HarnessError>(taken)
        })();
        stop.store(true, Ordering::Relaxed);
        let sent = match feeder.map(|h| h.join()) {
            Some(Ok(Ok(n))) => n,
            Some(Ok(Err(e))) => {
                log::warn!("feeder stopped: {e}");
                0
            }
            Some(Err(_)) => 0,
            None => 0,
        };
        (sent, sampled)
    });
    samples.extend(sampled?);

    let peak = samples
        .iter()
        .map(|s| s.resident_bytes)
        .max()
        .unwrap_or(baseline.resident_bytes);
    let report = MembenchReport {
        rule_count: profile.rule_count,
        baseline_bytes: baseline.resident_bytes,
        peak_bytes: peak,
        bytes_per_rule: peak.saturating_sub(baseline.resident_bytes) as f64
            / profile.rule_count as f64,
        creation_seconds,
        messages_sent,
        samples,
    };
    if let Some(path) = &options.out {
        std::fs::write(path, report.to_csv())?;
    }
    Ok(report)
}
