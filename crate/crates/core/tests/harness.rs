mod common;

use std::sync::Arc;
use std::time::Duration;

use iotrule::api::ApiServer;
use iotrule::executor::{LogAction, FIELD_SEPARATOR};
use iotrule::harness::{
    run_memory_benchmark, simulate_devices, HarnessError, LoadProfile, MembenchOptions, Scenario,
    SimulateOptions,
};
use iotrule::ingest::{AccepterConfig, Ingestor, TcpAccepter};
use iotrule::scheduler::{Engine, EngineConfig, NewRule, TriggerMode};
use iotrule::RuleText;

#[test]
fn seeded_streams_are_byte_identical() {
    let mut options = SimulateOptions::test1("127.0.0.1:1");
    options.scenario = "walk:20:0.5:200".parse().unwrap();
    options.seed = 42;
    let first = options.stream().join("\n");
    assert_eq!(first, options.stream().join("\n"));
    options.seed = 43;
    assert_ne!(first, options.stream().join("\n"));
}

#[test]
fn unreachable_target_is_an_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let options = SimulateOptions::test1(addr.to_string());
    assert!(matches!(
        simulate_devices(&options),
        Err(HarnessError::Io(_))
    ));

    let mut bench = MembenchOptions::new(format!("http://{addr}"), LoadProfile::SMOKE);
    bench.sample_interval = Duration::from_millis(100);
    assert!(run_memory_benchmark(&bench).is_err());
}

#[test]
fn ramp_triggers_at_first_value_above_threshold() {
    let (log, buffer) = LogAction::in_memory();
    let engine = Engine::builder(EngineConfig::default())
        .builtin_actions(Some(log))
        .unwrap()
        .build()
        .unwrap();
    let ingestor = Arc::new(Ingestor::new(Arc::clone(engine.dsb())));
    let accepter = TcpAccepter::bind("127.0.0.1:0", ingestor, AccepterConfig::default()).unwrap();
    let text = RuleText::new("t{1, Portable, temperature}", "t > 22.1", "Log: $t");
    let rid = engine
        .create_rule(NewRule::new("ramp", text).trigger(TriggerMode::Push))
        .unwrap();
    engine.start_rule(rid).unwrap();

    let mut options = SimulateOptions::test1(accepter.local_addr().to_string());
    options.scenario = Scenario::Ramp {
        from: 20.0,
        to: 25.0,
        steps: 21,
    };
    options.interval = Duration::from_millis(5);
    let values = options.scenario.values(0);
    let expected: Vec<f64> = values.iter().copied().filter(|v| *v > 22.1).collect();
    assert_eq!(simulate_devices(&options).unwrap().sent, 21);

    let logged = || -> Vec<f64> {
        String::from_utf8(buffer.lock().clone())
            .unwrap()
            .lines()
            .map(|l| l.rsplit(FIELD_SEPARATOR).next().unwrap().parse().unwrap())
            .collect()
    };
    assert!(common::wait_until(Duration::from_secs(5), || logged()
        .len()
        == expected.len()));
    assert_eq!(logged(), expected);
    assert_eq!(logged()[0], 22.25);
    engine.shutdown();
}

#[test]
fn small_memory_benchmark_runs_end_to_end() {
    let engine = Engine::builder(EngineConfig::default())
        .builtin_actions(None)
        .unwrap()
        .build()
        .unwrap();
    let server = ApiServer::start(engine.clone(), "127.0.0.1:0").unwrap();
    let ingestor = Arc::new(Ingestor::new(Arc::clone(engine.dsb())));
    let accepter = TcpAccepter::bind(
        "127.0.0.1:0",
        Arc::clone(&ingestor),
        AccepterConfig::default(),
    )
    .unwrap();
    let out = tempfile::NamedTempFile::new().unwrap();

    let profile = LoadProfile {
        rule_count: 50,
        threads: 4,
        period_seconds: 1,
        message_rate: 2,
        duration_seconds: 2,
    };
    let mut options = MembenchOptions::new(server.url(), profile);
    options.ingest = Some(accepter.local_addr().to_string());
    options.sample_interval = Duration::from_millis(500);
    options.out = Some(out.path().to_path_buf());
    let report = run_memory_benchmark(&options).unwrap();

    assert_eq!(report.rule_count, 50);
    assert_eq!(engine.stats().active, 50);
    assert!(report.peak_bytes >= report.baseline_bytes);
    assert!(report.samples.len() >= 3);
    assert!(report.messages_sent > 0);
    assert!(ingestor.stats().applied > 0);
    let csv = std::fs::read_to_string(out.path()).unwrap();
    assert_eq!(csv.lines().count(), report.samples.len() + 1);
    engine.shutdown();
}
