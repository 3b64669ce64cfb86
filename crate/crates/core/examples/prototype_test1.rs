//! The first prototype experiment end to end: MQTT broker, engine with
//! REST/WebSocket and TCP ingestion, two subscribers, and a device
//! simulator sending 21.0, 22.1, 23.4.

use std::sync::Arc;
use std::time::Duration;

use iotrule::api::ApiServer;
use iotrule::harness::{rules, simulate_devices, Expectations, SimulateOptions, TestSubscribers};
use iotrule::ingest::{AccepterConfig, Ingestor, TcpAccepter};
use iotrule::mqtt::MiniBroker;
use iotrule::scheduler::{Engine, EngineConfig, NewRule, TriggerMode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let broker = MiniBroker::bind("127.0.0.1:0")?;
    let engine = Engine::builder(EngineConfig::default())
        .builtin_actions(None)?
        .build()?;
    let server = ApiServer::start(engine.clone(), "127.0.0.1:0")?;
    let ingestor = Arc::new(Ingestor::new(Arc::clone(engine.dsb())));
    let accepter = TcpAccepter::bind("127.0.0.1:0", ingestor, AccepterConfig::default())?;

    let mqtt = broker.local_addr();
    let rule = rules::rule_1(&mqtt.ip().to_string(), mqtt.port());
    let rid = engine.create_rule(
        NewRule::new("rule 1", rule)
            .period(1)
            .trigger(TriggerMode::PeriodicDedup),
    )?;
    engine.start_rule(rid)?;

    let mut expectations =
        Expectations::test1(&mqtt.to_string(), &format!("ws://{}", server.local_addr()));
    expectations.timeout_seconds = 5.0;
    let subscribers = TestSubscribers::connect(&expectations)?;
    while !engine.registry().is_connected("1") {
        std::thread::sleep(Duration::from_millis(10));
    }

    let report = simulate_devices(&SimulateOptions::test1(accepter.local_addr().to_string()))?;
    println!("simulator sent {} messages", report.sent);
    let report = subscribers.finish();
    print!("{report}");
    println!("{:?}", engine.rule_stats(rid));

    drop(server);
    engine.shutdown();
    Ok(())
}
