//! A PointSurface rule that fires while a tracker is inside a polygon.

use std::sync::Arc;
use std::time::Duration;

use iotrule::executor::LogAction;
use iotrule::harness::{rules::point_surface_condition, GEOFENCE};
use iotrule::ingest::Ingestor;
use iotrule::scheduler::{Engine, EngineConfig, NewRule, TriggerMode};
use iotrule::RuleText;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (log, buffer) = LogAction::in_memory();
    let engine = Engine::builder(EngineConfig::default())
        .builtin_actions(Some(log))?
        .build()?;
    let ingestor = Ingestor::new(Arc::clone(engine.dsb()));

    let text = RuleText::new(
        "longitude{3, Portable, longitude}; latitude{3, Portable, latitude}",
        point_surface_condition("longitude", "latitude", &GEOFENCE),
        "Log: device 3 inside at $longitude $latitude",
    );
    let rid = engine.create_rule(NewRule::new("fence", text).trigger(TriggerMode::Push))?;
    engine.start_rule(rid)?;

    for (lon, lat) in [
        (116.30, 39.90),
        (116.40, 39.90),
        (116.41, 39.89),
        (116.50, 39.95),
    ] {
        let line = format!(
            r#"{{"device_id":"3","device_type":"Portable","longitude":{lon},"latitude":{lat}}}"#
        );
        ingestor.handle_line(&line)?;
    }
    std::thread::sleep(Duration::from_millis(300));
    engine.executor().wait_idle(Duration::from_secs(2));

    print!(
        "{}",
        String::from_utf8_lossy(&buffer.lock()).replace('\u{1f}', " | ")
    );
    println!("{:?}", engine.rule_stats(rid));
    engine.shutdown();
    Ok(())
}
