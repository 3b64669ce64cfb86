//! Push-triggered rules evaluate once per update, in order.

use std::sync::Arc;
use std::time::Duration;

use iotrule::executor::ActionRequest;
use iotrule::scheduler::{Engine, EngineConfig, NewRule, TriggerMode};
use iotrule::{Index, RuleText};
use parking_lot::Mutex;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seen = Arc::new(Mutex::new(Vec::new()));
    let sink = Arc::clone(&seen);
    let engine = Engine::builder(EngineConfig::default())
        .action("Collect", move |r: &ActionRequest| {
            sink.lock().push(r.params.clone());
            Ok(())
        })?
        .build()?;

    let text = RuleText::new("level{tank, Gauge, level}", "level > 0", "Collect: $level");
    let rid = engine.create_rule(NewRule::new("every level", text).trigger(TriggerMode::Push))?;
    engine.start_rule(rid)?;

    let index = Index::new("tank", "Gauge", "level");
    for v in 1..=1000 {
        engine.dsb().update(&index, v as f64);
    }
    while seen.lock().len() < 1000 {
        std::thread::sleep(Duration::from_millis(10));
    }
    let values: Vec<u32> = seen.lock().iter().map(|s| s.parse().unwrap()).collect();
    let in_order = values.windows(2).all(|w| w[0] < w[1]);
    println!("received {} values, in order: {in_order}", values.len());
    println!("{:?}", engine.rule_stats(rid));
    engine.shutdown();
    Ok(())
}
