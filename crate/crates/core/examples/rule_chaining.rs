//! Rule A writes a cache cell with SetCell; rule B reads that cell. A is
//! push-triggered, so B acts within one of its own periods.

use std::time::{Duration, Instant};

use iotrule::executor::LogAction;
use iotrule::scheduler::{Engine, EngineConfig, NewRule, TriggerMode};
use iotrule::{Index, RuleText};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (log, buffer) = LogAction::in_memory();
    let engine = Engine::builder(EngineConfig::default())
        .builtin_actions(Some(log))?
        .build()?;

    let a = RuleText::new(
        "smoke{kitchen, Detector, smoke}",
        "smoke > 0.3",
        "SetCell: house, Virtual, alarm, 1",
    );
    let b = RuleText::new(
        "alarm{house, Virtual, alarm}",
        "alarm > 0",
        "Log: alarm raised",
    );
    let rid_a = engine.create_rule(NewRule::new("detect", a).trigger(TriggerMode::Push))?;
    let rid_b = engine.create_rule(
        NewRule::new("alarm", b)
            .period(1)
            .trigger(TriggerMode::PeriodicDedup),
    )?;
    engine.start_rule(rid_a)?;
    engine.start_rule(rid_b)?;

    let started = Instant::now();
    engine
        .dsb()
        .update(&Index::new("kitchen", "Detector", "smoke"), 0.8);
    while buffer.lock().is_empty() && started.elapsed() < Duration::from_secs(5) {
        std::thread::sleep(Duration::from_millis(20));
    }
    println!("rule B acted {:?} after the update", started.elapsed());
    print!(
        "{}",
        String::from_utf8_lossy(&buffer.lock()).replace('\u{1f}', " | ")
    );
    engine.shutdown();
    Ok(())
}
