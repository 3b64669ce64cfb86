//! Registering a condition type and an action type of your own.

use std::sync::Arc;
use std::time::Duration;

use iotrule::dsl::Token;
use iotrule::executor::ActionRequest;
use iotrule::matcher::{Ist, MatchError};
use iotrule::scheduler::{Engine, EngineConfig, NewRule, TriggerMode};
use iotrule::{Index, RuleText};
use parking_lot::Mutex;

/// `Between: x, low, high`
fn between(ist: &Ist, args: &[Token]) -> Result<bool, MatchError> {
    let [x, low, high] = args else {
        return Err(MatchError::Arity(format!(
            "Between takes 3 arguments, got {}",
            args.len()
        )));
    };
    let value = |t: &Token| match t.real_num {
        Some(n) => Ok(n),
        None => ist
            .get(&t.value)
            .map(|s| s.value)
            .ok_or_else(|| MatchError::UnresolvedVariable(t.value.clone())),
    };
    let x = value(x)?;
    Ok(value(low)? <= x && x <= value(high)?)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let alerts = Arc::new(Mutex::new(Vec::new()));
    let sink = Arc::clone(&alerts);
    let engine = Engine::builder(EngineConfig::default())
        .condition("Between", between)?
        .action("Alert", move |r: &ActionRequest| {
            sink.lock().push(r.params.clone());
            Ok(())
        })?
        .build()?;

    let text = RuleText::new(
        "h{greenhouse, Station, humidity}",
        "Between: h, 40, 60",
        "Alert: humidity ok at $h",
    );
    let rid = engine.create_rule(NewRule::new("comfort", text).trigger(TriggerMode::Push))?;
    engine.start_rule(rid)?;

    let index = Index::new("greenhouse", "Station", "humidity");
    for v in [35.0, 45.0, 61.0, 60.0] {
        engine.dsb().update(&index, v);
    }
    std::thread::sleep(Duration::from_millis(200));
    engine.executor().wait_idle(Duration::from_secs(1));
    println!("{:#?}", alerts.lock());
    engine.shutdown();
    Ok(())
}
