//! Rules survive a restart: active rules come back running.

use std::sync::Arc;

use iotrule::executor::LogAction;
use iotrule::scheduler::{Engine, EngineConfig, FileStore, NewRule};
use iotrule::RuleText;

fn engine_at(path: &std::path::Path) -> Result<Engine, Box<dyn std::error::Error>> {
    let (log, _) = LogAction::in_memory();
    Ok(Engine::builder(EngineConfig::default())
        .store(Arc::new(FileStore::open(path)?))
        .builtin_actions(Some(log))?
        .build()?)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("iotrule-durable-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("rules.jsonl");

    let engine = engine_at(&path)?;
    let text = |n: u32| {
        RuleText::new(
            format!("t{{{n}, Portable, temperature}}"),
            "t > 22.1",
            "Log: $t",
        )
    };
    let running = engine.create_rule(NewRule::new("running", text(1)))?;
    let idle = engine.create_rule(NewRule::new("idle", text(2)))?;
    engine.start_rule(running)?;
    engine.shutdown();

    let engine = engine_at(&path)?;
    for view in engine.list_rules()? {
        println!(
            "rid {} {:<8} {}",
            view.record.rid, view.record.name, view.record.state
        );
    }
    println!(
        "consistent after restart: {}",
        engine.check_consistency().is_consistent()
    );
    println!(
        "rule {idle} still inactive, datasources registered: {}",
        engine.dsb().len()
    );
    engine.shutdown();
    std::fs::remove_dir_all(dir)?;
    Ok(())
}
