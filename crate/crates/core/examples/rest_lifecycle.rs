//! Walk one rule through its lifecycle over HTTP.

use iotrule::api::ApiServer;
use iotrule::executor::LogAction;
use iotrule::scheduler::{Engine, EngineConfig};
use serde_json::{json, Value};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (log, _) = LogAction::in_memory();
    let engine = Engine::builder(EngineConfig::default())
        .builtin_actions(Some(log))?
        .build()?;
    let server = ApiServer::start(engine.clone(), "127.0.0.1:0")?;
    let base = server.url();
    let http = reqwest::blocking::Client::new();

    let show =
        |what: &str, response: reqwest::blocking::Response| -> Result<Value, reqwest::Error> {
            let status = response.status();
            let body: Value = response.json().unwrap_or(Value::Null);
            println!("{what:<28} {status} state={}", body["state"]);
            Ok(body)
        };

    let created = show(
        "POST /rules",
        http.post(format!("{base}/rules"))
            .json(&json!({
                "name": "hot",
                "datasource": "t{1, Portable, temperature}",
                "condition": "t > 22.1",
                "action": "Log: hot $t",
                "period_seconds": 1,
            }))
            .send()?,
    )?;
    let rid = created["rid"].as_u64().expect("rid");

    show(
        "POST /rules/{rid}/schedule",
        http.post(format!("{base}/rules/{rid}/schedule"))
            .json(&json!({"fire_at": "+1s"}))
            .send()?,
    )?;
    show(
        "POST /rules/{rid}/start",
        http.post(format!("{base}/rules/{rid}/start")).send()?,
    )?;
    std::thread::sleep(std::time::Duration::from_millis(1500));
    show(
        "GET /rules/{rid}",
        http.get(format!("{base}/rules/{rid}")).send()?,
    )?;
    show(
        "PUT /rules/{rid}",
        http.put(format!("{base}/rules/{rid}"))
            .json(&json!({"condition": "t > 25"}))
            .send()?,
    )?;
    show(
        "POST /rules/{rid}/end",
        http.post(format!("{base}/rules/{rid}/end")).send()?,
    )?;
    show(
        "PUT /rules/{rid}",
        http.put(format!("{base}/rules/{rid}"))
            .json(&json!({"condition": "t > 25"}))
            .send()?,
    )?;
    show(
        "DELETE /rules/{rid}",
        http.delete(format!("{base}/rules/{rid}")).send()?,
    )?;
    show(
        "GET /rules/{rid}",
        http.get(format!("{base}/rules/{rid}")).send()?,
    )?;

    drop(server);
    engine.shutdown();
    Ok(())
}
