mod common;

use std::time::Duration;

use futures::{SinkExt, StreamExt};
use iotrule::api::ApiServer;
use iotrule::executor::LogAction;
use iotrule::scheduler::{Engine, EngineConfig, EngineError, NewRule, RuleUpdate};
use iotrule::RuleText;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;

fn engine() -> Engine {
    let (log, _) = LogAction::in_memory();
    Engine::builder(EngineConfig::default())
        .builtin_actions(Some(log))
        .unwrap()
        .build()
        .unwrap()
}

fn rule_body(threshold: f64) -> Value {
    json!({
        "name": "hot",
        "datasource": "t{1, Portable, temperature}",
        "condition": format!("t > {threshold}"),
        "action": "Log: hot $t",
        "period_seconds": 1,
    })
}

#[test]
fn status_codes() {
    let engine = engine();
    let server = ApiServer::start(engine.clone(), "127.0.0.1:0").unwrap();
    let base = server.url();
    let http = Client::new();

    assert_eq!(
        http.get(format!("{base}/health")).send().unwrap().status(),
        StatusCode::OK
    );

    let created = http
        .post(format!("{base}/rules"))
        .json(&rule_body(22.1))
        .send()
        .unwrap();
    assert_eq!(created.status(), StatusCode::CREATED);
    let created: Value = created.json().unwrap();
    assert_eq!(created["state"], "inactive");
    let rid = created["rid"].as_u64().unwrap();

    let bad = http
        .post(format!("{base}/rules"))
        .json(&json!({"datasource": "t{1, P, x}", "condition": "t > (1", "action": "Log: x"}))
        .send()
        .unwrap();
    assert_eq!(bad.status(), StatusCode::BAD_REQUEST);
    let garbage = http
        .post(format!("{base}/rules"))
        .body("{not json")
        .header("content-type", "application/json")
        .send()
        .unwrap();
    assert_eq!(garbage.status(), StatusCode::BAD_REQUEST);
    assert_eq!(engine.list_rules().unwrap().len(), 1);

    assert_eq!(
        http.get(format!("{base}/rules/9999"))
            .send()
            .unwrap()
            .status(),
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        http.post(format!("{base}/rules/9999/start"))
            .send()
            .unwrap()
            .status(),
        StatusCode::NOT_FOUND
    );

    let started = http
        .post(format!("{base}/rules/{rid}/start"))
        .send()
        .unwrap();
    assert_eq!(started.status(), StatusCode::OK);
    assert_eq!(started.json::<Value>().unwrap()["state"], "active");

    let again = http
        .post(format!("{base}/rules/{rid}/start"))
        .send()
        .unwrap();
    assert_eq!(again.status(), StatusCode::CONFLICT);
    let body: Value = again.json().unwrap();
    assert_eq!(body["state"], "active");
    assert_eq!(body["operation"], "start");
    assert_eq!(body["rid"].as_u64(), Some(rid));

    assert_eq!(
        http.put(format!("{base}/rules/{rid}"))
            .json(&json!({"condition": "t > 25"}))
            .send()
            .unwrap()
            .status(),
        StatusCode::CONFLICT
    );
    assert_eq!(
        http.delete(format!("{base}/rules/{rid}"))
            .send()
            .unwrap()
            .status(),
        StatusCode::CONFLICT
    );
    assert_eq!(
        http.post(format!("{base}/rules/{rid}/schedule"))
            .json(&json!({"fire_at": "+5s"}))
            .send()
            .unwrap()
            .status(),
        StatusCode::CONFLICT
    );

    assert_eq!(
        http.post(format!("{base}/rules/{rid}/end"))
            .send()
            .unwrap()
            .status(),
        StatusCode::OK
    );
    assert_eq!(
        http.post(format!("{base}/rules/{rid}/end"))
            .send()
            .unwrap()
            .status(),
        StatusCode::CONFLICT
    );

    let past = http
        .post(format!("{base}/rules/{rid}/schedule"))
        .json(&json!({"fire_at": "2001-01-01T00:00:00Z"}))
        .send()
        .unwrap();
    assert_eq!(past.status(), StatusCode::BAD_REQUEST);
    let unparsable = http
        .post(format!("{base}/rules/{rid}/schedule"))
        .json(&json!({"fire_at": "soon"}))
        .send()
        .unwrap();
    assert_eq!(unparsable.status(), StatusCode::BAD_REQUEST);

    let updated = http
        .put(format!("{base}/rules/{rid}"))
        .json(&json!({"condition": "t > 25"}))
        .send()
        .unwrap();
    assert_eq!(updated.status(), StatusCode::OK);
    assert_eq!(updated.json::<Value>().unwrap()["condition"], "t > 25");
    let rejected = http
        .put(format!("{base}/rules/{rid}"))
        .json(&json!({"condition": "t >"}))
        .send()
        .unwrap();
    assert_eq!(rejected.status(), StatusCode::BAD_REQUEST);
    assert_eq!(engine.get_rule(rid).unwrap().record.condition, "t > 25");

    let listed: Value = http
        .get(format!("{base}/rules"))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(listed.as_array().unwrap().len(), 1);
    let stats: Value = http
        .get(format!("{base}/stats"))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(stats["rules"], 1);

    assert_eq!(
        http.delete(format!("{base}/rules/{rid}"))
            .send()
            .unwrap()
            .status(),
        StatusCode::NO_CONTENT
    );
    assert_eq!(
        http.get(format!("{base}/rules/{rid}"))
            .send()
            .unwrap()
            .status(),
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        http.delete(format!("{base}/rules/{rid}"))
            .send()
            .unwrap()
            .status(),
        StatusCode::NOT_FOUND
    );

    drop(server);
    engine.shutdown();
}

fn expected_status(result: Result<(), EngineError>, success: StatusCode) -> StatusCode {
    match result {
        Ok(()) => success,
        Err(EngineError::UnknownRule(_)) => StatusCode::NOT_FOUND,
        Err(EngineError::InvalidStateTransition { .. }) => StatusCode::CONFLICT,
        Err(EngineError::Dsl(_) | EngineError::PastTimestamp(_) | EngineError::InvalidPeriod) => {
            StatusCode::BAD_REQUEST
        }
        Err(e) => panic!("unexpected engine error {e}"),
    }
}

#[test]
fn http_and_direct_calls_agree() {
    let direct = engine();
    let remote = engine();
    let server = ApiServer::start(remote.clone(), "127.0.0.1:0").unwrap();
    let base = server.url();
    let http = Client::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut rids: Vec<u64> = Vec::new();

    for step in 0..300 {
        let op = rng.gen_range(0..7);
        let rid = if rids.is_empty() || rng.gen_bool(0.05) {
            1000
        } else {
            rids[rng.gen_range(0..rids.len())]
        };
        let (ours, theirs) = match op {
            0 => {
                let threshold = rng.gen_range(0..40) as f64;
                let text = RuleText::new(
                    "t{1, Portable, temperature}",
                    format!("t > {threshold}"),
                    "Log: hot $t",
                );
                let direct_rid = direct
                    .create_rule(NewRule::new("hot", text).period(1))
                    .unwrap();
                let response = http
                    .post(format!("{base}/rules"))
                    .json(&rule_body(threshold))
                    .send()
                    .unwrap();
                assert_eq!(response.status(), StatusCode::CREATED);
                let remote_rid = response.json::<Value>().unwrap()["rid"].as_u64().unwrap();
                assert_eq!(
                    direct_rid, remote_rid,
                    "rid allocation diverged at step {step}"
                );
                rids.push(direct_rid);
                continue;
            }
            1 => (
                expected_status(direct.start_rule(rid), StatusCode::OK),
                http.post(format!("{base}/rules/{rid}/start"))
                    .send()
                    .unwrap()
                    .status(),
            ),
            2 => (
                expected_status(direct.end_rule(rid), StatusCode::OK),
                http.post(format!("{base}/rules/{rid}/end"))
                    .send()
                    .unwrap()
                    .status(),
            ),
            3 => {
                let fire_at = chrono::Utc::now() + chrono::Duration::seconds(3600);
                (
                    expected_status(direct.schedule_rule(rid, fire_at), StatusCode::OK),
                    http.post(format!("{base}/rules/{rid}/schedule"))
                        .json(&json!({"fire_at": fire_at.to_rfc3339()}))
                        .send()
                        .unwrap()
                        .status(),
                )
            }
            4 => {
                let condition = if rng.gen_bool(0.2) {
                    "t >".to_string()
                } else {
                    format!("t > {}", rng.gen_range(0..40))
                };
                let update = RuleUpdate {
                    condition: Some(condition.clone()),
                    ..Default::default()
                };
                (
                    expected_status(direct.update_rule(rid, update), StatusCode::OK),
                    http.put(format!("{base}/rules/{rid}"))
                        .json(&json!({"condition": condition}))
                        .send()
                        .unwrap()
                        .status(),
                )
            }
            5 => (
                expected_status(direct.delete_rule(rid), StatusCode::NO_CONTENT),
                http.delete(format!("{base}/rules/{rid}"))
                    .send()
                    .unwrap()
                    .status(),
            ),
            _ => (
                expected_status(direct.get_rule(rid).map(|_| ()), StatusCode::OK),
                http.get(format!("{base}/rules/{rid}"))
                    .send()
                    .unwrap()
                    .status(),
            ),
        };
        assert_eq!(ours, theirs, "step {step} op {op} rid {rid}");
    }

    let summary = |engine: &Engine| {
        engine
            .list_rules()
            .unwrap()
            .into_iter()
            .map(|v| (v.record.rid, v.record.state, v.record.condition))
            .collect::<Vec<_>>()
    };
    assert_eq!(summary(&direct), summary(&remote));
    assert!(direct.check_consistency().is_consistent());
    assert!(remote.check_consistency().is_consistent());
    drop(server);
    direct.shutdown();
    remote.shutdown();
}

#[test]
fn websocket_clients_receive_and_supersede() {
    let engine = engine();
    let server = ApiServer::start(engine.clone(), "127.0.0.1:0").unwrap();
    let registry = std::sync::Arc::clone(engine.registry());
    let url = server.ws_url("7");
    let runtime = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .unwrap();

    runtime.block_on(async {
        let (mut first, _) = tokio_tungstenite::connect_async(url.as_str())
            .await
            .unwrap();
        for _ in 0..100 {
            if registry.is_connected("7") {
                break;
            }
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
        assert!(registry.send("7", "one".into()));
        let frame = tokio::time::timeout(Duration::from_secs(5), first.next())
            .await
            .unwrap()
            .unwrap()
            .unwrap();
        assert_eq!(frame, Message::Text("one".into()));

        let (mut second, _) = tokio_tungstenite::connect_async(url.as_str())
            .await
            .unwrap();
        // the first connection is closed once superseded
        let closed = tokio::time::timeout(Duration::from_secs(5), async {
            loop {
                match first.next().await {
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return true,
                    Some(Ok(_)) => {}
                }
            }
        })
        .await
        .unwrap();
        assert!(closed);

        assert!(registry.send("7", "two".into()));
        let frame = tokio::time::timeout(Duration::from_secs(5), second.next())
            .await
            .unwrap()
            .unwrap()
            .unwrap();
        assert_eq!(frame, Message::Text("two".into()));

        second.send(Message::Close(None)).await.unwrap();
        drop(second);
    });

    assert!(common::wait_until(Duration::from_secs(5), || !registry.is_connected("7")));
    let dropped = registry.dropped();
    assert!(!registry.send("7", "three".into()));
    assert_eq!(registry.dropped(), dropped + 1);
    drop(server);
    engine.shutdown();
}
