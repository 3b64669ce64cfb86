//! REST interface for the rule lifecycle, and the WebSocket endpoint that
//! `WebSocket` actions deliver to.
//!
//! | method | path                    | effect                       |
//! |--------|-------------------------|------------------------------|
//! | POST   | `/rules`                | create (201)                 |
//! | GET    | `/rules`                | list with counters           |
//! | GET    | `/rules/{rid}`          | one rule with counters       |
//! | PUT    | `/rules/{rid}`          | update an inactive rule      |
//! | DELETE | `/rules/{rid}`          | delete an inactive rule (204)|
//! | POST   | `/rules/{rid}/start`    | inactive → active            |
//! | POST   | `/rules/{rid}/schedule` | inactive → scheduled         |
//! | POST   | `/rules/{rid}/end`      | scheduled/active → inactive  |
//! | GET    | `/health`, `/stats`     | liveness, engine counters    |
//! | GET    | `/ws?client_id=…`       | WebSocket upgrade            |

mod registry;

use std::io;
use std::net::{SocketAddr, ToSocketAddrs};
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::extract::rejection::JsonRejection;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::oneshot;

pub use registry::{ClientRegistry, ConnectionId};

use crate::dsb::RuleId;
use crate::dsl::RuleText;
use crate::scheduler::{Engine, EngineError, NewRule, RuleUpdate, TriggerMode};

/// Body of `POST /rules`.
#[derive(Debug, Clone, Deserialize)]
pub struct CreateRuleBody {
    #[serde(default)]
    pub name: String,
    pub datasource: String,
    pub condition: String,
    pub action: String,
    pub period_seconds: Option<u64>,
    pub trigger_mode: Option<TriggerMode>,
}

/// Body of `PUT /rules/{rid}`; absent fields keep their value.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct UpdateRuleBody {
    pub name: Option<String>,
    pub datasource: Option<String>,
    pub condition: Option<String>,
    pub action: Option<String>,
    pub period_seconds: Option<u64>,
    pub trigger_mode: Option<TriggerMode>,
}

/// Body of `POST /rules/{rid}/schedule`.
#[derive(Debug, Clone, Deserialize)]
pub struct ScheduleBody {
    pub fire_at: String,
}

/// Parses an RFC 3339 timestamp or a relative `+Ns` offset from `now`.
pub fn parse_fire_at(text: &str, now: DateTime<Utc>) -> Option<DateTime<Utc>> {
    let text = text.trim();
    if let Some(rest) = text.strip_prefix('+') {
        let seconds: f64 = rest.strip_suffix('s').unwrap_or(rest).trim().parse().ok()?;
        if !seconds.is_finite() || seconds < 0.0 {
            return None;
        }
        return Some(now + chrono::Duration::milliseconds((seconds * 1000.0).round() as i64));
    }
    DateTime::parse_from_rfc3339(text)
        .ok()
        .map(|t| t.with_timezone(&Utc))
}

struct ApiError(StatusCode, serde_json::Value);

impl ApiError {
    fn bad_request(message: impl ToString) -> Self {
        ApiError(
            StatusCode::BAD_REQUEST,
            json!({ "error": message.to_string() }),
        )
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let message = e.to_string();
        match e {
            EngineError::UnknownRule(rid) => ApiError(
                StatusCode::NOT_FOUND,
                json!({ "error": message, "rid": rid }),
            ),
            EngineError::InvalidStateTransition {
                rid,
                state,
                operation,
            } => ApiError(
                StatusCode::CONFLICT,
                json!({ "error": message, "rid": rid, "state": state, "operation": operation }),
            ),
            EngineError::Dsl(_)
            | EngineError::UnknownConditionType(_)
            | EngineError::UnknownActionType(_)
            | EngineError::InvalidCondition(_)
            | EngineError::PastTimestamp(_)
            | EngineError::InvalidPeriod => ApiError::bad_request(message),
            EngineError::Storage(_)
            | EngineError::Datasource(_)
            | EngineError::Action(_)
            | EngineError::Spawn(_) => ApiError(
                StatusCode::INTERNAL_SERVER_ERROR,
                json!({ "error": message }),
            ),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}

type ApiResult = Result<Response, ApiError>;

/// Runs an engine call off the async workers; lifecycle calls may block on
/// storage or on an in-flight match function.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, EngineError> + Send + 'static,
) -> Result<T, ApiError> {
    match tokio::task::spawn_blocking(f).await {
        Ok(result) => result.map_err(ApiError::from),
        Err(e) => Err(ApiError(
            StatusCode::INTERNAL_SERVER_ERROR,
            json!({ "error": e.to_string() }),
        )),
    }
}

async fn create_rule(
    State(engine): State<Engine>,
    body: Result<Json<CreateRuleBody>, JsonRejection>,
) -> ApiResult {
    let Json(body) = body?;
    let rule = NewRule {
        name: body.name,
        text: RuleText::new(body.datasource, body.condition, body.action),
        period_seconds: body
            .period_seconds
            .unwrap_or(crate::dsl::DEFAULT_PERIOD_SECONDS),
        trigger_mode: body.trigger_mode.unwrap_or_default(),
    };
    let view = blocking(move || {
        let rid = engine.create_rule(rule)?;
        engine.get_rule(rid)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn list_rules(State(engine): State<Engine>) -> ApiResult {
    let rules = blocking(move || engine.list_rules()).await?;
    Ok(Json(rules).into_response())
}

async fn get_rule(State(engine): State<Engine>, Path(rid): Path<RuleId>) -> ApiResult {
    let view = blocking(move || engine.get_rule(rid)).await?;
    Ok(Json(view).into_response())
}

async fn update_rule(
    State(engine): State<Engine>,
    Path(rid): Path<RuleId>,
    body: Result<Json<UpdateRuleBody>, JsonRejection>,
) -> ApiResult {
    let Json(body) = body?;
    let update = RuleUpdate {
        name: body.name,
        datasource: body.datasource,
        condition: body.condition,
        action: body.action,
        period_seconds: body.period_seconds,
        trigger_mode: body.trigger_mode,
    };
    let view = blocking(move || {
        engine.update_rule(rid, update)?;
        engine.get_rule(rid)
    })
    .await?;
    Ok(Json(view).into_response())
}

async fn delete_rule(State(engine): State<Engine>, Path(rid): Path<RuleId>) -> ApiResult {
    blocking(move || engine.delete_rule(rid)).await?;
    Ok(StatusCode::NO_CONTENT.into_response())
}

async fn start_rule(State(engine): State<Engine>, Path(rid): Path<RuleId>) -> ApiResult {
    let view = blocking(move || {
        engine.start_rule(rid)?;
        engine.get_rule(rid)
    })
    .await?;
    Ok(Json(view).into_response())
}

async fn schedule_rule(
    State(engine): State<Engine>,
    Path(rid): Path<RuleId>,
    body: Result<Json<ScheduleBody>, JsonRejection>,
) -> ApiResult {
    let Json(body) = body?;
    let fire_at = parse_fire_at(&body.fire_at, Utc::now())
        .ok_or_else(|| ApiError::bad_request(format!("cannot parse fire_at `{}`", body.fire_at)))?;
    let view = blocking(move || {
        engine.schedule_rule(rid, fire_at)?;
        engine.get_rule(rid)
    })
    .await?;
    Ok(Json(view).into_response())
}

async fn end_rule(State(engine): State<Engine>, Path(rid): Path<RuleId>) -> ApiResult {
    let view = blocking(move || {
        engine.end_rule(rid)?;
        engine.get_rule(rid)
    })
    .await?;
    Ok(Json(view).into_response())
}

async fn health() -> Response {
    Json(json!({ "status": "ok" })).into_response()
}

async fn stats(State(engine): State<Engine>) -> ApiResult {
    let stats = blocking(move || Ok(engine.stats())).await?;
    Ok(Json(stats).into_response())
}

/// REST routes only.
pub fn rest_router(engine: Engine) -> Router {
    Router::new()
        .route("/rules", post(create_rule).get(list_rules))
        .route(
            "/rules/:rid",
            get(get_rule).put(update_rule).delete(delete_rule),
        )
        .route("/rules/:rid/start", post(start_rule))
        .route("/rules/:rid/schedule", post(schedule_rule))
        .route("/rules/:rid/end", post(end_rule))
        .route("/health", get(health))
        .route("/stats", get(stats))
        .with_state(engine)
}

#[derive(Debug, Deserialize)]
struct WsParams {
    client_id: String,
}

async fn ws_upgrade(
    State(registry): State<Arc<ClientRegistry>>,
    Query(params): Query<WsParams>,
    upgrade: WebSocketUpgrade,
) -> Response {
    upgrade.on_upgrade(move |socket| websocket_session(socket, registry, params.client_id))
}

async fn websocket_session(
    mut socket: WebSocket,
    registry: Arc<ClientRegistry>,
    client_id: String,
) {
    let (connection, mut outbound) = registry.connect(&client_id);
    log::debug!("websocket client {client_id} connected");
    loop {
        tokio::select! {
            frame = outbound.recv() => match frame {
                Some(text) => {
                    if socket.send(Message::Text(text)).await.is_err() {
                        break;
                    }
                }
                // superseded by a newer connection
                None => {
                    let _ = socket.send(Message::Close(None)).await;
                    break;
                }
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
                Some(Ok(_)) => {}
            },
        }
    }
    registry.disconnect(&client_id, connection);
    log::debug!("websocket client {client_id} disconnected");
}

/// The `/ws` route only.
pub fn websocket_router(registry: Arc<ClientRegistry>) -> Router {
    Router::new()
        .route("/ws", get(ws_upgrade))
        .with_state(registry)
}

/// REST and WebSocket routes on one listener.
pub fn router(engine: Engine) -> Router {
    let registry = Arc::clone(engine.registry());
    rest_router(engine).merge(websocket_router(registry))
}

pub async fn serve_rest(listener: tokio::net::TcpListener, engine: Engine) -> io::Result<()> {
    axum::serve(listener, rest_router(engine)).await
}

pub async fn serve_websocket(
    listener: tokio::net::TcpListener,
    registry: Arc<ClientRegistry>,
) -> io::Result<()> {
    axum::serve(listener, websocket_router(registry)).await
}

/// REST + WebSocket server on its own runtime thread, for callers that are
/// not async themselves.
pub struct ApiServer {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<io::Result<()>>>,
}

impl ApiServer {
    pub fn start(engine: Engine, addr: impl ToSocketAddrs) -> io::Result<Self> {
        let listener = std::net::TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .thread_name("iotrule-api")
            .enable_all()
            .build()?;
        let (stop, stopped) = oneshot::channel::<()>();
        let thread = std::thread::Builder::new()
            .name("iotrule-api".into())
            .spawn(move || {
                runtime.block_on(async move {
                    let listener = tokio::net::TcpListener::from_std(listener)?;
                    axum::serve(listener, router(engine))
                        .with_graceful_shutdown(async {
                            let _ = stopped.await;
                        })
                        .await
                })
            })?;
        Ok(ApiServer {
            addr,
            stop: Some(stop),
            thread: Some(thread),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn ws_url(&self, client_id: &str) -> String {
        format!("ws://{}/ws?client_id={client_id}", self.addr)
    }

    pub fn shutdown(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(thread) = self.thread.take() {
            match thread.join() {
                Ok(Err(e)) => log::error!("api server: {e}"),
                Err(_) => log::error!("api server thread panicked"),
                Ok(Ok(())) => {}
            }
        }
    }
}

impl Drop for ApiServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}
