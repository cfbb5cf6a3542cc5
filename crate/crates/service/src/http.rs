use std::convert::Infallible;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::Deserialize;
use serde_json::json;

use crate::engine::Engine;
use crate::error::ApiError;

type AppState = Arc<Engine>;

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/strategies", get(list_strategies).post(create_strategy))
        .route(
            "/strategies/:id",
            get(get_strategy)
                .put(update_strategy)
                .delete(delete_strategy),
        )
        .route("/sessions", get(list_sessions).post(start_session))
        .route("/sessions/:id", get(get_session))
        .route("/sessions/:id/events", get(stream_events))
        .route("/sessions/:id/stop", post(stop_session))
        .route("/sessions/:id/report", post(request_report))
        .route("/sessions/:id/script", get(get_script))
        .with_state(engine)
}

/// Runs blocking store work off the async executor.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Storage(std::io::Error::other(e)))?
}

async fn list_strategies(State(engine): State<AppState>) -> Result<impl IntoResponse, ApiError> {
    let list = blocking(move || engine.list_strategies()).await?;
    Ok(Json(list))
}

#[derive(Deserialize)]
struct StrategyBody {
    #[serde(default)]
    title: Option<String>,
    body: String,
}

async fn create_strategy(
    State(engine): State<AppState>,
    Json(req): Json<StrategyBody>,
) -> Result<impl IntoResponse, ApiError> {
    let view = blocking(move || {
        engine.create_strategy(req.title.as_deref().unwrap_or("untitled"), &req.body)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(view)))
}

#[derive(Deserialize)]
struct RevisionQuery {
    revision: Option<u64>,
}

async fn get_strategy(
    State(engine): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<RevisionQuery>,
) -> Result<impl IntoResponse, ApiError> {
    let view = blocking(move || engine.get_strategy(&id, q.revision)).await?;
    Ok(Json(view))
}

async fn update_strategy(
    State(engine): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<StrategyBody>,
) -> Result<impl IntoResponse, ApiError> {
    let view =
        blocking(move || engine.update_strategy(&id, req.title.as_deref(), &req.body)).await?;
    Ok(Json(view))
}

async fn delete_strategy(
    State(engine): State<AppState>,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    blocking(move || engine.delete_strategy(&id)).await?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Deserialize)]
struct StartBody {
    strategy_id: String,
    prompt: String,
}

async fn start_session(
    State(engine): State<AppState>,
    Json(req): Json<StartBody>,
) -> Result<impl IntoResponse, ApiError> {
    let id = engine.start_session(&req.strategy_id, &req.prompt)?;
    Ok((StatusCode::CREATED, Json(json!({ "id": id }))))
}

async fn list_sessions(State(engine): State<AppState>) -> impl IntoResponse {
    Json(engine.list_sessions())
}

async fn get_session(
    State(engine): State<AppState>,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(engine.view(&id)?))
}

async fn stop_session(
    State(engine): State<AppState>,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    let ack = engine.stop_session(&id)?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "status": ack }))))
}

async fn request_report(
    State(engine): State<AppState>,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(engine.request_report(&id).await?))
}

async fn get_script(
    State(engine): State<AppState>,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    let script = blocking(move || engine.session_script(&id)).await?;
    Ok(Json(script))
}

#[derive(Deserialize)]
struct ResumeQuery {
    last_seq: Option<u64>,
}

/// Streams the session's events: everything after the client's last seen
/// sequence number, then live events until the terminal one.
async fn stream_events(
    State(engine): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<ResumeQuery>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let live = engine.session(&id)?;
    let header_seq = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok());
    let mut cursor = header_seq.or(q.last_seq).unwrap_or(0);
    let mut changes = live.subscribe();
    let stream = async_stream::stream! {
        loop {
            let (batch, done) = live.events_after(cursor);
            for e in batch {
                cursor = e.seq;
                let data = serde_json::to_string(&e).expect("events serialize");
                yield Ok(Event::default().id(e.seq.to_string()).event("notification").data(data));
            }
            if done || changes.changed().await.is_err() {
                break;
            }
        }
    };
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}
