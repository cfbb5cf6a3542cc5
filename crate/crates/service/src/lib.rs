//! HTTP service around the research engine: strategy library, sessions,
//! live event streams, stop and preliminary reports.

mod engine;
mod error;
mod http;
mod session;
mod store;

pub use engine::{
    Backends, Engine, LiveSession, ServiceConfig, SessionView, StopAck, StrategySummary,
    StrategyView, ToolFactory,
};
pub use error::ApiError;
pub use http::router;
pub use session::{SessionRecord, SessionState, Transition};
pub use store::{CompiledScript, RevisionMeta, ScriptOrigin, Store, StrategyMeta};

/// Serves the API on `listener` until the future is dropped.
pub async fn serve(
    listener: tokio::net::TcpListener,
    engine: std::sync::Arc<Engine>,
) -> std::io::Result<()> {
    axum::serve(listener, router(engine)).await
}
