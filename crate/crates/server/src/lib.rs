//! HTTP API over completion sessions.
//!
//! Completion runs as a background job; clients create a session, trigger
//! `complete` and poll the session until it is `Done` or `Failed`.

mod api;
mod jobs;

pub use api::router;
pub use jobs::{AppState, Engine};

use std::sync::Arc;
use std::time::Duration;

/// How long shutdown waits for cancelled jobs before checkpointing them.
pub const SHUTDOWN_GRACE: Duration = Duration::from_secs(30);

/// Serves until `shutdown` resolves, then cancels running jobs and records
/// them as `Failed("interrupted")`.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let app = router(state.clone());
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await?;
    state.interrupt_all(SHUTDOWN_GRACE).await;
    Ok(())
}
