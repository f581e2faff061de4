//! Session service for the biopsy simulator: case and user listings,
//! procedure lifecycle over HTTP, pose/slice streaming over a WebSocket,
//! and cohort statistics for the instructor dashboard.

pub mod api;
pub mod frame;
pub mod live;
pub mod socket;

use std::net::SocketAddr;
use std::sync::Arc;

pub use api::{router, AppState, ServiceConfig};

/// Serves on `listener` until the process is stopped.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

/// Loads the state, binds `addr` and serves on a fresh multi-threaded runtime.
/// `on_ready` receives the bound address.
pub fn run_blocking(
    config: &ServiceConfig,
    addr: SocketAddr,
    on_ready: impl FnOnce(SocketAddr),
) -> Result<(), Box<dyn std::error::Error>> {
    let state = Arc::new(AppState::load(config)?);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        on_ready(listener.local_addr()?);
        serve(listener, state).await
    })?;
    Ok(())
}
