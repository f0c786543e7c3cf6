//! HTTP API over the chain engine: sessions, rounds, audio uploads and exports.
//!
//! Requests and responses are JSON. Errors carry `{code, message}`.

pub mod config;
mod error;
mod routes;
mod state;

use std::net::SocketAddr;

pub use config::{ApiConfig, ConfigError, Origin};
pub use error::{ApiError, ErrorBody};
pub use routes::{router, Created, Guideline, Health, PriorView, RoundView, SessionView, Uploaded, MAX_AUDIO_BYTES};
pub use state::{build_engine, system_clock, AppState, Clock, StartupError};

/// Serves until Ctrl-C.
pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
            tracing::info!("shutting down");
        })
        .await
}
