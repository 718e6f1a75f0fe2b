//! HTTP/JSON service over versioned model snapshots: upload, conflicts and
//! resolutions, conversion, bem/1 export, scenes and selection tracing.

pub mod api;
pub mod registry;

use std::future::Future;
use std::sync::Arc;

pub use api::router;
pub use registry::{ModelSummary, ModelVersion, Registry, ServiceError};

/// Serves the API on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    registry: Arc<Registry>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    if let Ok(addr) = listener.local_addr() {
        log::info!("listening on {addr}");
    }
    axum::serve(listener, router(registry)).with_graceful_shutdown(shutdown).await
}
