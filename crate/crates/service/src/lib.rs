//! HTTP inference service: upload a rose photo, get the breed distribution
//! joined with the breed's care record.
//!
//! Endpoints, all under `/api/v1`:
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/predict` | multipart field `image`, optional `model_id` |
//! | GET | `/breeds`, `/breeds/{name}` | breed knowledge base |
//! | GET | `/models` | registry listing |
//! | GET | `/health` | 503 until a model is loaded |
//! | POST | `/admin/reload` | re-read breed base and model |

pub mod api;
pub mod config;
pub mod error;
pub mod state;
pub mod upload;

use std::future::Future;
use std::sync::Arc;

use axum::extract::DefaultBodyLimit;
use axum::http::{HeaderValue, Method};
use axum::routing::{get, post};
use axum::Router;
use tokio::net::TcpListener;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

pub use api::{BreedEntry, BreedList, Health, ModelList, ModelSummary, PredictionResult, RankedBreed};
pub use config::ServiceConfig;
pub use error::{codes, ErrorEnvelope};
pub use state::AppState;

/// Room for multipart boundaries and headers on top of the image limit, so
/// an image just under the limit is not rejected by the transport.
const MULTIPART_OVERHEAD: usize = 64 * 1024;

fn cors(origins: &[String]) -> CorsLayer {
    let layer = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST])
        .allow_headers(Any);
    let parsed: Vec<HeaderValue> = origins.iter().filter_map(|o| o.parse().ok()).collect();
    if parsed.is_empty() {
        layer.allow_origin(Any)
    } else {
        layer.allow_origin(AllowOrigin::list(parsed))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let limit = state.config.max_upload_bytes + MULTIPART_OVERHEAD;
    let api = Router::new()
        .route("/predict", post(api::predict))
        .route("/breeds", get(api::breeds))
        .route("/breeds/{name}", get(api::breed))
        .route("/models", get(api::models))
        .route("/health", get(api::health))
        .route("/admin/reload", post(api::reload));
    Router::new()
        .nest("/api/v1", api)
        .fallback(api::not_found)
        .layer(DefaultBodyLimit::max(limit))
        .layer(cors(&state.config.cors_origins))
        .with_state(state)
}

/// Serves on an already bound listener until `shutdown` resolves. The model
/// loads in the background; health reports 503 until it is ready.
pub async fn serve_on(
    listener: TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let loader = state.clone();
    tokio::task::spawn_blocking(move || {
        if let Err(e) = loader.reload() {
            log::error!("serving without a model: {e}");
        }
    });
    if let Ok(addr) = listener.local_addr() {
        log::info!("listening on http://{addr}");
    }
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

/// Binds `config.bind` and serves until Ctrl-C.
pub async fn serve(config: ServiceConfig) -> std::io::Result<()> {
    config
        .validate()
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e))?;
    let listener = TcpListener::bind(config.bind).await?;
    serve_on(listener, AppState::new(config), async {
        let _ = tokio::signal::ctrl_c().await;
        log::info!("shutting down");
    })
    .await
}
