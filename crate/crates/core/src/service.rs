//! Stateless HTTP JSON API. Every request carries its scenario as overrides
//! on top of the server's default scenario.

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tower_http::services::ServeDir;

use crate::commands::{cmd_aggregate, cmd_optimize, cmd_simulate, cmd_sweep};
use crate::config::{apply_overrides, ScenarioConfig};
use crate::error::{Error, FieldError};

/// JSON schema of the scenario document.
pub const SCENARIO_SCHEMA: &str = include_str!("../schema/scenario.schema.json");

pub const DEFAULT_GRID_POINTS: usize = 101;

#[derive(Debug, Clone)]
pub struct ServiceState {
    pub defaults: ScenarioConfig,
    /// Upper bound on any optimizer budget requested by a client.
    pub budget_ms: Option<u64>,
    pub static_dir: Option<PathBuf>,
}

/// Request body for the POST endpoints.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApiRequest {
    /// Overrides applied to the server's default scenario.
    pub scenario: Value,
    pub paths: Option<usize>,
    pub grid_points: Option<usize>,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    errors: Vec<FieldError>,
}

pub struct ApiError(StatusCode, Vec<FieldError>);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(errors) => ApiError(StatusCode::BAD_REQUEST, errors),
            Error::InvalidParameter { name, reason } => {
                ApiError(StatusCode::BAD_REQUEST, vec![FieldError::new(name, reason)])
            }
            Error::EnumerationTooLarge { .. } => {
                ApiError(StatusCode::UNPROCESSABLE_ENTITY, vec![FieldError::new("grid.n_steps", e.to_string())])
            }
            Error::Unsupported(message) => {
                ApiError(StatusCode::UNPROCESSABLE_ENTITY, vec![FieldError::new("aversion.mode", message)])
            }
            other => ApiError(StatusCode::INTERNAL_SERVER_ERROR, vec![FieldError::new("internal", other.to_string())]),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        json_response(self.0, &ErrorBody { errors: self.1 })
    }
}

fn json_response<T: Serialize>(status: StatusCode, body: &T) -> Response {
    match serde_json::to_vec(body) {
        Ok(bytes) => (status, [(header::CONTENT_TYPE, "application/json")], bytes).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

/// Parses a request body into a validated scenario.
pub fn resolve_request(state: &ServiceState, body: &[u8]) -> Result<(ScenarioConfig, ApiRequest), Error> {
    let request: ApiRequest = if body.iter().all(u8::is_ascii_whitespace) {
        ApiRequest::default()
    } else {
        serde_json::from_slice(body).map_err(|e| Error::Config(vec![FieldError::new("body", e.to_string())]))?
    };
    let mut config = apply_overrides(&state.defaults, &request.scenario)?;
    if let Some(paths) = request.paths {
        config.paths = paths;
    }
    if let Some(cap) = state.budget_ms {
        let requested = config.optimizer.budget_ms.unwrap_or(cap);
        config.optimizer.budget_ms = Some(requested.min(cap));
    }
    config.validate()?;
    Ok((config, request))
}

async fn run<T, F>(state: Arc<ServiceState>, body: Bytes, f: F) -> Result<Response, ApiError>
where
    T: Serialize + Send + 'static,
    F: FnOnce(ScenarioConfig, ApiRequest) -> Result<T, Error> + Send + 'static,
{
    let result = tokio::task::spawn_blocking(move || {
        let (config, request) = resolve_request(&state, &body)?;
        f(config, request)
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, vec![FieldError::new("internal", e.to_string())]))??;
    Ok(json_response(StatusCode::OK, &result))
}

async fn simulate(State(state): State<Arc<ServiceState>>, body: Bytes) -> Result<Response, ApiError> {
    run(state, body, |config, _| Ok(cmd_simulate(&config)?.0)).await
}

async fn optimize(State(state): State<Arc<ServiceState>>, body: Bytes) -> Result<Response, ApiError> {
    run(state, body, |config, _| cmd_optimize(&config)).await
}

async fn aggregate(State(state): State<Arc<ServiceState>>, body: Bytes) -> Result<Response, ApiError> {
    run(state, body, |config, _| cmd_aggregate(&config)).await
}

async fn sweep(State(state): State<Arc<ServiceState>>, body: Bytes) -> Result<Response, ApiError> {
    run(state, body, |config, request| {
        cmd_sweep(&config, request.grid_points.unwrap_or(DEFAULT_GRID_POINTS))
    })
    .await
}

async fn defaults(State(state): State<Arc<ServiceState>>) -> Response {
    json_response(StatusCode::OK, &state.defaults)
}

async fn schema() -> Response {
    (StatusCode::OK, [(header::CONTENT_TYPE, "application/json")], SCENARIO_SCHEMA).into_response()
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    version: &'static str,
}

async fn health() -> Response {
    json_response(
        StatusCode::OK,
        &Health {
            status: "ok",
            version: env!("CARGO_PKG_VERSION"),
        },
    )
}

const INDEX: &str = "<!doctype html><title>robust-lanchester</title>\
<p>No console bundle configured. API endpoints live under <code>/api/</code>: \
simulate, optimize, aggregate, sweep (POST); defaults, schema, health (GET).</p>";

pub fn router(state: ServiceState) -> Router {
    let static_dir = state.static_dir.clone().filter(|d| d.is_dir());
    let api = Router::new()
        .route("/api/simulate", post(simulate))
        .route("/api/optimize", post(optimize))
        .route("/api/aggregate", post(aggregate))
        .route("/api/sweep", post(sweep))
        .route("/api/defaults", get(defaults))
        .route("/api/schema", get(schema))
        .route("/api/health", get(health))
        .with_state(Arc::new(state));
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(|| async { Html(INDEX) })),
    }
}

pub async fn serve(state: ServiceState, bind: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
