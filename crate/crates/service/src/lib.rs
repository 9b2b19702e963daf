//! HTTP/JSON front end for the docparse operations.
//!
//! Every operation is CPU bound or drives its own single-threaded runtime,
//! so handlers hand the work to the blocking pool.

use axum::extract::DefaultBodyLimit;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Serialize;

use docparse_core::api::{self, ApiError, ErrorBody};

pub const DEFAULT_BIND: &str = "127.0.0.1:8750";
const BODY_LIMIT: usize = 256 * 1024 * 1024;

pub struct HttpError(StatusCode, String);

impl IntoResponse for HttpError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorBody { error: self.1 })).into_response()
    }
}

impl From<ApiError> for HttpError {
    fn from(e: ApiError) -> Self {
        let status = if e.is_usage() {
            StatusCode::UNPROCESSABLE_ENTITY
        } else {
            StatusCode::INTERNAL_SERVER_ERROR
        };
        HttpError(status, e.to_string())
    }
}

async fn blocking<Req, Resp>(req: Req, op: fn(&Req) -> Result<Resp, ApiError>) -> Result<Json<Resp>, HttpError>
where
    Req: DeserializeOwned + Send + 'static,
    Resp: Serialize + Send + 'static,
{
    tokio::task::spawn_blocking(move || op(&req))
        .await
        .map_err(|e| HttpError(StatusCode::INTERNAL_SERVER_ERROR, format!("worker panicked: {e}")))?
        .map(Json)
        .map_err(HttpError::from)
}

async fn parse(Json(req): Json<api::ParseRequest>) -> Result<Json<api::ParseResponse>, HttpError> {
    tracing::info!(backend = req.backend.kind(), "parse");
    blocking(req, api::parse).await
}

async fn eval(Json(req): Json<api::EvalRequest>) -> Result<Json<docparse_core::metrics::EvaluationReport>, HttpError> {
    tracing::info!(gt_pages = req.gt.len(), pred_pages = req.pred.len(), "eval");
    blocking(req, api::evaluate).await
}

async fn plan(Json(req): Json<api::PlanRequest>) -> Result<Json<api::PlanResponse>, HttpError> {
    tracing::info!(samples = req.ids.len(), k = req.k, "plan");
    blocking(req, api::plan).await
}

async fn unstable(Json(req): Json<api::UnstableRequest>) -> Result<Json<docparse_core::uacs::UnstableReport>, HttpError> {
    blocking(req, api::unstable).await
}

async fn bench(Json(req): Json<api::BenchRequest>) -> Result<Json<api::BenchReport>, HttpError> {
    tracing::info!(pages = req.pages, "bench");
    blocking(req, api::bench).await
}

pub fn router() -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/v1/parse", post(parse))
        .route("/v1/eval", post(eval))
        .route("/v1/plan", post(plan))
        .route("/v1/unstable", post(unstable))
        .route("/v1/bench", post(bench))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
}

/// Serves until ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router())
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
