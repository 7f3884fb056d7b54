use crate::auth::AuthError;
use crate::measure::MeasurementRequest;
use crate::service::{Service, ServiceError};
use axum::extract::{FromRequestParts, Path, State};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::sync::Arc;
use vqn_core::allocation::PairId;

/// Error body: `{code, message, field?}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl ToString) -> Self {
        Self {
            status: status.as_u16(),
            code: code.into(),
            message: message.to_string(),
            field: None,
        }
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        match &e {
            ServiceError::Auth(AuthError::BadCredentials) => ApiError::new(StatusCode::UNAUTHORIZED, "bad_credentials", e),
            ServiceError::Auth(AuthError::Expired) => ApiError::new(StatusCode::UNAUTHORIZED, "token_expired", e),
            ServiceError::Auth(AuthError::UnknownToken) => ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", e),
            ServiceError::Forbidden(_) => ApiError::new(StatusCode::FORBIDDEN, "forbidden", e),
            ServiceError::NotFound(_) => ApiError::new(StatusCode::NOT_FOUND, "not_found", e),
            ServiceError::Conflict(_) => ApiError::new(StatusCode::CONFLICT, "conflict", e),
            ServiceError::Invalid(p) => ApiError {
                field: Some(p.field.clone()),
                ..ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_parameter", &p.message)
            },
            ServiceError::Measurement(_) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "measurement_failed", e),
            ServiceError::Backend(_) => ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "backend_unavailable", e),
            ServiceError::Journal(_) | ServiceError::Store(_) => {
                tracing::error!("internal error: {e}");
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e)
            }
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// The authenticated user behind a bearer token.
pub struct Caller(pub String);

impl FromRequestParts<Arc<Service>> for Caller {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, svc: &Arc<Service>) -> Result<Self, Self::Rejection> {
        let token = parts
            .headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing bearer token"))?;
        Ok(Caller(svc.authenticate(token.trim())?))
    }
}

/// Turns a JSON body rejection into the error schema.
pub struct Body<T>(pub T);

impl<S: Send + Sync, T: serde::de::DeserializeOwned> axum::extract::FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: axum::extract::Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Body(v)),
            Err(e) => Err(ApiError {
                field: Some("body".into()),
                ..ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.body_text())
            }),
        }
    }
}

#[derive(Debug, Deserialize)]
struct Login {
    user: String,
    secret: String,
}

async fn login(State(svc): State<Arc<Service>>, Body(body): Body<Login>) -> ApiResult<crate::auth::Token> {
    Ok(Json(svc.login(&body.user, &body.secret)?))
}

async fn submit(State(svc): State<Arc<Service>>, Caller(user): Caller) -> Result<Response, ApiError> {
    let r = svc.submit_pair_request(&user)?;
    let position = svc.queue_position(&user);
    Ok((
        StatusCode::ACCEPTED,
        Json(json!({"request_id": r.id, "status": r.status, "queue_position": position})),
    )
        .into_response())
}

async fn request_status(
    State(svc): State<Arc<Service>>,
    Caller(user): Caller,
    Path(id): Path<String>,
) -> ApiResult<crate::store::RequestRecord> {
    Ok(Json(svc.request_status(&user, &id)?))
}

async fn queue_position(State(svc): State<Arc<Service>>, Caller(user): Caller) -> ApiResult<serde_json::Value> {
    let current = svc.current_request(&user);
    Ok(Json(json!({
        "position": svc.queue_position(&user),
        "request_id": current.as_ref().map(|r| r.id.clone()),
        "pair_id": current.and_then(|r| r.pair_id),
    })))
}

async fn resources(State(svc): State<Arc<Service>>, Caller(_): Caller) -> ApiResult<Vec<crate::store::ResourceRecord>> {
    Ok(Json(svc.resources()))
}

async fn measure(
    State(svc): State<Arc<Service>>,
    Caller(user): Caller,
    Body(req): Body<MeasurementRequest>,
) -> ApiResult<crate::service::MeasurementResponse> {
    let r = tokio::task::spawn_blocking(move || svc.run_measurement(&user, &req))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e))??;
    Ok(Json(r))
}

async fn measurement_result(
    State(svc): State<Arc<Service>>,
    Caller(user): Caller,
    Path(id): Path<String>,
) -> ApiResult<serde_json::Value> {
    Ok(Json(svc.measurement_result(&user, &id)?))
}

async fn release(
    State(svc): State<Arc<Service>>,
    Caller(user): Caller,
    Path(pair): Path<u32>,
) -> ApiResult<crate::service::ReleaseOutcome> {
    Ok(Json(svc.release(&user, PairId(pair))?))
}

async fn healthz(State(svc): State<Arc<Service>>) -> Json<serde_json::Value> {
    Json(json!({"status": "ok", "policy": svc.config().policy, "backend": svc.config().backend}))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route")
}

pub fn router(svc: Arc<Service>) -> Router {
    Router::new()
        .route("/api/v1/auth/login", post(login))
        .route("/api/v1/pair-requests", post(submit))
        .route("/api/v1/pair-requests/{id}", get(request_status))
        .route("/api/v1/queue/position", get(queue_position))
        .route("/api/v1/resources", get(resources))
        .route("/api/v1/measurements", post(measure))
        .route("/api/v1/measurements/{id}", get(measurement_result))
        .route("/api/v1/pairs/{id}/release", post(release))
        .route("/api/v1/healthz", get(healthz))
        .fallback(not_found)
        .with_state(svc)
}

/// A service listening on a socket, with its workers running.
pub struct Running {
    pub addr: std::net::SocketAddr,
    pub service: Arc<Service>,
    pub workers: crate::service::Workers,
    pub server: tokio::task::JoinHandle<std::io::Result<()>>,
}

impl Running {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stops accepting requests and halts the workers without any cleanup, as a crash would.
    pub fn kill(self) -> Arc<Service> {
        self.server.abort();
        self.workers.abort();
        self.service
    }
}

/// Binds `listen` and serves `svc` in the background.
pub async fn spawn(svc: Arc<Service>, listen: &str) -> std::io::Result<Running> {
    let listener = tokio::net::TcpListener::bind(listen).await?;
    let addr = listener.local_addr()?;
    let workers = svc.start();
    let app = router(svc.clone());
    let server = tokio::spawn(async move { axum::serve(listener, app).await });
    tracing::info!(%addr, "listening");
    Ok(Running {
        addr,
        service: svc,
        workers,
        server,
    })
}
