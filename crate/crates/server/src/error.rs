//! JSON error responses: `{"error": code, "message": text, "field": name}`.

use axum::extract::rejection::{JsonRejection, PathRejection, QueryRejection};
use axum::extract::{FromRequest, FromRequestParts, Path, Query, Request};
use axum::http::request::Parts;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::de::DeserializeOwned;
use serde_json::json;

use smstrack_core::energy::EnergyError;
use smstrack_core::engine::EngineError;
use smstrack_core::gateway::GatewayError;
use smstrack_core::pipeline::PipelineError;
use smstrack_core::registry::RegistryError;
use smstrack_core::scheduler::ScheduleError;
use smstrack_core::store::StoreError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub field: Option<&'static str>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            field: None,
        }
    }

    pub fn with_field(mut self, field: Option<&'static str>) -> Self {
        self.field = field;
        self
    }

    pub fn unauthenticated() -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "unauthenticated", "missing or unknown token")
    }

    pub fn forbidden() -> Self {
        Self::new(StatusCode::FORBIDDEN, "forbidden", "this token may only read")
    }

    pub fn not_found(what: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("unknown {what}"))
    }

    pub fn invalid(field: Option<&'static str>, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid", message).with_field(field)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }

    pub fn unavailable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "unavailable", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": self.code, "message": self.message, "field": self.field});
        (self.status, Json(body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        log::error!("store: {e}");
        Self::internal(e.to_string())
    }
}

impl From<RegistryError> for ApiError {
    fn from(e: RegistryError) -> Self {
        match e {
            RegistryError::UnknownDevice(id) => Self::not_found(format_args!("device {id}")),
            RegistryError::UnknownGroup(id) => Self::not_found(format_args!("group {id}")),
            RegistryError::DuplicateImei(_) | RegistryError::DuplicatePhoneNumber(_) => {
                Self::new(StatusCode::CONFLICT, "duplicate", e.to_string()).with_field(e.field())
            }
            RegistryError::Store(s) => s.into(),
            other => Self::invalid(other.field(), other.to_string()),
        }
    }
}

impl From<ScheduleError> for ApiError {
    fn from(e: ScheduleError) -> Self {
        match e {
            ScheduleError::UnknownSchedule(id) => Self::not_found(format_args!("schedule {id}")),
            ScheduleError::Store(s) => s.into(),
            other => Self::invalid(other.field(), other.to_string()),
        }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::UnknownDevice(id) => Self::not_found(format_args!("device {id}")),
            PipelineError::InvalidRange { .. } => Self::invalid(Some("from"), e.to_string()),
            PipelineError::BadCursor(_) => Self::invalid(Some("after"), e.to_string()),
            PipelineError::InvalidCoordinates(..) => Self::invalid(None, e.to_string()),
            PipelineError::Store(s) => s.into(),
        }
    }
}

impl From<GatewayError> for ApiError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::DuplicateOutstanding { .. } => Self::new(StatusCode::CONFLICT, "job_outstanding", e.to_string()),
            GatewayError::TransportUnavailable(t) => Self::unavailable(t.to_string()),
            GatewayError::Codec(c) => Self::invalid(None, c.to_string()),
            GatewayError::Pipeline(p) => p.into(),
            GatewayError::Store(s) => s.into(),
        }
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Gateway(g) => g.into(),
            EngineError::Schedule(s) => s.into(),
            EngineError::Registry(r) => r.into(),
            EngineError::Pipeline(p) => p.into(),
            EngineError::Store(s) => s.into(),
            EngineError::UnknownDevice(id) => Self::not_found(format_args!("device {id}")),
        }
    }
}

impl From<EnergyError> for ApiError {
    fn from(e: EnergyError) -> Self {
        let field = match &e {
            EnergyError::NonPositive { field, .. } => Some(*field),
            EnergyError::TooFewPoints(_) | EnergyError::InvalidPoint { .. } | EnergyError::DegenerateFit { .. } => Some("points"),
            _ => None,
        };
        Self::invalid(field, e.to_string())
    }
}

/// `Json` whose rejections use the error body above.
pub struct JsonBody<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for JsonBody<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        Json::<T>::from_request(req, state)
            .await
            .map(|Json(v)| JsonBody(v))
            .map_err(|e: JsonRejection| ApiError::invalid(None, e.body_text()))
    }
}

pub struct QueryArgs<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequestParts<S> for QueryArgs<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, Self::Rejection> {
        Query::<T>::from_request_parts(parts, state)
            .await
            .map(|Query(v)| QueryArgs(v))
            .map_err(|e: QueryRejection| ApiError::invalid(None, e.body_text()))
    }
}

pub struct Id(pub u64);

impl<S: Send + Sync> FromRequestParts<S> for Id {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, Self::Rejection> {
        Path::<u64>::from_request_parts(parts, state)
            .await
            .map(|Path(v)| Id(v))
            .map_err(|e: PathRejection| ApiError::not_found(e.body_text()))
    }
}
