//! HTTP front end: estimate, nutrition plan and record retrieval endpoints
//! over a persisted record store.

pub mod store;

use std::net::SocketAddr;
use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use nutriscan_core::config::Config;
use nutriscan_core::health::nutrition_plan;
use nutriscan_core::pipeline::{
    record_id, sha256_hex, EstimateResponse, Pipeline, StageError, PIPELINE_VERSION,
};
use nutriscan_core::{Error, Gender};
use serde::Serialize;

pub use store::{InputKey, JsonlStore, PlanEntry, PlanRequest, RecordStore, StoreError, StoredRecord, StoredSubject};

pub const ADMIN_TOKEN_ENV: &str = "NUTRISCAN_ADMIN_TOKEN";
pub const PORT_ENV: &str = "NUTRISCAN_PORT";
pub const ADMIN_TOKEN_HEADER: &str = "x-admin-token";
const MAX_UPLOAD_BYTES: usize = 32 * 1024 * 1024;

pub struct AppState {
    pipeline: RwLock<Arc<Pipeline>>,
    store: Arc<dyn RecordStore>,
    config: Option<Config>,
    admin_token: Option<String>,
}

impl AppState {
    pub fn new(pipeline: Pipeline, store: Arc<dyn RecordStore>) -> Self {
        Self {
            pipeline: RwLock::new(Arc::new(pipeline)),
            store,
            config: None,
            admin_token: None,
        }
    }

    pub fn from_config(config: Config, admin_token: Option<String>) -> Result<Self, ServiceError> {
        let pipeline = Pipeline::from_config(&config)?;
        let store = JsonlStore::open(&config.store.dir)?;
        Ok(Self {
            pipeline: RwLock::new(Arc::new(pipeline)),
            store: Arc::new(store),
            config: Some(config),
            admin_token,
        })
    }

    /// Enables `POST /api/v1/admin/reload` for requests carrying `token`.
    pub fn with_admin_token(mut self, token: impl Into<String>) -> Self {
        self.admin_token = Some(token.into());
        self
    }

    pub fn with_config(mut self, config: Config) -> Self {
        self.config = Some(config);
        self
    }

    pub fn pipeline(&self) -> Arc<Pipeline> {
        self.pipeline.read().expect("pipeline lock poisoned").clone()
    }

    fn swap_pipeline(&self, p: Pipeline) {
        *self.pipeline.write().expect("pipeline lock poisoned") = Arc::new(p);
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Error body: `{stage, code, message}` plus `min_weeks` for infeasible plans.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct ErrorBody {
    pub stage: String,
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_weeks: Option<u32>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, stage: &str, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                stage: stage.into(),
                code: code.into(),
                message: message.into(),
                min_weeks: None,
            },
        }
    }

    fn validation(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "request", "validation", message)
    }

    fn internal(stage: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, stage, "internal", message)
    }
}

impl From<StageError> for ApiError {
    fn from(e: StageError) -> Self {
        let stage = e.stage.as_str();
        let message = e.source.to_string();
        let (status, code) = match &e.source {
            Error::Image(_) => (StatusCode::BAD_REQUEST, "decode"),
            _ if stage == "decode" => (StatusCode::BAD_REQUEST, "decode"),
            Error::Parameter(_) | Error::Data(_) => (StatusCode::BAD_REQUEST, "validation"),
            Error::Configuration(_) => (StatusCode::BAD_REQUEST, "configuration"),
            Error::NoSubject(_) => (StatusCode::UNPROCESSABLE_ENTITY, "no_subject"),
            Error::Geometry(_) | Error::Topology(_) | Error::DegenerateCloud(_) => {
                (StatusCode::UNPROCESSABLE_ENTITY, "unprocessable")
            }
            Error::Provider { .. } | Error::Contract(_) => (StatusCode::BAD_GATEWAY, "provider"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        ApiError::new(status, stage, code, message)
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(_) => ApiError::new(StatusCode::NOT_FOUND, "store", "not_found", e.to_string()),
            StoreError::Storage(_) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "store", "storage", e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/v1/health", get(health))
        .route("/api/v1/estimate", post(estimate))
        .route("/api/v1/records/{id}", get(get_record))
        .route("/api/v1/records/{id}/plan", post(plan))
        .route("/api/v1/admin/reload", post(reload))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(state)
}

#[derive(Debug, Serialize, serde::Deserialize, PartialEq)]
pub struct HealthStatus {
    pub status: String,
    pub pipeline_version: String,
    pub params_sha256: String,
}

async fn health(State(st): State<Arc<AppState>>) -> Json<HealthStatus> {
    Json(HealthStatus {
        status: "ok".into(),
        pipeline_version: PIPELINE_VERSION.into(),
        params_sha256: st.pipeline().params_sha256().to_string(),
    })
}

struct EstimateForm {
    image: Vec<u8>,
    age_years: f64,
    gender: Gender,
    device_id: Option<String>,
}

async fn read_form(mut mp: Multipart) -> Result<EstimateForm, ApiError> {
    let (mut image, mut age, mut gender, mut device) = (None, None, None, None);
    while let Some(field) = mp
        .next_field()
        .await
        .map_err(|e| ApiError::validation(format!("malformed multipart body: {e}")))?
    {
        let name = field.name().unwrap_or_default().to_string();
        let bad = |e: axum::extract::multipart::MultipartError| {
            ApiError::validation(format!("cannot read field `{name}`: {e}"))
        };
        match name.as_str() {
            "image" => image = Some(field.bytes().await.map_err(bad)?.to_vec()),
            "age" | "age_years" => age = Some(field.text().await.map_err(bad)?),
            "gender" => gender = Some(field.text().await.map_err(bad)?),
            "device_id" => device = Some(field.text().await.map_err(bad)?),
            _ => {}
        }
    }
    let missing: Vec<&str> = [
        ("image", image.is_none()),
        ("age", age.is_none()),
        ("gender", gender.is_none()),
    ]
    .iter()
    .filter(|(_, m)| *m)
    .map(|(n, _)| *n)
    .collect();
    if !missing.is_empty() {
        return Err(ApiError::validation(format!("missing required field(s): {}", missing.join(", "))));
    }
    let age_text = age.unwrap_or_default();
    let age_years: f64 = age_text
        .trim()
        .parse()
        .map_err(|_| ApiError::validation(format!("age `{age_text}` is not a number")))?;
    let gender: Gender = gender
        .unwrap_or_default()
        .trim()
        .parse()
        .map_err(|e: Error| ApiError::validation(e.to_string()))?;
    let device_id = device.map(|d| d.trim().to_string()).filter(|d| !d.is_empty());
    Ok(EstimateForm {
        image: image.unwrap_or_default(),
        age_years,
        gender,
        device_id,
    })
}

async fn estimate(State(st): State<Arc<AppState>>, mp: Multipart) -> ApiResult<EstimateResponse> {
    let form = read_form(mp).await?;
    let pipeline = st.pipeline();
    let store = st.store.clone();
    tokio::task::spawn_blocking(move || -> Result<EstimateResponse, ApiError> {
        let device = form.device_id.as_deref();
        let est = pipeline.estimate_bytes(&form.image, form.age_years, form.gender, device)?;
        est.health
            .check()
            .map_err(|e| ApiError::internal("health", e.to_string()))?;
        let sha = sha256_hex(&form.image);
        store.put_image(&sha, &form.image)?;
        let device_id = pipeline.resolve_device(device).to_string();
        let subject = StoredSubject {
            record_id: String::new(),
            image_sha256: sha.clone(),
            gender: form.gender,
            age_years: form.age_years,
            device_id: device_id.clone(),
        };
        let key = InputKey::of(&subject);
        let rec = store.insert_estimate(&key, &mut |ordinal| {
            let id = record_id(&sha, form.age_years, form.gender, &device_id, ordinal);
            let subject = StoredSubject {
                record_id: id.clone(),
                ..subject.clone()
            };
            let response = EstimateResponse {
                record_id: id,
                image_sha256: sha.clone(),
                estimate: est.clone(),
            };
            (subject, response)
        })?;
        tracing::info!(record_id = %rec.subject.record_id, "estimate stored");
        Ok(rec.response)
    })
    .await
    .map_err(|e| ApiError::internal("request", e.to_string()))?
    .map(Json)
}

async fn get_record(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<StoredRecord> {
    let store = st.store.clone();
    tokio::task::spawn_blocking(move || store.get(&id))
        .await
        .map_err(|e| ApiError::internal("store", e.to_string()))?
        .map(Json)
        .map_err(ApiError::from)
}

async fn plan(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<PlanRequest>, JsonRejection>,
) -> ApiResult<nutriscan_core::health::NutritionPlan> {
    let Json(req) = body.map_err(|e| ApiError::validation(e.body_text()))?;
    let store = st.store.clone();
    tokio::task::spawn_blocking(move || {
        let rec = store.get(&id)?;
        let est = &rec.response.estimate;
        let activity = req.activity_level.unwrap_or(est.health.activity_level);
        let plan = nutrition_plan(&est.health, est.weight_kg, req.diet_type, req.weeks, activity).map_err(
            |e| match e {
                Error::Infeasible { min_weeks, .. } => {
                    let mut err = ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "plan", "infeasible", e.to_string());
                    err.body.min_weeks = min_weeks;
                    err
                }
                Error::Parameter(_) => ApiError::new(StatusCode::BAD_REQUEST, "plan", "validation", e.to_string()),
                other => ApiError::internal("plan", other.to_string()),
            },
        )?;
        store.add_plan(
            &id,
            PlanEntry {
                request: req,
                plan: plan.clone(),
            },
        )?;
        Ok(plan)
    })
    .await
    .map_err(|e| ApiError::internal("plan", e.to_string()))?
    .map(Json)
}

#[derive(Debug, Serialize, serde::Deserialize, PartialEq)]
pub struct ReloadStatus {
    pub params_sha256: String,
}

fn tokens_match(a: &str, b: &str) -> bool {
    a.len() == b.len() && a.bytes().zip(b.bytes()).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

async fn reload(State(st): State<Arc<AppState>>, headers: HeaderMap) -> ApiResult<ReloadStatus> {
    let Some(expected) = st.admin_token.as_deref() else {
        return Err(ApiError::new(StatusCode::FORBIDDEN, "admin", "admin_disabled", format!("set {ADMIN_TOKEN_ENV} to enable reloads")));
    };
    let given = headers
        .get(ADMIN_TOKEN_HEADER)
        .and_then(|v| v.to_str().ok())
        .unwrap_or_default();
    if !tokens_match(given, expected) {
        return Err(ApiError::new(StatusCode::UNAUTHORIZED, "admin", "unauthorized", "bad or missing admin token"));
    }
    let Some(config) = st.config.clone() else {
        return Err(ApiError::new(StatusCode::CONFLICT, "admin", "no_config", "service was started without a config file"));
    };
    let state = st.clone();
    tokio::task::spawn_blocking(move || {
        let p = Pipeline::from_config(&config)
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "admin", "reload_failed", e.to_string()))?;
        let digest = p.params_sha256().to_string();
        state.swap_pipeline(p);
        tracing::info!(params_sha256 = %digest, "model reloaded");
        Ok(ReloadStatus { params_sha256: digest })
    })
    .await
    .map_err(|e| ApiError::internal("admin", e.to_string()))?
    .map(Json)
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(state: AppState, addr: SocketAddr) -> Result<(), ServiceError> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(Arc::new(state))).await?;
    Ok(())
}
