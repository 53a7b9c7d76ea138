use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use axum::extract::multipart::MultipartRejection;
use axum::extract::{Multipart, Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use chrono::{DateTime, Utc};
use image::ImageFormat;
use rosebreed_core::breedbase::{BreedBase, BreedInfoRecord};
use rosebreed_core::evaluation::argmax;
use rosebreed_core::models::BackboneFamily;
use rosebreed_core::registry::{list_models, FinalMetrics, LoadedModel};
use rosebreed_core::Error;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{codes, ApiError};
use crate::state::AppState;
use crate::upload::decode_upload;

type AppResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedBreed {
    pub breed: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub model_id: String,
    pub top_breed: String,
    pub confidence: f64,
    pub low_confidence: bool,
    pub full_distribution: BTreeMap<String, f64>,
    /// The distribution in decreasing probability.
    pub ranking: Vec<RankedBreed>,
    pub breed_info: Option<BreedInfoRecord>,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreedEntry {
    #[serde(flatten)]
    pub record: BreedInfoRecord,
    /// Whether the serving model can output this breed.
    pub detectable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreedList {
    pub breeds: Vec<BreedEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model_id: String,
    pub family: BackboneFamily,
    pub labels: Vec<String>,
    pub input_size: (usize, usize),
    pub created_at: DateTime<Utc>,
    pub metrics: FinalMetrics,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelList {
    pub active_model_id: Option<String>,
    pub models: Vec<ModelSummary>,
    pub unreadable: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    /// `"ok"` once a model and the breed base are loaded, `"unavailable"`
    /// before.
    pub status: String,
    pub model_id: Option<String>,
    pub uptime_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct PredictQuery {
    pub model_id: Option<String>,
}

fn map_core(err: Error) -> ApiError {
    match err {
        Error::NotFound(m) => ApiError::new(StatusCode::NOT_FOUND, codes::MODEL_NOT_FOUND, m),
        Error::InvalidArgument(m) => ApiError::bad_request(codes::INVALID_REQUEST, m),
        other => ApiError::internal(other.to_string()),
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> AppResult<T> + Send + 'static) -> AppResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

fn no_model() -> ApiError {
    ApiError::new(
        StatusCode::SERVICE_UNAVAILABLE,
        codes::NO_MODEL_LOADED,
        "no model is loaded yet",
    )
}

pub async fn health(State(state): State<Arc<AppState>>) -> Response {
    let active = state.active();
    let body = Health {
        status: if active.is_some() { "ok" } else { "unavailable" }.into(),
        model_id: active.map(|a| a.model.metadata.model_id.clone()),
        uptime_seconds: state.uptime_seconds(),
        detail: state.last_error(),
    };
    let status = if body.model_id.is_some() {
        StatusCode::OK
    } else {
        StatusCode::SERVICE_UNAVAILABLE
    };
    (status, Json(body)).into_response()
}

struct Upload {
    bytes: Vec<u8>,
    model_id: Option<String>,
}

async fn read_upload(state: &AppState, mut multipart: Multipart) -> AppResult<Upload> {
    let limit = state.config.max_upload_bytes;
    let too_large = || {
        ApiError::bad_request(
            codes::PAYLOAD_TOO_LARGE,
            format!("upload exceeds the {limit}-byte limit"),
        )
    };
    let mut bytes = None;
    let mut model_id = None;
    loop {
        let field = match multipart.next_field().await {
            Ok(Some(f)) => f,
            Ok(None) => break,
            Err(e) if e.status() == StatusCode::PAYLOAD_TOO_LARGE => return Err(too_large()),
            Err(e) => return Err(ApiError::bad_request(codes::INVALID_REQUEST, e.body_text())),
        };
        let name = field.name().unwrap_or_default().to_string();
        let data = match field.bytes().await {
            Ok(d) => d,
            Err(e) if e.status() == StatusCode::PAYLOAD_TOO_LARGE => return Err(too_large()),
            Err(e) => return Err(ApiError::bad_request(codes::INVALID_REQUEST, e.body_text())),
        };
        match name.as_str() {
            "image" => {
                if data.len() > limit {
                    return Err(too_large());
                }
                bytes = Some(data.to_vec());
            }
            "model_id" => {
                let text = String::from_utf8(data.to_vec()).map_err(|_| {
                    ApiError::bad_request(codes::INVALID_REQUEST, "model_id is not UTF-8")
                })?;
                let text = text.trim();
                if !text.is_empty() {
                    model_id = Some(text.to_string());
                }
            }
            _ => {}
        }
    }
    let bytes = bytes.ok_or_else(|| {
        ApiError::bad_request(codes::MISSING_IMAGE, "multipart field `image` is required")
    })?;
    Ok(Upload { bytes, model_id })
}

fn distribution_result(
    model: &LoadedModel,
    breeds: Option<&BreedBase>,
    probs: &[f64],
    threshold: f64,
    started: Instant,
) -> PredictionResult {
    let names = model.labels.names();
    let top = argmax(probs);
    let mut ranking: Vec<RankedBreed> = names
        .iter()
        .zip(probs)
        .map(|(n, &p)| RankedBreed {
            breed: n.clone(),
            probability: p,
        })
        .collect();
    ranking.sort_by(|a, b| b.probability.total_cmp(&a.probability));
    let top_breed = names[top].clone();
    PredictionResult {
        model_id: model.metadata.model_id.clone(),
        breed_info: breeds.and_then(|b| b.lookup(&top_breed)).cloned(),
        top_breed,
        confidence: probs[top],
        low_confidence: probs[top] < threshold,
        full_distribution: names.into_iter().zip(probs.iter().copied()).collect(),
        ranking,
        latency_ms: started.elapsed().as_secs_f64() * 1e3,
    }
}

fn save_upload(dir: &std::path::Path, bytes: &[u8], format: ImageFormat) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let ext = format.extensions_str().first().copied().unwrap_or("img");
    let path = dir.join(format!("{}.{ext}", hex::encode(Sha256::digest(bytes))));
    if !path.exists() {
        std::fs::write(&path, bytes)?;
    }
    Ok(path)
}

pub async fn predict(
    State(state): State<Arc<AppState>>,
    Query(query): Query<PredictQuery>,
    multipart: Result<Multipart, MultipartRejection>,
) -> AppResult<Json<PredictionResult>> {
    let started = Instant::now();
    let multipart = multipart.map_err(|e| ApiError::bad_request(codes::INVALID_REQUEST, e.body_text()))?;
    let upload = read_upload(&state, multipart).await?;
    let active = state.active().ok_or_else(no_model)?;
    let requested = upload.model_id.or(query.model_id);

    let state2 = state.clone();
    let result = blocking(move || {
        let (image, format) = decode_upload(&upload.bytes)?;
        let model = match requested {
            Some(id) => state2.model_by_id(&id).map_err(map_core)?,
            None => active.model.clone(),
        };
        let probs = model.predict_image(&image).map_err(map_core)?;
        if let Some(dir) = &state2.config.save_uploads {
            match save_upload(dir, &upload.bytes, format) {
                Ok(path) => log::info!("saved upload to {}", path.display()),
                Err(e) => log::warn!("could not save upload: {e}"),
            }
        }
        Ok(distribution_result(
            &model,
            Some(&active.breeds),
            &probs,
            state2.config.low_confidence_threshold,
            started,
        ))
    })
    .await?;
    log::info!(
        "predicted {} ({:.3}) with {} in {:.1} ms",
        result.top_breed,
        result.confidence,
        result.model_id,
        result.latency_ms
    );
    Ok(Json(result))
}

fn breed_base(state: &AppState) -> AppResult<(Arc<BreedBase>, Vec<String>)> {
    let active = state.active().ok_or_else(no_model)?;
    Ok((active.breeds.clone(), active.model.labels.names()))
}

fn entry(record: &BreedInfoRecord, labels: &[String]) -> BreedEntry {
    BreedEntry {
        record: record.clone(),
        detectable: labels.iter().any(|l| l == &record.name),
    }
}

pub async fn breeds(State(state): State<Arc<AppState>>) -> AppResult<Json<BreedList>> {
    let (base, labels) = breed_base(&state)?;
    Ok(Json(BreedList {
        breeds: base.records().iter().map(|r| entry(r, &labels)).collect(),
    }))
}

pub async fn breed(
    State(state): State<Arc<AppState>>,
    Path(name): Path<String>,
) -> AppResult<Json<BreedEntry>> {
    let (base, labels) = breed_base(&state)?;
    let record = base.lookup(&name).ok_or_else(|| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            codes::BREED_NOT_FOUND,
            format!("no breed named `{name}`"),
        )
    })?;
    Ok(Json(entry(record, &labels)))
}

pub async fn models(State(state): State<Arc<AppState>>) -> AppResult<Json<ModelList>> {
    let active_id = state.active().map(|a| a.model.metadata.model_id.clone());
    let dir = state.config.registry_dir.clone();
    let listing = blocking(move || list_models(&dir).map_err(map_core)).await?;
    let models = listing
        .models
        .into_iter()
        .map(|m| ModelSummary {
            active: active_id.as_deref() == Some(m.model_id.as_str()),
            model_id: m.model_id,
            family: m.family,
            labels: m.labels,
            input_size: m.preprocessing.input_size,
            created_at: m.created_at,
            metrics: m.metrics,
        })
        .collect();
    Ok(Json(ModelList {
        active_model_id: active_id,
        models,
        unreadable: listing
            .unreadable
            .into_iter()
            .map(|(p, e)| format!("{}: {e}", p.display()))
            .collect(),
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReloadResult {
    pub model_id: String,
}

pub async fn reload(State(state): State<Arc<AppState>>) -> AppResult<Json<ReloadResult>> {
    let model_id = blocking(move || {
        state.reload().map_err(|e| match e {
            Error::NotFound(m) => ApiError::new(StatusCode::SERVICE_UNAVAILABLE, codes::NO_MODEL_LOADED, m),
            other => ApiError::internal(other.to_string()),
        })
    })
    .await?;
    Ok(Json(ReloadResult { model_id }))
}

pub async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, codes::INVALID_REQUEST, "no such endpoint")
}
