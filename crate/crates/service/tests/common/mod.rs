#![allow(dead_code)]

use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, Response};
use http_body_util::BodyExt;
use image::{ImageFormat, RgbImage};
use rosebreed_core::dataset::LabelSet;
use rosebreed_core::models::stub_classifier;
use rosebreed_core::registry::{save_artifact, ArtifactContents, ArtifactMetadata, FinalMetrics};
use rosebreed_core::training::{EpochMetrics, TrainingConfig, TrainingHistory};
use rosebreed_service::{router, AppState, ServiceConfig};
use tower::ServiceExt;

pub const BOUNDARY: &str = "rosebreed-test-boundary";

pub fn shipped_breeds() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/breeds.json")
}

/// Saves a 5-class stub model over the default labels.
pub fn register(dir: &Path, seed: u64) -> ArtifactMetadata {
    let clf = stub_classifier(5, 16, seed).unwrap();
    let mut history = TrainingHistory::default();
    history.push(EpochMetrics {
        epoch: 1,
        train_accuracy: 0.4,
        train_loss: 1.4,
        val_accuracy: 0.3,
        val_loss: 1.5,
        seconds: 0.01,
    });
    save_artifact(
        dir,
        &ArtifactContents {
            classifier: &clf,
            labels: LabelSet::default_breeds().names(),
            training: TrainingConfig::default(),
            history,
            metrics: FinalMetrics::default(),
            fixture_image: None,
        },
    )
    .unwrap()
}

pub struct Fixture {
    pub registry: tempfile::TempDir,
    pub models: Vec<ArtifactMetadata>,
    pub state: Arc<AppState>,
}

impl Fixture {
    pub fn new(n_models: usize) -> Self {
        let registry = tempfile::tempdir().unwrap();
        let models = (0..n_models)
            .map(|i| {
                if i > 0 {
                    std::thread::sleep(std::time::Duration::from_millis(5));
                }
                register(registry.path(), 100 + i as u64)
            })
            .collect();
        let state = AppState::new(ServiceConfig::new(registry.path(), shipped_breeds()));
        Self {
            registry,
            models,
            state,
        }
    }

    pub fn loaded(n_models: usize) -> Self {
        let f = Self::new(n_models);
        f.state.reload().unwrap();
        f
    }

    pub fn fixture_bytes(&self, model: usize) -> Vec<u8> {
        let m = &self.models[model];
        std::fs::read(self.registry.path().join(&m.model_id).join(&m.fixture.file)).unwrap()
    }

    pub async fn send(&self, request: Request<Body>) -> (u16, serde_json::Value) {
        send(&self.state, request).await
    }
}

pub async fn send(state: &Arc<AppState>, request: Request<Body>) -> (u16, serde_json::Value) {
    let response: Response<Body> = router(state.clone()).oneshot(request).await.unwrap();
    let status = response.status().as_u16();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    let json = serde_json::from_slice(&bytes)
        .unwrap_or_else(|_| serde_json::Value::String(String::from_utf8_lossy(&bytes).into_owned()));
    (status, json)
}

pub fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

/// A `multipart/form-data` body with the given (name, filename, bytes) parts.
pub fn multipart_body(parts: &[(&str, Option<&str>, &[u8])]) -> Vec<u8> {
    let mut body = Vec::new();
    for (name, filename, data) in parts {
        body.extend_from_slice(format!("--{BOUNDARY}\r\n").as_bytes());
        match filename {
            Some(f) => body.extend_from_slice(
                format!(
                    "Content-Disposition: form-data; name=\"{name}\"; filename=\"{f}\"\r\n\
                     Content-Type: application/octet-stream\r\n\r\n"
                )
                .as_bytes(),
            ),
            None => body.extend_from_slice(
                format!("Content-Disposition: form-data; name=\"{name}\"\r\n\r\n").as_bytes(),
            ),
        }
        body.extend_from_slice(data);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    body
}

pub fn predict_request(uri: &str, parts: &[(&str, Option<&str>, &[u8])]) -> Request<Body> {
    Request::post(uri)
        .header(
            "content-type",
            format!("multipart/form-data; boundary={BOUNDARY}"),
        )
        .body(Body::from(multipart_body(parts)))
        .unwrap()
}

pub fn upload(bytes: &[u8]) -> Request<Body> {
    predict_request("/api/v1/predict", &[("image", Some("rose.png"), bytes)])
}

pub fn encode(img: &RgbImage, format: ImageFormat) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, format).unwrap();
    out.into_inner()
}

pub fn error_code(body: &serde_json::Value) -> &str {
    body["error"]["code"].as_str().unwrap_or_else(|| panic!("no error envelope in {body}"))
}
