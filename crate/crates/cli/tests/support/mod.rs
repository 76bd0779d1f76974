#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use limelens::service::{router, AppState, ServiceConfig};
use limelens_core::data::{synthesize_dataset, write_png};
use limelens_core::models::{build_cnn, build_mlp, save_weights};
use serde_json::Value;
use tower::ServiceExt;

pub struct Fixture {
    pub root: tempfile::TempDir,
}

impl Fixture {
    /// Eight synthetic 32x32 images and two untrained models (mlp, cnn).
    pub fn new() -> Self {
        let root = tempfile::tempdir().unwrap();
        let fx = Fixture { root };
        for s in synthesize_dataset(8, 32, 21).unwrap().samples() {
            let dir = fx.data().join(s.label.name());
            fs::create_dir_all(&dir).unwrap();
            write_png(&s.pixels, &dir.join(format!("{}.png", s.id))).unwrap();
        }
        fs::create_dir_all(fx.models()).unwrap();
        save_weights(&build_mlp([3, 32, 32], 1).unwrap(), &fx.models().join("mlp.lmnw")).unwrap();
        save_weights(&build_cnn([3, 32, 32], 1).unwrap(), &fx.models().join("cnn.lmnw")).unwrap();
        fx
    }

    pub fn path(&self) -> &Path {
        self.root.path()
    }

    pub fn data(&self) -> PathBuf {
        self.path().join("data")
    }

    pub fn models(&self) -> PathBuf {
        self.path().join("models")
    }

    pub fn image(&self, id: &str) -> PathBuf {
        let label = if id.ends_with(['0', '2', '4', '6', '8']) { "parasitized" } else { "uninfected" };
        self.data().join(label).join(format!("{id}.png"))
    }

    pub fn service_config(&self) -> ServiceConfig {
        ServiceConfig {
            model_dir: self.models(),
            data_dir: self.data(),
            cache_dir: self.path().join("cache"),
            log_path: self.path().join("requests.ndjson"),
        }
    }

    pub fn app(&self) -> Router {
        router(Arc::new(AppState::load(self.service_config()).unwrap()))
    }
}

pub async fn call(app: &Router, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

pub async fn call_json(app: &Router, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, Value) {
    let (status, bytes) = call(app, method, uri, body).await;
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}
