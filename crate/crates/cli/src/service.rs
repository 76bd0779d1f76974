//! Local HTTP service backing the explanation console.
//!
//! Models are loaded once at startup and never mutated. The explanation
//! cache and the request log are the only shared mutable state; each sits
//! behind its own mutex.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use anyhow::{bail, Context};
use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use limelens_core::compare::{compare_explanations, CompareConfig};
use limelens_core::data::{index_dataset, load_image, ImageEntry};
use limelens_core::lime::{segment_grid_dims, Explanation, ExplanationConfig, GridShape};
use limelens_core::models::{Network, PredictionResult};
use limelens_core::{Error as CoreError, DOCUMENT_VERSION};

use crate::cli::{explain_image, model_id, open_model};
use crate::WEIGHTS_EXTENSION;

/// Environment variable overriding the explanation cache directory.
pub const CACHE_DIR_ENV: &str = "LIMELENS_CACHE_DIR";

const DEFAULT_PAGE: usize = 50;
const MAX_PAGE: usize = 1000;

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub model_dir: PathBuf,
    pub data_dir: PathBuf,
    pub cache_dir: PathBuf,
    pub log_path: PathBuf,
}

impl ServiceConfig {
    /// Cache defaults to `<model_dir>/.limelens-cache` unless
    /// `LIMELENS_CACHE_DIR` is set; the log to `<model_dir>/requests.ndjson`.
    pub fn new(model_dir: PathBuf, data_dir: PathBuf, log_path: Option<PathBuf>) -> Self {
        let cache_dir = std::env::var_os(CACHE_DIR_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
            .unwrap_or_else(|| model_dir.join(".limelens-cache"));
        let log_path = log_path.unwrap_or_else(|| model_dir.join("requests.ndjson"));
        ServiceConfig { model_dir, data_dir, cache_dir, log_path }
    }
}

struct LoadedModel {
    network: Network,
    /// sha256 of the weights file.
    digest: String,
}

pub struct AppState {
    config: ServiceConfig,
    models: BTreeMap<String, LoadedModel>,
    images: Vec<ImageEntry>,
    image_index: HashMap<String, usize>,
    cache_lock: Mutex<()>,
    log: Mutex<File>,
}

impl AppState {
    pub fn load(config: ServiceConfig) -> anyhow::Result<Self> {
        let mut models = BTreeMap::new();
        let listing = fs::read_dir(&config.model_dir)
            .with_context(|| format!("reading model directory {}", config.model_dir.display()))?;
        let mut paths: Vec<PathBuf> = listing
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == WEIGHTS_EXTENSION))
            .collect();
        paths.sort();
        for path in paths {
            let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
            let network = open_model(&path)?;
            let digest = hex::encode(Sha256::digest(&bytes));
            models.insert(model_id(&path), LoadedModel { network, digest });
        }
        if models.is_empty() {
            bail!("no *.{WEIGHTS_EXTENSION} weight files in {}", config.model_dir.display());
        }
        let images = index_dataset(&config.data_dir)?;
        let image_index = images.iter().enumerate().map(|(i, e)| (e.id.clone(), i)).collect();
        fs::create_dir_all(&config.cache_dir)
            .with_context(|| format!("creating cache directory {}", config.cache_dir.display()))?;
        if let Some(parent) = config.log_path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&config.log_path)
            .with_context(|| format!("opening request log {}", config.log_path.display()))?;
        Ok(AppState { config, models, images, image_index, cache_lock: Mutex::new(()), log: Mutex::new(log) })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    fn model(&self, id: &str) -> Result<&LoadedModel, ApiError> {
        self.models.get(id).ok_or_else(|| ApiError::not_found(format!("unknown model {id:?}")))
    }

    fn image(&self, id: &str) -> Result<&ImageEntry, ApiError> {
        self.image_index
            .get(id)
            .map(|&i| &self.images[i])
            .ok_or_else(|| ApiError::not_found(format!("unknown image {id:?}")))
    }

    fn append_log(&self, entry: &RequestLogEntry) {
        let Ok(mut line) = serde_json::to_vec(entry) else { return };
        line.push(b'\n');
        let mut log = self.log.lock().unwrap_or_else(|p| p.into_inner());
        if let Err(e) = log.write_all(&line).and_then(|_| log.flush()) {
            eprintln!("request log write failed: {e}");
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RequestLogEntry {
    pub timestamp: String,
    pub route: String,
    pub model_id: Option<String>,
    pub image_id: Option<String>,
    pub config: Value,
    pub duration_ms: u64,
    pub outcome: String,
}

/// What a handler learned about the request, for the log entry.
struct LogContext {
    route: &'static str,
    model_id: Option<String>,
    image_id: Option<String>,
    config: Value,
    started: Instant,
}

impl LogContext {
    fn new(route: &'static str) -> Self {
        LogContext { route, model_id: None, image_id: None, config: Value::Null, started: Instant::now() }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    error: &'static str,
    detail: String,
}

impl ApiError {
    fn not_found(detail: String) -> Self {
        ApiError { status: StatusCode::NOT_FOUND, error: "not_found", detail }
    }

    fn bad_request(detail: String) -> Self {
        ApiError { status: StatusCode::BAD_REQUEST, error: "bad_request", detail }
    }

    fn internal(detail: String) -> Self {
        ApiError { status: StatusCode::INTERNAL_SERVER_ERROR, error: "internal", detail }
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Config(_) | CoreError::Dimension(_) => ApiError::bad_request(e.to_string()),
            _ => ApiError::internal(e.to_string()),
        }
    }
}

impl From<anyhow::Error> for ApiError {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast::<CoreError>() {
            Ok(core) => core.into(),
            Err(e) => ApiError::internal(format!("{e:#}")),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.error, "detail": self.detail }))).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

fn finish(state: &AppState, ctx: LogContext, result: ApiResult) -> Response {
    let outcome = match &result {
        Ok(_) => "ok".to_string(),
        Err(e) => format!("{} {}", e.status.as_u16(), e.error),
    };
    state.append_log(&RequestLogEntry {
        timestamp: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
        route: ctx.route.to_string(),
        model_id: ctx.model_id,
        image_id: ctx.image_id,
        config: ctx.config,
        duration_ms: ctx.started.elapsed().as_millis() as u64,
        outcome,
    });
    result.unwrap_or_else(IntoResponse::into_response)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/models", get(list_models))
        .route("/api/images", get(list_images))
        .route("/api/images/{id}", get(image_png))
        .route("/api/predict", post(predict))
        .route("/api/explain", post(explain_route))
        .route("/api/explanations/{key}", get(explanation_document))
        .route("/api/overlays/{key}", get(overlay_png))
        .route("/api/compare", post(compare_route))
        .fallback(|| async { ApiError::not_found("no such route".into()) })
        .with_state(state)
}

pub async fn serve(host: &str, port: u16, config: ServiceConfig) -> anyhow::Result<()> {
    let state = Arc::new(AppState::load(config)?);
    let listener = tokio::net::TcpListener::bind((host, port))
        .await
        .with_context(|| format!("binding {host}:{port}"))?;
    eprintln!(
        "serving {} model(s) and {} image(s) on http://{}",
        state.models.len(),
        state.images.len(),
        listener.local_addr()?
    );
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .context("serving")
}

async fn list_models(State(st): State<Arc<AppState>>) -> Response {
    let ctx = LogContext::new("GET /api/models");
    let models: Vec<Value> = st
        .models
        .iter()
        .map(|(id, m)| {
            json!({
                "id": id,
                "architecture": m.network.architecture().name(),
                "input_shape": m.network.input_shape(),
                "parameters": m.network.parameter_count(),
                "layers": m.network.summary(),
                "weights_sha256": m.digest,
            })
        })
        .collect();
    let result = Ok(Json(json!({ "version": DOCUMENT_VERSION, "models": models })).into_response());
    finish(&st, ctx, result)
}

async fn list_images(State(st): State<Arc<AppState>>, Query(q): Query<HashMap<String, String>>) -> Response {
    let mut ctx = LogContext::new("GET /api/images");
    ctx.config = json!(q);
    let result = (|| {
        let number = |name: &str, default: usize| -> Result<usize, ApiError> {
            q.get(name).map_or(Ok(default), |v| {
                v.parse().map_err(|_| ApiError::bad_request(format!("{name} must be a non-negative integer, got {v:?}")))
            })
        };
        let limit = number("limit", DEFAULT_PAGE)?;
        let offset = number("offset", 0)?;
        if limit == 0 || limit > MAX_PAGE {
            return Err(ApiError::bad_request(format!("limit must lie in [1, {MAX_PAGE}]")));
        }
        let page: Vec<Value> = st
            .images
            .iter()
            .skip(offset)
            .take(limit)
            .map(|e| json!({ "id": e.id, "label": e.label }))
            .collect();
        Ok(Json(json!({
            "version": DOCUMENT_VERSION,
            "total": st.images.len(),
            "offset": offset,
            "limit": limit,
            "images": page,
        }))
        .into_response())
    })();
    finish(&st, ctx, result)
}

async fn image_png(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Response {
    let mut ctx = LogContext::new("GET /api/images/{id}");
    ctx.image_id = Some(id.clone());
    let result = match st.image(&id) {
        Ok(entry) => fs::read(&entry.path)
            .map(|bytes| ([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
            .map_err(|e| ApiError::internal(format!("reading {}: {e}", entry.path.display()))),
        Err(e) => Err(e),
    };
    finish(&st, ctx, result)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictRequest {
    model_id: String,
    image_id: String,
}

async fn predict(State(st): State<Arc<AppState>>, body: Bytes) -> Response {
    let mut ctx = LogContext::new("POST /api/predict");
    let result = predict_inner(st.clone(), &body, &mut ctx).await;
    finish(&st, ctx, result)
}

async fn predict_inner(st: Arc<AppState>, body: &[u8], ctx: &mut LogContext) -> ApiResult {
    let req: PredictRequest = parse_body(body)?;
    ctx.model_id = Some(req.model_id.clone());
    ctx.image_id = Some(req.image_id.clone());
    st.model(&req.model_id)?;
    st.image(&req.image_id)?;
    let prediction: PredictionResult = blocking(move || {
        let model = &st.model(&req.model_id)?.network;
        let pixels = load_image(&st.image(&req.image_id)?.path, model.input_shape()[1])?;
        Ok(model.predict(&pixels)?)
    })
    .await?;
    let (model_id, image_id) = (ctx.model_id.clone(), ctx.image_id.clone());
    Ok(Json(json!({
        "version": DOCUMENT_VERSION,
        "model_id": model_id,
        "image_id": image_id,
        "probability": prediction.probability,
        "predicted_class": prediction.predicted_class,
        "threshold": prediction.threshold,
    }))
    .into_response())
}

/// LIME parameters accepted by the explain and compare routes; anything
/// omitted takes the same default as the CLI.
#[derive(Clone, Debug, Default, Deserialize)]
struct LimeParams {
    k: Option<usize>,
    samples: Option<usize>,
    seed: Option<u64>,
    grid: Option<String>,
    kernel_width: Option<f64>,
    lambda: Option<f64>,
}

impl LimeParams {
    fn config(&self) -> Result<ExplanationConfig, ApiError> {
        let d = ExplanationConfig::default();
        Ok(ExplanationConfig {
            k: self.k.unwrap_or(d.k),
            num_samples: self.samples.unwrap_or(d.num_samples),
            seed: self.seed.unwrap_or(d.seed),
            kernel_width: self.kernel_width.unwrap_or(d.kernel_width),
            lambda: self.lambda.unwrap_or(d.lambda),
            grid: match &self.grid {
                Some(g) => GridShape::parse(g)?,
                None => d.grid,
            },
        })
    }
}

#[derive(Deserialize)]
struct ExplainRequest {
    model_id: String,
    image_id: String,
    #[serde(flatten)]
    params: LimeParams,
}

struct CachedExplanation {
    explanation: Explanation,
    key: String,
    cached: bool,
}

fn is_cache_key(key: &str) -> bool {
    key.len() == 64 && key.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase())
}

/// Content-addressed key over everything that determines the explanation.
fn cache_key(model: &LoadedModel, model_id: &str, image_id: &str, image_digest: &str, config: &ExplanationConfig) -> String {
    let material = json!({
        "version": DOCUMENT_VERSION,
        "model_id": model_id,
        "weights_sha256": model.digest,
        "image_id": image_id,
        "image_sha256": image_digest,
        "config": config,
    });
    hex::encode(Sha256::digest(material.to_string().as_bytes()))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

/// Explains `image_id` with `model_id`, reusing the disk cache when the
/// same inputs were explained before.
fn explain_cached(st: &AppState, model_id: &str, image_id: &str, config: &ExplanationConfig) -> Result<CachedExplanation, ApiError> {
    let model = st.model(model_id)?;
    let entry = st.image(image_id)?;
    let raw = fs::read(&entry.path).map_err(|e| ApiError::internal(format!("reading {}: {e}", entry.path.display())))?;
    let key = cache_key(model, model_id, image_id, &hex::encode(Sha256::digest(&raw)), config);
    let doc_path = st.config.cache_dir.join(format!("{key}.json"));
    let png_path = st.config.cache_dir.join(format!("{key}.png"));

    {
        let _guard = st.cache_lock.lock().unwrap_or_else(|p| p.into_inner());
        if png_path.is_file() {
            if let Ok(bytes) = fs::read(&doc_path) {
                if let Ok(explanation) = Explanation::from_document(&bytes) {
                    return Ok(CachedExplanation { explanation, key, cached: true });
                }
            }
        }
    }

    let pixels = load_image(&entry.path, model.network.input_shape()[1])?;
    let artifacts = explain_image(&model.network, &pixels, image_id, config)?;
    let _guard = st.cache_lock.lock().unwrap_or_else(|p| p.into_inner());
    write_atomic(&png_path, &artifacts.overlay)
        .and_then(|_| write_atomic(&doc_path, &artifacts.document))
        .map_err(|e| ApiError::internal(format!("writing cache entry {key}: {e}")))?;
    Ok(CachedExplanation { explanation: artifacts.explanation, key, cached: false })
}

async fn explain_route(State(st): State<Arc<AppState>>, body: Bytes) -> Response {
    let mut ctx = LogContext::new("POST /api/explain");
    let result = explain_inner(st.clone(), &body, &mut ctx).await;
    finish(&st, ctx, result)
}

async fn explain_inner(st: Arc<AppState>, body: &[u8], ctx: &mut LogContext) -> ApiResult {
    let req: ExplainRequest = parse_body(body)?;
    ctx.model_id = Some(req.model_id.clone());
    ctx.image_id = Some(req.image_id.clone());
    let config = req.params.config()?;
    ctx.config = json!(config);
    st.model(&req.model_id)?;
    st.image(&req.image_id)?;
    let out = blocking(move || explain_cached(&st, &req.model_id, &req.image_id, &config)).await?;
    Ok(Json(json!({
        "version": DOCUMENT_VERSION,
        "explanation": out.explanation,
        "overlay_url": format!("/api/overlays/{}", out.key),
        "document_url": format!("/api/explanations/{}", out.key),
        "cached": out.cached,
    }))
    .into_response())
}

fn cached_file(st: &AppState, key: &str, ext: &str, content_type: &'static str) -> ApiResult {
    if !is_cache_key(key) {
        return Err(ApiError::not_found(format!("unknown key {key:?}")));
    }
    let path = st.config.cache_dir.join(format!("{key}.{ext}"));
    let _guard = st.cache_lock.lock().unwrap_or_else(|p| p.into_inner());
    match fs::read(&path) {
        Ok(bytes) => Ok(([(header::CONTENT_TYPE, content_type)], bytes).into_response()),
        Err(_) => Err(ApiError::not_found(format!("unknown key {key:?}"))),
    }
}

async fn overlay_png(State(st): State<Arc<AppState>>, UrlPath(key): UrlPath<String>) -> Response {
    let ctx = LogContext::new("GET /api/overlays/{key}");
    let result = cached_file(&st, &key, "png", "image/png");
    finish(&st, ctx, result)
}

async fn explanation_document(State(st): State<Arc<AppState>>, UrlPath(key): UrlPath<String>) -> Response {
    let ctx = LogContext::new("GET /api/explanations/{key}");
    let result = cached_file(&st, &key, "json", "application/json");
    finish(&st, ctx, result)
}

#[derive(Deserialize)]
struct CompareRequest {
    model_a: String,
    model_b: String,
    image_id: String,
    #[serde(flatten)]
    params: LimeParams,
}

async fn compare_route(State(st): State<Arc<AppState>>, body: Bytes) -> Response {
    let mut ctx = LogContext::new("POST /api/compare");
    let result = compare_inner(st.clone(), &body, &mut ctx).await;
    finish(&st, ctx, result)
}

async fn compare_inner(st: Arc<AppState>, body: &[u8], ctx: &mut LogContext) -> ApiResult {
    let req: CompareRequest = parse_body(body)?;
    ctx.model_id = Some(format!("{},{}", req.model_a, req.model_b));
    ctx.image_id = Some(req.image_id.clone());
    let config = CompareConfig { explanation: req.params.config()?, ..CompareConfig::default() };
    ctx.config = json!(config);
    let a = st.model(&req.model_a)?;
    let b = st.model(&req.model_b)?;
    st.image(&req.image_id)?;
    if a.network.input_shape() != b.network.input_shape() {
        return Err(ApiError::bad_request(format!(
            "models take different input shapes ({:?} vs {:?})",
            a.network.input_shape(),
            b.network.input_shape()
        )));
    }
    let (row, key_a, key_b) = blocking(move || {
        let exp_a = explain_cached(&st, &req.model_a, &req.image_id, &config.explanation)?;
        let exp_b = explain_cached(&st, &req.model_b, &req.image_id, &config.explanation)?;
        let entry = st.image(&req.image_id)?;
        let [_, h, w] = st.model(&req.model_a)?.network.input_shape();
        let pixels = load_image(&entry.path, h)?;
        let segmap = segment_grid_dims(h, w, config.explanation.grid)?;
        let row = compare_explanations(&exp_a.explanation, &exp_b.explanation, &pixels, &segmap, Some(entry.label), &config)?;
        Ok((row, exp_a.key, exp_b.key))
    })
    .await?;
    Ok(Json(json!({
        "version": DOCUMENT_VERSION,
        "row": row,
        "overlay_a_url": format!("/api/overlays/{key_a}"),
        "overlay_b_url": format!("/api/overlays/{key_b}"),
    }))
    .into_response())
}
