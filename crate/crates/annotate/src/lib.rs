//! HTTP backend for correcting predicted landmarks by several annotators
//! and averaging their markings into ground truth.
//!
//! All bodies are JSON. Shapes travel as 68 `{"x": .., "y": ..}` objects.
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/api/images` | images with per-annotator status |
//! | GET | `/api/images/{id}/file` | image bytes |
//! | GET | `/api/images/{id}/landmarks?annotator=A` | starting shape and its provenance |
//! | PUT | `/api/images/{id}/landmarks?annotator=A` | `{"points": [...]}` |
//! | GET | `/api/ground-truth/{id}` | average of all current records |
//! | POST | `/api/export` | writes the ground-truth dataset XML |
//!
//! Image ids are the dataset-relative paths; clients percent-encode them
//! into a single path segment. Validation failures return 400 with
//! `{"error": "validation", "message": .., "indices": [..]}`; unknown images
//! return 404.

mod error;
pub mod store;

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::header;
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use facelm::dataset::synth::canonical_template;
use facelm::dataset::{AnnotatedImage, DatasetIndex};
use facelm::geometry::{Point2, Shape68, NUM_LANDMARKS};
use facelm::raster::load_image_grayscale;
use facelm::regressor::ShapePredictorModel;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

pub use error::ServiceError;
pub use store::{AnnotationRecord, RecordStore};

/// Fraction of the image size by which points may lie outside the image.
pub const BOUNDS_MARGIN: f64 = 0.1;

const MAX_ANNOTATOR_LEN: usize = 128;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub dataset_xml: PathBuf,
    pub store_dir: PathBuf,
    pub model: Option<PathBuf>,
    /// Built UI assets served at `/`.
    pub static_dir: Option<PathBuf>,
    /// Defaults to `ground_truth.xml` in the store directory.
    pub export_path: Option<PathBuf>,
}

pub struct AppState {
    index: DatasetIndex,
    by_id: HashMap<String, usize>,
    model: Option<ShapePredictorModel>,
    fallback_mean: Shape68,
    store: Mutex<RecordStore>,
    sizes: Mutex<HashMap<usize, (u32, u32)>>,
    export_path: PathBuf,
}

impl AppState {
    pub fn new(
        index: DatasetIndex,
        model: Option<ShapePredictorModel>,
        store_dir: &Path,
        export_path: Option<PathBuf>,
    ) -> Result<Self, ServiceError> {
        let by_id = index
            .images
            .iter()
            .enumerate()
            .map(|(i, img)| (img.id(), i))
            .collect();
        let store = RecordStore::open(store_dir)?;
        let template = canonical_template();
        let (lo, hi) = template.extent();
        let fallback_mean =
            template.map(|p| Point2::new((p.x - lo.x) / (hi.x - lo.x), (p.y - lo.y) / (hi.y - lo.y)));
        Ok(Self {
            index,
            by_id,
            model,
            fallback_mean,
            store: Mutex::new(store),
            sizes: Mutex::new(HashMap::new()),
            export_path: export_path.unwrap_or_else(|| store_dir.join("ground_truth.xml")),
        })
    }

    pub fn from_config(config: &ServiceConfig) -> Result<Self, ServiceError> {
        let index = DatasetIndex::load_xml(&config.dataset_xml)?;
        let model = config
            .model
            .as_deref()
            .map(ShapePredictorModel::load)
            .transpose()?;
        Self::new(index, model, &config.store_dir, config.export_path.clone())
    }

    fn lookup(&self, id: &str) -> Result<(usize, &AnnotatedImage), ServiceError> {
        let i = *self
            .by_id
            .get(id)
            .ok_or_else(|| ServiceError::NotFound(id.to_string()))?;
        Ok((i, &self.index.images[i]))
    }

    fn image_size(&self, i: usize) -> Result<(u32, u32), ServiceError> {
        let img = &self.index.images[i];
        if let Some(size) = img.size {
            return Ok(size);
        }
        if let Some(size) = self.sizes.lock().expect("size cache").get(&i) {
            return Ok(*size);
        }
        let pixels = load_image_grayscale(&self.index.resolve(img))?;
        let size = (pixels.width(), pixels.height());
        self.sizes.lock().expect("size cache").insert(i, size);
        Ok(size)
    }

    fn store(&self) -> std::sync::MutexGuard<'_, RecordStore> {
        self.store.lock().expect("store lock poisoned")
    }

    /// Saved shape for `annotator`, else the model's prediction, else the
    /// mean shape placed in the image's box.
    pub fn initial_landmarks(&self, id: &str, annotator: &str) -> Result<(Shape68, Provenance), ServiceError> {
        let (_, img) = self.lookup(id)?;
        if let Some(r) = self.store().record(id, annotator) {
            return Ok((r.shape, Provenance::Saved));
        }
        if let Some(model) = &self.model {
            let pixels = load_image_grayscale(&self.index.resolve(img))?;
            return Ok((model.predict(&pixels, &img.bbox)?, Provenance::Predicted));
        }
        let shape = self.fallback_mean.map(|p| img.bbox.from_unit(p));
        Ok((shape, Provenance::Default))
    }

    /// Validates, persists and averages one annotator's shape.
    pub fn save_annotation(
        &self,
        id: &str,
        annotator: &str,
        points: &[PointDto],
    ) -> Result<SaveResponse, ServiceError> {
        let (i, _) = self.lookup(id)?;
        validate_annotator(annotator)?;
        if points.len() != NUM_LANDMARKS {
            return Err(ServiceError::validation(format!(
                "expected {NUM_LANDMARKS} points, got {}",
                points.len()
            )));
        }
        let (w, h) = self.image_size(i)?;
        let (w, h) = (w as f64, h as f64);
        let outside: Vec<usize> = points
            .iter()
            .enumerate()
            .filter(|(_, p)| {
                !(p.x.is_finite()
                    && p.y.is_finite()
                    && p.x >= -BOUNDS_MARGIN * w
                    && p.x <= (1.0 + BOUNDS_MARGIN) * w
                    && p.y >= -BOUNDS_MARGIN * h
                    && p.y <= (1.0 + BOUNDS_MARGIN) * h)
            })
            .map(|(k, _)| k)
            .collect();
        if !outside.is_empty() {
            return Err(ServiceError::Validation {
                message: format!(
                    "{} point(s) outside the image plus a {:.0}% margin",
                    outside.len(),
                    BOUNDS_MARGIN * 100.0
                ),
                indices: outside,
            });
        }
        let shape = Shape68::from_fn(|k| Point2::new(points[k].x, points[k].y));
        let mut store = self.store();
        let record = store.save(id, annotator, &shape)?;
        let gt = *store.ground_truth(id).expect("record just saved");
        Ok(SaveResponse {
            image: id.to_string(),
            annotator: annotator.to_string(),
            saved_at: record.saved_at,
            points: to_dto(&record.shape),
            ground_truth: to_dto(&gt),
        })
    }

    pub fn ground_truth(&self, id: &str) -> Result<GroundTruthResponse, ServiceError> {
        self.lookup(id)?;
        let store = self.store();
        let gt = store
            .ground_truth(id)
            .ok_or_else(|| ServiceError::NotFound(format!("{id} (no annotations yet)")))?;
        Ok(GroundTruthResponse {
            image: id.to_string(),
            annotators: store.records_for(id).map(|r| r.annotator_id.clone()).collect(),
            points: to_dto(gt),
        })
    }

    /// Dataset of the images that have ground truth, with their stored
    /// boxes.
    pub fn ground_truth_dataset(&self) -> Result<DatasetIndex, ServiceError> {
        let store = self.store();
        let mut images = Vec::new();
        for img in &self.index.images {
            let id = img.id();
            if let Some(gt) = store.ground_truth(&id) {
                let mut out = img.clone();
                out.annotations = store
                    .records_for(&id)
                    .map(|r| (r.annotator_id.clone(), r.shape))
                    .collect();
                out.ground_truth = Some(*gt);
                images.push(out);
            }
        }
        if images.is_empty() {
            return Err(ServiceError::NothingToExport);
        }
        Ok(DatasetIndex::new(self.index.base_dir.clone(), images))
    }

    pub fn export(&self, path: &Path) -> Result<ExportResponse, ServiceError> {
        let dataset = self.ground_truth_dataset()?;
        let dir = path.parent().unwrap_or(Path::new(""));
        let text = dataset.to_xml_string_in(dir);
        store::atomic_write(path, text.as_bytes())?;
        Ok(ExportResponse {
            path: path.display().to_string(),
            images: dataset.images.len(),
        })
    }

    pub fn list(&self) -> Vec<ImageSummary> {
        let store = self.store();
        self.index
            .images
            .iter()
            .map(|img| {
                let id = img.id();
                ImageSummary {
                    annotations: store
                        .records_for(&id)
                        .map(|r| (r.annotator_id.clone(), r.saved_at))
                        .collect(),
                    has_ground_truth: store.ground_truth(&id).is_some(),
                    subject: img.meta.subject_id.clone(),
                    cohort: img.meta.cohort.to_string(),
                    expression: img.meta.expression.clone(),
                    id,
                }
            })
            .collect()
    }
}

fn validate_annotator(annotator: &str) -> Result<(), ServiceError> {
    if annotator.is_empty() {
        return Err(ServiceError::validation("annotator query parameter is required"));
    }
    if annotator.len() > MAX_ANNOTATOR_LEN || annotator.chars().any(char::is_control) {
        return Err(ServiceError::validation("annotator id is too long or has control characters"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointDto {
    pub x: f64,
    pub y: f64,
}

fn to_dto(s: &Shape68) -> Vec<PointDto> {
    s.iter().map(|p| PointDto { x: p.x, y: p.y }).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Saved,
    Predicted,
    Default,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ImageSummary {
    pub id: String,
    pub subject: String,
    pub cohort: String,
    pub expression: String,
    /// Annotator → save time (ms since the Unix epoch).
    pub annotations: BTreeMap<String, u64>,
    pub has_ground_truth: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LandmarksResponse {
    pub image: String,
    pub annotator: String,
    pub provenance: Provenance,
    pub points: Vec<PointDto>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SaveRequest {
    pub points: Vec<PointDto>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SaveResponse {
    pub image: String,
    pub annotator: String,
    pub saved_at: u64,
    /// As stored (rounded to 6 decimals).
    pub points: Vec<PointDto>,
    pub ground_truth: Vec<PointDto>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GroundTruthResponse {
    pub image: String,
    pub annotators: Vec<String>,
    pub points: Vec<PointDto>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ExportResponse {
    pub path: String,
    pub images: usize,
}

#[derive(Debug, Deserialize)]
struct AnnotatorQuery {
    #[serde(default)]
    annotator: String,
}

type Shared = Arc<AppState>;

/// Runs blocking store or image work off the async executor.
async fn blocking<T: Send + 'static>(
    state: &Shared,
    f: impl FnOnce(&AppState) -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ServiceError> {
    let state = Arc::clone(state);
    tokio::task::spawn_blocking(move || f(&state))
        .await
        .map_err(|e| ServiceError::Task(e.to_string()))?
}

async fn list_images(State(state): State<Shared>) -> Result<Json<Vec<ImageSummary>>, ServiceError> {
    Ok(Json(blocking(&state, |s| Ok(s.list())).await?))
}

async fn image_file(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<String>,
) -> Result<impl IntoResponse, ServiceError> {
    let (bytes, mime) = blocking(&state, move |s| {
        let (_, img) = s.lookup(&id)?;
        let path = s.index.resolve(img);
        let bytes = std::fs::read(&path).map_err(|e| ServiceError::io(&path, e))?;
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        let mime = match ext.as_deref() {
            Some("jpg") | Some("jpeg") => "image/jpeg",
            _ => "image/png",
        };
        Ok((bytes, mime))
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, mime)], bytes))
}

async fn get_landmarks(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<AnnotatorQuery>,
) -> Result<Json<LandmarksResponse>, ServiceError> {
    let resp = blocking(&state, move |s| {
        s.lookup(&id)?;
        validate_annotator(&q.annotator)?;
        let (shape, provenance) = s.initial_landmarks(&id, &q.annotator)?;
        Ok(LandmarksResponse {
            image: id,
            annotator: q.annotator,
            provenance,
            points: to_dto(&shape),
        })
    })
    .await?;
    Ok(Json(resp))
}

async fn put_landmarks(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<AnnotatorQuery>,
    body: Bytes,
) -> Result<Json<SaveResponse>, ServiceError> {
    let resp = blocking(&state, move |s| {
        s.lookup(&id)?;
        let req: SaveRequest = serde_json::from_slice(&body)
            .map_err(|e| ServiceError::validation(format!("malformed body: {e}")))?;
        s.save_annotation(&id, &q.annotator, &req.points)
    })
    .await?;
    Ok(Json(resp))
}

async fn get_ground_truth(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<GroundTruthResponse>, ServiceError> {
    Ok(Json(blocking(&state, move |s| s.ground_truth(&id)).await?))
}

async fn post_export(State(state): State<Shared>) -> Result<Json<ExportResponse>, ServiceError> {
    Ok(Json(
        blocking(&state, |s| s.export(&s.export_path.clone())).await?,
    ))
}

pub fn router(state: Arc<AppState>, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/images", get(list_images))
        .route("/api/images/{id}/file", get(image_file))
        .route("/api/images/{id}/landmarks", get(get_landmarks).put(put_landmarks))
        .route("/api/ground-truth/{id}", get(get_ground_truth))
        .route("/api/export", post(post_export))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// A bound listener with its application, ready to run.
pub struct Server {
    listener: tokio::net::TcpListener,
    app: Router,
}

impl Server {
    /// Loads the state and binds `addr` (port 0 picks a free port).
    pub async fn bind(config: &ServiceConfig, addr: SocketAddr) -> Result<Self, ServiceError> {
        let state = Arc::new(AppState::from_config(config)?);
        let app = router(state, config.static_dir.as_deref());
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| ServiceError::Server(format!("cannot bind {addr}: {e}")))?;
        Ok(Self { listener, app })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, ServiceError> {
        self.listener
            .local_addr()
            .map_err(|e| ServiceError::Server(format!("local address: {e}")))
    }

    /// Serves until the process is stopped.
    pub async fn run(self) -> Result<(), ServiceError> {
        axum::serve(self.listener, self.app)
            .await
            .map_err(|e| ServiceError::Server(format!("connection loop: {e}")))
    }
}

pub async fn serve(config: &ServiceConfig, addr: SocketAddr) -> Result<(), ServiceError> {
    Server::bind(config, addr).await?.run().await
}
