//! HTTP/JSON API over a data directory of scenes, evaluation cases and annotations.
//!
//! ```text
//! GET  /health
//! GET  /scenes              GET /scenes/{id}
//! POST /execute             POST /sample          POST /step
//! GET  /cases               GET /cases/{id}
//! POST /annotations         GET /annotations?case=<id>
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tokio::sync::Mutex;

use placeprog_core::bootstrap::{ProgramDataset, Proposer, RetrievalProposer, SceneSet};
use placeprog_core::classifier::ClassifierModel;
use placeprog_core::config::RunConfig;
use placeprog_core::dsl::PlacementProgram;
use placeprog_core::eval::{AnnotationRecord, EvalCase};
use placeprog_core::exec::{ExecContext, QuerySpec};
use placeprog_core::mask::{sample_placements, MaskFile, PlacementMask};
use placeprog_core::scene::{Scene, SceneDocument};
use placeprog_core::seeds::rng_for;
use placeprog_core::store::{self, write_atomic, StoreError};
use placeprog_core::synth::{CategoryModel, DimensionSampler, StepOutcome, Synthesizer};

#[derive(Debug, Error)]
pub enum ServerError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// An error response: status plus a JSON `{"error": message}` body.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn bad_request(m: impl ToString) -> ApiError {
        ApiError { status: StatusCode::BAD_REQUEST, message: m.to_string() }
    }

    fn not_found(m: impl ToString) -> ApiError {
        ApiError { status: StatusCode::NOT_FOUND, message: m.to_string() }
    }

    fn internal(m: impl ToString) -> ApiError {
        ApiError { status: StatusCode::INTERNAL_SERVER_ERROR, message: m.to_string() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

/// Everything `/step` needs: fitted samplers, a proposer and a classifier.
pub struct SynthEngine {
    pub categories: CategoryModel,
    pub dimensions: DimensionSampler,
    pub proposer: RetrievalProposer,
    pub model: ClassifierModel,
}

impl SynthEngine {
    pub fn new(train: &SceneSet, dataset: &ProgramDataset, model: ClassifierModel) -> Result<SynthEngine, placeprog_core::synth::SynthError> {
        let scenes: Vec<Scene> = train.values().cloned().collect();
        let mut proposer = RetrievalProposer::new();
        proposer.retrain(dataset, train);
        Ok(SynthEngine {
            categories: CategoryModel::fit(&scenes)?,
            dimensions: DimensionSampler::fit(&scenes),
            proposer,
            model,
        })
    }
}

struct Inner {
    data_dir: PathBuf,
    cfg: RunConfig,
    scenes: SceneSet,
    cases: BTreeMap<String, EvalCase>,
    engine: Option<SynthEngine>,
    annotation_lock: Mutex<()>,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    /// Load scenes and cases from `data_dir` (either may be absent).
    pub fn load(data_dir: &Path, cfg: RunConfig, engine: Option<SynthEngine>) -> Result<AppState, ServerError> {
        let scenes = if data_dir.join("scenes").is_dir() {
            store::load_scenes(data_dir, &cfg.scene)?
        } else {
            SceneSet::new()
        };
        let cases = if data_dir.join("cases").is_dir() {
            store::load_cases(data_dir, &cfg.scene)?.into_iter().map(|c| (c.id.clone(), c)).collect()
        } else {
            BTreeMap::new()
        };
        fs::create_dir_all(data_dir.join("annotations"))?;
        Ok(AppState(Arc::new(Inner {
            data_dir: data_dir.to_path_buf(),
            cfg,
            scenes,
            cases,
            engine,
            annotation_lock: Mutex::new(()),
        })))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/scenes", get(list_scenes))
        .route("/scenes/{id}", get(get_scene))
        .route("/execute", post(execute))
        .route("/sample", post(sample))
        .route("/step", post(step))
        .route("/cases", get(list_cases))
        .route("/cases/{id}", get(get_case))
        .route("/annotations", post(post_annotation).get(list_annotations))
        .with_state(state)
}

pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)?
}

async fn health(State(s): State<AppState>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "scenes": s.0.scenes.len(),
        "cases": s.0.cases.len(),
        "synthesis": s.0.engine.is_some(),
    }))
}

async fn list_scenes(State(s): State<AppState>) -> Json<Value> {
    let list: Vec<Value> = s
        .0
        .scenes
        .iter()
        .map(|(id, sc)| json!({ "id": id, "scene_type": sc.scene_type, "objects": sc.objects.len() }))
        .collect();
    Json(json!({ "scenes": list }))
}

fn scene_json(id: Option<&str>, scene: &Scene) -> Value {
    json!({
        "id": id,
        "scene": scene.document(),
        "walls": scene.walls,
        "grid": scene.grid,
    })
}

async fn get_scene(State(s): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult {
    let scene = s.0.scenes.get(&id).ok_or_else(|| ApiError::not_found(format!("unknown scene {id}")))?;
    Ok(Json(scene_json(Some(&id), scene)))
}

/// A scene given inline or by id.
struct SceneRef {
    scene_id: Option<String>,
    scene: Option<SceneDocument>,
}

impl SceneRef {
    fn resolve(&self, s: &Inner) -> Result<Scene, ApiError> {
        match (&self.scene_id, &self.scene) {
            (Some(id), None) => s.scenes.get(id).cloned().ok_or_else(|| ApiError::not_found(format!("unknown scene {id}"))),
            (None, Some(doc)) => Scene::from_document(doc.clone(), &s.cfg.scene).map_err(ApiError::bad_request),
            _ => Err(ApiError::bad_request("give exactly one of scene_id and scene")),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExecuteRequest {
    scene_id: Option<String>,
    scene: Option<SceneDocument>,
    program: String,
    query: QuerySpec,
}

fn mask_json(m: &PlacementMask) -> Value {
    json!({
        "mask": m.to_file(),
        "count": m.count(),
        "slice_counts": m.slice_counts(),
    })
}

fn run_program(s: &Inner, scene: SceneRef, program: &str, query: QuerySpec) -> Result<(ExecContext, PlacementMask), ApiError> {
    let scene = scene.resolve(s)?;
    let program = PlacementProgram::parse(program).map_err(ApiError::bad_request)?;
    if !(query.size[0] > 0.0 && query.size[1] > 0.0) {
        return Err(ApiError::bad_request("query size must be positive"));
    }
    let ctx = ExecContext::new(scene, query, s.cfg.exec.clone());
    let mask = ctx.execute(&program).map_err(ApiError::bad_request)?;
    Ok((ctx, mask))
}

async fn execute(State(s): State<AppState>, body: Bytes) -> ApiResult {
    let req: ExecuteRequest = parse(&body)?;
    blocking(move || {
        let scene = SceneRef { scene_id: req.scene_id, scene: req.scene };
        let (_, mask) = run_program(&s.0, scene, &req.program, req.query)?;
        Ok(Json(mask_json(&mask)))
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRequest {
    mask: Option<MaskFile>,
    scene_id: Option<String>,
    scene: Option<SceneDocument>,
    program: Option<String>,
    query: Option<QuerySpec>,
    #[serde(default = "one")]
    k: usize,
    #[serde(default)]
    seed: u64,
}

fn one() -> usize {
    1
}

async fn sample(State(s): State<AppState>, body: Bytes) -> ApiResult {
    let req: SampleRequest = parse(&body)?;
    if req.k == 0 || req.k > 10_000 {
        return Err(ApiError::bad_request("k must lie in 1..=10000"));
    }
    blocking(move || {
        let mask = match (req.mask, req.program, req.query) {
            (Some(m), None, None) => PlacementMask::from_file(&m).map_err(ApiError::bad_request)?,
            (None, Some(p), Some(q)) => run_program(&s.0, SceneRef { scene_id: req.scene_id, scene: req.scene }, &p, q)?.1,
            _ => return Err(ApiError::bad_request("give either mask, or program and query")),
        };
        let draws = sample_placements(&mask, req.k, req.seed).map_err(ApiError::bad_request)?;
        let list: Vec<Value> = draws
            .iter()
            .map(|p| {
                json!({
                    "cell": [p.cell.0, p.cell.1],
                    "orientation": p.orientation.to_string(),
                    "position": mask.grid.cell_center(p.cell),
                })
            })
            .collect();
        Ok(Json(json!({ "placements": list })))
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StepRequest {
    scene_id: Option<String>,
    scene: Option<SceneDocument>,
    #[serde(default)]
    seed: u64,
}

async fn step(State(s): State<AppState>, body: Bytes) -> ApiResult {
    let req: StepRequest = parse(&body)?;
    if s.0.engine.is_none() {
        return Err(ApiError {
            status: StatusCode::SERVICE_UNAVAILABLE,
            message: "synthesis is not configured on this server".into(),
        });
    }
    blocking(move || {
        let inner = &s.0;
        let engine = inner.engine.as_ref().expect("checked above");
        let scene = SceneRef { scene_id: req.scene_id, scene: req.scene }.resolve(inner)?;
        let synth = Synthesizer {
            categories: engine.categories.clone(),
            dimensions: engine.dimensions.clone(),
            proposer: &engine.proposer,
            scorer: &engine.model,
            exec: inner.cfg.exec.clone(),
            cfg: inner.cfg.synthesis.clone(),
        };
        let (next, outcome) = synth.step(&scene, &mut rng_for(req.seed, &[])).map_err(ApiError::internal)?;
        let placed = match outcome {
            StepOutcome::Placed(p) => json!({ "object": p.object, "program": p.program, "score": p.score }),
            StepOutcome::Stop => Value::Null,
        };
        Ok(Json(json!({ "scene": next.document(), "placed": placed, "stop": placed.is_null() })))
    })
    .await
}

async fn list_cases(State(s): State<AppState>) -> Json<Value> {
    let list: Vec<Value> = s
        .0
        .cases
        .values()
        .map(|c| json!({ "id": c.id, "provenance": c.provenance, "query": c.query }))
        .collect();
    Json(json!({ "cases": list }))
}

async fn get_case(State(s): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let case = s.0.cases.get(&id).ok_or_else(|| ApiError::not_found(format!("unknown case {id}")))?;
    Ok(([(axum::http::header::CONTENT_TYPE, "application/json")], case.to_json()).into_response())
}

/// A stored annotation together with its rasterized mask.
#[derive(Serialize, Deserialize)]
struct StoredAnnotation {
    #[serde(flatten)]
    record: AnnotationRecord,
    mask: MaskFile,
}

fn annotation_dir(s: &Inner, case: &str) -> PathBuf {
    s.data_dir.join("annotations").join(case)
}

fn read_annotations(dir: &Path) -> Result<Vec<StoredAnnotation>, ApiError> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(ApiError::internal)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && !p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.')))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(ApiError::internal)?;
            serde_json::from_str(&text).map_err(ApiError::internal)
        })
        .collect()
}

async fn post_annotation(State(s): State<AppState>, body: Bytes) -> Result<(StatusCode, Json<Value>), ApiError> {
    let mut record: AnnotationRecord = parse(&body)?;
    let case = s
        .0
        .cases
        .get(&record.case_id)
        .ok_or_else(|| ApiError::not_found(format!("unknown case {}", record.case_id)))?;
    record.validate(&case.scene).map_err(ApiError::bad_request)?;
    let mask = record.to_mask(&case.scene.grid);
    let _guard = s.0.annotation_lock.lock().await;
    let dir = annotation_dir(&s.0, &record.case_id);
    let n = read_annotations(&dir)?.len();
    record.id = format!("{}_{n:04}", record.case_id);
    let stored = StoredAnnotation { record, mask: mask.to_file() };
    let text = serde_json::to_string(&stored).map_err(ApiError::internal)?;
    write_atomic(&dir.join(format!("{}.json", stored.record.id)), text.as_bytes()).map_err(ApiError::internal)?;
    let body = serde_json::to_value(&stored).map_err(ApiError::internal)?;
    Ok((StatusCode::CREATED, Json(body)))
}

#[derive(Deserialize)]
struct AnnotationQuery {
    case: Option<String>,
}

async fn list_annotations(State(s): State<AppState>, Query(q): Query<AnnotationQuery>) -> ApiResult {
    let cases: Vec<String> = match q.case {
        Some(c) if s.0.cases.contains_key(&c) => vec![c],
        Some(c) => return Err(ApiError::not_found(format!("unknown case {c}"))),
        None => s.0.cases.keys().cloned().collect(),
    };
    let mut out = Vec::new();
    for c in cases {
        out.extend(read_annotations(&annotation_dir(&s.0, &c))?);
    }
    Ok(Json(json!({ "annotations": out })))
}
