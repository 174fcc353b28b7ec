//! HTTP facade over sampling and retrieval.
//!
//! Every JSON body carries `"v": 1`. `/sample` is deterministic for a given
//! `seed`; wall-clock timing goes in the `x-timing-ms` header so repeated
//! seeded requests return identical bodies (set `include_timing` to also get
//! it in the body).

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::CorsLayer;

use crate::diffusion::{SamplerConfig, SlerpSteer, SteerSignal};
use crate::error::Error;
use crate::linalg::jacobi_eigen;
use crate::metrics::{entropy_at_k, miscs, moments};
use crate::model::TrainedModel;
use crate::retrieval::{retrieve_fused, Hit, Index};
use crate::tensor::{dot, normalized, Matrix};
use crate::world::WorldData;

pub const DEFAULT_PORT: u16 = 8787;
pub const API_VERSION: u32 = 1;
const MAX_SAMPLES: usize = 256;
const MAX_K: usize = 1000;
const DIVERSITY_KS: [usize; 3] = [10, 20, 50];

/// Fixed 2-D view of the target space: catalog mean and top-2 principal
/// directions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Projection {
    pub mean: Vec<f32>,
    pub basis: [Vec<f32>; 2],
    pub explained_variance: [f64; 2],
}

impl Projection {
    pub fn from_catalog(data: &WorldData) -> crate::Result<Self> {
        let m = moments(&data.catalog.embeddings())?;
        let eig = jacobi_eigen(&m.covariance)?;
        let mut order: Vec<usize> = (0..eig.values.len()).collect();
        order.sort_by(|&a, &b| eig.values[b].total_cmp(&eig.values[a]).then(a.cmp(&b)));
        let n = m.mean.len();
        let column = |j: usize| -> Vec<f32> {
            let v: Vec<f64> = (0..n).map(|i| eig.vectors.get(i, j)).collect();
            // sign convention: largest-magnitude entry positive
            let big = v.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
            let s = if big < 0.0 { -1.0 } else { 1.0 };
            v.iter().map(|x| (s * x) as f32).collect()
        };
        Ok(Self {
            mean: m.mean.iter().map(|&x| x as f32).collect(),
            basis: [column(order[0]), column(order[1])],
            explained_variance: [eig.values[order[0]], eig.values[order[1]]],
        })
    }

    pub fn project(&self, v: &[f32]) -> [f64; 2] {
        let c: Vec<f32> = v.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        [dot(&c, &self.basis[0]), dot(&c, &self.basis[1])]
    }
}

/// Immutable state shared by all requests.
pub struct ServiceState {
    pub model: TrainedModel,
    pub data: WorldData,
    pub index: Index,
    pub projection: Projection,
    /// Defaults for sampler fields a request does not set.
    pub sampler: SamplerConfig,
}

impl ServiceState {
    pub fn new(model: TrainedModel, data: WorldData, sampler: SamplerConfig) -> crate::Result<Self> {
        if model.dim() != data.catalog.dim() {
            return Err(Error::dims("model output vs catalog", data.catalog.dim(), model.dim()));
        }
        Ok(Self {
            index: Index::build(&data.catalog)?,
            projection: Projection::from_catalog(&data)?,
            model,
            data,
            sampler,
        })
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn bad_request(msg: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            body: json!({ "v": API_VERSION, "error": msg.into() }),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Config(_) | Error::Json(_) | Error::Empty(_) => StatusCode::BAD_REQUEST,
            Error::UnknownId(_) => StatusCode::NOT_FOUND,
            Error::DimensionMismatch { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let mut body = json!({ "v": API_VERSION, "error": e.to_string() });
        if let Error::SamplerDiverged { step } = e {
            body["step"] = json!(step);
        }
        Self { status, body }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteerRequest {
    pub concept_id: Option<String>,
    pub vector: Option<Vec<f32>>,
    pub strength: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlerpRequest {
    pub concept_id: String,
    pub ratio: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRequest {
    pub query_id: Option<String>,
    pub query: Option<Vec<f32>>,
    /// Condition on the zero vector regardless of the query.
    #[serde(default)]
    pub unconditional: bool,
    pub omega: Option<f64>,
    #[serde(default)]
    pub steers: Vec<SteerRequest>,
    pub slerp: Option<SlerpRequest>,
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    #[serde(default)]
    pub include_vectors: bool,
    #[serde(default)]
    pub include_timing: bool,
}

fn default_n_samples() -> usize {
    50
}

fn default_k() -> usize {
    50
}

#[derive(Debug, Clone, Serialize)]
pub struct SamplePoint {
    pub xy: [f64; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vector: Option<Vec<f32>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Diversity {
    pub miscs: f64,
    pub entropy_at: std::collections::BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleResponse {
    pub v: u32,
    pub seed: u64,
    pub samples: Vec<SamplePoint>,
    pub retrieved: Vec<Hit>,
    pub diversity: Diversity,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing_ms: Option<f64>,
}

impl ServiceState {
    fn concept_vector(&self, id: &str) -> crate::Result<Vec<f32>> {
        self.data
            .concepts
            .iter()
            .find(|c| c.id() == id)
            .map(|c| c.text_vector_target.clone())
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    fn resolve_query(&self, req: &SampleRequest) -> crate::Result<Vec<f32>> {
        let qd = self.model.cond_dim();
        let q = match (&req.query_id, &req.query) {
            (Some(_), Some(_)) => return Err(Error::Config("give query_id or query, not both".into())),
            (Some(id), None) => self
                .data
                .eval
                .pairs
                .iter()
                .chain(&self.data.train.pairs)
                .find(|p| &p.id == id)
                .map(|p| p.query.clone())
                .ok_or_else(|| Error::UnknownId(id.clone()))?,
            (None, Some(v)) => v.clone(),
            (None, None) if req.unconditional => vec![0.0; qd],
            (None, None) => return Err(Error::Config("query_id or query is required".into())),
        };
        if q.len() != qd {
            return Err(Error::dims("query vector", qd, q.len()));
        }
        Ok(if req.unconditional { vec![0.0; qd] } else { q })
    }

    /// Runs one sampling request to completion. Pure given `seed`.
    pub fn sample(&self, req: &SampleRequest, seed: u64) -> crate::Result<SampleResponse> {
        if !(1..=MAX_SAMPLES).contains(&req.n_samples) {
            return Err(Error::Config(format!("n_samples must lie in [1, {MAX_SAMPLES}]")));
        }
        if !(1..=MAX_K).contains(&req.k) {
            return Err(Error::Config(format!("k must lie in [1, {MAX_K}]")));
        }
        let query = self.resolve_query(req)?;
        let mut sampler = SamplerConfig {
            seed,
            steers: Vec::new(),
            slerp: None,
            ..self.sampler.clone()
        };
        if let Some(o) = req.omega {
            sampler.omega = o;
        }
        if let Some(s) = req.steps {
            sampler.steps = s;
        }
        for s in &req.steers {
            let vector = match (&s.concept_id, &s.vector) {
                (Some(id), None) => self.concept_vector(id)?,
                (None, Some(v)) => v.clone(),
                _ => return Err(Error::Config("each steer needs exactly one of concept_id or vector".into())),
            };
            sampler.steers.push(SteerSignal {
                vector,
                strength: s.strength,
            });
        }
        if let Some(s) = &req.slerp {
            sampler.slerp = Some(SlerpSteer {
                vector: self.concept_vector(&s.concept_id)?,
                ratio: s.ratio,
            });
        }
        sampler.validate()?;

        let q = Matrix::from_vec(1, query.len(), query);
        let seeds = self.model.predictor(&sampler).seeds(&q, req.n_samples)?.remove(0);
        let units = seeds
            .iter()
            .map(|s| normalized(s).ok_or(Error::NonFinite("sample has zero norm".into())))
            .collect::<crate::Result<Vec<_>>>()?;
        let depth = req.k.max(DIVERSITY_KS[2]);
        let ranked = retrieve_fused(&self.index, &units, depth)?;
        let mut entropy_at = std::collections::BTreeMap::new();
        for k in DIVERSITY_KS {
            let g: Vec<usize> = ranked.hits.iter().take(k).map(|h| h.genre).collect();
            entropy_at.insert(k.to_string(), entropy_at_k(&g, self.data.num_genres())?);
        }
        let diversity = Diversity {
            miscs: if seeds.len() >= 2 { miscs(&seeds)? } else { 1.0 },
            entropy_at,
        };
        let samples = seeds
            .into_iter()
            .map(|s| SamplePoint {
                xy: self.projection.project(&s),
                vector: req.include_vectors.then_some(s),
            })
            .collect();
        let mut retrieved = ranked.hits;
        retrieved.truncate(req.k);
        Ok(SampleResponse {
            v: API_VERSION,
            seed,
            samples,
            retrieved,
            diversity,
            timing_ms: None,
        })
    }
}

async fn health(State(s): State<Arc<ServiceState>>) -> Json<Value> {
    Json(json!({
        "v": API_VERSION,
        "status": "ok",
        "model_kind": s.model.kind().as_str(),
        "catalog_size": s.data.catalog.len(),
    }))
}

#[derive(Debug, Deserialize)]
struct Page {
    offset: Option<usize>,
    limit: Option<usize>,
}

async fn catalog(State(s): State<Arc<ServiceState>>, page: Option<Query<Page>>) -> ApiResult<Json<Value>> {
    let Query(page) = page.ok_or_else(|| ApiError::bad_request("bad query string"))?;
    let offset = page.offset.unwrap_or(0);
    let limit = page.limit.unwrap_or(100);
    if limit == 0 || limit > MAX_K {
        return Err(ApiError::bad_request(format!("limit must lie in [1, {MAX_K}]")));
    }
    let items: Vec<Value> = s
        .data
        .catalog
        .items
        .iter()
        .skip(offset)
        .take(limit)
        .map(|it| json!({ "id": it.id, "genre": it.genre, "xy": s.projection.project(&it.embedding) }))
        .collect();
    Ok(Json(json!({
        "v": API_VERSION,
        "total": s.data.catalog.len(),
        "offset": offset,
        "limit": limit,
        "items": items,
    })))
}

async fn concepts(State(s): State<Arc<ServiceState>>) -> Json<Value> {
    let list: Vec<Value> = s
        .data
        .concepts
        .iter()
        .map(|c| json!({ "id": c.id(), "label": format!("genre {}", c.genre), "genre": c.genre }))
        .collect();
    Json(json!({ "v": API_VERSION, "concepts": list }))
}

#[derive(Debug, Deserialize)]
struct Limit {
    limit: Option<usize>,
}

async fn queries(State(s): State<Arc<ServiceState>>, limit: Option<Query<Limit>>) -> ApiResult<Json<Value>> {
    let Query(limit) = limit.ok_or_else(|| ApiError::bad_request("bad query string"))?;
    let n = limit.limit.unwrap_or(20);
    if n == 0 || n > MAX_K {
        return Err(ApiError::bad_request(format!("limit must lie in [1, {MAX_K}]")));
    }
    let list: Vec<Value> = s
        .data
        .eval
        .pairs
        .iter()
        .take(n)
        .map(|p| json!({ "id": p.id, "genre_hint": p.genre }))
        .collect();
    Ok(Json(json!({ "v": API_VERSION, "queries": list })))
}

async fn projection(State(s): State<Arc<ServiceState>>) -> Json<Value> {
    let mut v = serde_json::to_value(&s.projection).unwrap_or(Value::Null);
    v["v"] = json!(API_VERSION);
    Json(v)
}

async fn sample(State(s): State<Arc<ServiceState>>, body: Bytes) -> ApiResult<Response> {
    let req: SampleRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("malformed request: {e}")))?;
    let seed = req.seed.unwrap_or_else(rand::random);
    let started = Instant::now();
    let include_timing = req.include_timing;
    let state = s.clone();
    let mut resp = tokio::task::spawn_blocking(move || state.sample(&req, seed))
        .await
        .map_err(|e| ApiError::from(Error::NonFinite(format!("sampling task failed: {e}"))))??;
    let ms = started.elapsed().as_secs_f64() * 1e3;
    if include_timing {
        resp.timing_ms = Some(ms);
    }
    let mut r = Json(resp).into_response();
    if let Ok(h) = HeaderValue::from_str(&format!("{ms:.3}")) {
        r.headers_mut().insert("x-timing-ms", h);
    }
    Ok(r)
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/catalog", get(catalog))
        .route("/concepts", get(concepts))
        .route("/queries", get(queries))
        .route("/projection", get(projection))
        .route("/sample", post(sample))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(state: Arc<ServiceState>, addr: SocketAddr) -> crate::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await?;
    Ok(())
}
