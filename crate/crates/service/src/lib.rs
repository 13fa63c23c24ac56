//! Read-only HTTP API over a shiftscope store directory.
//!
//! The analytic state is loaded once and never changes while the process
//! runs; the only write path appends analyst findings to `findings.jsonl`.

pub mod error;
pub mod payload;

use std::net::SocketAddr;
use std::path::{Path as FsPath, PathBuf};
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, PathRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::Deserialize;
use shiftscope_core::clustering::{cluster_contrast_set, rank_clusters, DEFAULT_CONTRAST_CAP, DEFAULT_TOP_K};
use shiftscope_core::histogram::{build_side_by_side, SideBySideHistogram, Subject, DEFAULT_BINS};
use shiftscope_core::neighborhood::{adaptive_neighborhood, DEFAULT_MIN_COUNT, DEFAULT_TARGET_TEST_COUNT};
use shiftscope_core::scoring::ScoreTable;
use shiftscope_core::store::{ArtifactMeta, LoadedStore, StoreDir};
use shiftscope_core::{AnalysisStore, Split};
use tokio::io::AsyncWriteExt;
use tokio::sync::Mutex;

pub use error::{ApiError, ServiceError};
use payload::*;

pub const DEFAULT_PAGE_LIMIT: usize = 100;
pub const MAX_PAGE_LIMIT: usize = 10_000;

type ApiResult<T> = Result<T, ApiError>;

struct Inner {
    store: AnalysisStore,
    meta: ArtifactMeta,
    model: Option<ModelInfo>,
    image_root: PathBuf,
    findings_path: PathBuf,
    default_space: String,
    findings_lock: Mutex<()>,
}

/// Shared, immutable service state.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    /// Builds the state from a loaded store whose directory is `root`.
    pub fn new(loaded: LoadedStore, root: &FsPath) -> Self {
        let LoadedStore {
            store,
            model,
            meta,
            image_root,
        } = loaded;
        let default_space = if store.space("dre").is_ok() {
            "dre".to_string()
        } else if let Some(s) = &store.scores {
            s.space_name.clone()
        } else {
            store.spaces().next().map(|s| s.name().to_string()).unwrap_or_default()
        };
        let model = model.map(|m| ModelInfo {
            space: m.space,
            input_dim: m.model.input_dim,
            hidden_dim: m.model.hidden_dim,
        });
        Self {
            inner: Arc::new(Inner {
                store,
                meta,
                model,
                image_root,
                findings_path: StoreDir::new(root).findings_path(),
                default_space,
                findings_lock: Mutex::new(()),
            }),
        }
    }

    /// Opens the store directory at `root`.
    pub fn open(root: impl AsRef<FsPath>) -> Result<Self, ServiceError> {
        let root = root.as_ref();
        Ok(Self::new(StoreDir::new(root).open()?, root))
    }

    pub fn store(&self) -> &AnalysisStore {
        &self.inner.store
    }

    fn scores(&self) -> ApiResult<&ScoreTable> {
        self.inner
            .store
            .scores
            .as_ref()
            .ok_or_else(|| ApiError::missing_artifact("scores.csv (run score first)"))
    }

    fn index(&self, id: &str) -> ApiResult<usize> {
        Ok(self.inner.store.index_of(id)?)
    }

    fn id(&self, index: usize) -> String {
        self.inner.store.instance(index).id.clone()
    }

    fn suspicion(&self, index: usize) -> Option<f64> {
        self.inner.store.scores.as_ref().and_then(|s| s.get(index)).map(|r| r.suspicion)
    }

    fn space_or_default(&self, space: Option<String>) -> ApiResult<String> {
        let name = space.unwrap_or_else(|| self.inner.default_space.clone());
        self.inner.store.space(&name)?;
        Ok(name)
    }

    fn histogram_payload(&self, h: SideBySideHistogram, space: String) -> HistogramPayload {
        let ids = |v: &[usize]| v.iter().map(|&i| self.id(i)).collect::<Vec<_>>();
        HistogramPayload {
            subject: match h.subject {
                Subject::Instance(i) => SubjectPayload::Instance(self.id(i)),
                Subject::Cluster(c) => SubjectPayload::Cluster(c),
            },
            space,
            n_bins: h.n_bins,
            bins: h
                .bins
                .iter()
                .map(|b| BinPayload {
                    lo: b.lo,
                    hi: b.hi,
                    train: ids(&b.train),
                    test: ids(&b.test),
                })
                .collect(),
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/dataset", get(dataset))
        .route("/api/instances", get(instances))
        .route("/api/instances/{id}", get(instance))
        .route("/api/neighbors/{id}", get(neighbors))
        .route("/api/histogram/focus/{id}", get(focus_histogram))
        .route("/api/clusters", get(clusters))
        .route("/api/clusters/{cid}/histogram", get(cluster_histogram))
        .route("/api/projection", get(projection))
        .route("/api/findings", axum::routing::post(add_finding))
        .route("/images/{id}", get(image))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .with_state(state)
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(state: AppState, addr: SocketAddr) -> Result<(), ServiceError> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServiceError::PortUnavailable { addr, source })?;
    let local = listener.local_addr().map_err(ServiceError::Server)?;
    tracing::info!("listening on http://{local}");
    axum::serve(listener, router(state)).await.map_err(ServiceError::Server)
}

fn query<T>(q: Result<Query<T>, QueryRejection>) -> ApiResult<T> {
    q.map(|Query(v)| v).map_err(|e| ApiError::bad_request(e.body_text()))
}

async fn dataset(State(st): State<AppState>) -> Json<DatasetInfo> {
    let store = &st.inner.store;
    let scores = store.scores.as_ref().map(|s| ScoreInfo {
        method: s.method.as_str().to_string(),
        space: s.space_name.clone(),
    });
    let attributes = store.instances()[0]
        .attributes
        .as_ref()
        .map(|a| a.keys().cloned().collect())
        .unwrap_or_default();
    Json(DatasetInfo {
        counts: SplitCounts {
            train: store.train_indices().len(),
            test: store.test_indices().len(),
        },
        spaces: store
            .spaces()
            .map(|s| SpaceInfo {
                name: s.name().to_string(),
                dim: s.dim(),
            })
            .collect(),
        methods: scores.iter().map(|s| s.method.clone()).collect(),
        scores,
        default_space: st.inner.default_space.clone(),
        model: st.inner.model.clone(),
        clusters: st.inner.meta.clusters.clone(),
        projection: st.inner.meta.projection.clone(),
        attributes,
    })
}

#[derive(Debug, Deserialize)]
struct PageQuery {
    split: Option<Split>,
    sort: Option<String>,
    offset: Option<usize>,
    limit: Option<usize>,
}

async fn instances(
    State(st): State<AppState>,
    q: Result<Query<PageQuery>, QueryRejection>,
) -> ApiResult<Json<InstancePage>> {
    let q = query(q)?;
    let store = &st.inner.store;
    let mut indices: Vec<usize> = match q.split {
        Some(s) => store.indices_of(s).to_vec(),
        None => (0..store.len()).collect(),
    };
    let sort = q.sort.unwrap_or_else(|| "index".to_string());
    match sort.as_str() {
        "index" => {}
        "suspicion" => {
            let scores = st.scores()?;
            let key = |i: usize| scores.get(i).map_or(f64::NEG_INFINITY, |r| r.suspicion);
            indices.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
        }
        other => return Err(ApiError::bad_request(format!("unknown sort {other:?}; use index or suspicion"))),
    }
    let limit = q.limit.unwrap_or(DEFAULT_PAGE_LIMIT);
    if limit > MAX_PAGE_LIMIT {
        return Err(ApiError::bad_request(format!("limit must be at most {MAX_PAGE_LIMIT}")));
    }
    let offset = q.offset.unwrap_or(0);
    let items = indices
        .iter()
        .skip(offset)
        .take(limit)
        .map(|&i| InstanceItem {
            id: st.id(i),
            split: store.split_of(i),
            suspicion: st.suspicion(i),
        })
        .collect();
    Ok(Json(InstancePage {
        split: q.split,
        sort,
        total: indices.len(),
        offset,
        limit,
        items,
    }))
}

async fn instance(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<InstanceDetail>> {
    let i = st.index(&id)?;
    let store = &st.inner.store;
    let rec = store.instance(i);
    let score = store.scores.as_ref().and_then(|s| {
        s.get(i).map(|r| InstanceScore {
            method: s.method.as_str().to_string(),
            space: s.space_name.clone(),
            raw: r.raw,
            ratio: r.ratio,
            suspicion: r.suspicion,
        })
    });
    Ok(Json(InstanceDetail {
        id: rec.id.clone(),
        split: rec.split,
        image: rec.image_path.clone(),
        attributes: rec.attributes.clone(),
        score,
        cluster: store.clusters.as_ref().and_then(|c| c.label_of(i)),
    }))
}

#[derive(Debug, Deserialize)]
struct NeighborQuery {
    space: Option<String>,
    target: Option<usize>,
    min: Option<usize>,
}

async fn neighbors(
    State(st): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<NeighborQuery>, QueryRejection>,
) -> ApiResult<Json<NeighborhoodPayload>> {
    let q = query(q)?;
    let focus = st.index(&id)?;
    let space = st.space_or_default(q.space)?;
    let target = q.target.unwrap_or(DEFAULT_TARGET_TEST_COUNT);
    let min = q.min.unwrap_or(DEFAULT_MIN_COUNT);
    let hood = adaptive_neighborhood(&st.inner.store, &space, focus, target, min)?;
    let items = |v: &[shiftscope_core::neighborhood::Neighbor]| -> Vec<NeighborItem> {
        v.iter()
            .map(|n| NeighborItem {
                id: st.id(n.index),
                distance: n.distance,
                suspicion: st.suspicion(n.index),
            })
            .collect()
    };
    Ok(Json(NeighborhoodPayload {
        focus: id,
        space,
        radius: hood.radius,
        target,
        min,
        train: items(&hood.train_members),
        test: items(&hood.test_members),
    }))
}

async fn focus_histogram(
    State(st): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<NeighborQuery>, QueryRejection>,
) -> ApiResult<Json<HistogramPayload>> {
    let q = query(q)?;
    let focus = st.index(&id)?;
    let space = st.space_or_default(q.space)?;
    let scores = st.scores()?;
    let hood = adaptive_neighborhood(
        &st.inner.store,
        &space,
        focus,
        q.target.unwrap_or(DEFAULT_TARGET_TEST_COUNT),
        q.min.unwrap_or(DEFAULT_MIN_COUNT),
    )?;
    let h = build_side_by_side(
        &hood.train_indices(),
        &hood.test_indices(),
        scores,
        Subject::Instance(focus),
        DEFAULT_BINS,
    )?;
    Ok(Json(st.histogram_payload(h, space)))
}

#[derive(Debug, Deserialize)]
struct ClusterQuery {
    space: Option<String>,
}

async fn clusters(
    State(st): State<AppState>,
    q: Result<Query<ClusterQuery>, QueryRejection>,
) -> ApiResult<Json<ClusterList>> {
    let q = query(q)?;
    let assignment = st
        .inner
        .store
        .clusters
        .as_ref()
        .ok_or_else(|| ApiError::missing_artifact("clusters.csv (run cluster first)"))?;
    if let Some(space) = &q.space {
        st.inner.store.space(space)?;
        if *space != assignment.space_name {
            return Err(ApiError::missing_artifact(&format!(
                "clusters for space {space:?} (stored clusters use {:?})",
                assignment.space_name
            )));
        }
    }
    let scores = st.scores()?;
    let top_k = st.inner.meta.clusters.as_ref().map_or(DEFAULT_TOP_K, |c| c.top_k);
    let summaries = rank_clusters(assignment, scores, top_k)?;
    Ok(Json(ClusterList {
        space: assignment.space_name.clone(),
        n_clusters: assignment.n_clusters,
        top_k,
        clusters: summaries
            .into_iter()
            .map(|s| ClusterSummaryPayload {
                cluster_id: s.cluster_id,
                size: s.size,
                mean_suspicion: s.mean_suspicion,
                representatives: s.representatives.iter().map(|&i| st.id(i)).collect(),
            })
            .collect(),
    }))
}

async fn cluster_histogram(
    State(st): State<AppState>,
    cid: Result<Path<usize>, PathRejection>,
) -> ApiResult<Json<HistogramPayload>> {
    let Path(cid) = cid.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let assignment = st
        .inner
        .store
        .clusters
        .as_ref()
        .ok_or_else(|| ApiError::missing_artifact("clusters.csv (run cluster first)"))?;
    let scores = st.scores()?;
    let contrast = cluster_contrast_set(&st.inner.store, assignment, cid, scores, DEFAULT_CONTRAST_CAP)?;
    let h = build_side_by_side(&contrast.train, &contrast.test, scores, Subject::Cluster(cid), DEFAULT_BINS)?;
    Ok(Json(st.histogram_payload(h, assignment.space_name.clone())))
}

async fn projection(State(st): State<AppState>) -> ApiResult<Json<Vec<PointPayload>>> {
    let projection = st
        .inner
        .store
        .projection
        .as_ref()
        .ok_or_else(|| ApiError::missing_artifact("projection.csv (run project first)"))?;
    Ok(Json(
        projection
            .points
            .iter()
            .map(|p| PointPayload {
                id: st.id(p.index),
                x: p.x,
                y: p.y,
            })
            .collect(),
    ))
}

async fn add_finding(
    State(st): State<AppState>,
    body: Result<Json<FindingRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<Finding>)> {
    let Json(req) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let description = req.description.trim();
    if description.is_empty() {
        return Err(ApiError::bad_request("description must not be empty"));
    }
    let instance_ids = req.instance_ids.unwrap_or_default();
    for id in &instance_ids {
        st.index(id)?;
    }
    let finding = Finding {
        timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        description: description.to_string(),
        instance_ids,
    };
    let mut line = serde_json::to_string(&finding).expect("finding serializes");
    line.push('\n');

    let path = &st.inner.findings_path;
    let io_err = |e: std::io::Error| ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        kind: "internal",
        message: format!("cannot append to {}: {e}", path.display()),
    };
    let _guard = st.inner.findings_lock.lock().await;
    let mut file = tokio::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .await
        .map_err(io_err)?;
    file.write_all(line.as_bytes()).await.map_err(io_err)?;
    file.flush().await.map_err(io_err)?;
    Ok((StatusCode::CREATED, Json(finding)))
}

fn content_type(path: &FsPath) -> &'static str {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "png" => "image/png",
        "jpg" | "jpeg" => "image/jpeg",
        "gif" => "image/gif",
        "webp" => "image/webp",
        "bmp" => "image/bmp",
        "svg" => "image/svg+xml",
        "tif" | "tiff" => "image/tiff",
        _ => "application/octet-stream",
    }
}

async fn image(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let i = st.index(&id)?;
    let rel = &st.inner.store.instance(i).image_path;
    let path = st.inner.image_root.join(rel);
    match tokio::fs::read(&path).await {
        Ok(bytes) => Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(ApiError::not_found(format!("image file for {id:?} not found")))
        }
        Err(e) => Err(ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            kind: "internal",
            message: format!("cannot read image for {id:?}: {e}"),
        }),
    }
}
