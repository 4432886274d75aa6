//! HTTP service. Payload schemas are listed in `docs/api.md`.
//!
//! Every read response carries `version`, the published snapshot it was
//! computed from; overlay responses add `overlay` and `overlay_version`.
//! Background jobs (ingest, matrix builds) publish a new version when done
//! and never hold a lock that reads wait on.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use tscore::analysis::{normalize_view, resolution_for_zoom, MAX_RESOLUTION};
use tscore::edit::{score_all, Edit, ScenarioOverlay};
use tscore::geo::BBox;
use tscore::profile::{MobilityProfile, ScenarioDefinition, ScenarioScores, ScoreSurface, AGGREGATE};
use tscore::snapshot::MatrixExec;
use tscore::{ModeMask, Snapshot};

use crate::config;
use crate::dataset::{self, Dataset};
use crate::exec::RayonExec;
use crate::formats;
use crate::pipeline;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data: PathBuf,
    pub sim: Option<PathBuf>,
    pub threads: usize,
}

/// One immutable published state.
pub struct Published {
    pub version: u64,
    pub dataset: Dataset,
    pub snapshot: Arc<Snapshot>,
    pub scores: Arc<BTreeMap<String, ScenarioScores>>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct JobInfo {
    pub id: u64,
    pub kind: String,
    pub state: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub version: Option<u64>,
}

struct OverlayEntry {
    ov: ScenarioOverlay,
    base_version: u64,
}

pub struct AppState {
    cfg: ServiceConfig,
    region: String,
    exec: Arc<RayonExec>,
    published: RwLock<Option<Arc<Published>>>,
    versions: AtomicU64,
    jobs: Mutex<BTreeMap<u64, JobInfo>>,
    next_job: AtomicU64,
    overlays: Mutex<BTreeMap<String, Arc<tokio::sync::Mutex<OverlayEntry>>>>,
    next_overlay: AtomicU64,
    /// Scores for category filters and mode overrides, keyed by version.
    cache: Mutex<BTreeMap<(u64, String), Arc<ScenarioScores>>>,
    /// Serializes writers (config PUTs and job publication).
    writer: tokio::sync::Mutex<()>,
}

type Shared = Arc<AppState>;

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl ApiError {
    fn bad(m: impl Into<String>) -> ApiError {
        ApiError(StatusCode::BAD_REQUEST, m.into())
    }
    fn missing(m: impl Into<String>) -> ApiError {
        ApiError(StatusCode::NOT_FOUND, m.into())
    }
    fn conflict(m: impl Into<String>) -> ApiError {
        ApiError(StatusCode::CONFLICT, m.into())
    }
}

impl From<anyhow::Error> for ApiError {
    fn from(e: anyhow::Error) -> Self {
        ApiError(StatusCode::UNPROCESSABLE_ENTITY, format!("{e:#}"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

fn ok(v: Value) -> ApiResult {
    Ok(Json(v).into_response())
}

fn text(content_type: &'static str, body: String) -> ApiResult {
    Ok(([(header::CONTENT_TYPE, content_type)], body).into_response())
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

impl AppState {
    /// Loads the data directory. A directory without ingested tables starts
    /// empty; an ingested one needs its matrices.
    pub fn load(cfg: ServiceConfig) -> anyhow::Result<AppState> {
        let region = cfg
            .data
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| "default".into());
        let exec = Arc::new(RayonExec::new(cfg.threads));
        let state = AppState {
            region,
            exec,
            published: RwLock::new(None),
            versions: AtomicU64::new(0),
            jobs: Mutex::new(BTreeMap::new()),
            next_job: AtomicU64::new(1),
            overlays: Mutex::new(BTreeMap::new()),
            next_overlay: AtomicU64::new(1),
            cache: Mutex::new(BTreeMap::new()),
            writer: tokio::sync::Mutex::new(()),
            cfg,
        };
        if Dataset::is_ingested(&state.cfg.data) {
            let ds = Dataset::open(&state.cfg.data, state.cfg.sim.as_deref())?;
            for m in ds.masks() {
                if ds.stored_matrix(m)?.is_none() {
                    anyhow::bail!(
                        "{}: missing matrix file {}; run `tsim build-matrix --data {}` first",
                        state.cfg.data.display(),
                        dataset::matrix_file(m),
                        state.cfg.data.display()
                    );
                }
            }
            let snap = ds.snapshot(&ds.masks(), state.exec.as_ref())?;
            state.publish(ds, snap)?;
        }
        Ok(state)
    }

    fn publish(&self, ds: Dataset, snap: Snapshot) -> anyhow::Result<u64> {
        let scores = score_all(&snap, &ds.scenarios)?;
        let version = self.versions.fetch_add(1, Ordering::SeqCst) + 1;
        let p = Published { version, dataset: ds, snapshot: Arc::new(snap), scores: Arc::new(scores) };
        *self.published.write().unwrap() = Some(Arc::new(p));
        self.cache.lock().unwrap().retain(|(v, _), _| *v == version);
        Ok(version)
    }

    fn current(&self) -> Result<Arc<Published>, ApiError> {
        self.published
            .read()
            .unwrap()
            .clone()
            .ok_or_else(|| ApiError::conflict("no dataset published; ingest and build the matrix first"))
    }

    fn job(&self, kind: &str) -> u64 {
        let id = self.next_job.fetch_add(1, Ordering::SeqCst);
        let info = JobInfo { id, kind: kind.into(), state: "running", message: None, version: None };
        self.jobs.lock().unwrap().insert(id, info);
        id
    }

    fn finish(&self, id: u64, r: anyhow::Result<Option<u64>>) {
        let mut jobs = self.jobs.lock().unwrap();
        let j = jobs.get_mut(&id).expect("registered job");
        match r {
            Ok(v) => {
                j.state = "done";
                j.version = v;
            }
            Err(e) => {
                j.state = "failed";
                j.message = Some(format!("{e:#}"));
            }
        }
    }
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/regions", get(regions))
        .route("/regions/{id}/ingest", post(ingest))
        .route("/regions/{id}/matrix", post(build_matrix))
        .route("/jobs/{id}", get(job))
        .route("/layers/{kind}", get(layers))
        .route("/walkmap", get(walkmap))
        .route("/scenarios", get(get_scenarios).put(put_scenarios))
        .route("/profiles", get(get_profiles).put(put_profiles))
        .route("/surfaces/compute", post(compute))
        .route("/surface", get(surface))
        .route("/hex", get(hex))
        .route("/diff", get(diff))
        .route("/overlays", post(create_overlay))
        .route("/overlays/{id}", get(overlay_info).delete(delete_overlay))
        .route("/overlays/{id}/edits", post(post_edits))
        .route("/overlays/{id}/rescore", post(rescore))
        .route("/journeys/explain", get(explain))
        .route("/export/{format}", get(export))
        .with_state(state)
}

pub async fn serve(cfg: ServiceConfig, listener: tokio::net::TcpListener) -> anyhow::Result<()> {
    let state = tokio::task::spawn_blocking(move || AppState::load(cfg)).await??;
    axum::serve(listener, router(Arc::new(state))).await?;
    Ok(())
}

fn check_region(s: &AppState, id: &str) -> Result<(), ApiError> {
    if id != s.region {
        return Err(ApiError::missing(format!("unknown region `{id}`; this instance serves `{}`", s.region)));
    }
    Ok(())
}

async fn regions(State(s): State<Shared>) -> ApiResult {
    let p = s.published.read().unwrap().clone();
    if p.is_none() && !Dataset::is_ingested(&s.cfg.data) {
        return ok(json!([]));
    }
    let matrices: Vec<String> = p.as_ref().map(|p| p.snapshot.matrices.keys().map(|m| m.to_string()).collect()).unwrap_or_default();
    ok(json!([{
        "id": s.region,
        "ingested": true,
        "published": p.is_some(),
        "version": p.as_ref().map(|p| p.version),
        "matrices": matrices,
    }]))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct IngestBody {
    gtfs: PathBuf,
    osm: PathBuf,
    #[serde(default)]
    date: Option<chrono::NaiveDate>,
    #[serde(default)]
    categories: Option<PathBuf>,
    #[serde(default)]
    bbox: Option<String>,
    #[serde(default)]
    residences: Option<PathBuf>,
    #[serde(default)]
    population: Option<f64>,
}

fn spawn_job(s: &Shared, kind: &str, f: impl FnOnce(&AppState) -> anyhow::Result<Option<u64>> + Send + 'static) -> ApiResult {
    let id = s.job(kind);
    let st = s.clone();
    tokio::spawn(async move {
        let guard = st.writer.lock().await;
        let st2 = st.clone();
        let r = tokio::task::spawn_blocking(move || f(&st2)).await.unwrap_or_else(|e| Err(anyhow::anyhow!("{e}")));
        drop(guard);
        st.finish(id, r);
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "job": id, "kind": kind, "state": "running" }))).into_response())
}

async fn ingest(State(s): State<Shared>, UrlPath(id): UrlPath<String>, Json(b): Json<IngestBody>) -> ApiResult {
    check_region(&s, &id)?;
    spawn_job(&s, "ingest", move |st| {
        let dir = &st.cfg.data;
        pipeline::ingest_gtfs(dir, &b.gtfs, b.date)?;
        let bbox = b.bbox.as_deref().map(pipeline::parse_bbox).transpose()?;
        let o = pipeline::OsmIngest { categories: b.categories.as_deref(), bbox, residences: b.residences.as_deref(), population: b.population };
        pipeline::ingest_osm(dir, &b.osm, &o)?;
        Ok(None)
    })
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixBody {
    #[serde(default)]
    modes: Vec<String>,
}

async fn build_matrix(State(s): State<Shared>, UrlPath(id): UrlPath<String>, body: Option<Json<MatrixBody>>) -> ApiResult {
    check_region(&s, &id)?;
    let b = body.map(|Json(b)| b).unwrap_or_default();
    let mut extra = Vec::new();
    for m in &b.modes {
        extra.push(ModeMask::parse(m).map_err(ApiError::bad)?);
    }
    spawn_job(&s, "matrix", move |st| {
        let ds = Dataset::open(&st.cfg.data, st.cfg.sim.as_deref())?;
        let masks: BTreeSet<ModeMask> = ds.masks().into_iter().chain(extra).collect();
        let masks: Vec<ModeMask> = masks.into_iter().collect();
        let snap = pipeline::build_matrix(&ds, &masks, st.exec.as_ref())?;
        Ok(Some(st.publish(ds, snap)?))
    })
}

async fn job(State(s): State<Shared>, UrlPath(id): UrlPath<u64>) -> ApiResult {
    let j = s.jobs.lock().unwrap().get(&id).cloned().ok_or_else(|| ApiError::missing(format!("unknown job {id}")))?;
    ok(serde_json::to_value(j).unwrap())
}

#[derive(Debug, Default, Deserialize)]
struct ViewQuery {
    bbox: Option<String>,
    zoom: Option<u8>,
}

fn bbox_of(q: &Option<String>) -> Result<Option<BBox>, ApiError> {
    q.as_deref().map(pipeline::parse_bbox).transpose().map_err(|e| ApiError::bad(e.to_string()))
}

fn point(lat: f64, lon: f64, props: Value) -> Value {
    json!({"type": "Feature", "geometry": {"type": "Point", "coordinates": [lon, lat]}, "properties": props})
}

fn collection(version: u64, features: Vec<Value>, extra: Value) -> Value {
    let mut v = json!({"type": "FeatureCollection", "version": version, "features": features});
    if let (Value::Object(m), Value::Object(e)) = (&mut v, extra) {
        m.extend(e);
    }
    v
}

async fn layers(State(s): State<Shared>, UrlPath(kind): UrlPath<String>, Query(q): Query<ViewQuery>) -> ApiResult {
    let p = s.current()?;
    let bbox = bbox_of(&q.bbox)?;
    let inside = |ll: tscore::LatLon| bbox.is_none_or(|b| b.contains(ll));
    let snap = &p.snapshot;
    let net = &snap.network;
    let mut features = Vec::new();
    match kind.as_str() {
        "stops" => {
            for st in net.stops.iter().filter(|st| inside(st.position)) {
                let lines: Vec<&String> = st.served_lines.iter().collect();
                features.push(point(st.position.lat, st.position.lon, json!({"id": st.id, "name": st.name, "lines": lines})));
            }
        }
        "frequencies" => {
            let f = net.stop_frequency_index(net.reference_day);
            for st in net.stops.iter().filter(|st| inside(st.position)) {
                let h = f[&st.id];
                let total: u32 = h.iter().sum();
                features.push(point(st.position.lat, st.position.lon, json!({"id": st.id, "departures": total, "hourly": h})));
            }
        }
        "lines" => {
            for l in &net.lines {
                for (i, pat) in l.patterns.iter().enumerate() {
                    let coords: Vec<[f64; 2]> = pat.iter().map(|s| net.stop(*s).position).map(|p| [p.lon, p.lat]).collect();
                    if bbox.is_some() && !pat.iter().any(|s| inside(net.stop(*s).position)) {
                        continue;
                    }
                    let stops: Vec<&str> = pat.iter().map(|s| net.stop(*s).id.as_str()).collect();
                    features.push(json!({
                        "type": "Feature",
                        "geometry": {"type": "LineString", "coordinates": coords},
                        "properties": {"id": l.id, "name": l.name, "mode": l.mode.name(), "pattern": i, "stops": stops},
                    }));
                }
            }
        }
        "pois" => {
            for poi in snap.pois.values().filter(|x| inside(x.position)) {
                features.push(point(poi.position.lat, poi.position.lon, json!({"id": poi.id, "category": poi.category, "name": poi.name})));
            }
        }
        "residences" => {
            for r in snap.residences.values().filter(|x| inside(x.position)) {
                features.push(point(r.position.lat, r.position.lon, json!({"id": r.id, "weight": r.weight})));
            }
        }
        _ => return Err(ApiError::missing(format!("unknown layer `{kind}`"))),
    }
    ok(collection(p.version, features, json!({"layer": kind, "zoom": q.zoom})))
}

async fn walkmap(State(s): State<Shared>, Query(q): Query<ViewQuery>) -> ApiResult {
    let p = s.current()?;
    let bbox = bbox_of(&q.bbox)?;
    let near = p.snapshot.walk.nearest_stop_distance();
    let mut features = Vec::new();
    let mut dists = Vec::new();
    for r in p.snapshot.residences.values().filter(|r| bbox.is_none_or(|b| b.contains(r.position))) {
        let d = near.get(r.id.as_str()).map(|mm| *mm as f64 / 1000.0);
        dists.push(d);
        features.push(point(r.position.lat, r.position.lon, json!({"id": r.id, "distance_m": d})));
    }
    let scale = normalize_view(dists).ok().map(|v| json!({"min": v.min, "max": v.max}));
    ok(collection(p.version, features, json!({"scale": scale})))
}

async fn get_scenarios(State(s): State<Shared>) -> ApiResult {
    let p = s.current()?;
    ok(json!({"version": p.version, "scenarios": p.dataset.scenarios}))
}

async fn get_profiles(State(s): State<Shared>) -> ApiResult {
    let p = s.current()?;
    let lib: Vec<&MobilityProfile> = p.dataset.profiles.values().collect();
    ok(json!({"version": p.version, "profiles": lib}))
}

/// Applies `f` to a copy of the dataset, validates the result, then writes
/// the returned config file and republishes. Nothing is written on failure.
async fn republish(s: Shared, f: impl FnOnce(&mut Dataset) -> anyhow::Result<(&'static str, String)> + Send + 'static) -> ApiResult {
    let _guard = s.writer.lock().await;
    let p = s.current()?;
    let st = s.clone();
    let version = blocking(move || {
        let mut ds = p.dataset.clone();
        let (file, text) = f(&mut ds).map_err(|e| ApiError::bad(format!("{e:#}")))?;
        for sc in &ds.scenarios {
            sc.validate(&p.snapshot.categories, &p.snapshot.pois).map_err(|e| ApiError::bad(format!("scenario `{}`: {e}", sc.scenario_id)))?;
            if !p.snapshot.matrices.contains_key(&sc.mode_mask) {
                return Err(ApiError::conflict(format!("no matrix for mode mask {}; POST /regions/{{id}}/matrix", sc.mode_mask)));
            }
        }
        dataset::write_text(&ds.root.join(file), &text)?;
        Ok(st.publish(ds, (*p.snapshot).clone())?)
    })
    .await?;
    ok(json!({"version": version}))
}

async fn put_scenarios(State(s): State<Shared>, Json(defs): Json<Vec<ScenarioDefinition>>) -> ApiResult {
    republish(s, move |ds| {
        let mut ids = BTreeSet::new();
        if let Some(d) = defs.iter().find(|d| !ids.insert(d.scenario_id.clone())) {
            anyhow::bail!("duplicate scenario id `{}`", d.scenario_id);
        }
        let text = config::scenarios_toml(&defs);
        ds.scenarios = defs;
        Ok((dataset::SCENARIOS, text))
    })
    .await
}

async fn put_profiles(State(s): State<Shared>, Json(list): Json<Vec<MobilityProfile>>) -> ApiResult {
    republish(s, move |ds| {
        let mut lib = BTreeMap::new();
        for p in list {
            if let Some(old) = lib.insert(p.group_id.clone(), p) {
                anyhow::bail!("duplicate profile id `{}`", old.group_id);
            }
        }
        let text = config::profiles_toml(&lib);
        let scenarios_text = std::fs::read_to_string(ds.root.join(dataset::SCENARIOS)).unwrap_or_default();
        ds.scenarios = config::parse_scenarios(&scenarios_text, &lib)?;
        ds.profiles = lib;
        Ok((dataset::PROFILES, text))
    })
    .await
}

#[derive(Debug, Default, Deserialize)]
struct SurfaceQuery {
    scenario: String,
    #[serde(default)]
    group: Option<String>,
    /// Comma list of categories to keep.
    #[serde(default)]
    categories: Option<String>,
    #[serde(default)]
    mode_mask: Option<String>,
    #[serde(default)]
    overlay: Option<String>,
}

/// A resolved surface with the snapshot it belongs to.
struct Resolved {
    version: u64,
    overlay: Option<(String, u64)>,
    snapshot: Arc<Snapshot>,
    surface: ScoreSurface,
}

fn variant(def: &ScenarioDefinition, q: &SurfaceQuery) -> Result<(ScenarioDefinition, String), ApiError> {
    let mut d = def.clone();
    let mut key = def.scenario_id.clone();
    if let Some(c) = &q.categories {
        let keep: BTreeSet<String> = c.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect();
        d = pipeline::filter_categories(&d, &keep);
        key.push_str(&format!("|c={}", keep.into_iter().collect::<Vec<_>>().join(",")));
    }
    if let Some(m) = &q.mode_mask {
        d.mode_mask = ModeMask::parse(m).map_err(ApiError::bad)?;
        key.push_str(&format!("|m={}", d.mode_mask.0));
    }
    Ok((d, key))
}

async fn resolve(s: &Shared, q: SurfaceQuery) -> Result<Resolved, ApiError> {
    let group = q.group.clone().unwrap_or_else(|| AGGREGATE.into());
    let p = s.current()?;
    let pick = |sc: &ScenarioScores| {
        sc.surface(&group).cloned().ok_or_else(|| ApiError::missing(format!("scenario `{}` has no group `{group}`", q.scenario)))
    };
    if let Some(oid) = q.overlay.clone() {
        let entry = overlay_entry(s, &oid)?;
        let e = entry.lock().await;
        let def = e.ov.scenarios().iter().find(|d| d.scenario_id == q.scenario).cloned();
        let def = def.ok_or_else(|| ApiError::missing(format!("unknown scenario `{}`", q.scenario)))?;
        let snapshot = e.ov.current().clone();
        let overlay = Some((oid, e.ov.version()));
        let surface = if q.categories.is_none() && q.mode_mask.is_none() && group != "car" {
            pick(&e.ov.scores()[&q.scenario])?
        } else {
            let (d, _) = variant(&def, &q)?;
            drop(e);
            let snap = snapshot.clone();
            blocking(move || pipeline::surface(&snap, &d, &group).map_err(ApiError::from)).await?
        };
        return Ok(Resolved { version: p.version, overlay, snapshot, surface });
    }
    let def = p.dataset.scenario(&q.scenario).map_err(|e| ApiError::missing(e.to_string()))?.clone();
    let surface = if q.categories.is_none() && q.mode_mask.is_none() && group != "car" {
        pick(&p.scores[&q.scenario])?
    } else if group == "car" {
        let (d, _) = variant(&def, &q)?;
        let snap = p.snapshot.clone();
        blocking(move || pipeline::surface(&snap, &d, "car").map_err(ApiError::from)).await?
    } else {
        let (d, key) = variant(&def, &q)?;
        if !p.snapshot.matrices.contains_key(&d.mode_mask) {
            return Err(ApiError::conflict(format!("no matrix for mode mask {}", d.mode_mask)));
        }
        let ck = (p.version, key);
        let cached = s.cache.lock().unwrap().get(&ck).cloned();
        let scores = match cached {
            Some(c) => c,
            None => {
                let snap = p.snapshot.clone();
                let sc = Arc::new(blocking(move || snap.score(&d).map_err(|e| ApiError::bad(e.to_string()))).await?);
                s.cache.lock().unwrap().insert(ck, sc.clone());
                sc
            }
        };
        pick(&scores)?
    };
    Ok(Resolved { version: p.version, overlay: None, snapshot: p.snapshot.clone(), surface })
}

fn stamp(r: &Resolved, mut v: Value) -> Value {
    if let Value::Object(m) = &mut v {
        m.insert("version".into(), json!(r.version));
        if let Some(note) = formats::approximation(&r.surface) {
            m.insert("approximation".into(), json!(note));
        }
        if let Some((id, ver)) = &r.overlay {
            m.insert("overlay".into(), json!(id));
            m.insert("overlay_version".into(), json!(ver));
        }
    }
    v
}

#[derive(Debug, Deserialize)]
struct ComputeBody {
    scenario: String,
    #[serde(default)]
    categories: Option<Vec<String>>,
    #[serde(default)]
    mode_mask: Option<String>,
}

/// Scores a scenario variant in the background and caches it.
async fn compute(State(s): State<Shared>, Json(b): Json<ComputeBody>) -> ApiResult {
    let p = s.current()?;
    let def = p.dataset.scenario(&b.scenario).map_err(|e| ApiError::missing(e.to_string()))?.clone();
    let q = SurfaceQuery {
        scenario: b.scenario.clone(),
        categories: b.categories.map(|c| c.join(",")),
        mode_mask: b.mode_mask,
        ..Default::default()
    };
    let (d, key) = variant(&def, &q)?;
    let id = s.job("score");
    let st = s.clone();
    tokio::spawn(async move {
        let r = tokio::task::spawn_blocking(move || -> anyhow::Result<Option<u64>> {
            if !p.snapshot.matrices.contains_key(&d.mode_mask) {
                anyhow::bail!("no matrix for mode mask {}", d.mode_mask);
            }
            let sc = p.snapshot.score(&d)?;
            st.cache.lock().unwrap().insert((p.version, key), Arc::new(sc));
            Ok(Some(p.version))
        })
        .await
        .unwrap_or_else(|e| Err(anyhow::anyhow!("{e}")));
        s.finish(id, r);
    });
    Ok((StatusCode::ACCEPTED, Json(json!({"job": id, "kind": "score", "state": "running"}))).into_response())
}

#[derive(Debug, Deserialize)]
struct SurfaceParams {
    #[serde(flatten)]
    q: SurfaceQueryRaw,
    #[serde(default)]
    format: Option<String>,
}

/// Query strings arrive flat; mirrors [`SurfaceQuery`].
#[derive(Debug, Deserialize)]
struct SurfaceQueryRaw {
    scenario: String,
    group: Option<String>,
    categories: Option<String>,
    mode_mask: Option<String>,
    overlay: Option<String>,
}

impl From<SurfaceQueryRaw> for SurfaceQuery {
    fn from(r: SurfaceQueryRaw) -> Self {
        SurfaceQuery { scenario: r.scenario, group: r.group, categories: r.categories, mode_mask: r.mode_mask, overlay: r.overlay }
    }
}

async fn surface(State(s): State<Shared>, Query(p): Query<SurfaceParams>) -> ApiResult {
    let r = resolve(&s, p.q.into()).await?;
    let served = r.surface.served().count();
    let values = &r.surface.values;
    let scale = normalize_view(values.values().copied()).ok().map(|v| json!({"min": v.min, "max": v.max}));
    match p.format.as_deref() {
        None | Some("json") => ok(stamp(&r, json!({
            "scenario": r.surface.scenario_id,
            "group": r.surface.group,
            "residences": values.len(),
            "served": served,
            "scale": scale,
            "values": values,
        }))),
        Some(f) => Err(ApiError::bad(format!("unknown format `{f}`; use /export/{{csv|geojson}}"))),
    }
}

async fn export(State(s): State<Shared>, UrlPath(format): UrlPath<String>, Query(q): Query<SurfaceQueryRaw>) -> ApiResult {
    let r = resolve(&s, q.into()).await?;
    match format.as_str() {
        "csv" => text("text/csv", formats::surface_csv(&r.surface, r.snapshot.residences.values())),
        "geojson" => {
            let v = stamp(&r, formats::surface_geojson(&r.surface, r.snapshot.residences.values()));
            text("application/geo+json", serde_json::to_string_pretty(&v).unwrap() + "\n")
        }
        _ => Err(ApiError::missing(format!("unknown export format `{format}`"))),
    }
}

#[derive(Debug, Deserialize)]
struct HexParams {
    #[serde(flatten)]
    q: SurfaceQueryRaw,
    resolution: Option<u8>,
    zoom: Option<u8>,
    bbox: Option<String>,
    format: Option<String>,
}

async fn hex(State(s): State<Shared>, Query(h): Query<HexParams>) -> ApiResult {
    let res = match (h.resolution, h.zoom) {
        (Some(r), _) => r,
        (None, Some(z)) => resolution_for_zoom(z),
        (None, None) => MAX_RESOLUTION,
    };
    let bbox = bbox_of(&h.bbox)?;
    let r = resolve(&s, h.q.into()).await?;
    let grid = pipeline::hex(&r.snapshot, &r.surface, res).map_err(|e| ApiError::bad(e.to_string()))?;
    let proj = r.snapshot.graph.projection;
    let cells: Vec<(&tscore::analysis::HexCell, &tscore::analysis::CellStats)> = match &bbox {
        Some(b) => grid.cells_in(&proj, b).collect(),
        None => grid.cells.iter().collect(),
    };
    let scale = normalize_view(cells.iter().map(|(_, c)| c.mean_s)).ok().map(|v| json!({"min": v.min, "max": v.max}));
    if h.format.as_deref() == Some("geojson") {
        let mut sub = grid.clone();
        sub.cells = cells.iter().map(|(c, st)| (**c, (*st).clone())).collect();
        let mut v = formats::hex_geojson(&sub, &proj);
        v["properties"]["scale"] = json!(scale);
        return ok(stamp(&r, v));
    }
    let list: Vec<Value> = cells
        .iter()
        .map(|(c, st)| json!({"cell": c.id(), "mean_s": st.mean_s, "count": st.count, "served": st.served}))
        .collect();
    ok(stamp(&r, json!({
        "resolution": grid.resolution,
        "edge_m": grid.edge_m,
        "grand_mean_s": grid.grand_mean(),
        "scale": scale,
        "cells": list,
    })))
}

#[derive(Debug, Deserialize)]
struct DiffParams {
    /// `scenario[:group]`.
    a: String,
    b: String,
    a_overlay: Option<String>,
    b_overlay: Option<String>,
    format: Option<String>,
}

async fn diff(State(s): State<Shared>, Query(d): Query<DiffParams>) -> ApiResult {
    let side = |spec: &str, overlay: Option<String>| {
        let (sc, g) = pipeline::parse_surface_ref(spec);
        SurfaceQuery { scenario: sc.into(), group: Some(g.into()), overlay, ..Default::default() }
    };
    let ra = resolve(&s, side(&d.a, d.a_overlay.clone())).await?;
    let rb = resolve(&s, side(&d.b, d.b_overlay.clone())).await?;
    let out = tscore::analysis::diff(&ra.surface, &rb.surface, &d.a, &d.b).map_err(|e| ApiError::bad(e.to_string()))?;
    if d.format.as_deref() == Some("csv") {
        return text("text/csv", formats::diff_csv(&out));
    }
    let range = out.values.values().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut v = json!({"a": out.a, "b": out.b, "excluded": out.excluded, "range": range, "values": out.values, "version": ra.version});
    for (k, r) in [("a_overlay", &ra), ("b_overlay", &rb)] {
        if let Some((id, ver)) = &r.overlay {
            v[k] = json!({"id": id, "version": ver});
        }
    }
    ok(v)
}

fn overlay_entry(s: &AppState, id: &str) -> Result<Arc<tokio::sync::Mutex<OverlayEntry>>, ApiError> {
    s.overlays.lock().unwrap().get(id).cloned().ok_or_else(|| ApiError::missing(format!("unknown overlay `{id}`")))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OverlayBody {
    #[serde(default)]
    id: Option<String>,
}

async fn create_overlay(State(s): State<Shared>, body: Option<Json<OverlayBody>>) -> ApiResult {
    let p = s.current()?;
    let id = match body.and_then(|Json(b)| b.id) {
        Some(id) => id,
        None => format!("o{}", s.next_overlay.fetch_add(1, Ordering::SeqCst)),
    };
    let exec: Arc<dyn MatrixExec> = s.exec.clone();
    let ov = ScenarioOverlay::new(id.clone(), p.snapshot.clone(), p.scores.clone(), Arc::new(p.dataset.scenarios.clone()), exec);
    let entry = OverlayEntry { ov, base_version: p.version };
    {
        let mut m = s.overlays.lock().unwrap();
        if m.contains_key(&id) {
            return Err(ApiError::conflict(format!("overlay `{id}` exists")));
        }
        m.insert(id.clone(), Arc::new(tokio::sync::Mutex::new(entry)));
    }
    Ok((StatusCode::CREATED, Json(json!({"overlay": id, "overlay_version": 0, "version": p.version}))).into_response())
}

async fn overlay_info(State(s): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult {
    let entry = overlay_entry(&s, &id)?;
    let e = entry.lock().await;
    ok(json!({
        "overlay": id,
        "overlay_version": e.ov.version(),
        "version": e.base_version,
        "edits": e.ov.edits(),
        "pending_dirty": e.ov.dirty().len(),
    }))
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum EditBody {
    One(Edit),
    Many(Vec<Edit>),
}

/// Applies edits in order; stops at the first rejected one.
async fn post_edits(State(s): State<Shared>, UrlPath(id): UrlPath<String>, Json(b): Json<EditBody>) -> ApiResult {
    let entry = overlay_entry(&s, &id)?;
    let mut e = entry.lock_owned().await;
    let edits = match b {
        EditBody::One(x) => vec![x],
        EditBody::Many(v) => v,
    };
    let (e, out) = blocking(move || {
        let mut dirty = BTreeSet::new();
        let mut warnings = Vec::new();
        for (i, ed) in edits.into_iter().enumerate() {
            match e.ov.apply(ed) {
                Ok(r) => {
                    dirty.extend(r.residences);
                    warnings.extend(r.warnings);
                }
                Err(err) => {
                    let v = json!({"error": format!("edit {}: {err}", i + 1), "applied": i, "overlay_version": e.ov.version()});
                    return Ok((e, Err(v)));
                }
            }
        }
        let v = json!({"overlay": e.ov.id, "overlay_version": e.ov.version(), "dirty": dirty, "warnings": warnings});
        Ok((e, Ok(v)))
    })
    .await?;
    drop(e);
    match out {
        Ok(v) => ok(v),
        Err(v) => Ok((StatusCode::UNPROCESSABLE_ENTITY, Json(v)).into_response()),
    }
}

async fn rescore(State(s): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult {
    let entry = overlay_entry(&s, &id)?;
    let mut e = entry.lock_owned().await;
    let patch = blocking(move || {
        let p = e.ov.rescore().map_err(|x| ApiError::bad(x.to_string()))?;
        Ok(json!({"overlay": e.ov.id, "overlay_version": p.version, "patch": p}))
    })
    .await?;
    ok(patch)
}

async fn delete_overlay(State(s): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult {
    let entry = s.overlays.lock().unwrap().remove(&id).ok_or_else(|| ApiError::missing(format!("unknown overlay `{id}`")))?;
    let mut e = entry.lock().await;
    let discarded = e.ov.edits().len();
    e.ov.revert();
    ok(json!({"overlay": id, "reverted": true, "edits_discarded": discarded, "version": e.base_version}))
}

#[derive(Debug, Deserialize)]
struct ExplainQuery {
    stop: String,
    poi: String,
    hour: usize,
    mode_mask: Option<String>,
    overlay: Option<String>,
}

async fn explain(State(s): State<Shared>, Query(q): Query<ExplainQuery>) -> ApiResult {
    let p = s.current()?;
    let snap = match &q.overlay {
        Some(o) => overlay_entry(&s, o)?.lock().await.ov.current().clone(),
        None => p.snapshot.clone(),
    };
    if q.hour >= 24 {
        return Err(ApiError::bad("hour must be below 24"));
    }
    let mask = match &q.mode_mask {
        Some(m) => ModeMask::parse(m).map_err(ApiError::bad)?,
        None => ModeMask::ALL,
    };
    let version = p.version;
    blocking(move || {
        let origin = snap.network.stop_index(&q.stop).ok_or_else(|| ApiError::missing(format!("unknown stop `{}`", q.stop)))?;
        let pi = snap.pois.keys().position(|k| *k == q.poi).ok_or_else(|| ApiError::missing(format!("unknown poi `{}`", q.poi)))?;
        let tt = snap.timetable(mask).map_err(|e| ApiError::bad(e.to_string()))?;
        let b = snap.matrix_builder(&tt).map_err(|e| ApiError::bad(e.to_string()))?;
        let seconds = snap.matrices.get(&mask).and_then(|m| m.matrix.get_by_id(q.hour, &q.stop, &q.poi));
        let journey = b.explain(origin, pi, q.hour).ok();
        ok(json!({
            "version": version,
            "stop": q.stop,
            "poi": q.poi,
            "hour": q.hour,
            "seconds": seconds.filter(|v| *v != tscore::router::UNREACHABLE),
            "journey": journey,
        }))
    })
    .await
}
