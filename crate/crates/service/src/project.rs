//! A loaded project: immutable rasters, network and cost graph, plus the
//! mutable boundary store and session log behind one lock.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Mutex, MutexGuard};
use std::time::Instant;

use delinkit_core::classifier::predict_table;
use delinkit_core::delineation::{
    build_graph, CostGraph, CostParams, DelineationError, DEFAULT_SNAP_TOLERANCE,
};
use delinkit_core::evaluation::ObjectCategory;
use delinkit_core::features::{build_feature_table, likelihood_map, DEFAULT_HALF_WIDTH};
use delinkit_core::formats::{
    linestring_from_value, linestring_to_value, lines_to_string, read_lines, read_model,
    read_raster, LineFeature, LineProperties,
};
use delinkit_core::geo::{Point2, Polyline, RasterGrid};
use delinkit_core::segmentation::{
    extract_network, imported_likelihoods, slic_segment, LineNetwork, SegParams,
};
use delinkit_core::session::{EventKind, SessionEvent, SessionLog};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::ServiceError;

/// Body of `POST /projects`. Without a network file the network is
/// segmented from the RGB raster; without a model, likelihoods come from
/// the network file's `boundary` properties, else default to 0.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ProjectRequest {
    #[serde(default)]
    pub name: Option<String>,
    pub rgb: PathBuf,
    #[serde(default)]
    pub dsm: Option<PathBuf>,
    #[serde(default)]
    pub network: Option<PathBuf>,
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub segmentation: Option<SegParams>,
    #[serde(default)]
    pub half_width: Option<f64>,
    #[serde(default)]
    pub snap_tolerance: Option<f64>,
    #[serde(default)]
    pub cost: Option<CostParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Boundary {
    pub polyline: Polyline,
    pub category: ObjectCategory,
    pub kind: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Suggestion {
    pub geometry: Value,
    pub cost: f64,
    pub edge_ids: Vec<u64>,
}

/// A rejected suggestion: `index` names the failing click, or the failing
/// leg for unreachable legs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rejection {
    pub reason: String,
    pub index: Option<usize>,
    /// Whether `index` names a click (as opposed to a leg).
    #[serde(skip)]
    pub at_click: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProjectState {
    pub boundaries: BTreeMap<u64, Boundary>,
    pub session: SessionLog,
    next_id: u64,
    /// Clicks of the current, not yet accepted, object.
    pending: Vec<[f64; 2]>,
}

impl ProjectState {
    pub fn new() -> Self {
        Self {
            next_id: 1,
            ..Default::default()
        }
    }

    /// Accepted boundaries as a FeatureCollection with `id`, `category` and
    /// `kind`.
    pub fn boundaries_geojson(&self) -> String {
        let features: Vec<LineFeature> = self
            .boundaries
            .iter()
            .map(|(id, b)| LineFeature {
                polyline: b.polyline.clone(),
                properties: LineProperties {
                    id: Some(*id as i64),
                    category: Some(category_name(b.category).to_string()),
                    kind: Some(b.kind.clone()),
                    ..Default::default()
                },
            })
            .collect();
        lines_to_string(&features)
    }
}

pub fn category_name(c: ObjectCategory) -> &'static str {
    match c {
        ObjectCategory::NoEdit => "no_edit",
        ObjectCategory::Edit => "edit",
        ObjectCategory::Manual => "manual",
    }
}

pub fn parse_category(s: &str) -> Result<ObjectCategory, ServiceError> {
    match s {
        "no_edit" => Ok(ObjectCategory::NoEdit),
        "edit" => Ok(ObjectCategory::Edit),
        "manual" => Ok(ObjectCategory::Manual),
        other => Err(ServiceError::Invalid(format!(
            "category must be no_edit, edit or manual, got {other:?}"
        ))),
    }
}

pub fn parse_geometry(v: &Value) -> Result<Polyline, ServiceError> {
    linestring_from_value(v).map_err(|e| ServiceError::Invalid(e.to_string()))
}

pub struct Project {
    pub id: String,
    pub name: String,
    pub rgb: RasterGrid,
    pub network: LineNetwork,
    pub likelihoods: BTreeMap<u64, f64>,
    pub graph: CostGraph,
    pub snap_tolerance: f64,
    started: Instant,
    state: Mutex<ProjectState>,
}

impl std::fmt::Debug for Project {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Project")
            .field("id", &self.id)
            .field("name", &self.name)
            .field("edges", &self.network.edge_count())
            .finish()
    }
}

impl Project {
    pub fn new(
        id: String,
        name: String,
        rgb: RasterGrid,
        network: LineNetwork,
        likelihoods: BTreeMap<u64, f64>,
        cost: &CostParams,
        snap_tolerance: f64,
    ) -> Result<Self, ServiceError> {
        if rgb.band_count() != 3 {
            return Err(ServiceError::Invalid(format!(
                "rgb raster must have 3 bands, got {}",
                rgb.band_count()
            )));
        }
        if !(snap_tolerance > 0.0 && snap_tolerance.is_finite()) {
            return Err(ServiceError::Invalid(format!("snap tolerance {snap_tolerance}")));
        }
        let graph = build_graph(&network, &likelihoods, cost).map_err(|e| ServiceError::Invalid(e.to_string()))?;
        Ok(Self {
            id,
            name,
            rgb,
            network,
            likelihoods,
            graph,
            snap_tolerance,
            started: Instant::now(),
            state: Mutex::new(ProjectState::new()),
        })
    }

    pub fn load(id: String, req: &ProjectRequest) -> Result<Self, ServiceError> {
        let rgb = read_raster(&req.rgb)?;
        let dsm = req.dsm.as_ref().map(|p| read_raster(p)).transpose()?;
        let (network, imported) = match &req.network {
            Some(path) => {
                let lines = read_lines(path)?;
                let net = LineNetwork::from_lines(&lines).map_err(|e| ServiceError::Invalid(e.to_string()))?;
                let lk = imported_likelihoods(&lines).map_err(|e| ServiceError::Invalid(e.to_string()))?;
                (net, lk)
            }
            None => {
                let p = req.segmentation.clone().unwrap_or_default();
                let labels = slic_segment(&rgb, &p, req.seed).map_err(|e| ServiceError::Invalid(e.to_string()))?;
                let net = extract_network(&labels, rgb.georef(), p.simplify_tol_for(rgb.georef().gsd()));
                (net, None)
            }
        };
        let likelihoods = match &req.model {
            Some(path) => {
                let model = read_model(path)?;
                let dsm = if model.uses_feature("dsm_grad") {
                    Some(dsm.as_ref().ok_or_else(|| {
                        ServiceError::Invalid("model uses dsm_grad but no dsm was given".into())
                    })?)
                } else {
                    None
                };
                let hw = req.half_width.unwrap_or(DEFAULT_HALF_WIDTH);
                let table = build_feature_table(&network, &rgb, dsm, hw).map_err(|e| ServiceError::Invalid(e.to_string()))?;
                let predicted = predict_table(&model, &table).map_err(|e| ServiceError::Invalid(e.to_string()))?;
                likelihood_map(&predicted)
            }
            None => imported.unwrap_or_default(),
        };
        let name = req.name.clone().unwrap_or_else(|| id.clone());
        Self::new(
            id,
            name,
            rgb,
            network,
            likelihoods,
            &req.cost.unwrap_or_default(),
            req.snap_tolerance.unwrap_or(DEFAULT_SNAP_TOLERANCE),
        )
    }

    /// A copy with the same immutable data and an empty boundary store and
    /// session, for replays.
    pub fn fresh(&self) -> Self {
        Self {
            id: self.id.clone(),
            name: self.name.clone(),
            rgb: self.rgb.clone(),
            network: self.network.clone(),
            likelihoods: self.likelihoods.clone(),
            graph: self.graph.clone(),
            snap_tolerance: self.snap_tolerance,
            started: Instant::now(),
            state: Mutex::new(ProjectState::new()),
        }
    }

    /// Milliseconds since the project was loaded.
    pub fn now_ms(&self) -> u64 {
        self.started.elapsed().as_millis() as u64
    }

    /// The single-writer lock: every mutation and the event recording it
    /// happen under this guard.
    pub fn lock(&self) -> MutexGuard<'_, ProjectState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Network edges with likelihood ≥ `min_likelihood`.
    pub fn network_geojson(&self, min_likelihood: f64) -> String {
        let features: Vec<LineFeature> = self
            .network
            .to_features(Some(&self.likelihoods))
            .into_iter()
            .filter(|f| f.properties.boundary.unwrap_or(0.0) >= min_likelihood)
            .collect();
        lines_to_string(&features)
    }

    /// Row-major interleaved RGB8.
    pub fn image_bytes(&self) -> Vec<u8> {
        let n = self.rgb.rows() * self.rgb.cols();
        let bands = self.rgb.bands();
        let mut out = Vec::with_capacity(n * 3);
        for k in 0..n {
            for b in bands {
                out.push(b[k].round().clamp(0.0, 255.0) as u8);
            }
        }
        out
    }

    pub fn suggest(
        &self,
        st: &mut ProjectState,
        t_ms: u64,
        clicks: &[[f64; 2]],
        close: bool,
    ) -> Result<Suggestion, Rejection> {
        // Clicks extending the pending object are new; anything else starts over.
        let fresh_from = if clicks.starts_with(&st.pending) { st.pending.len() } else { 0 };
        for c in &clicks[fresh_from..] {
            st.session.record(t_ms, EventKind::Click, json!({ "point": c }));
        }
        st.pending = clicks.to_vec();

        let result = self.compute_suggestion(clicks, close);
        let mut payload = json!({ "clicks": clicks, "close": close });
        match &result {
            Ok(s) => {
                payload["geometry"] = s.geometry.clone();
                payload["cost"] = json!(s.cost);
                payload["edge_ids"] = json!(s.edge_ids);
            }
            Err(r) => {
                payload["error"] = json!(r);
                // The rejected click is dropped from the pending object.
                if let Some(i) = r.index.filter(|_| r.at_click) {
                    st.pending.truncate(i);
                }
            }
        }
        st.session.record(t_ms, EventKind::Suggest, payload);
        result
    }

    fn compute_suggestion(&self, clicks: &[[f64; 2]], close: bool) -> Result<Suggestion, Rejection> {
        if clicks.len() < 2 {
            return Err(Rejection {
                reason: format!("at least 2 clicks required, got {}", clicks.len()),
                index: None,
                at_click: false,
            });
        }
        let mut nodes = Vec::with_capacity(clicks.len());
        for (i, c) in clicks.iter().enumerate() {
            let node = self
                .graph
                .snap_node(Point2::new(c[0], c[1]), self.snap_tolerance)
                .map_err(|e| Rejection {
                    reason: format!("click {i}: {e}"),
                    index: Some(i),
                    at_click: true,
                })?;
            if i > 0 && nodes.last() == Some(&node) {
                return Err(Rejection {
                    reason: format!("click {i}: snaps to the same node as the previous click"),
                    index: Some(i),
                    at_click: true,
                });
            }
            nodes.push(node);
        }
        if close && nodes.len() >= 3 && nodes.first() == nodes.last() {
            return Err(Rejection {
                reason: format!("click {}: closing click repeats the first node", nodes.len() - 1),
                index: Some(nodes.len() - 1),
                at_click: true,
            });
        }
        let path = self.graph.connect_sequence(&nodes, close).map_err(|e| match e {
            DelineationError::Unreachable { leg, .. } => Rejection {
                reason: format!("leg {leg}: {e}"),
                index: Some(leg),
                at_click: false,
            },
            other => Rejection {
                reason: other.to_string(),
                index: None,
                at_click: false,
            },
        })?;
        Ok(Suggestion {
            geometry: linestring_to_value(&path.polyline),
            cost: path.total_cost,
            edge_ids: path.edge_ids,
        })
    }

    pub fn accept(
        &self,
        st: &mut ProjectState,
        t_ms: u64,
        polyline: Polyline,
        category: ObjectCategory,
        kind: String,
    ) -> u64 {
        let id = st.next_id;
        st.next_id += 1;
        st.session.record(
            t_ms,
            EventKind::Accept,
            json!({
                "boundary_id": id,
                "geometry": linestring_to_value(&polyline),
                "category": category_name(category),
                "kind": kind,
            }),
        );
        st.boundaries.insert(id, Boundary { polyline, category, kind });
        st.pending.clear();
        id
    }

    /// Replaces a boundary's geometry; an unedited boundary becomes `edit`.
    pub fn edit(&self, st: &mut ProjectState, t_ms: u64, id: u64, polyline: Polyline) -> Result<(), ServiceError> {
        let b = st
            .boundaries
            .get_mut(&id)
            .ok_or_else(|| ServiceError::NotFound(format!("boundary {id}")))?;
        if b.category == ObjectCategory::NoEdit {
            b.category = ObjectCategory::Edit;
        }
        let geometry = linestring_to_value(&polyline);
        b.polyline = polyline;
        st.session.record(t_ms, EventKind::Edit, json!({ "boundary_id": id, "geometry": geometry }));
        Ok(())
    }

    pub fn delete(&self, st: &mut ProjectState, t_ms: u64, id: u64) -> Result<(), ServiceError> {
        st.boundaries
            .remove(&id)
            .ok_or_else(|| ServiceError::NotFound(format!("boundary {id}")))?;
        st.session.record(t_ms, EventKind::Delete, json!({ "boundary_id": id }));
        Ok(())
    }

    pub fn zoom(&self, st: &mut ProjectState, t_ms: u64, payload: Value) {
        st.session.record(t_ms, EventKind::Zoom, payload);
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ReplayError {
    #[error("event {index}: malformed {kind:?} payload: {detail}")]
    Malformed { index: usize, kind: EventKind, detail: String },
    #[error("replay diverged from the recording at event {index}")]
    Diverged { index: usize },
}

#[derive(Deserialize)]
struct SuggestPayload {
    clicks: Vec<[f64; 2]>,
    close: bool,
}

#[derive(Deserialize)]
struct AcceptPayload {
    boundary_id: u64,
    geometry: Value,
    category: String,
    kind: String,
}

#[derive(Deserialize)]
struct EditPayload {
    boundary_id: u64,
    #[serde(default)]
    geometry: Value,
}

/// Re-executes a recorded session against a fresh copy of `project`,
/// driving the same code paths with the recorded times. Click events are
/// regenerated by the suggest calls that produced them. The replayed log
/// must equal the recording event for event.
pub fn replay(project: &Project, log: &SessionLog) -> Result<ProjectState, ReplayError> {
    let fresh = project.fresh();
    let mut st = ProjectState::new();
    for (index, e) in log.events().iter().enumerate() {
        let malformed = |detail: String| ReplayError::Malformed { index, kind: e.kind, detail };
        fn parse<T: for<'de> Deserialize<'de>>(e: &SessionEvent) -> Result<T, String> {
            serde_json::from_value(e.payload.clone()).map_err(|err| err.to_string())
        }
        match e.kind {
            EventKind::Click => continue,
            EventKind::Suggest => {
                let p: SuggestPayload = parse(e).map_err(malformed)?;
                let _ = fresh.suggest(&mut st, e.t_ms, &p.clicks, p.close);
            }
            EventKind::Accept => {
                let p: AcceptPayload = parse(e).map_err(malformed)?;
                let polyline = parse_geometry(&p.geometry).map_err(|err| malformed(err.to_string()))?;
                let category = parse_category(&p.category).map_err(|err| malformed(err.to_string()))?;
                if p.boundary_id != st.next_id {
                    return Err(ReplayError::Diverged { index });
                }
                fresh.accept(&mut st, e.t_ms, polyline, category, p.kind);
            }
            EventKind::Edit => {
                let p: EditPayload = parse(e).map_err(malformed)?;
                let polyline = parse_geometry(&p.geometry).map_err(|err| malformed(err.to_string()))?;
                fresh
                    .edit(&mut st, e.t_ms, p.boundary_id, polyline)
                    .map_err(|_| ReplayError::Diverged { index })?;
            }
            EventKind::Delete => {
                let p: EditPayload = parse(e).map_err(malformed)?;
                fresh
                    .delete(&mut st, e.t_ms, p.boundary_id)
                    .map_err(|_| ReplayError::Diverged { index })?;
            }
            EventKind::Zoom => fresh.zoom(&mut st, e.t_ms, e.payload.clone()),
        }
        let n = st.session.len();
        if n > log.len() || st.session.events()[..n] != log.events()[..n] {
            return Err(ReplayError::Diverged { index });
        }
    }
    if st.session.len() != log.len() {
        return Err(ReplayError::Diverged { index: st.session.len() });
    }
    Ok(st)
}
