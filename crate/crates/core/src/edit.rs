//! Copy-on-write edit overlay with localized rescoring.
//!
//! The base snapshot is shared and never mutated. Each edit produces a new
//! working snapshot whose tables equal a from-scratch build of the edited
//! inputs, plus the set of residences whose score may have changed. Only
//! those are rescored.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::geo::{haversine_m, LatLon};
use crate::network::{NetworkError, NetworkParts, StopRecord, TransitNetwork};
use crate::places::{Poi, Residence, Sampling, SamplingKind, Snapped};
use crate::profile::{EntryTable, Evaluator, ProfileError, ScenarioDefinition, ScenarioScores};
use crate::snapshot::{MatrixExec, Snapshot, SnapshotError};
use crate::street::{meters_to_mm, DijkstraScratch};
use crate::walk::{closest_stops_from, within, StopsByNode};

/// Implied speeds above this between consecutive stops after a move are
/// reported.
pub const PLAUSIBLE_SPEED_KMH: f64 = 80.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Poi,
    Stop,
    Residence,
}

impl EntityKind {
    pub fn name(self) -> &'static str {
        match self {
            EntityKind::Poi => "poi",
            EntityKind::Stop => "stop",
            EntityKind::Residence => "residence",
        }
    }
}

/// User-confirmed times of the inserted stop on one trip.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfirmedTime {
    pub trip_id: String,
    pub arrival: u32,
    pub departure: u32,
}

/// One edit; serialized as a JSON object tagged by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Edit {
    AddPoi {
        id: String,
        category: String,
        position: LatLon,
        #[serde(default)]
        name: String,
    },
    AddResidence {
        id: String,
        position: LatLon,
        #[serde(default = "unit_weight")]
        weight: f64,
    },
    /// New stop on `line_id` between two consecutive stops of its patterns
    /// (in either direction).
    AddStop {
        id: String,
        #[serde(default)]
        name: String,
        position: LatLon,
        line_id: String,
        between: (String, String),
        #[serde(default)]
        dwell_s: u32,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        confirmed_times: Vec<ConfirmedTime>,
    },
    Move {
        entity: EntityKind,
        id: String,
        position: LatLon,
    },
    Remove {
        entity: EntityKind,
        id: String,
    },
}

fn unit_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EditError {
    #[error("unknown {kind} `{id}`")]
    UnknownEntity { kind: &'static str, id: String },
    #[error("{kind} `{id}` already exists")]
    DuplicateId { kind: &'static str, id: String },
    #[error("position {lat},{lon} is not within snapping distance of a walkable street")]
    UnsnappablePosition { lat: f64, lon: f64 },
    #[error("removing stop `{stop}` would leave a trip of line `{line}` with fewer than two stops")]
    RemoveLastStopOfLine { stop: String, line: String },
    #[error("confirmed times for trip `{0}` are not monotone")]
    NonMonotoneConfirmedTimes(String),
    #[error("`{a}` and `{b}` are not consecutive stops of line `{line}`")]
    NotConsecutive { line: String, a: String, b: String },
    #[error("poi `{0}` is the specific destination of a profile and cannot be removed")]
    SpecificPoiReferenced(String),
    #[error("invalid value: {0}")]
    InvalidValue(&'static str),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

/// Result of applying an edit.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DirtyRegion {
    pub residences: BTreeSet<String>,
    pub warnings: Vec<String>,
}

fn stop_position(parts: &NetworkParts, id: &str) -> Option<LatLon> {
    parts.stops.iter().find(|s| s.id == id).map(|s| s.position)
}

/// Inserts `new_stop` into every trip of `line_id` where `between` are
/// consecutive, in either order. Times are interpolated by straight-line
/// distance along old -> new -> next; `dwell` is added at the new stop and
/// shifts the rest of the trip. Confirmed times replace the proposal.
/// Returns the patched trip ids.
pub fn insert_stop_times(
    parts: &mut NetworkParts,
    line_id: &str,
    between: (&str, &str),
    new_stop: &StopRecord,
    dwell: u32,
    confirm: &[ConfirmedTime],
) -> Result<Vec<String>, EditError> {
    let (a, b) = between;
    let pa = stop_position(parts, a).ok_or_else(|| EditError::UnknownEntity { kind: "stop", id: String::from(a) })?;
    let pb = stop_position(parts, b).ok_or_else(|| EditError::UnknownEntity { kind: "stop", id: String::from(b) })?;
    let pos_of = |id: &str| if id == a { pa } else { pb };
    let mut patched = Vec::new();
    for t in parts.trips.iter_mut().filter(|t| t.line_id == line_id) {
        let mut i = t.stop_times.len();
        let mut hit = false;
        while i >= 2 {
            i -= 1;
            let (prev, next) = (&t.stop_times[i - 1], &t.stop_times[i]);
            let pair = (prev.stop_id.as_str(), next.stop_id.as_str());
            if pair != (a, b) && pair != (b, a) {
                continue;
            }
            let d1 = haversine_m(pos_of(&prev.stop_id), new_stop.position);
            let d2 = haversine_m(new_stop.position, pos_of(&next.stop_id));
            let frac = if d1 + d2 > 0.0 { d1 / (d1 + d2) } else { 0.5 };
            let span = next.arrival.saturating_sub(prev.departure) as f64;
            let arrival = prev.departure + libm::round(frac * span) as u32;
            for st in &mut t.stop_times[i..] {
                st.arrival += dwell;
                st.departure += dwell;
            }
            t.stop_times.insert(
                i,
                crate::network::StopTimeRecord { stop_id: new_stop.id.clone(), arrival, departure: arrival + dwell },
            );
            hit = true;
        }
        if hit {
            patched.push(t.id.clone());
        }
    }
    if patched.is_empty() {
        return Err(EditError::NotConsecutive { line: String::from(line_id), a: String::from(a), b: String::from(b) });
    }
    for c in confirm {
        let t = parts
            .trips
            .iter_mut()
            .find(|t| t.id == c.trip_id && t.line_id == line_id)
            .ok_or_else(|| EditError::UnknownEntity { kind: "trip", id: c.trip_id.clone() })?;
        let Some(st) = t.stop_times.iter_mut().find(|st| st.stop_id == new_stop.id) else {
            return Err(EditError::UnknownEntity { kind: "trip", id: c.trip_id.clone() });
        };
        st.arrival = c.arrival;
        st.departure = c.departure;
        let ok = t.stop_times.iter().all(|s| s.arrival <= s.departure)
            && t.stop_times.windows(2).all(|w| w[0].departure <= w[1].arrival);
        if !ok {
            return Err(EditError::NonMonotoneConfirmedTimes(c.trip_id.clone()));
        }
    }
    Ok(patched)
}

/// Removes a stop from the network records.
pub fn remove_stop(parts: &mut NetworkParts, id: &str) -> Result<(), EditError> {
    let before = parts.stops.len();
    parts.stops.retain(|s| s.id != id);
    if parts.stops.len() == before {
        return Err(EditError::UnknownEntity { kind: "stop", id: String::from(id) });
    }
    for t in &mut parts.trips {
        t.stop_times.retain(|st| st.stop_id != id);
        if t.stop_times.len() < 2 {
            return Err(EditError::RemoveLastStopOfLine { stop: String::from(id), line: t.line_id.clone() });
        }
    }
    Ok(())
}

/// Moves a stop, keeping its times; returns warnings for implausible
/// implied speeds.
pub fn move_stop(parts: &mut NetworkParts, id: &str, position: LatLon) -> Result<Vec<String>, EditError> {
    let s = parts
        .stops
        .iter_mut()
        .find(|s| s.id == id)
        .ok_or_else(|| EditError::UnknownEntity { kind: "stop", id: String::from(id) })?;
    s.position = position;
    let mut seen = BTreeSet::new();
    let mut warnings = Vec::new();
    for t in &parts.trips {
        for w in t.stop_times.windows(2) {
            if w[0].stop_id != id && w[1].stop_id != id {
                continue;
            }
            let (Some(p), Some(q)) = (stop_position(parts, &w[0].stop_id), stop_position(parts, &w[1].stop_id)) else {
                continue;
            };
            let dt = w[1].arrival.saturating_sub(w[0].departure) as f64;
            let d = haversine_m(p, q);
            let kmh = if dt > 0.0 { d / dt * 3.6 } else if d > 0.0 { f64::INFINITY } else { 0.0 };
            if kmh > PLAUSIBLE_SPEED_KMH && seen.insert((w[0].stop_id.clone(), w[1].stop_id.clone())) {
                warnings.push(format!(
                    "implied speed {:.0} km/h between `{}` and `{}` (trip `{}`)",
                    kmh, w[0].stop_id, w[1].stop_id, t.id
                ));
            }
        }
    }
    Ok(warnings)
}

/// Scores every scenario on a snapshot.
pub fn score_all(snap: &Snapshot, scenarios: &[ScenarioDefinition]) -> Result<BTreeMap<String, ScenarioScores>, SnapshotError> {
    let mut out = BTreeMap::new();
    for sc in scenarios {
        out.insert(sc.scenario_id.clone(), snap.score(sc)?);
    }
    Ok(out)
}

/// Changed values per scenario and group; `None` marks Unserved, removed
/// residences are listed separately.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScorePatch {
    pub version: u64,
    pub values: BTreeMap<String, BTreeMap<String, BTreeMap<String, Option<f64>>>>,
    pub removed: BTreeSet<String>,
}

impl ScorePatch {
    pub fn is_empty(&self) -> bool {
        self.values.values().all(|g| g.values().all(|v| v.is_empty())) && self.removed.is_empty()
    }
}

pub struct ScenarioOverlay {
    pub id: String,
    base: Arc<Snapshot>,
    base_scores: Arc<BTreeMap<String, ScenarioScores>>,
    scenarios: Arc<Vec<ScenarioDefinition>>,
    current: Arc<Snapshot>,
    scores: BTreeMap<String, ScenarioScores>,
    edits: Vec<Edit>,
    dirty: BTreeSet<String>,
    version: u64,
    exec: Arc<dyn MatrixExec>,
}

impl core::fmt::Debug for ScenarioOverlay {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("ScenarioOverlay")
            .field("id", &self.id)
            .field("edits", &self.edits.len())
            .field("dirty", &self.dirty.len())
            .field("version", &self.version)
            .finish()
    }
}

impl ScenarioOverlay {
    /// `base_scores` must be the scores of `scenarios` on `base`.
    pub fn new(
        id: String,
        base: Arc<Snapshot>,
        base_scores: Arc<BTreeMap<String, ScenarioScores>>,
        scenarios: Arc<Vec<ScenarioDefinition>>,
        exec: Arc<dyn MatrixExec>,
    ) -> ScenarioOverlay {
        ScenarioOverlay {
            id,
            current: base.clone(),
            scores: (*base_scores).clone(),
            base,
            base_scores,
            scenarios,
            edits: Vec::new(),
            dirty: BTreeSet::new(),
            version: 0,
            exec,
        }
    }

    pub fn base(&self) -> &Arc<Snapshot> {
        &self.base
    }

    pub fn current(&self) -> &Arc<Snapshot> {
        &self.current
    }

    pub fn scores(&self) -> &BTreeMap<String, ScenarioScores> {
        &self.scores
    }

    pub fn scenarios(&self) -> &[ScenarioDefinition] {
        &self.scenarios
    }

    pub fn edits(&self) -> &[Edit] {
        &self.edits
    }

    pub fn dirty(&self) -> &BTreeSet<String> {
        &self.dirty
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Applies an edit. On error the overlay is unchanged.
    pub fn apply(&mut self, edit: Edit) -> Result<DirtyRegion, EditError> {
        let old = self.current.clone();
        let mut next: Snapshot = (*old).clone();
        let mut region = DirtyRegion::default();
        let exec = self.exec.clone();
        match &edit {
            Edit::AddPoi { id, category, position, name } => {
                if next.pois.contains_key(id) {
                    return Err(EditError::DuplicateId { kind: "poi", id: id.clone() });
                }
                if !next.categories.iter().any(|c| &c.id == category) {
                    return Err(SnapshotError::UnknownCategory { poi: id.clone(), category: category.clone() }.into());
                }
                let snapped = snap(&next, *position)?;
                let poi = Poi { id: id.clone(), category: category.clone(), position: *position, name: name.clone(), snapped };
                insert_poi(&mut next, poi, &*exec)?;
                region.residences = self.poi_dirty(&old, &next, id, category)?;
            }
            Edit::AddResidence { id, position, weight } => {
                if next.residences.contains_key(id) {
                    return Err(EditError::DuplicateId { kind: "residence", id: id.clone() });
                }
                if !(*weight >= 0.0 && weight.is_finite()) {
                    return Err(EditError::InvalidValue("residence weight must be non-negative"));
                }
                let snapped = snap(&next, *position)?;
                insert_residence(&mut next, Residence { id: id.clone(), position: *position, snapped, weight: *weight });
                region.residences.insert(id.clone());
            }
            Edit::AddStop { id, name, position, line_id, between, dwell_s, confirmed_times } => {
                if next.network.stop_index(id).is_some() {
                    return Err(EditError::DuplicateId { kind: "stop", id: id.clone() });
                }
                if next.network.line_index(line_id).is_none() {
                    return Err(EditError::UnknownEntity { kind: "line", id: line_id.clone() });
                }
                let snapped = snap(&next, *position)?;
                let rec = StopRecord { id: id.clone(), name: if name.is_empty() { id.clone() } else { name.clone() }, position: *position };
                let mut parts = next.network.to_parts();
                parts.stops.push(rec.clone());
                insert_stop_times(&mut parts, line_id, (&between.0, &between.1), &rec, *dwell_s, confirmed_times)?;
                next.stop_snaps.insert(id.clone(), snapped);
                rebuild_transit(&mut next, parts, &*exec)?;
                region.residences = stop_dirty(&old, &next);
            }
            Edit::Move { entity, id, position } => match entity {
                EntityKind::Poi => {
                    let mut poi = next.pois.get(id).cloned().ok_or_else(|| unknown(*entity, id))?;
                    poi.snapped = snap(&next, *position)?;
                    poi.position = *position;
                    let category = poi.category.clone();
                    remove_poi(&mut next, id);
                    insert_poi(&mut next, poi, &*exec)?;
                    region.residences = self.poi_dirty(&old, &next, id, &category)?;
                }
                EntityKind::Residence => {
                    let mut r = next.residences.get(id).cloned().ok_or_else(|| unknown(*entity, id))?;
                    r.snapped = snap(&next, *position)?;
                    r.position = *position;
                    remove_residence(&mut next, id);
                    insert_residence(&mut next, r);
                    region.residences.insert(id.clone());
                }
                EntityKind::Stop => {
                    if next.network.stop_index(id).is_none() {
                        return Err(unknown(*entity, id));
                    }
                    let snapped = snap(&next, *position)?;
                    let mut parts = next.network.to_parts();
                    region.warnings = move_stop(&mut parts, id, *position)?;
                    next.stop_snaps.insert(id.clone(), snapped);
                    rebuild_transit(&mut next, parts, &*exec)?;
                    region.residences = stop_dirty(&old, &next);
                }
            },
            Edit::Remove { entity, id } => match entity {
                EntityKind::Poi => {
                    let category = next.pois.get(id).map(|p| p.category.clone()).ok_or_else(|| unknown(*entity, id))?;
                    if self.specific_refs(id) {
                        return Err(EditError::SpecificPoiReferenced(id.clone()));
                    }
                    remove_poi(&mut next, id);
                    region.residences = self.poi_dirty(&old, &next, id, &category)?;
                }
                EntityKind::Residence => {
                    if !next.residences.contains_key(id) {
                        return Err(unknown(*entity, id));
                    }
                    remove_residence(&mut next, id);
                    region.residences.insert(id.clone());
                }
                EntityKind::Stop => {
                    let mut parts = next.network.to_parts();
                    remove_stop(&mut parts, id)?;
                    next.stop_snaps.remove(id);
                    rebuild_transit(&mut next, parts, &*exec)?;
                    region.residences = stop_dirty(&old, &next);
                }
            },
        }
        self.current = Arc::new(next);
        self.dirty.extend(region.residences.iter().cloned());
        self.edits.push(edit);
        self.version += 1;
        Ok(region)
    }

    fn specific_refs(&self, poi: &str) -> bool {
        self.scenarios.iter().flat_map(|s| &s.profiles).flat_map(|p| &p.entries).any(|e| e.sampling == Some(Sampling::Specific(String::from(poi))))
    }

    /// Residences whose sampled POIs of `category` may change when `poi`
    /// changes between `old` and `new`.
    fn poi_dirty(&self, old: &Snapshot, new: &Snapshot, poi: &str, category: &str) -> Result<BTreeSet<String>, EditError> {
        let mut dirty = BTreeSet::new();
        let legs = new.config.walk_legs_per_visit;
        let exists = new.pois.contains_key(poi);
        let cat = new.categories.iter().find(|c| c.id == category).expect("category exists");
        for sc in self.scenarios.iter() {
            let scores = &self.scores[&sc.scenario_id];
            let inputs = new.score_inputs(sc.mode_mask)?;
            let ev = Evaluator::new(inputs, sc)?;
            for (gi, p) in sc.profiles.iter().enumerate() {
                let evals = &scores.groups[&p.group_id].evals;
                for (ei, e) in p.entries.iter().enumerate() {
                    if e.category != category || e.visits_per_week <= 0.0 {
                        continue;
                    }
                    let sampling = match (&e.sampling, cat.sampling) {
                        (Some(s), _) => s.clone(),
                        (None, SamplingKind::Random) => Sampling::Random,
                        (None, _) => Sampling::Near,
                    };
                    match sampling {
                        Sampling::Specific(id) => {
                            if id == poi {
                                dirty.extend(new.residences.keys().cloned());
                            }
                        }
                        Sampling::Random => {
                            for (r, area) in old.home_areas.iter().chain(new.home_areas.iter()) {
                                if area.contains(poi) {
                                    dirty.insert(r.clone());
                                }
                            }
                        }
                        Sampling::Near => {
                            let table: Option<&EntryTable> = exists.then(|| &ev.groups[gi].tables[ei]);
                            for (r, eval) in evals {
                                if dirty.contains(r) || !new.residences.contains_key(r) {
                                    continue;
                                }
                                let access = ev.access(r, ev.groups[gi].speed);
                                if access.is_empty() {
                                    continue;
                                }
                                let ee = &eval.entries[ei];
                                if ee.sampled.iter().any(|(id, _)| id == poi) {
                                    dirty.insert(r.clone());
                                    continue;
                                }
                                let Some(t) = table else { continue };
                                let Some(cost) = t.cost_of(poi, &access, legs) else { continue };
                                if ee.sampled.len() < e.near_k || ee.kth_cost.map_or(true, |k| cost <= k) {
                                    dirty.insert(r.clone());
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(dirty)
    }

    /// Rescores the dirty residences and clears the dirty set.
    pub fn rescore(&mut self) -> Result<ScorePatch, EditError> {
        let mut patch = ScorePatch::default();
        if self.dirty.is_empty() {
            patch.version = self.version;
            return Ok(patch);
        }
        let dirty = core::mem::take(&mut self.dirty);
        for sc in self.scenarios.iter() {
            let inputs = self.current.score_inputs(sc.mode_mask)?;
            let ev = Evaluator::new(inputs, sc)?;
            let scores = self.scores.get_mut(&sc.scenario_id).expect("scored scenario");
            scores.patch(&ev, &dirty);
            let mut groups = BTreeMap::new();
            for g in ev.groups.iter().map(|g| g.group_id.as_str()).chain([crate::profile::AGGREGATE]) {
                let surf = scores.surface(g).expect("group");
                let vals = dirty.iter().filter_map(|r| surf.values.get(r).map(|v| (r.clone(), *v))).collect();
                groups.insert(String::from(g), vals);
            }
            patch.values.insert(sc.scenario_id.clone(), groups);
        }
        patch.removed = dirty.into_iter().filter(|r| !self.current.residences.contains_key(r)).collect();
        self.version += 1;
        patch.version = self.version;
        Ok(patch)
    }

    /// Scores of the current snapshot computed for every residence.
    pub fn full_scores(&self) -> Result<BTreeMap<String, ScenarioScores>, SnapshotError> {
        score_all(&self.current, &self.scenarios)
    }

    /// Discards every edit.
    pub fn revert(&mut self) {
        self.current = self.base.clone();
        self.scores = (*self.base_scores).clone();
        self.edits.clear();
        self.dirty.clear();
        self.version += 1;
    }
}

fn unknown(kind: EntityKind, id: &str) -> EditError {
    EditError::UnknownEntity { kind: kind.name(), id: String::from(id) }
}

fn snap(s: &Snapshot, p: LatLon) -> Result<Snapped, EditError> {
    if !p.is_valid() {
        return Err(EditError::UnsnappablePosition { lat: p.lat, lon: p.lon });
    }
    s.graph.snap(p, s.config.snap_radius_m).ok_or(EditError::UnsnappablePosition { lat: p.lat, lon: p.lon })
}

fn stops_by_node(s: &Snapshot) -> StopsByNode {
    StopsByNode::new(s.stop_snaps.iter().map(|(id, sn)| (id.as_str(), *sn)))
}

fn insert_poi(s: &mut Snapshot, poi: Poi, exec: &dyn MatrixExec) -> Result<(), EditError> {
    let mut scratch = DijkstraScratch::default();
    let stops = stops_by_node(s);
    let list = closest_stops_from(&s.graph, &stops, &mut scratch, poi.snapped, s.config.n_closest);
    s.walk.pois.insert(poi.id.clone(), list);
    let residences = StopsByNode::new(s.residences.values().map(|r| (r.id.as_str(), r.snapped)));
    for (r, _) in within(&s.graph, &residences, &mut scratch, poi.snapped, meters_to_mm(s.config.home_radius_m)) {
        s.home_areas.entry(r).or_default().insert(poi.id.clone());
    }
    let id = poi.id.clone();
    s.pois.insert(id.clone(), poi);
    let masks: Vec<_> = s.matrices.keys().copied().collect();
    for m in masks {
        let col = s.poi_column(m, &id, exec)?;
        s.matrices.get_mut(&m).expect("mask").matrix.set_poi_column(&id, &col);
    }
    Ok(())
}

fn remove_poi(s: &mut Snapshot, id: &str) {
    s.pois.remove(id);
    s.walk.pois.remove(id);
    for area in s.home_areas.values_mut() {
        area.remove(id);
    }
    for m in s.matrices.values_mut() {
        m.matrix.remove_poi(id);
    }
}

fn insert_residence(s: &mut Snapshot, r: Residence) {
    let mut scratch = DijkstraScratch::default();
    let list = closest_stops_from(&s.graph, &stops_by_node(s), &mut scratch, r.snapped, s.config.n_closest);
    if list.is_empty() {
        s.walk.unreachable_residences.insert(r.id.clone());
    }
    s.walk.residences.insert(r.id.clone(), list);
    let pois = StopsByNode::new(s.pois.values().map(|p| (p.id.as_str(), p.snapped)));
    let area = within(&s.graph, &pois, &mut scratch, r.snapped, meters_to_mm(s.config.home_radius_m))
        .into_iter()
        .map(|(p, _)| p)
        .collect();
    s.home_areas.insert(r.id.clone(), area);
    s.residences.insert(r.id.clone(), r);
}

fn remove_residence(s: &mut Snapshot, id: &str) {
    s.residences.remove(id);
    s.walk.residences.remove(id);
    s.walk.unreachable_residences.remove(id);
    s.home_areas.remove(id);
}

fn rebuild_transit(s: &mut Snapshot, parts: NetworkParts, exec: &dyn MatrixExec) -> Result<(), EditError> {
    s.network = Arc::new(TransitNetwork::from_parts(parts)?);
    s.rebuild_walk();
    let masks: Vec<_> = s.matrices.keys().copied().collect();
    for m in masks {
        let set = s.compute_matrix(m, exec)?;
        s.matrices.insert(m, set);
    }
    Ok(())
}

/// Residences whose closest stops changed or whose stops have a changed
/// matrix row under any mode mask.
fn stop_dirty(old: &Snapshot, new: &Snapshot) -> BTreeSet<String> {
    let mut changed_stops: BTreeSet<&str> = BTreeSet::new();
    for (mask, set) in &new.matrices {
        let nm = &set.matrix;
        let om = old.matrices.get(mask).map(|m| &m.matrix);
        for (i, sid) in nm.stop_ids.iter().enumerate() {
            let same = om.and_then(|om| om.stop_pos(sid).map(|j| om.stop_row(j) == nm.stop_row(i))).unwrap_or(false);
            if !same {
                changed_stops.insert(sid.as_str());
            }
        }
    }
    let mut dirty = BTreeSet::new();
    for (r, list) in &new.walk.residences {
        let changed_list = old.walk.residences.get(r) != Some(list);
        if changed_list || list.iter().any(|sd| changed_stops.contains(sd.stop_id.as_str())) {
            dirty.insert(r.clone());
        }
    }
    dirty
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::test_support::*;
    use crate::network::TripRecord;
    use alloc::vec;

    fn hm(h: u32, m: u32) -> u32 {
        h * 3600 + m * 60
    }

    fn line_parts() -> NetworkParts {
        let mut t = trip("t1", "L", &["A", "B", "C"], hm(10, 0), 600);
        t.stop_times[1].departure += 30;
        let back = trip("t2", "L", &["C", "B", "A"], hm(11, 0), 600);
        parts(vec![stop("A", 0.0, 0.0), stop("B", 0.0, 0.02), stop("C", 0.0, 0.04)], vec![line("L")], vec![t, back])
    }

    fn times(t: &TripRecord) -> Vec<(&str, u32, u32)> {
        t.stop_times.iter().map(|s| (s.stop_id.as_str(), s.arrival, s.departure)).collect()
    }

    #[test]
    fn midpoint_insertion_zero_dwell() {
        let mut p = line_parts();
        let x = stop("X", 0.0, 0.01);
        let patched = insert_stop_times(&mut p, "L", ("A", "B"), &x, 0, &[]).unwrap();
        assert_eq!(patched, vec!["t1", "t2"]);
        assert_eq!(times(&p.trips[0])[1], ("X", hm(10, 5), hm(10, 5)));
        assert_eq!(times(&p.trips[0])[2], ("B", hm(10, 10), hm(10, 10) + 30));
        // reverse direction: B -> X -> A
        let back = times(&p.trips[1]);
        assert_eq!(back[2], ("X", hm(11, 15), hm(11, 15)));
        assert_eq!(back[3], ("A", hm(11, 20), hm(11, 20)));
    }

    #[test]
    fn dwell_shifts_downstream() {
        let mut p = line_parts();
        let x = stop("X", 0.0, 0.01);
        insert_stop_times(&mut p, "L", ("A", "B"), &x, 60, &[]).unwrap();
        let t = times(&p.trips[0]);
        assert_eq!(t[1], ("X", hm(10, 5), hm(10, 6)));
        assert_eq!(t[2], ("B", hm(10, 11), hm(10, 11) + 30));
        assert_eq!(t[3], ("C", hm(10, 21), hm(10, 21)));
    }

    #[test]
    fn confirmed_times_checked() {
        let mut p = line_parts();
        let x = stop("X", 0.0, 0.01);
        let ok = [ConfirmedTime { trip_id: "t1".into(), arrival: hm(10, 7), departure: hm(10, 8) }];
        insert_stop_times(&mut p, "L", ("A", "B"), &x, 0, &ok).unwrap();
        assert_eq!(times(&p.trips[0])[1], ("X", hm(10, 7), hm(10, 8)));
        let mut p = line_parts();
        let bad = [ConfirmedTime { trip_id: "t1".into(), arrival: hm(10, 30), departure: hm(10, 30) }];
        assert_eq!(
            insert_stop_times(&mut p, "L", ("A", "B"), &x, 0, &bad),
            Err(EditError::NonMonotoneConfirmedTimes("t1".into()))
        );
        let mut p = line_parts();
        assert!(matches!(insert_stop_times(&mut p, "L", ("A", "C"), &x, 0, &[]), Err(EditError::NotConsecutive { .. })));
    }

    #[test]
    fn remove_and_move_stop() {
        let mut p = line_parts();
        remove_stop(&mut p, "B").unwrap();
        assert_eq!(p.trips[0].stop_times.len(), 2);
        assert!(TransitNetwork::from_parts(p.clone()).is_ok());
        assert!(matches!(remove_stop(&mut p, "A"), Err(EditError::RemoveLastStopOfLine { .. })));
        let mut p = line_parts();
        let w = move_stop(&mut p, "B", LatLon::new(0.0, 0.5)).unwrap();
        assert!(!w.is_empty());
        assert_eq!(times(&p.trips[0])[1].1, hm(10, 10));
        let w = move_stop(&mut line_parts(), "B", LatLon::new(0.0, 0.021)).unwrap();
        assert!(w.is_empty());
    }
}
