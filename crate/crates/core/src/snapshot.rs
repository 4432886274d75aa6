//! Immutable dataset snapshot: inputs plus every derived table needed for
//! scoring.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::geo::LatLon;
use crate::mode::ModeMask;
use crate::network::{NetworkError, StopIdx, TransitNetwork};
use crate::places::{validate_categories, Poi, PoiCategory, Residence, Snapped};
use crate::profile::{score_scenario, ProfileError, ScenarioDefinition, ScenarioScores, ScoreInputs};
use crate::router::{poi_column, MatrixBuilder, PoiAccess, RaptorScratch, StopDurations, Timetable, TravelTimeMatrix};
use crate::street::{meters_to_mm, StreetGraph};
use crate::walk::{build_walk_table, home_areas, walk_time_mm, WalkError, WalkTable};

/// Cached stop-to-stop durations are kept when they need at most this many
/// entries.
pub const DURATION_CACHE_LIMIT: usize = 64 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoiInput {
    pub id: String,
    pub category: String,
    pub position: LatLon,
    #[serde(default)]
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidenceInput {
    pub id: String,
    pub position: LatLon,
    pub weight: f64,
}

/// Entity left out of the snapshot, with the reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dropped {
    pub kind: String,
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SnapshotError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Walk(#[from] WalkError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("duplicate {kind} id `{id}`")]
    DuplicateId { kind: &'static str, id: String },
    #[error("invalid categories: {0}")]
    Categories(String),
    #[error("poi `{poi}` has unknown category `{category}`")]
    UnknownCategory { poi: String, category: String },
    #[error("no matrix for mode mask {0}")]
    MissingMatrix(ModeMask),
}

/// Parallel map over matrix origins; the std side plugs in a thread pool.
pub trait MatrixExec: Send + Sync {
    fn map_origins(&self, n: usize, f: &(dyn Fn(usize) -> Vec<u32> + Sync)) -> Vec<Vec<u32>>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl MatrixExec for Sequential {
    fn map_origins(&self, n: usize, f: &(dyn Fn(usize) -> Vec<u32> + Sync)) -> Vec<Vec<u32>> {
        (0..n).map(f).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSet {
    pub matrix: TravelTimeMatrix,
    pub durations: Option<Arc<StopDurations>>,
}

/// Raw inputs from which a snapshot is derived.
#[derive(Debug, Clone)]
pub struct SnapshotInputs {
    pub config: SimConfig,
    pub graph: Arc<StreetGraph>,
    pub network: TransitNetwork,
    pub categories: Vec<PoiCategory>,
    pub pois: Vec<PoiInput>,
    pub residences: Vec<ResidenceInput>,
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub config: SimConfig,
    pub graph: Arc<StreetGraph>,
    pub network: Arc<TransitNetwork>,
    pub categories: Vec<PoiCategory>,
    pub pois: BTreeMap<String, Poi>,
    pub residences: BTreeMap<String, Residence>,
    pub stop_snaps: BTreeMap<String, Snapped>,
    pub walk: WalkTable,
    pub home_areas: BTreeMap<String, BTreeSet<String>>,
    pub matrices: BTreeMap<ModeMask, MatrixSet>,
    pub dropped: Vec<Dropped>,
}

fn dropped(kind: &str, id: &str, reason: &str) -> Dropped {
    Dropped { kind: String::from(kind), id: String::from(id), reason: String::from(reason) }
}

impl Snapshot {
    /// Snaps entities and builds the walking tables; no matrices yet.
    pub fn prepare(inputs: SnapshotInputs) -> Result<Snapshot, SnapshotError> {
        let SnapshotInputs { config, graph, network, categories, pois, residences } = inputs;
        validate_categories(&categories).map_err(SnapshotError::Categories)?;
        let radius = config.snap_radius_m;
        let mut dropped_list = Vec::new();

        let mut stop_snaps = BTreeMap::new();
        for s in &network.stops {
            match graph.snap(s.position, radius) {
                Some(sn) => {
                    stop_snaps.insert(s.id.clone(), sn);
                }
                None => dropped_list.push(dropped("stop", &s.id, "no walkable node within snap radius")),
            }
        }
        let mut poi_map = BTreeMap::new();
        for p in pois {
            if !categories.iter().any(|c| c.id == p.category) {
                return Err(SnapshotError::UnknownCategory { poi: p.id, category: p.category });
            }
            let Some(snapped) = graph.snap(p.position, radius) else {
                dropped_list.push(dropped("poi", &p.id, "no walkable node within snap radius"));
                continue;
            };
            let id = p.id.clone();
            let poi = Poi { id: p.id, category: p.category, position: p.position, name: p.name, snapped };
            if poi_map.insert(id.clone(), poi).is_some() {
                return Err(SnapshotError::DuplicateId { kind: "poi", id });
            }
        }
        let mut res_map = BTreeMap::new();
        for r in residences {
            let Some(snapped) = graph.snap(r.position, radius) else {
                dropped_list.push(dropped("residence", &r.id, "no walkable node within snap radius"));
                continue;
            };
            let id = r.id.clone();
            let res = Residence { id: r.id, position: r.position, snapped, weight: r.weight.max(0.0) };
            if res_map.insert(id.clone(), res).is_some() {
                return Err(SnapshotError::DuplicateId { kind: "residence", id });
            }
        }
        let mut snap = Snapshot {
            config,
            graph,
            network: Arc::new(network),
            categories,
            pois: poi_map,
            residences: res_map,
            stop_snaps,
            walk: WalkTable::default(),
            home_areas: BTreeMap::new(),
            matrices: BTreeMap::new(),
            dropped: dropped_list,
        };
        snap.rebuild_walk();
        snap.home_areas = home_areas(
            &snap.graph,
            snap.residences.values().map(|r| (r.id.as_str(), r.snapped)),
            snap.pois.values().map(|p| (p.id.as_str(), p.snapped)),
            meters_to_mm(snap.config.home_radius_m),
        );
        Ok(snap)
    }

    /// Full pipeline including one matrix per mode mask.
    pub fn build(inputs: SnapshotInputs, masks: &[ModeMask], exec: &dyn MatrixExec) -> Result<Snapshot, SnapshotError> {
        let mut s = Snapshot::prepare(inputs)?;
        for &m in masks {
            s.ensure_matrix(m, exec)?;
        }
        Ok(s)
    }

    pub fn rebuild_walk(&mut self) {
        self.walk = build_walk_table(
            &self.graph,
            self.stop_snaps.iter().map(|(id, s)| (id.as_str(), *s)),
            self.residences.values().map(|r| (r.id.as_str(), r.snapped)),
            self.pois.values().map(|p| (p.id.as_str(), p.snapped)),
            self.config.n_closest,
            meters_to_mm(self.config.transfer_max_m),
        );
    }

    pub fn timetable(&self, mask: ModeMask) -> Result<Timetable, WalkError> {
        Timetable::new(&self.network, &self.walk.transfers, mask, &self.config)
    }

    /// Final-walk access of a POI at the default walking speed.
    pub fn poi_access(&self, poi: &str) -> Result<PoiAccess, WalkError> {
        let mut stops = Vec::new();
        if let Some(list) = self.walk.pois.get(poi) {
            for sd in list {
                if let Some(i) = self.network.stop_index(&sd.stop_id) {
                    stops.push((i, walk_time_mm(sd.distance_mm, self.config.walk_speed)?));
                }
            }
        }
        Ok(PoiAccess { stops })
    }

    pub fn matrix_builder<'a>(&self, tt: &'a Timetable) -> Result<MatrixBuilder<'a>, WalkError> {
        let ids: Vec<String> = self.pois.keys().cloned().collect();
        let mut access = Vec::with_capacity(ids.len());
        for id in &ids {
            access.push(self.poi_access(id)?);
        }
        Ok(MatrixBuilder::new(tt, &self.config.sampling_minutes, ids, access))
    }

    /// Builds the matrix for `mask` (always rebuilt).
    pub fn compute_matrix(&self, mask: ModeMask, exec: &dyn MatrixExec) -> Result<MatrixSet, SnapshotError> {
        let tt = self.timetable(mask)?;
        let b = self.matrix_builder(&tt)?;
        let n = b.stop_count();
        let samples = b.departures.len();
        let keep = n.saturating_mul(n).saturating_mul(samples) <= DURATION_CACHE_LIMIT;
        let row_len = b.poi_ids.len() * 24;
        let outs = exec.map_origins(n, &|s| {
            let mut sc = RaptorScratch::default();
            let d = b.origin_durations(&mut sc, StopIdx(s as u32));
            let mut out = b.row(&d);
            if keep {
                out.extend_from_slice(&d);
            }
            out
        });
        let mut rows = Vec::with_capacity(n);
        let mut data = Vec::new();
        for mut o in outs {
            if keep {
                data.extend_from_slice(&o[row_len..]);
                o.truncate(row_len);
            }
            rows.push(o);
        }
        let durations = keep.then(|| Arc::new(StopDurations { n_stops: n, samples, data }));
        Ok(MatrixSet { matrix: b.assemble(rows), durations })
    }

    pub fn ensure_matrix(&mut self, mask: ModeMask, exec: &dyn MatrixExec) -> Result<(), SnapshotError> {
        if !self.matrices.contains_key(&mask) {
            let m = self.compute_matrix(mask, exec)?;
            self.matrices.insert(mask, m);
        }
        Ok(())
    }

    /// Matrix column of one POI for every origin stop.
    pub fn poi_column(&self, mask: ModeMask, poi: &str, exec: &dyn MatrixExec) -> Result<Vec<[u32; 24]>, SnapshotError> {
        let access = self.poi_access(poi)?;
        let per_hour = self.config.sampling_minutes.len();
        let n = self.network.stops.len();
        if let Some(d) = self.matrices.get(&mask).and_then(|m| m.durations.as_ref()) {
            return Ok((0..n).map(|s| poi_column(d.origin(s), n, per_hour, &access)).collect());
        }
        let tt = self.timetable(mask)?;
        let b = MatrixBuilder::new(&tt, &self.config.sampling_minutes, Vec::new(), Vec::new());
        let cols = exec.map_origins(n, &|s| {
            let mut sc = RaptorScratch::default();
            let d = b.origin_durations(&mut sc, StopIdx(s as u32));
            poi_column(&d, n, per_hour, &access).to_vec()
        });
        Ok(cols.into_iter().map(|c| c.try_into().expect("24 hours")).collect())
    }

    pub fn score_inputs(&self, mask: ModeMask) -> Result<ScoreInputs<'_>, SnapshotError> {
        let m = self.matrices.get(&mask).ok_or(SnapshotError::MissingMatrix(mask))?;
        Ok(ScoreInputs {
            config: &self.config,
            categories: &self.categories,
            pois: &self.pois,
            residences: &self.residences,
            walk: &self.walk,
            home_areas: &self.home_areas,
            matrix: &m.matrix,
        })
    }

    pub fn score(&self, scenario: &ScenarioDefinition) -> Result<ScenarioScores, SnapshotError> {
        Ok(score_scenario(self.score_inputs(scenario.mode_mask)?, scenario)?)
    }

    /// Inputs equivalent to this snapshot, for rebuilding from scratch.
    pub fn to_inputs(&self) -> SnapshotInputs {
        SnapshotInputs {
            config: self.config.clone(),
            graph: self.graph.clone(),
            network: (*self.network).clone(),
            categories: self.categories.clone(),
            pois: self
                .pois
                .values()
                .map(|p| PoiInput { id: p.id.clone(), category: p.category.clone(), position: p.position, name: p.name.clone() })
                .collect(),
            residences: self
                .residences
                .values()
                .map(|r| ResidenceInput { id: r.id.clone(), position: r.position, weight: r.weight })
                .collect(),
        }
    }

    /// Derived tables compare equal (matrices ignore the duration cache).
    pub fn same_tables(&self, other: &Snapshot) -> bool {
        self.pois == other.pois
            && self.residences == other.residences
            && self.stop_snaps == other.stop_snaps
            && self.walk == other.walk
            && self.home_areas == other.home_areas
            && *self.network == *other.network
            && self.matrices.len() == other.matrices.len()
            && self.matrices.iter().zip(&other.matrices).all(|(a, b)| a.0 == b.0 && a.1.matrix == b.1.matrix)
    }
}
