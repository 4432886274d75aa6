//! Edit scripts for the overlay, and the stop insertion sweep.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, OnceLock};

use proptest::prelude::*;
use tscore::config::SimConfig;
use tscore::edit::{score_all, Edit, EntityKind, ScenarioOverlay};
use tscore::geo::BBox;
use tscore::profile::{ScenarioDefinition, ScenarioScores};
use tscore::snapshot::MatrixExec;
use tscore::{LatLon, Snapshot};
use tsim::exec::RayonExec;

pub struct World {
    pub base: Arc<Snapshot>,
    pub scores: Arc<BTreeMap<String, ScenarioScores>>,
    pub scenarios: Arc<Vec<ScenarioDefinition>>,
    pub bbox: BBox,
}

pub fn world() -> &'static World {
    static W: OnceLock<World> = OnceLock::new();
    W.get_or_init(|| {
        let (ds, snap) = super::minicity_snapshot(None);
        let scenarios = Arc::new(ds.scenarios.clone());
        let scores = Arc::new(score_all(&snap, &scenarios).unwrap());
        let bbox = BBox::covering(snap.residences.values().map(|r| r.position).chain(snap.network.stops.iter().map(|s| s.position))).unwrap();
        World { base: Arc::new(snap), scores, scenarios, bbox }
    })
}

pub fn exec() -> Arc<dyn MatrixExec> {
    Arc::new(RayonExec::default())
}

#[derive(Debug, Clone)]
pub enum Seed {
    AddPoi(usize, f64, f64),
    AddResidence(f64, f64, f64),
    AddStop(usize, usize, f64, u32),
    Move(usize, usize, f64, f64),
    Remove(usize, usize),
}

pub fn seed() -> impl Strategy<Value = Seed> {
    let u = || 0.0f64..1.0;
    prop_oneof![
        (0usize..4, u(), u()).prop_map(|(c, x, y)| Seed::AddPoi(c, x, y)),
        (u(), u(), 1.0f64..200.0).prop_map(|(x, y, w)| Seed::AddResidence(x, y, w)),
        (0usize..64, 0usize..64, 0.1f64..0.9, prop_oneof![Just(0u32), Just(45)]).prop_map(|(l, k, t, d)| Seed::AddStop(l, k, t, d)),
        (0usize..3, 0usize..256, u(), u()).prop_map(|(k, i, x, y)| Seed::Move(k, i, x, y)),
        (0usize..3, 0usize..256).prop_map(|(k, i)| Seed::Remove(k, i)),
    ]
}

const KINDS: [EntityKind; 3] = [EntityKind::Poi, EntityKind::Stop, EntityKind::Residence];

fn at(b: &BBox, x: f64, y: f64) -> LatLon {
    LatLon::new(b.min_lat + y * (b.max_lat - b.min_lat), b.min_lon + x * (b.max_lon - b.min_lon))
}

fn pick(s: &Snapshot, kind: EntityKind, i: usize) -> String {
    let ids: Vec<&String> = match kind {
        EntityKind::Poi => s.pois.keys().collect(),
        EntityKind::Stop => s.network.stops.iter().map(|s| &s.id).collect(),
        EntityKind::Residence => s.residences.keys().collect(),
    };
    ids[i % ids.len()].clone()
}

pub fn realize(s: &Snapshot, bbox: &BBox, seed: &Seed, n: usize) -> Edit {
    match *seed {
        Seed::AddPoi(c, x, y) => Edit::AddPoi {
            id: format!("x-poi-{n}"),
            category: s.categories[c % s.categories.len()].id.clone(),
            position: at(bbox, x, y),
            name: String::new(),
        },
        Seed::AddResidence(x, y, w) => Edit::AddResidence { id: format!("x-res-{n}"), position: at(bbox, x, y), weight: w },
        Seed::AddStop(l, k, t, dwell) => {
            let line = &s.network.lines[l % s.network.lines.len()];
            let pat = &line.patterns[k % line.patterns.len()];
            let k = (k / line.patterns.len()) % (pat.len() - 1);
            let (a, b) = (&s.network.stops[pat[k].get()], &s.network.stops[pat[k + 1].get()]);
            let p = LatLon::new(a.position.lat + t * (b.position.lat - a.position.lat), a.position.lon + t * (b.position.lon - a.position.lon));
            Edit::AddStop {
                id: format!("x-stop-{n}"),
                name: String::new(),
                position: p,
                line_id: line.id.clone(),
                between: (a.id.clone(), b.id.clone()),
                dwell_s: dwell,
                confirmed_times: Vec::new(),
            }
        }
        Seed::Move(k, i, x, y) => Edit::Move { entity: KINDS[k], id: pick(s, KINDS[k], i), position: at(bbox, x, y) },
        Seed::Remove(k, i) => Edit::Remove { entity: KINDS[k], id: pick(s, KINDS[k], i) },
    }
}

/// Residences whose value differs in any scenario surface.
pub fn changed(a: &BTreeMap<String, ScenarioScores>, b: &BTreeMap<String, ScenarioScores>) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for (sid, sa) in a {
        let sb = &b[sid];
        let surfaces = sa.groups.iter().map(|(g, x)| (&x.surface, &sb.groups[g].surface)).chain([(&sa.aggregate, &sb.aggregate)]);
        for (x, y) in surfaces {
            for r in x.values.keys().chain(y.values.keys()) {
                if x.values.get(r) != y.values.get(r) {
                    out.insert(r.clone());
                }
            }
        }
    }
    out
}

pub fn surfaces_eq(a: &BTreeMap<String, ScenarioScores>, b: &BTreeMap<String, ScenarioScores>) -> bool {
    a.len() == b.len() && changed(a, b).is_empty()
}

/// Replays seeds through an overlay, checking each step; returns the number
/// of accepted edits.
pub fn run_script(seeds: &[Seed]) -> Result<usize, String> {
    let w = world();
    let exec = exec();
    let mut ov = ScenarioOverlay::new("t".into(), w.base.clone(), w.scores.clone(), w.scenarios.clone(), exec.clone());
    let mut prev = (*w.scores).clone();
    let mut accepted = 0;
    for (n, s) in seeds.iter().enumerate() {
        let e = realize(ov.current(), &w.bbox, s, n);
        let Ok(region) = ov.apply(e.clone()) else { continue };
        accepted += 1;
        let full = ov.full_scores().unwrap();
        let truly = changed(&prev, &full);
        let missing: Vec<_> = truly.difference(&region.residences).collect();
        if !missing.is_empty() {
            return Err(format!("edit {e:?}: dirty set misses {missing:?}"));
        }
        ov.rescore().unwrap();
        if !surfaces_eq(ov.scores(), &full) {
            return Err(format!("edit {e:?}: patched scores differ from full scoring"));
        }
        prev = full;
    }
    let masks: Vec<_> = w.base.matrices.keys().copied().collect();
    let fresh = Snapshot::build(ov.current().to_inputs(), &masks, exec.as_ref()).unwrap();
    if !fresh.same_tables(ov.current()) {
        return Err(format!("tables differ from a rebuild after {seeds:?}"));
    }
    let fresh_scores = score_all(&fresh, &w.scenarios).unwrap();
    if !surfaces_eq(ov.scores(), &fresh_scores) {
        return Err(format!("scores differ from a rebuild after {seeds:?}"));
    }
    Ok(accepted)
}

/// Residences whose weekly time in any (scenario, group) rose.
pub fn increases(base: &BTreeMap<String, ScenarioScores>, after: &BTreeMap<String, ScenarioScores>) -> Vec<String> {
    let mut out = Vec::new();
    for (sid, s) in base {
        for (g, gs) in &s.groups {
            for (r, v) in &gs.surface.values {
                let w = after[sid].groups[g].surface.values[r];
                let worse = match (v, w) {
                    (Some(a), Some(b)) => b > *a,
                    (Some(_), None) => true,
                    _ => false,
                };
                if worse {
                    out.push(format!("{sid}/{g}/{r}: {v:?} -> {w:?}"));
                }
            }
        }
    }
    out
}

/// Every zero-dwell insertion position on every pattern of both lines.
pub fn sweep(cfg: Option<SimConfig>) -> (usize, Vec<String>) {
    let (ds, snap) = super::minicity_snapshot(cfg);
    let scenarios = Arc::new(ds.scenarios.clone());
    let base_scores = Arc::new(score_all(&snap, &scenarios).unwrap());
    let base = Arc::new(snap);
    let mut positions = 0;
    let mut bad = Vec::new();
    for line in &base.network.lines {
        for pat in &line.patterns {
            for k in 0..pat.len() - 1 {
                let (a, b) = (&base.network.stops[pat[k].get()], &base.network.stops[pat[k + 1].get()]);
                let p = LatLon::new((a.position.lat + b.position.lat) / 2.0, (a.position.lon + b.position.lon) / 2.0);
                let mut ov = ScenarioOverlay::new("ins".into(), base.clone(), base_scores.clone(), scenarios.clone(), Arc::new(RayonExec::default()));
                let e = Edit::AddStop {
                    id: "x-new".into(),
                    name: String::new(),
                    position: p,
                    line_id: line.id.clone(),
                    between: (a.id.clone(), b.id.clone()),
                    dwell_s: 0,
                    confirmed_times: Vec::new(),
                };
                ov.apply(e).unwrap();
                ov.rescore().unwrap();
                positions += 1;
                for m in increases(&base_scores, ov.scores()) {
                    bad.push(format!("{} {}-{}: {m}", line.id, a.id, b.id));
                }
            }
        }
    }
    (positions, bad)
}

