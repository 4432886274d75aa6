//! Reference implementations written against the model definitions only:
//! a time-expanded Dijkstra for routing, a matrix built from it, a
//! monolithic profile evaluator and a brute-force hex binning.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use tscore::config::SimConfig;
use tscore::network::TransitNetwork;
use tscore::places::{Sampling, SamplingKind};
use tscore::profile::{ScenarioDefinition, ScoreSurface};
use tscore::walk::StopDist;
use tscore::{ModeMask, Snapshot};

use super::walk_s;

const DAY: i64 = 86_400;

/// One vehicle run per (trip, day offset): `(arrival, departure, stop)`.
struct Run {
    times: Vec<(i64, i64, usize)>,
}

pub struct TimeExpanded {
    n: usize,
    runs: Vec<Run>,
    /// Departure events per stop, sorted: `(departure, run, position)`.
    deps: Vec<Vec<(i64, usize, usize)>>,
    walks: Vec<Vec<(usize, i64)>>,
    change: i64,
    max_rides: usize,
    horizon: i64,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Node {
    /// On board `run`, arriving at `pos`.
    Ride(usize, usize),
    /// Ready to board at a stop.
    Ready(usize),
}

impl TimeExpanded {
    pub fn new(net: &TransitNetwork, transfers: &BTreeMap<String, Vec<StopDist>>, mask: ModeMask, cfg: &SimConfig) -> Self {
        let n = net.stops.len();
        let idx = |id: &str| net.stops.iter().position(|s| s.id == id);
        let mut walks = vec![Vec::new(); n];
        for (from, list) in transfers {
            let Some(a) = idx(from) else { continue };
            for sd in list {
                if let Some(b) = idx(&sd.stop_id) {
                    walks[a].push((b, walk_s(sd.distance_mm, cfg.walk_speed) as i64));
                }
            }
        }
        let mut runs = Vec::new();
        for t in &net.trips {
            if !mask.contains(net.lines[t.line.0 as usize].mode) {
                continue;
            }
            for d in -1i32..=2 {
                if !t.service_days.contains(net.reference_day.offset(d)) {
                    continue;
                }
                let shift = d as i64 * DAY;
                let times: Vec<_> = t.stop_times.iter().map(|st| (st.arrival as i64 + shift, st.departure as i64 + shift, st.stop.get())).collect();
                if times.last().is_some_and(|l| l.0 >= 0) {
                    runs.push(Run { times });
                }
            }
        }
        let mut deps = vec![Vec::new(); n];
        for (ri, r) in runs.iter().enumerate() {
            for (pos, &(_, dep, s)) in r.times.iter().enumerate().take(r.times.len().saturating_sub(1)) {
                deps[s].push((dep, ri, pos));
            }
        }
        for d in &mut deps {
            d.sort();
        }
        TimeExpanded {
            n,
            runs,
            deps,
            walks,
            change: cfg.min_change_s as i64,
            max_rides: cfg.max_transfers + 1,
            horizon: cfg.horizon_s as i64,
        }
    }

    pub fn stop_count(&self) -> usize {
        self.n
    }

    /// Earliest-arrival durations from `origin` departing at `t0` to every stop.
    pub fn durations(&self, origin: usize, t0: u32) -> Vec<Option<u32>> {
        let t0 = t0 as i64;
        let limit = t0 + self.horizon;
        let mut stand = vec![i64::MAX; self.n];
        let mut ready_done = vec![usize::MAX; self.n];
        let mut ride_done: Vec<Vec<usize>> = self.runs.iter().map(|r| vec![usize::MAX; r.times.len()]).collect();
        let mut heap = BinaryHeap::new();

        stand[origin] = t0;
        heap.push(Reverse((t0, 0usize, Node::Ready(origin))));
        for &(p, w) in &self.walks[origin] {
            let t = t0 + w;
            if t <= limit {
                stand[p] = stand[p].min(t);
                heap.push(Reverse((t, 0, Node::Ready(p))));
            }
        }

        while let Some(Reverse((t, rides, node))) = heap.pop() {
            match node {
                Node::Ready(s) => {
                    if t > limit || ready_done[s] <= rides {
                        continue;
                    }
                    ready_done[s] = rides;
                    if rides >= self.max_rides {
                        continue;
                    }
                    let list = &self.deps[s];
                    let from = list.partition_point(|e| e.0 < t);
                    for &(dep, run, pos) in &list[from..] {
                        if dep > limit {
                            break;
                        }
                        let a = self.runs[run].times[pos + 1].0;
                        if a <= limit && ride_done[run][pos + 1] > rides + 1 {
                            heap.push(Reverse((a, rides + 1, Node::Ride(run, pos + 1))));
                        }
                    }
                }
                Node::Ride(run, pos) => {
                    if ride_done[run][pos] <= rides {
                        continue;
                    }
                    ride_done[run][pos] = rides;
                    let times = &self.runs[run].times;
                    let q = times[pos].2;
                    stand[q] = stand[q].min(t);
                    heap.push(Reverse((t + self.change, rides, Node::Ready(q))));
                    for &(p, w) in &self.walks[q] {
                        if t + w <= limit {
                            stand[p] = stand[p].min(t + w);
                        }
                        heap.push(Reverse((t + w.max(self.change), rides, Node::Ready(p))));
                    }
                    if pos + 1 < times.len() {
                        let a = times[pos + 1].0;
                        if a <= limit {
                            heap.push(Reverse((a, rides, Node::Ride(run, pos + 1))));
                        }
                    }
                }
            }
        }
        stand.iter().map(|&a| (a != i64::MAX).then(|| (a - t0) as u32)).collect()
    }
}

/// Matrix reference: per (stop, POI, hour) the exact mean over reachable
/// samples and its half-up rounding.
pub struct MatrixOracle {
    pub stop_ids: Vec<String>,
    pub poi_ids: Vec<String>,
    pub exact: Vec<[Option<f64>; 24]>,
    pub rounded: Vec<u32>,
}

impl MatrixOracle {
    pub fn build(snap: &Snapshot, mask: ModeMask) -> MatrixOracle {
        let cfg = &snap.config;
        let te = TimeExpanded::new(&snap.network, &snap.walk.transfers, mask, cfg);
        let n = te.stop_count();
        let stop_ids: Vec<String> = snap.network.stops.iter().map(|s| s.id.clone()).collect();
        let poi_ids: Vec<String> = snap.pois.keys().cloned().collect();
        let access: Vec<Vec<(usize, u64)>> = poi_ids
            .iter()
            .map(|p| {
                snap.walk.pois.get(p).into_iter().flatten()
                    .filter_map(|sd| stop_ids.iter().position(|s| *s == sd.stop_id).map(|i| (i, walk_s(sd.distance_mm, cfg.walk_speed) as u64)))
                    .collect()
            })
            .collect();
        let mut exact = Vec::with_capacity(n * poi_ids.len());
        let mut rounded = Vec::with_capacity(n * poi_ids.len() * 24);
        for s in 0..n {
            let samples: Vec<Vec<Option<u32>>> = (0..24u32)
                .flat_map(|h| cfg.sampling_minutes.iter().map(move |m| h * 3600 + m * 60))
                .map(|t| te.durations(s, t))
                .collect();
            for acc in &access {
                let mut ex = [None; 24];
                for h in 0..24 {
                    let vals: Vec<u64> = (0..cfg.sampling_minutes.len())
                        .filter_map(|m| {
                            let d = &samples[h * cfg.sampling_minutes.len() + m];
                            acc.iter().filter_map(|&(q, w)| d[q].map(|x| x as u64 + w)).min()
                        })
                        .collect();
                    let c = vals.len() as u64;
                    let sum: u64 = vals.iter().sum();
                    if c == 0 {
                        rounded.push(u32::MAX);
                    } else {
                        ex[h] = Some(sum as f64 / c as f64);
                        rounded.push(((sum + c / 2) / c) as u32);
                    }
                }
                exact.push(ex);
            }
        }
        MatrixOracle { stop_ids, poi_ids, exact, rounded }
    }

    fn hours(&self, stop: usize, poi: usize) -> &[Option<f64>; 24] {
        &self.exact[stop * self.poi_ids.len() + poi]
    }
}

/// Weekly times and per-entry times of every residence for one scenario,
/// computed directly from the exact matrix means.
pub struct ProfileBrute {
    /// group -> residence -> (weekly, per-entry times)
    pub groups: BTreeMap<String, BTreeMap<String, (Option<f64>, Vec<Option<f64>>)>>,
    pub aggregate: BTreeMap<String, Option<f64>>,
}

pub fn brute_profile(snap: &Snapshot, mx: &MatrixOracle, sc: &ScenarioDefinition) -> ProfileBrute {
    let cfg = &snap.config;
    let legs = cfg.walk_legs_per_visit as f64;
    let mut groups = BTreeMap::new();
    for prof in &sc.profiles {
        let speed = prof.walking_speed.unwrap_or(cfg.walk_speed);
        let mut per_res = BTreeMap::new();
        for (rid, _) in &snap.residences {
            let access: Vec<(usize, f64)> = snap.walk.residences.get(rid).into_iter().flatten()
                .filter_map(|sd| mx.stop_ids.iter().position(|s| *s == sd.stop_id).map(|i| (i, walk_s(sd.distance_mm, speed) as f64)))
                .collect();
            let mut times = Vec::new();
            let (mut num, mut den) = (0.0, 0.0);
            for e in &prof.entries {
                let cat = snap.categories.iter().find(|c| c.id == e.category).unwrap();
                let sampling = e.sampling.clone().unwrap_or(match cat.sampling {
                    SamplingKind::Near => Sampling::Near,
                    SamplingKind::Random => Sampling::Random,
                    SamplingKind::Specific => unreachable!(),
                });
                let expect = |p: usize, s: usize| -> Option<f64> {
                    let (mut a, mut b) = (0.0, 0.0);
                    for (h, v) in mx.hours(s, p).iter().enumerate() {
                        let f = e.hourly_weights[h];
                        if let (true, Some(v)) = (f > 0.0, v) {
                            a += f * v;
                            b += f;
                        }
                    }
                    (b > 0.0).then(|| a / b)
                };
                let pos = |id: &str| mx.poi_ids.iter().position(|p| p == id).unwrap();
                let sampled: Vec<usize> = if e.visits_per_week <= 0.0 || access.is_empty() {
                    Vec::new()
                } else {
                    match &sampling {
                        Sampling::Specific(id) => vec![pos(id)],
                        Sampling::Near => {
                            let mut costs: Vec<(f64, String)> = snap.pois.values()
                                .filter(|p| p.category == cat.id)
                                .filter_map(|p| {
                                    let i = pos(&p.id);
                                    access.iter().filter_map(|&(s, w)| expect(i, s).map(|x| legs * w + x)).reduce(f64::min).map(|c| (c, p.id.clone()))
                                })
                                .collect();
                            costs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                            costs.into_iter().take(e.near_k).map(|(_, id)| pos(&id)).collect()
                        }
                        Sampling::Random => match snap.home_areas.get(rid) {
                            Some(home) => snap.pois.values().filter(|p| p.category == cat.id && home.contains(&p.id)).map(|p| pos(&p.id)).collect(),
                            None => Vec::new(),
                        },
                    }
                };
                let mut best: Option<f64> = None;
                for &(s, w) in &access {
                    let vals: Vec<f64> = sampled.iter().filter_map(|&p| expect(p, s)).collect();
                    if !vals.is_empty() {
                        let v = legs * w + vals.iter().sum::<f64>() / vals.len() as f64;
                        best = Some(best.map_or(v, |b: f64| b.min(v)));
                    }
                }
                if let Some(v) = best {
                    num += e.visits_per_week * v;
                    den += e.visits_per_week;
                }
                times.push(best);
            }
            per_res.insert(rid.clone(), ((den > 0.0).then(|| num / den), times));
        }
        groups.insert(prof.group_id.clone(), per_res);
    }
    let mut aggregate = BTreeMap::new();
    for rid in snap.residences.keys() {
        let (mut num, mut den) = (0.0, 0.0);
        for (g, res) in &groups {
            if let Some(v) = res[rid].0 {
                let share = sc.demographic_shares.get(g).copied().unwrap_or(0.0);
                num += share * v;
                den += share;
            }
        }
        aggregate.insert(rid.clone(), (den > 0.0).then(|| num / den));
    }
    ProfileBrute { groups, aggregate }
}

/// Cell `(q, r)` of the flat-top lattice with edge `s` whose center is
/// nearest to the point, searched over a neighborhood.
pub fn nearest_hex(x: f64, y: f64, s: f64) -> (i64, i64) {
    let q0 = (x / (1.5 * s)).round() as i64;
    let mut best = (f64::INFINITY, 0, 0);
    for q in q0 - 2..=q0 + 2 {
        let r0 = (y / (3f64.sqrt() * s) - q as f64 / 2.0).round() as i64;
        for r in r0 - 2..=r0 + 2 {
            let cx = 1.5 * s * q as f64;
            let cy = 3f64.sqrt() * s * (r as f64 + q as f64 / 2.0);
            let d = (x - cx).powi(2) + (y - cy).powi(2);
            if d < best.0 {
                best = (d, q, r);
            }
        }
    }
    (best.1, best.2)
}

pub fn inside_hex(x: f64, y: f64, cx: f64, cy: f64, s: f64) -> bool {
    let corners: Vec<(f64, f64)> = (0..6)
        .map(|i| {
            let a = std::f64::consts::PI / 3.0 * i as f64;
            (cx + s * a.cos(), cy + s * a.sin())
        })
        .collect();
    (0..6).all(|i| {
        let (ax, ay) = corners[i];
        let (bx, by) = corners[(i + 1) % 6];
        (bx - ax) * (y - ay) - (by - ay) * (x - ax) >= -1e-9
    })
}

/// `(q, r) -> (sum, count, served)` by nearest lattice center, each hit
/// confirmed by a point-in-polygon test.
pub fn brute_bins(snap: &Snapshot, surface: &ScoreSurface, res: u8) -> BTreeMap<(i64, i64), (f64, usize, usize)> {
    let s = 3200.0 / f64::powi(2.0, res as i32);
    let mut out: BTreeMap<(i64, i64), (f64, usize, usize)> = BTreeMap::new();
    for r in snap.residences.values() {
        let (x, y) = snap.graph.projection.project(r.position);
        let (q, rr) = nearest_hex(x, y, s);
        let (cx, cy) = (1.5 * s * q as f64, 3f64.sqrt() * s * (rr as f64 + q as f64 / 2.0));
        assert!(inside_hex(x, y, cx, cy, s), "{} not inside its nearest cell", r.id);
        let e = out.entry((q, rr)).or_default();
        e.1 += 1;
        if let Some(Some(v)) = surface.values.get(&r.id) {
            e.0 += v;
            e.2 += 1;
        }
    }
    out
}
