//! Walking distances on the street graph: the N closest stops of every
//! residence and POI, stop-to-stop transfers and residence home areas.

use alloc::collections::{BTreeMap, BTreeSet, BinaryHeap};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Reverse;
use serde::{Deserialize, Serialize};

use crate::places::Snapped;
use crate::street::{DijkstraScratch, NodeIdx, StreetGraph};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StopDist {
    pub distance_mm: u64,
    pub stop_id: String,
}

impl StopDist {
    pub fn distance_m(&self) -> f64 {
        self.distance_mm as f64 / 1000.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WalkError {
    #[error("walking speed must be positive")]
    NonPositiveSpeed,
}

/// Seconds to walk `distance_m` at `speed` m/s, rounded up.
pub fn walk_time(distance_m: f64, speed: f64) -> Result<u32, WalkError> {
    if !(speed > 0.0) || !speed.is_finite() {
        return Err(WalkError::NonPositiveSpeed);
    }
    Ok(libm::ceil(distance_m / speed) as u32)
}

/// [`walk_time`] for a millimeter distance.
pub fn walk_time_mm(distance_mm: u64, speed: f64) -> Result<u32, WalkError> {
    walk_time(distance_mm as f64 / 1000.0, speed)
}

/// Walking access tables.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WalkTable {
    pub n: usize,
    /// Residence id -> up to `n` closest stops, ascending by (distance, stop id).
    pub residences: BTreeMap<String, Vec<StopDist>>,
    pub pois: BTreeMap<String, Vec<StopDist>>,
    /// Residences whose component holds no stop; excluded from scoring.
    pub unreachable_residences: BTreeSet<String>,
    /// Stop id -> other stops within the transfer threshold.
    pub transfers: BTreeMap<String, Vec<StopDist>>,
}

impl WalkTable {
    /// Closest stop distance per residence; unreachable residences omitted.
    pub fn nearest_stop_distance(&self) -> BTreeMap<&str, u64> {
        self.residences
            .iter()
            .filter_map(|(id, l)| l.first().map(|s| (id.as_str(), s.distance_mm)))
            .collect()
    }
}

/// Snapped stops grouped by street node, each group sorted by stop id.
#[derive(Debug, Clone, Default)]
pub struct StopsByNode {
    by_node: BTreeMap<NodeIdx, Vec<(String, u64)>>,
}

impl StopsByNode {
    pub fn new<'a, I>(stops: I) -> StopsByNode
    where
        I: IntoIterator<Item = (&'a str, Snapped)>,
    {
        let mut by_node: BTreeMap<NodeIdx, Vec<(String, u64)>> = BTreeMap::new();
        for (id, s) in stops {
            by_node.entry(s.node).or_default().push((String::from(id), s.offset_mm));
        }
        for v in by_node.values_mut() {
            v.sort();
        }
        StopsByNode { by_node }
    }

    pub fn at(&self, n: NodeIdx) -> &[(String, u64)] {
        self.by_node.get(&n).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.by_node.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_node.is_empty()
    }

    fn sorted_ids(&self) -> Vec<(&str, NodeIdx, u64)> {
        let mut v: Vec<(&str, NodeIdx, u64)> = self
            .by_node
            .iter()
            .flat_map(|(n, l)| l.iter().map(move |(id, off)| (id.as_str(), *n, *off)))
            .collect();
        v.sort();
        v
    }
}

/// For every routable node, its `n` closest stops as `(distance_mm, stop rank)`
/// ordered lexicographically, where rank orders stop ids. One multi-source
/// search where each node accepts up to `n` distinct sources.
fn k_nearest_labels(graph: &StreetGraph, stops: &StopsByNode, n: usize) -> (Vec<String>, Vec<Vec<(u64, u32)>>) {
    let ids = stops.sorted_ids();
    let names: Vec<String> = ids.iter().map(|(id, _, _)| String::from(*id)).collect();
    let mut labels: Vec<Vec<(u64, u32)>> = vec![Vec::new(); graph.node_count()];
    let mut heap = BinaryHeap::new();
    for (rank, (_, node, off)) in ids.iter().enumerate() {
        heap.push(Reverse((*off, rank as u32, *node)));
    }
    while let Some(Reverse((d, rank, v))) = heap.pop() {
        let lab = &mut labels[v.get()];
        if lab.len() >= n || lab.iter().any(|(_, r)| *r == rank) {
            continue;
        }
        lab.push((d, rank));
        for &(m, w) in graph.neighbors(v) {
            let ml = &labels[m.get()];
            if ml.len() < n && !ml.iter().any(|(_, r)| *r == rank) {
                heap.push(Reverse((d + w, rank, m)));
            }
        }
    }
    (names, labels)
}

/// The `n` closest stops of each entity by network walking distance,
/// including both snap offsets. Entities without any reachable stop get an
/// empty list.
pub fn closest_stops<'a, I>(graph: &StreetGraph, stops: &StopsByNode, entities: I, n: usize) -> BTreeMap<String, Vec<StopDist>>
where
    I: IntoIterator<Item = (&'a str, Snapped)>,
{
    let (names, labels) = k_nearest_labels(graph, stops, n.max(1));
    entities
        .into_iter()
        .map(|(id, s)| {
            let list = labels[s.node.get()]
                .iter()
                .map(|(d, r)| StopDist { distance_mm: d + s.offset_mm, stop_id: names[*r as usize].clone() })
                .collect();
            (String::from(id), list)
        })
        .collect()
}

/// Closest stops of a single entity by a bounded single-source search.
pub fn closest_stops_from(
    graph: &StreetGraph,
    stops: &StopsByNode,
    scratch: &mut DijkstraScratch,
    from: Snapped,
    n: usize,
) -> Vec<StopDist> {
    let n = n.max(1);
    let mut best: Vec<StopDist> = Vec::new();
    graph.dijkstra(scratch, &[(from.node, from.offset_mm)], u64::MAX, |v, d| {
        if best.len() == n && d > best[n - 1].distance_mm {
            return false;
        }
        for (id, off) in stops.at(v) {
            let cand = StopDist { distance_mm: d + off, stop_id: id.clone() };
            let pos = best.partition_point(|b| b < &cand);
            if pos < n {
                best.insert(pos, cand);
                best.truncate(n);
            }
        }
        true
    });
    best
}

/// Walking transfers from every stop to other stops within `max_mm`.
pub fn stop_transfers(graph: &StreetGraph, stops: &StopsByNode, max_mm: u64) -> BTreeMap<String, Vec<StopDist>> {
    let mut scratch = DijkstraScratch::default();
    let mut out = BTreeMap::new();
    for (id, node, off) in stops.sorted_ids() {
        out.insert(String::from(id), transfers_from(graph, stops, &mut scratch, id, Snapped { node, offset_mm: off }, max_mm));
    }
    out
}

pub fn transfers_from(
    graph: &StreetGraph,
    stops: &StopsByNode,
    scratch: &mut DijkstraScratch,
    id: &str,
    from: Snapped,
    max_mm: u64,
) -> Vec<StopDist> {
    let mut list = Vec::new();
    graph.dijkstra(scratch, &[(from.node, from.offset_mm)], max_mm, |v, d| {
        for (other, o) in stops.at(v) {
            if other != id && d + o <= max_mm {
                list.push(StopDist { distance_mm: d + o, stop_id: other.clone() });
            }
        }
        true
    });
    list.sort();
    list
}

/// Residence id -> POIs within `radius_mm` network distance.
pub fn home_areas<'a, R, P>(graph: &StreetGraph, residences: R, pois: P, radius_mm: u64) -> BTreeMap<String, BTreeSet<String>>
where
    R: IntoIterator<Item = (&'a str, Snapped)>,
    P: IntoIterator<Item = (&'a str, Snapped)>,
{
    let res_by_node = StopsByNode::new(residences);
    let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (id, _, _) in res_by_node.sorted_ids() {
        out.insert(String::from(id), BTreeSet::new());
    }
    let mut scratch = DijkstraScratch::default();
    for (pid, ps) in pois {
        for (rid, _) in within(graph, &res_by_node, &mut scratch, ps, radius_mm) {
            out.entry(rid).or_default().insert(String::from(pid));
        }
    }
    out
}

/// Entities of `targets` within `radius_mm` of `from`, with distances.
pub fn within(graph: &StreetGraph, targets: &StopsByNode, scratch: &mut DijkstraScratch, from: Snapped, radius_mm: u64) -> Vec<(String, u64)> {
    let mut hits = Vec::new();
    graph.dijkstra(scratch, &[(from.node, from.offset_mm)], radius_mm, |v, d| {
        for (id, o) in targets.at(v) {
            if d + o <= radius_mm {
                hits.push((id.clone(), d + o));
            }
        }
        true
    });
    hits.sort();
    hits
}

/// Shortest walking path between two nodes, with its length in mm.
pub fn shortest_path(graph: &StreetGraph, from: NodeIdx, to: NodeIdx) -> Option<(Vec<NodeIdx>, u64)> {
    let mut dist = vec![u64::MAX; graph.node_count()];
    let mut pred = vec![u32::MAX; graph.node_count()];
    let mut heap = BinaryHeap::new();
    dist[from.get()] = 0;
    heap.push(Reverse((0u64, from)));
    while let Some(Reverse((d, v))) = heap.pop() {
        if d > dist[v.get()] {
            continue;
        }
        if v == to {
            break;
        }
        for &(m, w) in graph.neighbors(v) {
            if d + w < dist[m.get()] {
                dist[m.get()] = d + w;
                pred[m.get()] = v.0;
                heap.push(Reverse((d + w, m)));
            }
        }
    }
    if dist[to.get()] == u64::MAX {
        return None;
    }
    let mut path = vec![to];
    let mut cur = to;
    while cur != from {
        cur = NodeIdx(pred[cur.get()]);
        path.push(cur);
    }
    path.reverse();
    Some((path, dist[to.get()]))
}

/// Builds the residence and POI tables plus transfers.
pub fn build_walk_table<'a, R, P, S>(
    graph: &StreetGraph,
    stop_snaps: S,
    residences: R,
    pois: P,
    n: usize,
    transfer_max_mm: u64,
) -> WalkTable
where
    R: IntoIterator<Item = (&'a str, Snapped)>,
    P: IntoIterator<Item = (&'a str, Snapped)>,
    S: IntoIterator<Item = (&'a str, Snapped)>,
{
    let stops = StopsByNode::new(stop_snaps);
    let residences = closest_stops(graph, &stops, residences, n);
    let pois = closest_stops(graph, &stops, pois, n);
    let unreachable_residences = residences.iter().filter(|(_, l)| l.is_empty()).map(|(id, _)| id.clone()).collect();
    let transfers = stop_transfers(graph, &stops, transfer_max_mm);
    WalkTable { n, residences, pois, unreachable_residences, transfers }
}
