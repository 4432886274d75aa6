//! Walkable street graph with a grid spatial index and nearest-node snapping.
//!
//! Edge lengths are integer millimeters so that path sums are exact and
//! independent of summation order.

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Reverse;
use serde::{Deserialize, Serialize};

use crate::geo::{haversine_m, LatLon, LocalProjection};
use crate::places::Snapped;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeIdx(pub u32);

impl NodeIdx {
    pub fn get(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreetNode {
    /// Source id (OSM node id).
    pub id: i64,
    pub position: LatLon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreetEdge {
    pub from: NodeIdx,
    pub to: NodeIdx,
    pub length_mm: u64,
    pub walkable: bool,
}

impl StreetEdge {
    pub fn length_m(&self) -> f64 {
        self.length_mm as f64 / 1000.0
    }
}

pub fn meters_to_mm(m: f64) -> u64 {
    libm::round(m * 1000.0).max(0.0) as u64
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StreetError {
    #[error("edge references unknown node {0}")]
    UnknownNode(i64),
    #[error("duplicate node id {0}")]
    DuplicateNode(i64),
    #[error("street graph has no walkable edges")]
    EmptyGraph,
}

/// Uniform grid over projected node positions (CSR buckets).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GridIndex {
    cell_m: f64,
    min_x: f64,
    min_y: f64,
    cols: i64,
    rows: i64,
    offsets: Vec<u32>,
    items: Vec<NodeIdx>,
}

impl GridIndex {
    fn build(points: &[(NodeIdx, (f64, f64))], cell_m: f64) -> GridIndex {
        let (mut min_x, mut min_y, mut max_x, mut max_y) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        if let Some((_, (x, y))) = points.first() {
            min_x = *x;
            max_x = *x;
            min_y = *y;
            max_y = *y;
        }
        for (_, (x, y)) in points {
            min_x = min_x.min(*x);
            min_y = min_y.min(*y);
            max_x = max_x.max(*x);
            max_y = max_y.max(*y);
        }
        let cols = (libm::floor((max_x - min_x) / cell_m) as i64 + 1).max(1);
        let rows = (libm::floor((max_y - min_y) / cell_m) as i64 + 1).max(1);
        let mut grid = GridIndex { cell_m, min_x, min_y, cols, rows, offsets: Vec::new(), items: Vec::new() };
        let ncell = (cols * rows) as usize;
        let mut counts = vec![0u32; ncell + 1];
        let cells: Vec<usize> = points.iter().map(|(_, p)| grid.cell_of(*p)).collect();
        for &c in &cells {
            counts[c + 1] += 1;
        }
        for i in 0..ncell {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut items = vec![NodeIdx(0); points.len()];
        for ((idx, _), &c) in points.iter().zip(&cells) {
            items[fill[c] as usize] = *idx;
            fill[c] += 1;
        }
        grid.offsets = counts;
        grid.items = items;
        grid
    }

    fn coords(&self, (x, y): (f64, f64)) -> (i64, i64) {
        let cx = libm::floor((x - self.min_x) / self.cell_m) as i64;
        let cy = libm::floor((y - self.min_y) / self.cell_m) as i64;
        (cx, cy)
    }

    fn cell_of(&self, p: (f64, f64)) -> usize {
        let (cx, cy) = self.coords(p);
        let cx = cx.clamp(0, self.cols - 1);
        let cy = cy.clamp(0, self.rows - 1);
        (cy * self.cols + cx) as usize
    }

    fn bucket(&self, cx: i64, cy: i64) -> &[NodeIdx] {
        if cx < 0 || cy < 0 || cx >= self.cols || cy >= self.rows {
            return &[];
        }
        let c = (cy * self.cols + cx) as usize;
        &self.items[self.offsets[c] as usize..self.offsets[c + 1] as usize]
    }

    /// Chebyshev ring distance (in cells) from `p`'s cell to the farthest grid cell.
    fn max_ring(&self, p: (f64, f64)) -> i64 {
        let (cx, cy) = self.coords(p);
        let dx = cx.abs().max((self.cols - 1 - cx).abs());
        let dy = cy.abs().max((self.rows - 1 - cy).abs());
        dx.max(dy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreetGraph {
    pub nodes: Vec<StreetNode>,
    pub edges: Vec<StreetEdge>,
    pub projection: LocalProjection,
    adj_offsets: Vec<u32>,
    adj: Vec<(NodeIdx, u64)>,
    component: Vec<u32>,
    component_sizes: Vec<u32>,
    largest: u32,
    routable: Vec<bool>,
    index: GridIndex,
}

/// Raw edge between two source node ids.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawEdge {
    pub from: i64,
    pub to: i64,
    pub walkable: bool,
}

const GRID_CELL_M: f64 = 200.0;
/// Projected distances may understate true distances slightly away from the
/// projection origin; ring termination uses this slack factor.
const RING_SLACK: f64 = 0.9;

impl StreetGraph {
    /// Builds the graph. Edge lengths are the haversine length of the straight
    /// segment between the endpoints.
    pub fn new(mut nodes: Vec<StreetNode>, raw_edges: &[RawEdge]) -> Result<StreetGraph, StreetError> {
        nodes.sort_by_key(|n| n.id);
        for w in nodes.windows(2) {
            if w[0].id == w[1].id {
                return Err(StreetError::DuplicateNode(w[0].id));
            }
        }
        let lookup = |id: i64| -> Result<NodeIdx, StreetError> {
            nodes
                .binary_search_by_key(&id, |n| n.id)
                .map(|i| NodeIdx(i as u32))
                .map_err(|_| StreetError::UnknownNode(id))
        };
        let mut edges = Vec::with_capacity(raw_edges.len());
        for e in raw_edges {
            let from = lookup(e.from)?;
            let to = lookup(e.to)?;
            let length_mm = meters_to_mm(haversine_m(nodes[from.get()].position, nodes[to.get()].position));
            edges.push(StreetEdge { from, to, length_mm, walkable: e.walkable });
        }
        if !edges.iter().any(|e| e.walkable) {
            return Err(StreetError::EmptyGraph);
        }
        let center = crate::geo::BBox::covering(nodes.iter().map(|n| n.position))
            .map(|b| b.center())
            .unwrap_or(LatLon::new(0.0, 0.0));
        Ok(Self::assemble(nodes, edges, LocalProjection::new(center)))
    }

    /// Rebuilds a graph from persisted nodes and edges, keeping stored lengths.
    pub fn from_stored(mut nodes: Vec<StreetNode>, mut edges: Vec<StreetEdge>) -> Result<StreetGraph, StreetError> {
        let sorted = nodes.windows(2).all(|w| w[0].id < w[1].id);
        if !sorted {
            let ids: Vec<i64> = nodes.iter().map(|n| n.id).collect();
            nodes.sort_by_key(|n| n.id);
            for w in nodes.windows(2) {
                if w[0].id == w[1].id {
                    return Err(StreetError::DuplicateNode(w[0].id));
                }
            }
            let remap = |i: NodeIdx| NodeIdx(nodes.binary_search_by_key(&ids[i.get()], |n| n.id).unwrap() as u32);
            for e in &mut edges {
                e.from = remap(e.from);
                e.to = remap(e.to);
            }
        }
        if let Some(e) = edges.iter().find(|e| e.from.get() >= nodes.len() || e.to.get() >= nodes.len()) {
            return Err(StreetError::UnknownNode(e.from.0.max(e.to.0) as i64));
        }
        if !edges.iter().any(|e| e.walkable) {
            return Err(StreetError::EmptyGraph);
        }
        let center = crate::geo::BBox::covering(nodes.iter().map(|n| n.position))
            .map(|b| b.center())
            .unwrap_or(LatLon::new(0.0, 0.0));
        Ok(Self::assemble(nodes, edges, LocalProjection::new(center)))
    }

    fn assemble(nodes: Vec<StreetNode>, edges: Vec<StreetEdge>, projection: LocalProjection) -> StreetGraph {
        let n = nodes.len();
        let mut deg = vec![0u32; n + 1];
        for e in edges.iter().filter(|e| e.walkable) {
            deg[e.from.get() + 1] += 1;
            deg[e.to.get() + 1] += 1;
        }
        for i in 0..n {
            deg[i + 1] += deg[i];
        }
        let mut fill = deg.clone();
        let mut adj = vec![(NodeIdx(0), 0u64); deg[n] as usize];
        for e in edges.iter().filter(|e| e.walkable) {
            adj[fill[e.from.get()] as usize] = (e.to, e.length_mm);
            fill[e.from.get()] += 1;
            adj[fill[e.to.get()] as usize] = (e.from, e.length_mm);
            fill[e.to.get()] += 1;
        }
        for i in 0..n {
            adj[deg[i] as usize..deg[i + 1] as usize].sort();
        }

        // Union-find over walkable edges.
        let mut parent: Vec<u32> = (0..n as u32).collect();
        fn find(p: &mut [u32], mut x: u32) -> u32 {
            while p[x as usize] != x {
                p[x as usize] = p[p[x as usize] as usize];
                x = p[x as usize];
            }
            x
        }
        for e in edges.iter().filter(|e| e.walkable) {
            let a = find(&mut parent, e.from.0);
            let b = find(&mut parent, e.to.0);
            if a != b {
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                parent[hi as usize] = lo;
            }
        }
        let has_edge: Vec<bool> = (0..n).map(|i| deg[i + 1] > deg[i]).collect();
        let mut comp_of_root = vec![u32::MAX; n];
        let mut component = vec![u32::MAX; n];
        let mut sizes: Vec<u32> = Vec::new();
        for i in 0..n {
            if !has_edge[i] {
                continue;
            }
            let r = find(&mut parent, i as u32) as usize;
            if comp_of_root[r] == u32::MAX {
                comp_of_root[r] = sizes.len() as u32;
                sizes.push(0);
            }
            component[i] = comp_of_root[r];
            sizes[comp_of_root[r] as usize] += 1;
        }
        let mut largest = 0u32;
        for (c, &s) in sizes.iter().enumerate() {
            if s > sizes[largest as usize] {
                largest = c as u32;
            }
        }
        let routable: Vec<bool> = component.iter().map(|&c| c != u32::MAX && c == largest).collect();
        let points: Vec<(NodeIdx, (f64, f64))> = nodes
            .iter()
            .enumerate()
            .filter(|(i, _)| routable[*i])
            .map(|(i, nd)| (NodeIdx(i as u32), projection.project(nd.position)))
            .collect();
        let index = GridIndex::build(&points, GRID_CELL_M);
        StreetGraph {
            nodes,
            edges,
            projection,
            adj_offsets: deg,
            adj,
            component,
            component_sizes: sizes,
            largest,
            routable,
            index,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, idx: NodeIdx) -> &StreetNode {
        &self.nodes[idx.get()]
    }

    pub fn node_by_id(&self, id: i64) -> Option<NodeIdx> {
        self.nodes.binary_search_by_key(&id, |n| n.id).ok().map(|i| NodeIdx(i as u32))
    }

    /// Walkable neighbors of `n` with edge lengths in millimeters.
    pub fn neighbors(&self, n: NodeIdx) -> &[(NodeIdx, u64)] {
        &self.adj[self.adj_offsets[n.get()] as usize..self.adj_offsets[n.get() + 1] as usize]
    }

    /// Number of connected components of the walkable graph.
    pub fn component_count(&self) -> usize {
        self.component_sizes.len()
    }

    pub fn component_sizes(&self) -> &[u32] {
        &self.component_sizes
    }

    /// Whether `n` belongs to the largest walkable component. Only those
    /// nodes are snap targets.
    pub fn is_routable(&self, n: NodeIdx) -> bool {
        self.routable[n.get()]
    }

    pub fn routable_nodes(&self) -> impl Iterator<Item = NodeIdx> + '_ {
        (0..self.nodes.len() as u32).map(NodeIdx).filter(|n| self.routable[n.get()])
    }

    /// Nodes outside the largest component.
    pub fn flagged_nodes(&self) -> impl Iterator<Item = NodeIdx> + '_ {
        (0..self.nodes.len() as u32)
            .map(NodeIdx)
            .filter(|n| self.component[n.get()] != u32::MAX && !self.routable[n.get()])
    }

    pub fn largest_component(&self) -> u32 {
        self.largest
    }

    /// Nearest routable node by haversine distance within `radius_m`; ties go
    /// to the smallest node id.
    pub fn nearest(&self, p: LatLon, radius_m: f64) -> Option<(NodeIdx, f64)> {
        let q = self.projection.project(p);
        let (cx, cy) = self.index.coords(q);
        let max_ring = self.index.max_ring(q);
        let mut best: Option<(f64, NodeIdx)> = None;
        let mut r: i64 = 0;
        loop {
            for (x, y) in ring_cells(cx, cy, r) {
                for &n in self.index.bucket(x, y) {
                    let d = haversine_m(p, self.nodes[n.get()].position);
                    let better = match best {
                        None => true,
                        Some((bd, bn)) => d < bd || (d == bd && n < bn),
                    };
                    if better {
                        best = Some((d, n));
                    }
                }
            }
            // Everything in rings beyond r is at least r cells away.
            let reach = RING_SLACK * (r as f64) * self.index.cell_m;
            match best {
                Some((bd, _)) if bd < reach => break,
                _ => {}
            }
            if reach > radius_m || r > max_ring {
                break;
            }
            r += 1;
        }
        best.filter(|(d, _)| *d <= radius_m).map(|(d, n)| (n, d))
    }

    /// Snaps a position; `None` when no routable node lies within `radius_m`.
    pub fn snap(&self, p: LatLon, radius_m: f64) -> Option<Snapped> {
        self.nearest(p, radius_m).map(|(node, d)| Snapped { node, offset_mm: meters_to_mm(d) })
    }

    /// Linear-scan nearest node, the reference for [`StreetGraph::nearest`].
    pub fn nearest_linear(&self, p: LatLon, radius_m: f64) -> Option<(NodeIdx, f64)> {
        let mut best: Option<(f64, NodeIdx)> = None;
        for n in self.routable_nodes() {
            let d = haversine_m(p, self.nodes[n.get()].position);
            if best.map_or(true, |(bd, bn)| d < bd || (d == bd && n < bn)) {
                best = Some((d, n));
            }
        }
        best.filter(|(d, _)| *d <= radius_m).map(|(d, n)| (n, d))
    }

    /// Single-pass Dijkstra from `sources` (node, initial distance in mm),
    /// calling `visit(node, dist)` as each node settles. The search stops at
    /// `limit_mm` or when `visit` returns `false`.
    pub fn dijkstra<F>(&self, scratch: &mut DijkstraScratch, sources: &[(NodeIdx, u64)], limit_mm: u64, mut visit: F)
    where
        F: FnMut(NodeIdx, u64) -> bool,
    {
        scratch.reset(self.nodes.len());
        let mut heap = BinaryHeap::new();
        for &(n, d) in sources {
            if d <= limit_mm && d < scratch.dist[n.get()] {
                scratch.set(n, d);
                heap.push(Reverse((d, n)));
            }
        }
        while let Some(Reverse((d, n))) = heap.pop() {
            if d > scratch.dist[n.get()] || scratch.done[n.get()] {
                continue;
            }
            scratch.done[n.get()] = true;
            if !visit(n, d) {
                break;
            }
            for &(m, w) in self.neighbors(n) {
                let nd = d + w;
                if nd <= limit_mm && nd < scratch.dist[m.get()] {
                    scratch.set(m, nd);
                    heap.push(Reverse((nd, m)));
                }
            }
        }
    }
}

fn ring_cells(cx: i64, cy: i64, r: i64) -> Vec<(i64, i64)> {
    if r == 0 {
        return alloc::vec![(cx, cy)];
    }
    let mut cells = Vec::with_capacity((8 * r) as usize);
    for x in cx - r..=cx + r {
        cells.push((x, cy - r));
        cells.push((x, cy + r));
    }
    for y in cy - r + 1..cy + r {
        cells.push((cx - r, y));
        cells.push((cx + r, y));
    }
    cells
}

/// Reusable Dijkstra buffers; reset cost is proportional to touched nodes.
#[derive(Debug, Default, Clone)]
pub struct DijkstraScratch {
    dist: Vec<u64>,
    done: Vec<bool>,
    touched: Vec<NodeIdx>,
}

impl DijkstraScratch {
    fn reset(&mut self, n: usize) {
        if self.dist.len() != n {
            self.dist = vec![u64::MAX; n];
            self.done = vec![false; n];
            self.touched.clear();
            return;
        }
        for t in self.touched.drain(..) {
            self.dist[t.get()] = u64::MAX;
            self.done[t.get()] = false;
        }
    }

    fn set(&mut self, n: NodeIdx, d: u64) {
        if self.dist[n.get()] == u64::MAX {
            self.touched.push(n);
        }
        self.dist[n.get()] = d;
    }

    /// Distance of a node settled by the last run, `None` if not reached.
    pub fn distance(&self, n: NodeIdx) -> Option<u64> {
        self.done.get(n.get()).copied().unwrap_or(false).then(|| self.dist[n.get()])
    }
}


#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;
    use proptest::prelude::*;

    const ORIGIN: LatLon = LatLon::new(47.66, 9.17);

    #[test]
    fn square_way_lengths_match_haversine() {
        let pts = [(0.0, 0.0), (100.0, 0.0), (100.0, 100.0), (0.0, 100.0)];
        let nodes: Vec<StreetNode> = pts
            .iter()
            .enumerate()
            .map(|(i, (x, y))| StreetNode { id: i as i64 + 1, position: offset(ORIGIN, *x, *y) })
            .collect();
        let edges: Vec<RawEdge> = (0..4).map(|i| RawEdge { from: i + 1, to: (i + 1) % 4 + 1, walkable: true }).collect();
        let g = StreetGraph::new(nodes.clone(), &edges).unwrap();
        assert_eq!(g.node_count(), 4);
        assert_eq!(g.edges.len(), 4);
        for e in &g.edges {
            let h = haversine_m(g.node(e.from).position, g.node(e.to).position);
            assert!((e.length_m() - h).abs() <= 0.005 * h);
            assert!(g.neighbors(e.from).iter().any(|(m, _)| *m == e.to));
            assert!(g.neighbors(e.to).iter().any(|(m, _)| *m == e.from));
        }
        assert_eq!(g.component_count(), 1);
    }

    #[test]
    fn empty_graph_rejected() {
        let nodes = alloc::vec![StreetNode { id: 1, position: ORIGIN }, StreetNode { id: 2, position: offset(ORIGIN, 10.0, 0.0) }];
        let err = StreetGraph::new(nodes, &[RawEdge { from: 1, to: 2, walkable: false }]).unwrap_err();
        assert_eq!(err, StreetError::EmptyGraph);
    }

    #[test]
    fn snap_exact_node_and_threshold() {
        let g = grid(5, 5, 100.0, ORIGIN);
        let n = g.node_by_id(7).unwrap();
        let (hit, d) = g.nearest(g.node(n).position, 500.0).unwrap();
        assert_eq!((hit, d), (n, 0.0));
        let far = offset(ORIGIN, -600.0 - 1.0, 200.0);
        assert!(g.nearest(far, 500.0).is_none());
    }

    #[test]
    fn components_and_flags() {
        let mut nodes: Vec<StreetNode> = (0..3).map(|i| StreetNode { id: i + 1, position: offset(ORIGIN, i as f64 * 50.0, 0.0) }).collect();
        nodes.push(StreetNode { id: 10, position: offset(ORIGIN, 0.0, 400.0) });
        nodes.push(StreetNode { id: 11, position: offset(ORIGIN, 10.0, 400.0) });
        let edges = [
            RawEdge { from: 1, to: 2, walkable: true },
            RawEdge { from: 2, to: 3, walkable: true },
            RawEdge { from: 10, to: 11, walkable: true },
        ];
        let g = StreetGraph::new(nodes, &edges).unwrap();
        assert_eq!(g.component_count(), 2);
        assert_eq!(g.flagged_nodes().count(), 2);
        // snapping never lands in the small component
        let (hit, _) = g.nearest(offset(ORIGIN, 5.0, 400.0), 500.0).unwrap();
        assert!(g.is_routable(hit));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn grid_index_equals_linear_scan(x in -800.0f64..2800.0, y in -800.0f64..2800.0) {
            let g = grid(12, 12, 170.0, ORIGIN);
            let p = offset(ORIGIN, x, y);
            prop_assert_eq!(g.nearest(p, 500.0), g.nearest_linear(p, 500.0));
        }
    }
}
