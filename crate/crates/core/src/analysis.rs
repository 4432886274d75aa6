//! Hex aggregation, view normalization and difference surfaces.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::geo::{LatLon, LocalProjection};
use crate::places::Residence;
use crate::profile::ScoreSurface;

/// Edge length in metres at level 0.
pub const BASE_EDGE_M: f64 = 3200.0;
pub const MAX_RESOLUTION: u8 = 7;
/// From this map zoom on, residences are shown individually.
pub const RESIDENCE_DETAIL_ZOOM: u8 = 18;

const SQRT3: f64 = 1.732_050_807_568_877_2;

pub fn edge_m(resolution: u8) -> f64 {
    BASE_EDGE_M / (1u32 << resolution) as f64
}

/// Zoom to hex level: zoom 11 and below use level 0, one level per zoom
/// step up to level 7 at zoom 18.
pub fn resolution_for_zoom(zoom: u8) -> u8 {
    zoom.saturating_sub(11).min(MAX_RESOLUTION)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("resolution {0} outside 0..={MAX_RESOLUTION}")]
    Resolution(u8),
    #[error("no served value in viewport")]
    EmptyViewport,
    #[error("residence universes differ ({only_a} only in a, {only_b} only in b)")]
    UniverseMismatch { only_a: usize, only_b: usize },
    #[error("malformed cell id `{0}`")]
    CellId(String),
}

/// Axial coordinates of a flat-top hex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HexCell {
    pub resolution: u8,
    pub q: i64,
    pub r: i64,
}

impl HexCell {
    pub fn id(&self) -> String {
        format!("{}/{}/{}", self.resolution, self.q, self.r)
    }

    pub fn parse(id: &str) -> Result<HexCell, AnalysisError> {
        let bad = || AnalysisError::CellId(String::from(id));
        let mut it = id.split('/');
        let resolution: u8 = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let q = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let r = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        if it.next().is_some() || resolution > MAX_RESOLUTION {
            return Err(bad());
        }
        Ok(HexCell { resolution, q, r })
    }

    /// Center in projected metres.
    pub fn center(&self) -> (f64, f64) {
        let s = edge_m(self.resolution);
        (s * 1.5 * self.q as f64, s * SQRT3 * (self.r as f64 + self.q as f64 / 2.0))
    }

    /// Corners in projected metres, counter-clockwise from east.
    pub fn corners(&self) -> [(f64, f64); 6] {
        let (cx, cy) = self.center();
        let s = edge_m(self.resolution);
        core::array::from_fn(|i| {
            let a = core::f64::consts::PI / 3.0 * i as f64;
            (cx + s * libm::cos(a), cy + s * libm::sin(a))
        })
    }
}

/// Cell containing a projected point.
pub fn hex_of(x: f64, y: f64, resolution: u8) -> HexCell {
    let s = edge_m(resolution);
    let qf = (2.0 / 3.0 * x) / s;
    let rf = (-1.0 / 3.0 * x + SQRT3 / 3.0 * y) / s;
    let (q, r) = cube_round(qf, rf);
    HexCell { resolution, q, r }
}

fn cube_round(qf: f64, rf: f64) -> (i64, i64) {
    let sf = -qf - rf;
    let (mut q, mut r, s) = (libm::round(qf), libm::round(rf), libm::round(sf));
    let (dq, dr, ds) = (libm::fabs(q - qf), libm::fabs(r - rf), libm::fabs(s - sf));
    if dq > dr && dq > ds {
        q = -r - s;
    } else if dr > ds {
        r = -q - s;
    }
    (q as i64, r as i64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    /// Mean over served residences; `None` if none is served.
    pub mean_s: Option<f64>,
    pub count: usize,
    pub served: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HexGrid {
    pub resolution: u8,
    pub edge_m: f64,
    pub cells: BTreeMap<HexCell, CellStats>,
}

impl HexGrid {
    /// Mean over all served residences, recovered from the cells.
    pub fn grand_mean(&self) -> Option<f64> {
        let (mut num, mut den) = (0.0, 0usize);
        for c in self.cells.values() {
            if let Some(m) = c.mean_s {
                num += m * c.served as f64;
                den += c.served;
            }
        }
        (den > 0).then(|| num / den as f64)
    }

    /// Cells whose center lies in the bounding box.
    pub fn cells_in(&self, projection: &LocalProjection, bbox: &crate::geo::BBox) -> impl Iterator<Item = (&HexCell, &CellStats)> {
        let proj = *projection;
        let bbox = *bbox;
        self.cells.iter().filter(move |(c, _)| {
            let (x, y) = c.center();
            bbox.contains(proj.unproject(x, y))
        })
    }
}

/// Bins residences by position. Residences missing from the surface count
/// toward `count` only.
pub fn hex_aggregate<'a, I>(
    surface: &ScoreSurface,
    residences: I,
    projection: &LocalProjection,
    resolution: u8,
) -> Result<HexGrid, AnalysisError>
where
    I: IntoIterator<Item = &'a Residence>,
{
    if resolution > MAX_RESOLUTION {
        return Err(AnalysisError::Resolution(resolution));
    }
    let mut acc: BTreeMap<HexCell, (f64, usize, usize)> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for r in residences {
        if !seen.insert(r.id.as_str()) {
            continue;
        }
        let (x, y) = projection.project(r.position);
        let e = acc.entry(hex_of(x, y, resolution)).or_insert((0.0, 0, 0));
        e.1 += 1;
        if let Some(Some(v)) = surface.values.get(&r.id) {
            e.0 += v;
            e.2 += 1;
        }
    }
    let cells = acc
        .into_iter()
        .map(|(c, (sum, count, served))| (c, CellStats { mean_s: (served > 0).then(|| sum / served as f64), count, served }))
        .collect();
    Ok(HexGrid { resolution, edge_m: edge_m(resolution), cells })
}

/// Polygon ring of a cell in lat/lon, closed.
pub fn cell_polygon(cell: &HexCell, projection: &LocalProjection) -> Vec<LatLon> {
    let mut ring: Vec<LatLon> = cell.corners().iter().map(|&(x, y)| projection.unproject(x, y)).collect();
    ring.push(ring[0]);
    ring
}

/// Affine view scale over the visible values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewScale {
    pub min: f64,
    pub max: f64,
}

impl ViewScale {
    pub fn map(&self, v: f64) -> f64 {
        if self.max > self.min {
            (v - self.min) / (self.max - self.min)
        } else {
            0.5
        }
    }
}

pub fn normalize_view<I: IntoIterator<Item = Option<f64>>>(values: I) -> Result<ViewScale, AnalysisError> {
    let mut scale: Option<ViewScale> = None;
    for v in values.into_iter().flatten() {
        let s = scale.get_or_insert(ViewScale { min: v, max: v });
        s.min = s.min.min(v);
        s.max = s.max.max(v);
    }
    scale.ok_or(AnalysisError::EmptyViewport)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffSurface {
    pub a: String,
    pub b: String,
    pub values: BTreeMap<String, f64>,
    /// Residences Unserved in either operand.
    pub excluded: usize,
}

/// Per-residence `a - b`.
pub fn diff(a: &ScoreSurface, b: &ScoreSurface, a_name: &str, b_name: &str) -> Result<DiffSurface, AnalysisError> {
    let only_a = a.values.keys().filter(|k| !b.values.contains_key(*k)).count();
    let only_b = b.values.keys().filter(|k| !a.values.contains_key(*k)).count();
    if only_a + only_b > 0 {
        return Err(AnalysisError::UniverseMismatch { only_a, only_b });
    }
    let mut values = BTreeMap::new();
    let mut excluded = 0;
    for (id, va) in &a.values {
        match (va, b.values[id]) {
            (Some(x), Some(y)) => {
                values.insert(id.clone(), x - y);
            }
            _ => excluded += 1,
        }
    }
    Ok(DiffSurface { a: String::from(a_name), b: String::from(b_name), values, excluded })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::places::Snapped;
    use crate::street::NodeIdx;
    use proptest::prelude::*;

    fn surface(vals: &[(&str, Option<f64>)]) -> ScoreSurface {
        ScoreSurface {
            scenario_id: "s".into(),
            group: "g".into(),
            values: vals.iter().map(|(k, v)| (String::from(*k), *v)).collect(),
        }
    }

    fn res(id: &str, lat: f64, lon: f64) -> Residence {
        Residence { id: id.into(), position: LatLon::new(lat, lon), snapped: Snapped { node: NodeIdx(0), offset_mm: 0 }, weight: 1.0 }
    }

    fn proj() -> LocalProjection {
        LocalProjection::new(LatLon::new(47.66, 9.17))
    }

    #[test]
    fn two_in_one_cell() {
        let rs = [res("a", 47.66, 9.17), res("b", 47.6601, 9.1701)];
        let s = surface(&[("a", Some(600.0)), ("b", Some(1000.0))]);
        let g = hex_aggregate(&s, &rs, &proj(), 0).unwrap();
        assert_eq!(g.cells.len(), 1);
        let c = g.cells.values().next().unwrap();
        assert_eq!((c.mean_s, c.count, c.served), (Some(800.0), 2, 2));
        let one = hex_aggregate(&surface(&[("a", Some(42.0))]), &rs[..1], &proj(), 5).unwrap();
        assert_eq!(one.cells.values().next().unwrap().mean_s, Some(42.0));
        assert!(matches!(hex_aggregate(&s, &rs, &proj(), 8), Err(AnalysisError::Resolution(8))));
    }

    #[test]
    fn normalize_examples() {
        let v = normalize_view([Some(600.0), None, Some(1000.0)]).unwrap();
        assert_eq!(v.map(800.0), 0.5);
        assert_eq!(v.map(600.0), 0.0);
        assert_eq!(v.map(1000.0), 1.0);
        let d = normalize_view([Some(7.0), Some(7.0)]).unwrap();
        assert_eq!(d.map(7.0), 0.5);
        assert_eq!(normalize_view([None]), Err(AnalysisError::EmptyViewport));
    }

    #[test]
    fn diff_examples() {
        let a = surface(&[("x", Some(10.0)), ("y", None), ("z", Some(3.0))]);
        let b = surface(&[("x", Some(4.0)), ("y", Some(1.0)), ("z", Some(3.0))]);
        let d = diff(&a, &b, "a", "b").unwrap();
        assert_eq!(d.values, BTreeMap::from([("x".into(), 6.0), ("z".into(), 0.0)]));
        assert_eq!(d.excluded, 1);
        let c = surface(&[("x", Some(1.0))]);
        assert_eq!(diff(&a, &c, "a", "c"), Err(AnalysisError::UniverseMismatch { only_a: 2, only_b: 0 }));
    }

    #[test]
    fn cell_id_roundtrip() {
        let c = HexCell { resolution: 3, q: -4, r: 7 };
        assert_eq!(HexCell::parse(&c.id()).unwrap(), c);
        assert!(HexCell::parse("9/0/0").is_err());
        assert!(HexCell::parse("1/0").is_err());
        assert_eq!(resolution_for_zoom(3), 0);
        assert_eq!(resolution_for_zoom(14), 3);
        assert_eq!(resolution_for_zoom(20), 7);
        assert_eq!(edge_m(7), 25.0);
    }

    /// Point-in-polygon over the six corners.
    fn inside(cell: &HexCell, x: f64, y: f64) -> bool {
        let c = cell.corners();
        (0..6).all(|i| {
            let (ax, ay) = c[i];
            let (bx, by) = c[(i + 1) % 6];
            (bx - ax) * (y - ay) - (by - ay) * (x - ax) >= -1e-9
        })
    }

    proptest! {
        #[test]
        fn point_lies_in_its_hex(x in -20_000.0f64..20_000.0, y in -20_000.0f64..20_000.0, res in 0u8..=7) {
            let c = hex_of(x, y, res);
            prop_assert!(inside(&c, x, y));
        }

        #[test]
        fn diff_antisymmetric(vals in proptest::collection::vec((proptest::option::of(0.0f64..1e5), proptest::option::of(0.0f64..1e5)), 1..40)) {
            let ids: Vec<String> = (0..vals.len()).map(|i| format!("r{i}")).collect();
            let a = ScoreSurface { scenario_id: "a".into(), group: "g".into(), values: ids.iter().cloned().zip(vals.iter().map(|v| v.0)).collect() };
            let b = ScoreSurface { scenario_id: "b".into(), group: "g".into(), values: ids.iter().cloned().zip(vals.iter().map(|v| v.1)).collect() };
            let ab = diff(&a, &b, "a", "b").unwrap();
            let ba = diff(&b, &a, "b", "a").unwrap();
            prop_assert_eq!(ab.excluded, ba.excluded);
            for (k, v) in &ab.values {
                prop_assert_eq!(*v, -ba.values[k]);
            }
            prop_assert!(diff(&a, &a, "a", "a").unwrap().values.values().all(|v| *v == 0.0));
        }

        #[test]
        fn normalize_monotone(vals in proptest::collection::vec(-1e6f64..1e6, 1..50)) {
            let s = normalize_view(vals.iter().map(|v| Some(*v))).unwrap();
            let mut sorted = vals.clone();
            sorted.sort_by(f64::total_cmp);
            prop_assert_eq!(s.min, sorted[0]);
            prop_assert_eq!(s.max, *sorted.last().unwrap());
            for w in sorted.windows(2) {
                prop_assert!(s.map(w[0]) <= s.map(w[1]));
            }
            if s.max > s.min {
                prop_assert_eq!(s.map(s.min), 0.0);
                prop_assert_eq!(s.map(s.max), 1.0);
            }
        }

        #[test]
        fn order_invariant_and_grand_mean(pts in proptest::collection::vec((47.60f64..47.72, 9.10f64..9.24, proptest::option::of(0.0f64..5000.0)), 1..60), res in 0u8..=7) {
            let rs: Vec<Residence> = pts.iter().enumerate().map(|(i, p)| res_at(i, p.0, p.1)).collect();
            let s = ScoreSurface { scenario_id: "s".into(), group: "g".into(), values: pts.iter().enumerate().map(|(i, p)| (format!("r{i}"), p.2)).collect() };
            let g = hex_aggregate(&s, &rs, &proj(), res).unwrap();
            let rev = hex_aggregate(&s, rs.iter().rev(), &proj(), res).unwrap();
            prop_assert_eq!(g.cells.keys().collect::<Vec<_>>(), rev.cells.keys().collect::<Vec<_>>());
            let served: Vec<f64> = pts.iter().filter_map(|p| p.2).collect();
            if served.is_empty() {
                prop_assert!(g.grand_mean().is_none());
            } else {
                let m = served.iter().sum::<f64>() / served.len() as f64;
                let gm = g.grand_mean().unwrap();
                prop_assert!((gm - m).abs() <= 1e-9 * m.abs().max(1.0));
            }
            prop_assert_eq!(g.cells.values().map(|c| c.count).sum::<usize>(), rs.len());
        }
    }

    fn res_at(i: usize, lat: f64, lon: f64) -> Residence {
        let mut r = res("", lat, lon);
        r.id = format!("r{i}");
        r
    }

    #[test]
    fn polygon_closed() {
        let c = HexCell { resolution: 2, q: 1, r: -1 };
        let ring = cell_polygon(&c, &proj());
        assert_eq!(ring.len(), 7);
        assert_eq!(ring[0], ring[6]);
    }
}
