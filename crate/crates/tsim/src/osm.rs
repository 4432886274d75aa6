//! OSM XML extraction of the walkable street graph, POIs and residences.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use serde::Serialize;
use tscore::geo::{ring_centroid, BBox, LocalProjection};
use tscore::places::PoiCategory;
use tscore::snapshot::{PoiInput, ResidenceInput};
use tscore::street::{RawEdge, StreetError, StreetGraph, StreetNode};
use tscore::LatLon;

pub const WALKABLE_HIGHWAYS: [&str; 12] = [
    "footway",
    "path",
    "pedestrian",
    "residential",
    "living_street",
    "service",
    "unclassified",
    "tertiary",
    "secondary",
    "primary",
    "steps",
    "track",
];

pub const RESIDENTIAL_BUILDINGS: [&str; 6] = ["residential", "apartments", "house", "detached", "semidetached_house", "terrace"];

#[derive(Debug, thiserror::Error)]
pub enum OsmError {
    #[error("malformed OSM XML at byte {position}: {reason}")]
    MalformedXml { position: u64, reason: String },
    #[error("no walkable ways inside the bounding box")]
    EmptyGraph,
    #[error("bounding box is degenerate")]
    DegenerateBBox,
    #[error("residence override line {line}: {reason}")]
    Override { line: u64, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type Tags = Vec<(String, String)>;

fn tag<'a>(tags: &'a Tags, key: &str) -> Option<&'a str> {
    tags.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

#[derive(Debug, Default)]
struct RawOsm {
    bounds: Option<BBox>,
    nodes: BTreeMap<i64, (LatLon, Tags)>,
    ways: BTreeMap<i64, (Vec<i64>, Tags)>,
    relations: BTreeMap<i64, (Vec<(String, i64, String)>, Tags)>,
}

fn attrs(e: &BytesStart<'_>, pos: u64) -> Result<BTreeMap<String, String>, OsmError> {
    let mut out = BTreeMap::new();
    for a in e.attributes() {
        let a = a.map_err(|err| OsmError::MalformedXml { position: pos, reason: err.to_string() })?;
        let key = String::from_utf8_lossy(a.key.as_ref()).into_owned();
        let val = a
            .unescape_value()
            .map_err(|err| OsmError::MalformedXml { position: pos, reason: err.to_string() })?
            .into_owned();
        out.insert(key, val);
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(a: &BTreeMap<String, String>, key: &str, pos: u64) -> Result<T, OsmError> {
    a.get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| OsmError::MalformedXml { position: pos, reason: format!("missing or invalid `{key}`") })
}

enum Open {
    None,
    Node(i64, LatLon, Tags),
    Way(i64, Vec<i64>, Tags),
    Relation(i64, Vec<(String, i64, String)>, Tags),
}

fn parse(xml: &[u8]) -> Result<RawOsm, OsmError> {
    let mut reader = Reader::from_reader(xml);
    reader.config_mut().trim_text(true);
    let mut buf = Vec::new();
    let mut out = RawOsm::default();
    let mut open = Open::None;
    let mut depth = 0usize;
    let mut seen_root = false;
    loop {
        let pos = reader.buffer_position();
        let ev = reader.read_event_into(&mut buf).map_err(|e| OsmError::MalformedXml { position: pos, reason: e.to_string() })?;
        let (e, empty) = match &ev {
            Event::Start(e) => (Some(e.clone()), false),
            Event::Empty(e) => (Some(e.clone()), true),
            Event::End(_) => {
                depth = depth.saturating_sub(1);
                if depth == 1 {
                    close(&mut out, std::mem::replace(&mut open, Open::None));
                }
                buf.clear();
                continue;
            }
            Event::Eof => break,
            _ => {
                buf.clear();
                continue;
            }
        };
        let e = e.expect("start or empty");
        let name = e.name().as_ref().to_vec();
        if depth == 0 {
            if name != b"osm" {
                return Err(OsmError::MalformedXml { position: pos, reason: "root element is not <osm>".into() });
            }
            seen_root = true;
        }
        let a = attrs(&e, pos)?;
        match (depth, name.as_slice()) {
            (1, b"bounds") => {
                out.bounds = Some(BBox {
                    min_lat: num(&a, "minlat", pos)?,
                    min_lon: num(&a, "minlon", pos)?,
                    max_lat: num(&a, "maxlat", pos)?,
                    max_lon: num(&a, "maxlon", pos)?,
                });
            }
            (1, b"node") => {
                open = Open::Node(num(&a, "id", pos)?, LatLon::new(num(&a, "lat", pos)?, num(&a, "lon", pos)?), Vec::new());
            }
            (1, b"way") => open = Open::Way(num(&a, "id", pos)?, Vec::new(), Vec::new()),
            (1, b"relation") => open = Open::Relation(num(&a, "id", pos)?, Vec::new(), Vec::new()),
            (2, b"tag") => {
                let kv = (a.get("k").cloned().unwrap_or_default(), a.get("v").cloned().unwrap_or_default());
                match &mut open {
                    Open::Node(_, _, t) | Open::Way(_, _, t) | Open::Relation(_, _, t) => t.push(kv),
                    Open::None => {}
                }
            }
            (2, b"nd") => {
                if let Open::Way(_, refs, _) = &mut open {
                    refs.push(num(&a, "ref", pos)?);
                }
            }
            (2, b"member") => {
                if let Open::Relation(_, members, _) = &mut open {
                    members.push((
                        a.get("type").cloned().unwrap_or_default(),
                        num(&a, "ref", pos)?,
                        a.get("role").cloned().unwrap_or_default(),
                    ));
                }
            }
            _ => {}
        }
        if empty {
            if depth == 1 {
                close(&mut out, std::mem::replace(&mut open, Open::None));
            }
        } else {
            depth += 1;
        }
        buf.clear();
    }
    if !seen_root {
        return Err(OsmError::MalformedXml { position: 0, reason: "no <osm> element".into() });
    }
    if depth != 0 {
        return Err(OsmError::MalformedXml { position: reader.buffer_position(), reason: "unexpected end of document".into() });
    }
    Ok(out)
}

fn close(out: &mut RawOsm, open: Open) {
    match open {
        Open::Node(id, p, t) => {
            out.nodes.insert(id, (p, t));
        }
        Open::Way(id, r, t) => {
            out.ways.insert(id, (r, t));
        }
        Open::Relation(id, m, t) => {
            out.relations.insert(id, (m, t));
        }
        Open::None => {}
    }
}

pub fn is_walkable(tags: &Tags) -> bool {
    match tag(tags, "highway") {
        Some("cycleway") => tag(tags, "foot") == Some("yes"),
        Some(h) => WALKABLE_HIGHWAYS.contains(&h) && tag(tags, "foot") != Some("no"),
        None => false,
    }
}

pub fn is_residential(tags: &Tags) -> bool {
    match tag(tags, "building") {
        Some("yes") => tags.iter().any(|(k, _)| k.starts_with("addr:")),
        Some(b) => RESIDENTIAL_BUILDINGS.contains(&b),
        None => false,
    }
}

#[derive(Debug, Clone, Default)]
pub struct OsmOptions {
    /// Clip region; defaults to the file's `<bounds>` or everything.
    pub bbox: Option<BBox>,
    /// Scale footprint weights so they sum to this population.
    pub population: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OsmSummary {
    pub graph_nodes: usize,
    pub graph_edges: usize,
    pub walkable_ways: usize,
    pub components: usize,
    pub flagged_nodes: usize,
    pub pois_by_category: BTreeMap<String, usize>,
    pub residences: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct OsmExtract {
    pub graph: StreetGraph,
    pub pois: Vec<PoiInput>,
    pub residences: Vec<ResidenceInput>,
    pub summary: OsmSummary,
}

/// Closed rings assembled from way segments joined end to end.
fn assemble_rings(segments: Vec<Vec<i64>>) -> Vec<Vec<i64>> {
    let mut rings = Vec::new();
    let mut open: Vec<Vec<i64>> = Vec::new();
    for s in segments {
        if s.len() >= 4 && s.first() == s.last() {
            rings.push(s);
        } else if s.len() >= 2 {
            open.push(s);
        }
    }
    while let Some(mut cur) = open.pop() {
        loop {
            if cur.first() == cur.last() {
                break;
            }
            let end = *cur.last().unwrap();
            let Some(i) = open.iter().position(|s| s[0] == end || *s.last().unwrap() == end) else { break };
            let mut next = open.swap_remove(i);
            if next[0] != end {
                next.reverse();
            }
            cur.extend_from_slice(&next[1..]);
        }
        if cur.len() >= 4 && cur.first() == cur.last() {
            rings.push(cur);
        }
    }
    rings
}

struct Geo<'a> {
    raw: &'a RawOsm,
    proj: LocalProjection,
}

impl Geo<'_> {
    fn ring_xy(&self, ring: &[i64]) -> Option<Vec<(f64, f64)>> {
        let pts: Option<Vec<(f64, f64)>> =
            ring[..ring.len() - 1].iter().map(|id| self.raw.nodes.get(id).map(|n| self.proj.project(n.0))).collect();
        pts
    }

    /// Centroid and area of a closed way.
    fn way_area(&self, refs: &[i64]) -> Option<(LatLon, f64)> {
        if refs.len() < 4 || refs.first() != refs.last() {
            return None;
        }
        let ((x, y), a) = ring_centroid(&self.ring_xy(refs)?);
        Some((self.proj.unproject(x, y), a))
    }

    /// Mean position of a way's nodes.
    fn way_mean(&self, refs: &[i64]) -> Option<LatLon> {
        let pts: Option<Vec<LatLon>> = refs.iter().map(|id| self.raw.nodes.get(id).map(|n| n.0)).collect();
        let pts = pts?;
        if pts.is_empty() {
            return None;
        }
        let n = pts.len() as f64;
        Some(LatLon::new(pts.iter().map(|p| p.lat).sum::<f64>() / n, pts.iter().map(|p| p.lon).sum::<f64>() / n))
    }

    /// Outer minus inner rings of a multipolygon.
    fn relation_area(&self, members: &[(String, i64, String)]) -> Option<(LatLon, f64)> {
        let mut sx = 0.0;
        let mut sy = 0.0;
        let mut total = 0.0;
        for role in ["outer", "inner"] {
            let segs: Vec<Vec<i64>> = members
                .iter()
                .filter(|(t, _, r)| t == "way" && (r == role || (role == "outer" && r.is_empty())))
                .filter_map(|(_, id, _)| self.raw.ways.get(id).map(|w| w.0.clone()))
                .collect();
            let sign = if role == "outer" { 1.0 } else { -1.0 };
            for ring in assemble_rings(segs) {
                let ((x, y), a) = ring_centroid(&self.ring_xy(&ring)?);
                sx += sign * a * x;
                sy += sign * a * y;
                total += sign * a;
            }
        }
        (total > 0.0).then(|| (self.proj.unproject(sx / total, sy / total), total))
    }
}

fn category_of<'c>(categories: &'c [PoiCategory], tags: &Tags) -> Option<&'c PoiCategory> {
    let pairs: Vec<(&str, &str)> = tags.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
    categories.iter().find(|c| c.matches(pairs.iter().copied()))
}

pub fn extract<R: Read>(mut input: R, categories: &[PoiCategory], opts: &OsmOptions) -> Result<OsmExtract, OsmError> {
    let mut xml = Vec::new();
    input.read_to_end(&mut xml)?;
    let raw = parse(&xml)?;
    let bbox = match opts.bbox.or(raw.bounds) {
        Some(b) => b,
        None => BBox::covering(raw.nodes.values().map(|n| n.0)).ok_or(OsmError::EmptyGraph)?,
    };
    if bbox.is_degenerate() {
        return Err(OsmError::DegenerateBBox);
    }
    let inside = |id: &i64| raw.nodes.get(id).is_some_and(|n| bbox.contains(n.0));
    let mut warnings = Vec::new();

    // streets
    let mut edges = Vec::new();
    let mut used = BTreeSet::new();
    let mut walkable_ways = 0;
    for (refs, tags) in raw.ways.values() {
        if !is_walkable(tags) {
            continue;
        }
        let mut any = false;
        for w in refs.windows(2) {
            if w[0] != w[1] && inside(&w[0]) && inside(&w[1]) {
                edges.push(RawEdge { from: w[0], to: w[1], walkable: true });
                used.insert(w[0]);
                used.insert(w[1]);
                any = true;
            }
        }
        walkable_ways += any as usize;
    }
    let missing = raw.ways.values().filter(|(r, t)| is_walkable(t) && r.iter().any(|id| !raw.nodes.contains_key(id))).count();
    if missing > 0 {
        warnings.push(format!("{missing} walkable ways reference nodes missing from the extract"));
    }
    let nodes: Vec<StreetNode> = used.iter().map(|id| StreetNode { id: *id, position: raw.nodes[id].0 }).collect();
    let graph = StreetGraph::new(nodes, &edges).map_err(|e| match e {
        StreetError::EmptyGraph => OsmError::EmptyGraph,
        other => OsmError::MalformedXml { position: 0, reason: other.to_string() },
    })?;
    if edges.is_empty() {
        return Err(OsmError::EmptyGraph);
    }
    let geo = Geo { raw: &raw, proj: graph.projection };

    // pois
    let mut pois = Vec::new();
    let mut push_poi = |id: String, tags: &Tags, pos: Option<LatLon>| {
        let Some(cat) = category_of(categories, tags) else { return };
        let Some(pos) = pos.filter(|p| bbox.contains(*p)) else { return };
        pois.push(PoiInput { id, category: cat.id.clone(), position: pos, name: tag(tags, "name").unwrap_or("").to_string() });
    };
    for (id, (p, tags)) in &raw.nodes {
        if !tags.is_empty() {
            push_poi(format!("n{id}"), tags, Some(*p));
        }
    }
    for (id, (refs, tags)) in &raw.ways {
        if tags.iter().any(|(k, _)| k != "highway") {
            let pos = geo.way_area(refs).map(|c| c.0).or_else(|| geo.way_mean(refs));
            push_poi(format!("w{id}"), tags, pos);
        }
    }
    for (id, (members, tags)) in &raw.relations {
        if tag(tags, "type") == Some("multipolygon") {
            push_poi(format!("r{id}"), tags, geo.relation_area(members).map(|c| c.0));
        }
    }

    // residences
    let mut residences = Vec::new();
    for (id, (refs, tags)) in &raw.ways {
        if is_residential(tags) {
            match geo.way_area(refs) {
                Some((c, a)) if bbox.contains(c) => residences.push(ResidenceInput { id: format!("w{id}"), position: c, weight: a }),
                Some(_) => {}
                None => warnings.push(format!("building way {id} is not a closed ring")),
            }
        }
    }
    for (id, (members, tags)) in &raw.relations {
        if tag(tags, "type") == Some("multipolygon") && is_residential(tags) {
            match geo.relation_area(members) {
                Some((c, a)) if bbox.contains(c) => residences.push(ResidenceInput { id: format!("r{id}"), position: c, weight: a }),
                Some(_) => {}
                None => warnings.push(format!("building relation {id} has no closed outer ring")),
            }
        }
    }
    if let Some(pop) = opts.population {
        scale_weights(&mut residences, pop);
    }

    let mut by_cat: BTreeMap<String, usize> = categories.iter().map(|c| (c.id.clone(), 0)).collect();
    for p in &pois {
        *by_cat.entry(p.category.clone()).or_default() += 1;
    }
    let summary = OsmSummary {
        graph_nodes: graph.node_count(),
        graph_edges: graph.edges.len(),
        walkable_ways,
        components: graph.component_count(),
        flagged_nodes: graph.flagged_nodes().count(),
        pois_by_category: by_cat,
        residences: residences.len(),
        warnings,
    };
    Ok(OsmExtract { graph, pois, residences, summary })
}

/// Scales weights to sum to `population`; no-op if all weights are zero.
pub fn scale_weights(residences: &mut [ResidenceInput], population: f64) {
    let total: f64 = residences.iter().map(|r| r.weight).sum();
    if total > 0.0 {
        for r in residences {
            r.weight *= population / total;
        }
    }
}

/// Reads a residence override CSV with header `id,lat,lon,weight`.
pub fn read_residence_csv<R: Read>(input: R) -> Result<Vec<ResidenceInput>, OsmError> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers().map_err(|e| OsmError::Override { line: 1, reason: e.to_string() })?.clone();
    let want = ["id", "lat", "lon", "weight"];
    if header.iter().map(str::trim).collect::<Vec<_>>() != want {
        return Err(OsmError::Override { line: 1, reason: "header must be `id,lat,lon,weight`".into() });
    }
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| OsmError::Override { line: e.position().map_or(0, |p| p.line()), reason: e.to_string() })?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |reason: &str| OsmError::Override { line, reason: reason.into() };
        let id = rec.get(0).unwrap_or("").trim().to_string();
        let lat: f64 = rec.get(1).and_then(|v| v.trim().parse().ok()).ok_or_else(|| bad("lat"))?;
        let lon: f64 = rec.get(2).and_then(|v| v.trim().parse().ok()).ok_or_else(|| bad("lon"))?;
        let weight: f64 = rec.get(3).and_then(|v| v.trim().parse().ok()).ok_or_else(|| bad("weight"))?;
        let position = LatLon::new(lat, lon);
        if id.is_empty() || !position.is_valid() || !(weight >= 0.0) {
            return Err(bad("empty id, invalid position or negative weight"));
        }
        if !seen.insert(id.clone()) {
            return Err(bad("duplicate id"));
        }
        out.push(ResidenceInput { id, position, weight });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tscore::geo::haversine_m;

    fn cats() -> Vec<PoiCategory> {
        vec![PoiCategory {
            id: "groceries".into(),
            name: "Groceries".into(),
            matcher: vec!["shop=supermarket".parse().unwrap()],
            sampling: tscore::places::SamplingKind::Near,
        }]
    }

    const SQUARE: &str = r#"<?xml version="1.0"?>
<osm version="0.6">
  <node id="1" lat="47.0" lon="9.0"/>
  <node id="2" lat="47.0" lon="9.001"/>
  <node id="3" lat="47.001" lon="9.001"/>
  <node id="4" lat="47.001" lon="9.0"/>
  <node id="9" lat="47.0005" lon="9.0005"><tag k="shop" v="supermarket"/><tag k="name" v="Mart"/></node>
  <way id="10"><nd ref="1"/><nd ref="2"/><nd ref="3"/><nd ref="4"/><nd ref="1"/><tag k="highway" v="residential"/></way>
</osm>"#;

    #[test]
    fn square_way() {
        let x = extract(SQUARE.as_bytes(), &cats(), &OsmOptions::default()).unwrap();
        assert_eq!(x.graph.node_count(), 4);
        assert_eq!(x.graph.edges.len(), 4);
        for e in &x.graph.edges {
            let h = haversine_m(x.graph.node(e.from).position, x.graph.node(e.to).position);
            assert!((e.length_m() - h).abs() <= 0.001);
        }
        assert_eq!(x.pois.len(), 1);
        assert_eq!((x.pois[0].id.as_str(), x.pois[0].category.as_str(), x.pois[0].name.as_str()), ("n9", "groceries", "Mart"));
    }

    #[test]
    fn errors() {
        assert!(matches!(extract("<osm><node id=\"1\"".as_bytes(), &cats(), &OsmOptions::default()), Err(OsmError::MalformedXml { .. })));
        let no_ways = r#"<osm><node id="1" lat="1" lon="1"/><node id="2" lat="2" lon="2"/></osm>"#;
        assert!(matches!(extract(no_ways.as_bytes(), &cats(), &OsmOptions::default()), Err(OsmError::EmptyGraph)));
        let bbox = BBox { min_lat: 10.0, min_lon: 10.0, max_lat: 11.0, max_lon: 11.0 };
        let opts = OsmOptions { bbox: Some(bbox), population: None };
        assert!(matches!(extract(SQUARE.as_bytes(), &cats(), &opts), Err(OsmError::EmptyGraph)));
    }

    #[test]
    fn tag_rules() {
        let t = |kv: &[(&str, &str)]| kv.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect::<Tags>();
        assert!(is_walkable(&t(&[("highway", "steps")])));
        assert!(!is_walkable(&t(&[("highway", "cycleway")])));
        assert!(is_walkable(&t(&[("highway", "cycleway"), ("foot", "yes")])));
        assert!(!is_walkable(&t(&[("highway", "motorway")])));
        assert!(is_residential(&t(&[("building", "terrace")])));
        assert!(!is_residential(&t(&[("building", "yes")])));
        assert!(is_residential(&t(&[("building", "yes"), ("addr:street", "A")])));
        assert!(!is_residential(&t(&[("building", "garage")])));
    }

    #[test]
    fn ring_assembly() {
        let rings = assemble_rings(vec![vec![1, 2, 3], vec![5, 3], vec![5, 1], vec![7, 8]]);
        assert_eq!(rings, vec![vec![5, 1, 2, 3, 5]]);
    }

    #[test]
    fn override_csv() {
        let ok = "id,lat,lon,weight\nh1,47.1,9.1,3.5\n";
        let r = read_residence_csv(ok.as_bytes()).unwrap();
        assert_eq!(r[0].weight, 3.5);
        assert!(read_residence_csv("id,lat,lon\nh1,1,1\n".as_bytes()).is_err());
        assert!(read_residence_csv("id,lat,lon,weight\nh1,1,1,-2\n".as_bytes()).is_err());
    }
}
