//! Persisted table formats.
//!
//! * `TSNET v1`: directory of JSON-lines files (`meta`, `stops`, `lines`,
//!   `trips`), each starting with the header line.
//! * `TSOSM v1`: directory of JSON-lines files (`nodes`, `edges`, `pois`,
//!   `residences`), same header convention.
//! * `TSWALK v1`, `TSMAT v1`: little-endian binary blobs behind a text magic
//!   line; CSV exports for inspection.
//!
//! Byte layouts are listed in `docs/formats.md`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tscore::analysis::{cell_polygon, DiffSurface, HexGrid};
use tscore::geo::LocalProjection;
use tscore::network::{LineRecord, NetworkParts, StopRecord, TripRecord};
use tscore::places::Residence;
use tscore::profile::ScoreSurface;
use tscore::router::{MatrixMeta, TravelTimeMatrix, UNREACHABLE};
use tscore::snapshot::{PoiInput, ResidenceInput};
use tscore::street::{StreetEdge, StreetGraph, StreetNode};
use tscore::walk::{StopDist, WalkTable};
use tscore::{ModeMask, TransitNetwork, Weekday};

pub const TSNET: &str = "TSNET v1";
pub const TSOSM: &str = "TSOSM v1";
pub const TSWALK: &[u8] = b"TSWALK v1\n";
pub const TSMAT: &[u8] = b"TSMAT v1\n";

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: expected header `{expected}`")]
    Header { path: String, expected: String },
    #[error("{path}:{line}: {reason}")]
    Record { path: String, line: usize, reason: String },
    #[error("{path}: truncated or corrupt binary data")]
    Corrupt { path: String },
    #[error("{0}")]
    Invalid(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::Io { path: path.display().to_string(), source }
}

fn write_jsonl<T: Serialize>(path: &Path, header: &str, items: impl IntoIterator<Item = T>) -> Result<(), FormatError> {
    let mut out = Vec::new();
    out.extend_from_slice(header.as_bytes());
    out.push(b'\n');
    for it in items {
        serde_json::to_writer(&mut out, &it).expect("serializable record");
        out.push(b'\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path, header: &str) -> Result<Vec<T>, FormatError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let mut lines = BufReader::new(f).lines();
    let p = path.display().to_string();
    match lines.next() {
        Some(Ok(h)) if h.trim_end() == header => {}
        Some(Err(e)) => return Err(FormatError::Io { path: p, source: e }),
        _ => return Err(FormatError::Header { path: p, expected: header.into() }),
    }
    let mut out = Vec::new();
    for (i, l) in lines.enumerate() {
        let l = l.map_err(io_err(path))?;
        if l.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&l).map_err(|e| FormatError::Record { path: p.clone(), line: i + 2, reason: e.to_string() })?);
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct NetMeta {
    reference_day: Weekday,
}

pub fn write_network(dir: &Path, net: &TransitNetwork) -> Result<(), FormatError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let parts = net.to_parts();
    write_jsonl(&dir.join("meta.jsonl"), TSNET, [NetMeta { reference_day: parts.reference_day }])?;
    write_jsonl(&dir.join("stops.jsonl"), TSNET, &parts.stops)?;
    write_jsonl(&dir.join("lines.jsonl"), TSNET, &parts.lines)?;
    write_jsonl(&dir.join("trips.jsonl"), TSNET, &parts.trips)
}

pub fn read_network(dir: &Path) -> Result<TransitNetwork, FormatError> {
    let meta: Vec<NetMeta> = read_jsonl(&dir.join("meta.jsonl"), TSNET)?;
    let meta = meta.into_iter().next().ok_or_else(|| FormatError::Invalid(format!("{}: empty meta", dir.display())))?;
    let stops: Vec<StopRecord> = read_jsonl(&dir.join("stops.jsonl"), TSNET)?;
    let lines: Vec<LineRecord> = read_jsonl(&dir.join("lines.jsonl"), TSNET)?;
    let trips: Vec<TripRecord> = read_jsonl(&dir.join("trips.jsonl"), TSNET)?;
    TransitNetwork::from_parts(NetworkParts { reference_day: meta.reference_day, stops, lines, trips })
        .map_err(|e| FormatError::Invalid(e.to_string()))
}

/// Street graph plus places as persisted by `ingest-osm`.
#[derive(Debug, Clone)]
pub struct OsmData {
    pub graph: StreetGraph,
    pub pois: Vec<PoiInput>,
    pub residences: Vec<ResidenceInput>,
}

pub fn write_osm(dir: &Path, data: &OsmData) -> Result<(), FormatError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_jsonl(&dir.join("nodes.jsonl"), TSOSM, &data.graph.nodes)?;
    write_jsonl(&dir.join("edges.jsonl"), TSOSM, &data.graph.edges)?;
    let mut pois = data.pois.clone();
    pois.sort_by(|a, b| a.id.cmp(&b.id));
    write_jsonl(&dir.join("pois.jsonl"), TSOSM, &pois)?;
    let mut res = data.residences.clone();
    res.sort_by(|a, b| a.id.cmp(&b.id));
    write_jsonl(&dir.join("residences.jsonl"), TSOSM, &res)
}

pub fn read_osm(dir: &Path) -> Result<OsmData, FormatError> {
    let nodes: Vec<StreetNode> = read_jsonl(&dir.join("nodes.jsonl"), TSOSM)?;
    let edges: Vec<StreetEdge> = read_jsonl(&dir.join("edges.jsonl"), TSOSM)?;
    let graph = StreetGraph::from_stored(nodes, edges).map_err(|e| FormatError::Invalid(e.to_string()))?;
    Ok(OsmData {
        graph,
        pois: read_jsonl(&dir.join("pois.jsonl"), TSOSM)?,
        residences: read_jsonl(&dir.join("residences.jsonl"), TSOSM)?,
    })
}

struct Bin(Vec<u8>);

impl Bin {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn len(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("count fits u32"));
    }
}

struct Cur<'a>(&'a [u8]);

impl<'a> Cur<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        (self.0.len() >= n).then(|| {
            let (a, b) = self.0.split_at(n);
            self.0 = b;
            a
        })
    }
    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }
    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
    fn str(&mut self) -> Option<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).ok()
    }
    fn len(&mut self) -> Option<usize> {
        let n = self.u32()? as usize;
        // Every counted item takes at least four bytes.
        (n <= self.0.len() / 4 + 1).then_some(n)
    }
}

fn stop_lists(b: &mut Bin, index: &BTreeMap<&str, u32>, lists: &BTreeMap<String, Vec<StopDist>>) {
    b.len(lists.len());
    for (id, l) in lists {
        b.str(id);
        b.len(l.len());
        for sd in l {
            b.u32(index[sd.stop_id.as_str()]);
            b.u64(sd.distance_mm);
        }
    }
}

fn read_stop_lists(c: &mut Cur<'_>, stops: &[String]) -> Option<BTreeMap<String, Vec<StopDist>>> {
    let n = c.len()?;
    let mut out = BTreeMap::new();
    for _ in 0..n {
        let id = c.str()?;
        let k = c.len()?;
        let mut l = Vec::with_capacity(k);
        for _ in 0..k {
            let s = stops.get(c.u32()? as usize)?.clone();
            l.push(StopDist { stop_id: s, distance_mm: c.u64()? });
        }
        out.insert(id, l);
    }
    Some(out)
}

pub fn encode_walk(w: &WalkTable) -> Vec<u8> {
    let mut stops: BTreeSet<&str> = BTreeSet::new();
    for l in w.residences.values().chain(w.pois.values()).chain(w.transfers.values()) {
        stops.extend(l.iter().map(|s| s.stop_id.as_str()));
    }
    stops.extend(w.transfers.keys().map(String::as_str));
    let index: BTreeMap<&str, u32> = stops.iter().enumerate().map(|(i, s)| (*s, i as u32)).collect();
    let mut b = Bin(TSWALK.to_vec());
    b.len(w.n);
    b.len(stops.len());
    for s in &stops {
        b.str(s);
    }
    stop_lists(&mut b, &index, &w.residences);
    stop_lists(&mut b, &index, &w.pois);
    b.len(w.unreachable_residences.len());
    for r in &w.unreachable_residences {
        b.str(r);
    }
    stop_lists(&mut b, &index, &w.transfers);
    b.0
}

pub fn decode_walk(bytes: &[u8]) -> Option<WalkTable> {
    let mut c = Cur(bytes.strip_prefix(TSWALK)?);
    let n = c.u32()? as usize;
    let ns = c.len()?;
    let mut stops = Vec::with_capacity(ns);
    for _ in 0..ns {
        stops.push(c.str()?);
    }
    let residences = read_stop_lists(&mut c, &stops)?;
    let pois = read_stop_lists(&mut c, &stops)?;
    let nu = c.len()?;
    let mut unreachable_residences = BTreeSet::new();
    for _ in 0..nu {
        unreachable_residences.insert(c.str()?);
    }
    let transfers = read_stop_lists(&mut c, &stops)?;
    c.0.is_empty().then_some(WalkTable { n, residences, pois, unreachable_residences, transfers })
}

/// CSV rows `kind,id,rank,stop_id,distance_m,walk_s` with walk time at `speed`.
pub fn walk_csv(w: &WalkTable, speed: f64) -> String {
    let mut out = String::from("kind,id,rank,stop_id,distance_m,walk_s\n");
    for (kind, lists) in [("residence", &w.residences), ("poi", &w.pois), ("transfer", &w.transfers)] {
        for (id, l) in lists {
            for (i, sd) in l.iter().enumerate() {
                let t = tscore::walk::walk_time_mm(sd.distance_mm, speed).unwrap_or(0);
                out.push_str(&format!("{kind},{id},{},{},{:.3},{t}\n", i + 1, sd.stop_id, sd.distance_m()));
            }
        }
    }
    out
}

pub fn encode_matrix(m: &TravelTimeMatrix) -> Vec<u8> {
    let mut b = Bin(TSMAT.to_vec());
    b.u32(m.meta.mode_mask.0 as u32);
    b.len(m.meta.sampling_minutes.len());
    for x in &m.meta.sampling_minutes {
        b.u32(*x);
    }
    b.len(m.stop_ids.len());
    b.len(m.poi_ids.len());
    for s in m.stop_ids.iter().chain(&m.poi_ids) {
        b.str(s);
    }
    b.0.reserve(m.values().len() * 4);
    for v in m.values() {
        b.u32(*v);
    }
    b.0
}

pub fn decode_matrix(bytes: &[u8]) -> Option<TravelTimeMatrix> {
    let mut c = Cur(bytes.strip_prefix(TSMAT)?);
    let mask = ModeMask(u16::try_from(c.u32()?).ok()?);
    let k = c.len()?;
    let mut minutes = Vec::with_capacity(k);
    for _ in 0..k {
        minutes.push(c.u32()?);
    }
    let (ns, np) = (c.len()?, c.len()?);
    let mut stop_ids = Vec::with_capacity(ns);
    for _ in 0..ns {
        stop_ids.push(c.str()?);
    }
    let mut poi_ids = Vec::with_capacity(np);
    for _ in 0..np {
        poi_ids.push(c.str()?);
    }
    let n = ns.checked_mul(np)?.checked_mul(24)?;
    let raw = c.take(n.checked_mul(4)?)?;
    if !c.0.is_empty() {
        return None;
    }
    let values = raw.chunks_exact(4).map(|b| u32::from_le_bytes(b.try_into().unwrap())).collect();
    TravelTimeMatrix::from_values(MatrixMeta { mode_mask: mask, sampling_minutes: minutes }, stop_ids, poi_ids, values)
}

/// CSV rows `stop_id,poi_id,hour,seconds`; unreachable entries are empty.
pub fn matrix_csv(m: &TravelTimeMatrix) -> String {
    let mut out = String::with_capacity(m.values().len() * 16);
    out.push_str("stop_id,poi_id,hour,seconds\n");
    for (s, sid) in m.stop_ids.iter().enumerate() {
        for (p, pid) in m.poi_ids.iter().enumerate() {
            for (h, v) in m.hours(s, p).iter().enumerate() {
                if *v == UNREACHABLE {
                    out.push_str(&format!("{sid},{pid},{h},\n"));
                } else {
                    out.push_str(&format!("{sid},{pid},{h},{v}\n"));
                }
            }
        }
    }
    out
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p).map_err(io_err(p))?;
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(bytes).map_err(io_err(path))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, FormatError> {
    fs::read(path).map_err(io_err(path))
}

/// Seconds with millisecond precision; empty for Unserved.
pub fn fmt_seconds(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.3}"),
        None => String::new(),
    }
}

/// `residence_id,lat,lon,seconds`.
pub fn surface_csv<'a>(surface: &ScoreSurface, residences: impl IntoIterator<Item = &'a Residence>) -> String {
    let mut out = String::from("residence_id,lat,lon,seconds\n");
    let mut rows: Vec<&Residence> = residences.into_iter().filter(|r| surface.values.contains_key(&r.id)).collect();
    rows.sort_by(|a, b| a.id.cmp(&b.id));
    for r in rows {
        out.push_str(&format!("{},{:.7},{:.7},{}\n", r.id, r.position.lat, r.position.lon, fmt_seconds(surface.values[&r.id])));
    }
    out
}

/// Point features with `id` and `seconds` (null for Unserved).
pub fn surface_geojson<'a>(surface: &ScoreSurface, residences: impl IntoIterator<Item = &'a Residence>) -> serde_json::Value {
    let mut rows: Vec<&Residence> = residences.into_iter().filter(|r| surface.values.contains_key(&r.id)).collect();
    rows.sort_by(|a, b| a.id.cmp(&b.id));
    let features: Vec<serde_json::Value> = rows
        .iter()
        .map(|r| {
            serde_json::json!({
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [r.position.lon, r.position.lat]},
                "properties": {"id": r.id, "seconds": surface.values[&r.id]},
            })
        })
        .collect();
    let mut props = serde_json::json!({"scenario": surface.scenario_id, "group": surface.group});
    if let Some(note) = approximation(surface) {
        props["approximation"] = note.into();
    }
    serde_json::json!({
        "type": "FeatureCollection",
        "properties": props,
        "features": features,
    })
}

/// The surface as JSON, labelled when it is the car baseline.
pub fn surface_json(surface: &ScoreSurface) -> serde_json::Value {
    let mut v = serde_json::to_value(surface).expect("surface serializes");
    if let Some(note) = approximation(surface) {
        v["approximation"] = note.into();
    }
    v
}

/// Label attached to car baseline surfaces, which are not routed.
pub fn approximation(surface: &ScoreSurface) -> Option<String> {
    surface.scenario_id.ends_with(":car").then(|| {
        format!(
            "car baseline: straight-line distance x {} at {} km/h, not a routed car time",
            tscore::profile::CAR_DETOUR,
            tscore::profile::CAR_SPEED_KMH
        )
    })
}

/// Polygon features with `cell`, `mean_s`, `count`, `served`.
pub fn hex_geojson(grid: &HexGrid, projection: &LocalProjection) -> serde_json::Value {
    let features: Vec<serde_json::Value> = grid
        .cells
        .iter()
        .map(|(c, s)| {
            let ring: Vec<[f64; 2]> = cell_polygon(c, projection).iter().map(|p| [p.lon, p.lat]).collect();
            serde_json::json!({
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [ring]},
                "properties": {"cell": c.id(), "mean_s": s.mean_s, "count": s.count, "served": s.served},
            })
        })
        .collect();
    serde_json::json!({
        "type": "FeatureCollection",
        "properties": {"resolution": grid.resolution, "edge_m": grid.edge_m},
        "features": features,
    })
}

/// `cell,mean_s,count,served`.
pub fn hex_csv(grid: &HexGrid) -> String {
    let mut out = String::from("cell,mean_s,count,served\n");
    for (c, s) in &grid.cells {
        out.push_str(&format!("{},{},{},{}\n", c.id(), fmt_seconds(s.mean_s), s.count, s.served));
    }
    out
}

/// `residence_id,diff_s`; excluded residences are omitted.
pub fn diff_csv(d: &DiffSurface) -> String {
    let mut out = String::from("residence_id,diff_s\n");
    for (id, v) in &d.values {
        out.push_str(&format!("{id},{v:.3}\n"));
    }
    out
}
