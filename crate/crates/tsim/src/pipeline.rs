//! Pipeline steps shared by the CLI and the service.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use chrono::NaiveDate;
use tscore::analysis::{self, HexGrid};
use tscore::edit::{score_all, ScenarioOverlay, ScorePatch};
use tscore::geo::BBox;
use tscore::profile::{ScenarioDefinition, ScoreSurface, AGGREGATE};
use tscore::snapshot::MatrixExec;
use tscore::{ModeMask, Snapshot};

use crate::dataset::{self, Dataset};
use crate::formats::{self, OsmData};
use crate::gtfs::{self, GtfsOptions, GtfsSummary};
use crate::osm::{self, OsmOptions, OsmSummary};

/// Reads a zipped feed or a directory of `.txt` files.
pub fn read_feed(path: &Path, opts: &GtfsOptions) -> Result<gtfs::GtfsFeed> {
    let feed = if path.is_dir() {
        let mut files = BTreeMap::new();
        for e in fs::read_dir(path).with_context(|| format!("reading {}", path.display()))? {
            let p = e?.path();
            if p.extension().is_some_and(|x| x == "txt") {
                let name = p.file_name().unwrap().to_string_lossy().into_owned();
                files.insert(name, fs::read(&p)?);
            }
        }
        gtfs::parse_files(&files, opts)
    } else {
        gtfs::parse_gtfs(&fs::read(path).with_context(|| format!("reading {}", path.display()))?, opts)
    };
    feed.map_err(|e| anyhow!("{}: {e}", path.display()))
}

pub fn ingest_gtfs(dir: &Path, feed: &Path, date: Option<NaiveDate>) -> Result<GtfsSummary> {
    let f = read_feed(feed, &GtfsOptions { reference_date: date })?;
    formats::write_network(&dir.join(dataset::NETWORK), &f.network)?;
    dataset::write_report(dir, "gtfs.json", &f.summary)?;
    Ok(f.summary)
}

#[derive(Debug, Clone, Default)]
pub struct OsmIngest<'a> {
    pub categories: Option<&'a Path>,
    pub bbox: Option<BBox>,
    pub residences: Option<&'a Path>,
    pub population: Option<f64>,
}

/// Extracts streets and places; the category config used is stored in the
/// data directory.
pub fn ingest_osm(dir: &Path, osm_path: &Path, o: &OsmIngest<'_>) -> Result<OsmSummary> {
    let cats_text = match o.categories {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => {
            let p = dir.join(dataset::CATEGORIES);
            if p.exists() { fs::read_to_string(&p)? } else { crate::config::DEFAULT_CATEGORIES.to_string() }
        }
    };
    let cats = crate::config::parse_categories(&cats_text)?;
    let file = fs::File::open(osm_path).with_context(|| format!("opening {}", osm_path.display()))?;
    let opts = OsmOptions { bbox: o.bbox, population: o.population };
    let mut ex = osm::extract(std::io::BufReader::new(file), &cats, &opts).map_err(|e| anyhow!("{}: {e}", osm_path.display()))?;
    if let Some(p) = o.residences {
        let f = fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
        ex.residences = osm::read_residence_csv(f).map_err(|e| anyhow!("{}: {e}", p.display()))?;
        if let Some(pop) = o.population {
            osm::scale_weights(&mut ex.residences, pop);
        }
        ex.summary.residences = ex.residences.len();
    }
    dataset::write_text(&dir.join(dataset::CATEGORIES), &cats_text)?;
    formats::write_osm(&dir.join(dataset::OSM), &OsmData { graph: ex.graph, pois: ex.pois, residences: ex.residences })?;
    dataset::write_report(dir, "osm.json", &ex.summary)?;
    Ok(ex.summary)
}

pub fn build_walk(ds: &Dataset) -> Result<Snapshot> {
    let snap = ds.prepare()?;
    formats::write_bytes(&ds.root.join(dataset::WALK), &formats::encode_walk(&snap.walk))?;
    Ok(snap)
}

/// Computes and stores one matrix per mask.
pub fn build_matrix(ds: &Dataset, masks: &[ModeMask], exec: &dyn MatrixExec) -> Result<Snapshot> {
    let mut snap = build_walk(ds)?;
    for &m in masks {
        let set = snap.compute_matrix(m, exec)?;
        formats::write_bytes(&ds.root.join(dataset::matrix_file(m)), &formats::encode_matrix(&set.matrix))?;
        snap.matrices.insert(m, set);
    }
    Ok(snap)
}

/// Keeps only the listed categories in every profile. Groups left without
/// entries are dropped and the remaining shares rescaled to sum to one.
pub fn filter_categories(def: &ScenarioDefinition, keep: &BTreeSet<String>) -> ScenarioDefinition {
    let mut d = def.clone();
    for p in &mut d.profiles {
        p.entries.retain(|e| keep.contains(&e.category));
    }
    d.profiles.retain(|p| !p.entries.is_empty());
    let groups: BTreeSet<&str> = d.profiles.iter().map(|p| p.group_id.as_str()).collect();
    d.demographic_shares.retain(|g, _| groups.contains(g.as_str()));
    let total: f64 = d.demographic_shares.values().sum();
    if total > 0.0 {
        d.demographic_shares.values_mut().for_each(|v| *v /= total);
    }
    d
}

/// Surface of `group` (or `aggregate`, or `car` for the car baseline).
pub fn surface(snap: &Snapshot, def: &ScenarioDefinition, group: &str) -> Result<ScoreSurface> {
    let inputs = snap.score_inputs(def.mode_mask)?;
    if group == "car" {
        return Ok(tscore::profile::car_surface(&inputs, def)?);
    }
    let scores = tscore::profile::score_scenario(inputs, def)?;
    scores
        .surface(group)
        .cloned()
        .ok_or_else(|| anyhow!("scenario `{}` has no group `{group}`", def.scenario_id))
}

/// Every group surface plus the aggregate.
pub fn all_surfaces(snap: &Snapshot, def: &ScenarioDefinition) -> Result<Vec<ScoreSurface>> {
    let scores = snap.score(def)?;
    let mut out: Vec<ScoreSurface> = scores.groups.into_values().map(|g| g.surface).collect();
    out.push(scores.aggregate);
    Ok(out)
}

pub fn hex(snap: &Snapshot, surface: &ScoreSurface, resolution: u8) -> Result<HexGrid> {
    Ok(analysis::hex_aggregate(surface, snap.residences.values(), &snap.graph.projection, resolution)?)
}

/// `s,w,n,e`.
pub fn parse_bbox(s: &str) -> Result<BBox> {
    let v: Vec<f64> = s.split(',').map(|x| x.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| anyhow!("bbox must be `s,w,n,e`"))?;
    let [s_, w, n, e] = v[..] else { bail!("bbox must be `s,w,n,e`") };
    let b = BBox { min_lat: s_, min_lon: w, max_lat: n, max_lon: e };
    if b.is_degenerate() {
        bail!("degenerate bbox");
    }
    Ok(b)
}

/// `scenario:group`; the group defaults to the aggregate.
pub fn parse_surface_ref(s: &str) -> (&str, &str) {
    s.split_once(':').unwrap_or((s, AGGREGATE))
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ReplayStep {
    pub edit: usize,
    pub version: u64,
    pub dirty: usize,
    pub rescored: usize,
    pub warnings: Vec<String>,
}

/// Applies an edit script to the dataset, rescoring after each edit, and
/// writes the final state as a new data directory.
pub fn edit_replay(ds: &Dataset, script: &str, out: &Path, exec: std::sync::Arc<dyn MatrixExec>) -> Result<Vec<ReplayStep>> {
    let edits = dataset::parse_edit_script(script)?;
    let base = std::sync::Arc::new(ds.snapshot(&ds.masks(), exec.as_ref())?);
    let scenarios = std::sync::Arc::new(ds.scenarios.clone());
    let scores = std::sync::Arc::new(score_all(&base, &scenarios)?);
    let mut ov = ScenarioOverlay::new("replay".into(), base, scores, scenarios, exec);
    let mut steps = Vec::new();
    for (i, e) in edits.into_iter().enumerate() {
        let region = ov.apply(e).map_err(|err| anyhow!("edit {}: {err}", i + 1))?;
        let patch: ScorePatch = ov.rescore().map_err(|err| anyhow!("edit {}: {err}", i + 1))?;
        let rescored = patch.values.values().flat_map(|g| g.values()).map(|m| m.len()).max().unwrap_or(0);
        steps.push(ReplayStep { edit: i + 1, version: patch.version, dirty: region.residences.len(), rescored, warnings: region.warnings });
    }
    if out.exists() && fs::read_dir(out)?.next().is_some() {
        bail!("{}: output directory is not empty", out.display());
    }
    dataset::copy_config(&ds.root, out)?;
    dataset::write_snapshot(out, ov.current())?;
    Ok(steps)
}
