//! Data directory: ingested tables, configuration and derived artifacts.
//!
//! ```text
//! <data>/
//!   categories.toml  profiles.toml  scenarios.toml  sim.toml
//!   network/         TSNET v1 tables
//!   osm/             TSOSM v1 tables
//!   reports/         ingest summaries (JSON)
//!   walk.tswalk      walk table
//!   matrix-XXXX.tsmat  one per mode mask (hex)
//!   surfaces/        score output
//! ```
//!
//! Missing `profiles.toml` or `sim.toml` fall back to the shipped defaults.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use tscore::edit::Edit;
use tscore::places::PoiCategory;
use tscore::profile::{MobilityProfile, ScenarioDefinition};
use tscore::router::{RaptorScratch, TravelTimeMatrix};
use tscore::snapshot::{MatrixExec, MatrixSet, SnapshotInputs};
use tscore::{ModeMask, SimConfig, Snapshot, TransitNetwork};

use crate::config;
use crate::formats::{self, OsmData};

pub const CATEGORIES: &str = "categories.toml";
pub const PROFILES: &str = "profiles.toml";
pub const SCENARIOS: &str = "scenarios.toml";
pub const SIM: &str = "sim.toml";
pub const NETWORK: &str = "network";
pub const OSM: &str = "osm";
pub const REPORTS: &str = "reports";
pub const WALK: &str = "walk.tswalk";
pub const SURFACES: &str = "surfaces";

pub fn matrix_file(mask: ModeMask) -> String {
    format!("matrix-{:04x}.tsmat", mask.0)
}

/// Category config; the shipped defaults when the file is absent.
pub fn load_categories(dir: &Path) -> Result<Vec<PoiCategory>> {
    let p = dir.join(CATEGORIES);
    let text = if p.exists() { read_text(&p)? } else { config::DEFAULT_CATEGORIES.to_string() };
    Ok(config::parse_categories(&text)?)
}

pub fn load_sim(dir: &Path, override_path: Option<&Path>) -> Result<SimConfig> {
    let p = override_path.map(Path::to_path_buf).unwrap_or_else(|| dir.join(SIM));
    if override_path.is_some() || p.exists() {
        return Ok(config::parse_sim(&read_text(&p)?)?);
    }
    Ok(SimConfig::default())
}

pub fn load_profiles(dir: &Path) -> Result<BTreeMap<String, MobilityProfile>> {
    let p = dir.join(PROFILES);
    let text = if p.exists() { read_text(&p)? } else { config::DEFAULT_PROFILES.to_string() };
    Ok(config::parse_profiles(&text)?)
}

pub fn load_scenarios(dir: &Path, lib: &BTreeMap<String, MobilityProfile>) -> Result<Vec<ScenarioDefinition>> {
    let p = dir.join(SCENARIOS);
    if !p.exists() {
        return Ok(Vec::new());
    }
    Ok(config::parse_scenarios(&read_text(&p)?, lib)?)
}

fn read_text(p: &Path) -> Result<String> {
    fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
}

pub fn write_text(p: &Path, text: &str) -> Result<()> {
    if let Some(d) = p.parent() {
        fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    fs::write(p, text).with_context(|| format!("writing {}", p.display()))
}

pub fn write_report<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    write_text(&dir.join(REPORTS).join(name), &text)
}

/// Everything loaded from a data directory, before derivation.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub config: SimConfig,
    pub categories: Vec<PoiCategory>,
    pub profiles: BTreeMap<String, MobilityProfile>,
    pub scenarios: Vec<ScenarioDefinition>,
    pub network: TransitNetwork,
    pub osm: OsmData,
}

impl Dataset {
    pub fn is_ingested(dir: &Path) -> bool {
        dir.join(NETWORK).join("stops.jsonl").exists() && dir.join(OSM).join("nodes.jsonl").exists()
    }

    pub fn open(dir: &Path, sim_override: Option<&Path>) -> Result<Dataset> {
        if !dir.join(NETWORK).exists() {
            bail!("{}: no network tables; run ingest-gtfs first", dir.display());
        }
        if !dir.join(OSM).exists() {
            bail!("{}: no street tables; run ingest-osm first", dir.display());
        }
        let profiles = load_profiles(dir)?;
        Ok(Dataset {
            root: dir.to_path_buf(),
            config: load_sim(dir, sim_override)?,
            categories: load_categories(dir)?,
            scenarios: load_scenarios(dir, &profiles)?,
            profiles,
            network: formats::read_network(&dir.join(NETWORK))?,
            osm: formats::read_osm(&dir.join(OSM))?,
        })
    }

    pub fn scenario(&self, id: &str) -> Result<&ScenarioDefinition> {
        self.scenarios.iter().find(|s| s.scenario_id == id).ok_or_else(|| {
            let known: Vec<&str> = self.scenarios.iter().map(|s| s.scenario_id.as_str()).collect();
            anyhow!("unknown scenario `{id}` (known: {})", known.join(", "))
        })
    }

    /// Distinct mode masks used by the scenarios, `all` when there are none.
    pub fn masks(&self) -> Vec<ModeMask> {
        let mut m: BTreeSet<ModeMask> = self.scenarios.iter().map(|s| s.mode_mask).collect();
        if m.is_empty() {
            m.insert(ModeMask::ALL);
        }
        m.into_iter().collect()
    }

    pub fn inputs(&self) -> SnapshotInputs {
        SnapshotInputs {
            config: self.config.clone(),
            graph: Arc::new(self.osm.graph.clone()),
            network: self.network.clone(),
            categories: self.categories.clone(),
            pois: self.osm.pois.clone(),
            residences: self.osm.residences.clone(),
        }
    }

    /// Snapped entities and walk table, no matrices.
    pub fn prepare(&self) -> Result<Snapshot> {
        Ok(Snapshot::prepare(self.inputs())?)
    }

    /// Snapshot with stored matrices for `masks`, computing any that are
    /// missing or stale.
    pub fn snapshot(&self, masks: &[ModeMask], exec: &dyn MatrixExec) -> Result<Snapshot> {
        let mut snap = self.prepare()?;
        for &m in masks {
            match self.stored_matrix(m)? {
                Some(mx) if matrix_fits(&snap, &mx) => {
                    snap.matrices.insert(m, MatrixSet { matrix: mx, durations: None });
                }
                Some(_) => {
                    log::warn!("{} does not match the dataset; recomputing", matrix_file(m));
                    snap.ensure_matrix(m, exec)?;
                }
                None => {
                    log::info!("no stored matrix for mode mask {m}; computing");
                    snap.ensure_matrix(m, exec)?;
                }
            }
        }
        Ok(snap)
    }

    pub fn stored_matrix(&self, mask: ModeMask) -> Result<Option<TravelTimeMatrix>> {
        let p = self.root.join(matrix_file(mask));
        if !p.exists() {
            return Ok(None);
        }
        let bytes = formats::read_bytes(&p)?;
        formats::decode_matrix(&bytes).map(Some).ok_or_else(|| anyhow!("{}: corrupt matrix file", p.display()))
    }

    pub fn stored_walk(&self) -> Result<Option<tscore::walk::WalkTable>> {
        let p = self.root.join(WALK);
        if !p.exists() {
            return Ok(None);
        }
        let bytes = formats::read_bytes(&p)?;
        formats::decode_walk(&bytes).map(Some).ok_or_else(|| anyhow!("{}: corrupt walk file", p.display()))
    }
}

fn matrix_fits(snap: &Snapshot, m: &TravelTimeMatrix) -> bool {
    m.meta.sampling_minutes == snap.config.sampling_minutes
        && m.stop_ids.iter().eq(snap.network.stops.iter().map(|s| &s.id))
        && m.poi_ids.iter().eq(snap.pois.keys())
}

/// Copies the configuration files of `from` into `to`.
pub fn copy_config(from: &Path, to: &Path) -> Result<()> {
    fs::create_dir_all(to)?;
    for f in [CATEGORIES, PROFILES, SCENARIOS, SIM] {
        let p = from.join(f);
        if p.exists() {
            fs::copy(&p, to.join(f)).with_context(|| format!("copying {}", p.display()))?;
        }
    }
    Ok(())
}

/// Writes the snapshot's tables into `dir` (network, street, walk, matrices).
pub fn write_snapshot(dir: &Path, snap: &Snapshot) -> Result<()> {
    formats::write_network(&dir.join(NETWORK), &snap.network)?;
    let inputs = snap.to_inputs();
    let osm = OsmData { graph: (*snap.graph).clone(), pois: inputs.pois, residences: inputs.residences };
    formats::write_osm(&dir.join(OSM), &osm)?;
    formats::write_bytes(&dir.join(WALK), &formats::encode_walk(&snap.walk))?;
    for (m, set) in &snap.matrices {
        formats::write_bytes(&dir.join(matrix_file(*m)), &formats::encode_matrix(&set.matrix))?;
    }
    Ok(())
}

/// One edit per line; blank lines and `#` comments are skipped.
pub fn parse_edit_script(text: &str) -> Result<Vec<Edit>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("edit script line {}", i + 1)))
        .collect()
}

pub fn edit_script(edits: &[Edit]) -> String {
    edits.iter().map(|e| serde_json::to_string(e).expect("edit serializes") + "\n").collect()
}

#[derive(Debug, Default, Clone, serde::Serialize)]
pub struct ValidationReport {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.errors.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.errors {
            writeln!(f, "error: {e}")?;
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        writeln!(f, "{} errors, {} warnings", self.errors.len(), self.warnings.len())
    }
}

/// Rows of the stored matrix recomputed for these origins.
fn spot_origins(n: usize, deep: bool) -> Vec<usize> {
    if deep || n <= 8 {
        return (0..n).collect();
    }
    (0..8).map(|i| i * (n - 1) / 7).collect()
}

/// Dataset integrity checks. Dropped entities and missing derived tables are
/// warnings; inconsistencies are errors. `deep` recomputes every matrix row
/// instead of a fixed sample of eight.
pub fn validate(dir: &Path, sim_override: Option<&Path>, deep: bool, exec: &dyn MatrixExec) -> ValidationReport {
    let mut r = ValidationReport::default();
    let ds = match Dataset::open(dir, sim_override) {
        Ok(d) => d,
        Err(e) => {
            r.errors.push(format!("{e:#}"));
            return r;
        }
    };
    let snap = match ds.prepare() {
        Ok(s) => s,
        Err(e) => {
            r.errors.push(format!("{e:#}"));
            return r;
        }
    };
    if ds.network.stops.is_empty() {
        r.errors.push("network has no stops".into());
    }
    let day = ds.network.reference_day;
    let served: BTreeSet<&str> = ds
        .network
        .trips
        .iter()
        .filter(|t| t.service_days.contains(day))
        .flat_map(|t| t.stop_times.iter().map(|st| ds.network.stop(st.stop).id.as_str()))
        .collect();
    let idle = ds.network.stops.iter().filter(|s| !served.contains(s.id.as_str())).count();
    if idle > 0 {
        r.warnings.push(format!("{idle} stops have no departures on the reference day"));
    }
    let mut by_kind: BTreeMap<&str, usize> = BTreeMap::new();
    for d in &snap.dropped {
        *by_kind.entry(d.kind.as_str()).or_default() += 1;
    }
    for (k, n) in by_kind {
        r.warnings.push(format!("{n} {k} entities dropped: no walkable node within snap radius"));
    }
    if !snap.walk.unreachable_residences.is_empty() {
        r.warnings.push(format!("{} residences reach no stop on foot", snap.walk.unreachable_residences.len()));
    }
    if ds.osm.graph.flagged_nodes().count() > 0 {
        r.warnings.push(format!("{} street nodes outside the main component", ds.osm.graph.flagged_nodes().count()));
    }
    for s in &ds.scenarios {
        if let Err(e) = s.validate(&snap.categories, &snap.pois) {
            r.errors.push(format!("scenario `{}`: {e}", s.scenario_id));
        }
    }
    match ds.stored_walk() {
        Ok(Some(w)) if w == snap.walk => {}
        Ok(Some(_)) => r.errors.push(format!("{WALK} differs from a recompute; rerun build-walk")),
        Ok(None) => r.warnings.push(format!("{WALK} not built")),
        Err(e) => r.errors.push(format!("{e:#}")),
    }
    for m in ds.masks() {
        let stored = match ds.stored_matrix(m) {
            Ok(Some(x)) => x,
            Ok(None) => {
                r.warnings.push(format!("{} not built", matrix_file(m)));
                continue;
            }
            Err(e) => {
                r.errors.push(format!("{e:#}"));
                continue;
            }
        };
        if stored.meta.mode_mask != m || !matrix_fits(&snap, &stored) {
            r.errors.push(format!("{} does not match the dataset ids or sampling; rerun build-matrix", matrix_file(m)));
            continue;
        }
        if let Err(e) = check_rows(&snap, m, &stored, deep, exec) {
            r.errors.push(format!("{}: {e}", matrix_file(m)));
        }
    }
    r
}

fn check_rows(snap: &Snapshot, m: ModeMask, stored: &TravelTimeMatrix, deep: bool, exec: &dyn MatrixExec) -> Result<()> {
    let tt = snap.timetable(m)?;
    let b = snap.matrix_builder(&tt)?;
    let origins = spot_origins(b.stop_count(), deep);
    let rows = exec.map_origins(origins.len(), &|i| {
        let mut sc = RaptorScratch::default();
        let d = b.origin_durations(&mut sc, tscore::network::StopIdx(origins[i] as u32));
        b.row(&d)
    });
    for (i, row) in origins.iter().zip(rows) {
        if stored.stop_row(*i) != row.as_slice() {
            bail!("row of stop `{}` differs from a recompute; rerun build-matrix", stored.stop_ids[*i]);
        }
    }
    Ok(())
}
