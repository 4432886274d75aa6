//! Fixture builders and independent reference implementations shared by the
//! integration tests.
#![allow(dead_code)]

pub mod oracle;
pub mod scripts;
pub mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use tempfile::TempDir;
use tscore::config::SimConfig;
use tscore::profile::ScenarioDefinition;
use tscore::snapshot::Sequential;
use tscore::{ModeMask, Snapshot};
use tsim::dataset::{self, Dataset};
use tsim::pipeline::{self, OsmIngest};

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

pub fn manifest() -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(fixture("minicity/manifest.json")).unwrap()).unwrap()
}

/// Ingests minicity into `dir` with the fixture categories and scenarios.
pub fn ingest_minicity(dir: &Path) {
    pipeline::ingest_gtfs(dir, &fixture("minicity/minicity_gtfs.zip"), None).unwrap();
    let cats = fixture("minicity/categories.toml");
    let o = OsmIngest { categories: Some(&cats), ..Default::default() };
    pipeline::ingest_osm(dir, &fixture("minicity/minicity.osm"), &o).unwrap();
    fs::copy(fixture("minicity/scenarios.toml"), dir.join(dataset::SCENARIOS)).unwrap();
}

pub fn minicity_dataset() -> (TempDir, Dataset) {
    let tmp = TempDir::new().unwrap();
    ingest_minicity(tmp.path());
    let ds = Dataset::open(tmp.path(), None).unwrap();
    (tmp, ds)
}

/// Minicity snapshot under `cfg`, with the all-modes matrix.
pub fn minicity_snapshot(cfg: Option<SimConfig>) -> (Dataset, Snapshot) {
    let (_tmp, mut ds) = minicity_dataset();
    if let Some(c) = cfg {
        ds.config = c;
    }
    let snap = Snapshot::build(ds.inputs(), &[ModeMask::ALL], &Sequential).unwrap();
    (ds, snap)
}

pub fn close(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => (x - y).abs() <= tol,
        _ => false,
    }
}

/// Multiplies the hourly weights of the k-th entry by `factors[k % len]`.
pub fn scaled(sc: &ScenarioDefinition, factors: &[f64]) -> ScenarioDefinition {
    let mut s = sc.clone();
    let mut k = 0;
    for p in &mut s.profiles {
        for e in &mut p.entries {
            let f = factors[k % factors.len()];
            k += 1;
            for w in &mut e.hourly_weights {
                *w *= f;
            }
        }
    }
    s
}

/// Seconds to walk a millimeter distance, rounded up.
pub fn walk_s(distance_mm: u64, speed: f64) -> u32 {
    (distance_mm as f64 / 1000.0 / speed).ceil() as u32
}

/// Compares every (origin, target, departure) on a `step_s` grid between
/// the round-based router and the time-expanded oracle. Returns the number
/// of compared pairs and the disagreements.
pub fn compare_routing(snap: &Snapshot, mask: ModeMask, step_s: u32) -> (usize, Vec<String>) {
    use tscore::network::StopIdx;
    use tscore::router::{Raptor, RaptorScratch};
    let tt = snap.timetable(mask).unwrap();
    let raptor = Raptor::new(&tt);
    let te = oracle::TimeExpanded::new(&snap.network, &snap.walk.transfers, mask, &snap.config);
    let n = snap.network.stops.len();
    let mut sc = RaptorScratch::default();
    let (mut checked, mut bad) = (0, Vec::new());
    for o in 0..n {
        for t in (0..86_400).step_by(step_s as usize) {
            raptor.run(&mut sc, StopIdx(o as u32), t);
            let want = te.durations(o, t);
            for (q, w) in want.iter().enumerate() {
                let got = sc.duration(StopIdx(q as u32));
                checked += 1;
                if got != *w {
                    bad.push(format!("{} -> {} at {t}: router {got:?}, oracle {w:?}", snap.network.stops[o].id, snap.network.stops[q].id));
                }
            }
        }
    }
    (checked, bad)
}

/// Entries of the snapshot's matrix for `mask` that differ from the oracle,
/// plus the number of unreachable entries in the oracle.
pub fn compare_matrix(snap: &Snapshot, mask: ModeMask) -> (Vec<String>, usize) {
    let m = &snap.matrices[&mask].matrix;
    let o = oracle::MatrixOracle::build(snap, mask);
    assert_eq!(m.stop_ids, o.stop_ids);
    assert_eq!(m.poi_ids, o.poi_ids);
    let mut bad = Vec::new();
    for (i, (a, b)) in m.values().iter().zip(&o.rounded).enumerate() {
        if a != b {
            let per_stop = o.poi_ids.len() * 24;
            bad.push(format!("{}/{}/h{}: matrix {a}, oracle {b}", o.stop_ids[i / per_stop], o.poi_ids[i % per_stop / 24], i % 24));
        }
    }
    if m.values().len() != o.rounded.len() {
        bad.push("value count differs".into());
    }
    (bad, o.rounded.iter().filter(|&&v| v == u32::MAX).count())
}

/// Runs the CLI in-process; returns `(exit code, stdout, stderr)`.
pub fn cli(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("tsim").chain(args.iter().copied());
    let code = tsim::cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

pub fn cli_ok(args: &[&str]) -> String {
    let (code, out, err) = cli(args);
    assert_eq!(code, 0, "tsim {}: {err}", args.join(" "));
    out
}

/// The end-to-end pipeline under `root`: `data/` built from the fixture,
/// `edited/` from replaying the session script. Returns each step's stdout.
pub fn cli_pipeline(root: &Path) -> Vec<(String, String)> {
    let data = root.join("data");
    let edited = root.join("edited");
    let ex = data.join("exports");
    let p = |x: &Path| x.to_str().unwrap().to_owned();
    let (d, e) = (p(&data), p(&edited));
    let fx = |r: &str| p(&fixture(r));
    let mut steps: Vec<(String, Vec<String>)> = vec![
        ("ingest-gtfs".into(), vec!["ingest-gtfs".into(), "--data".into(), d.clone(), "--gtfs".into(), fx("minicity/minicity_gtfs.zip")]),
        ("ingest-osm".into(), vec!["ingest-osm".into(), "--data".into(), d.clone(), "--osm".into(), fx("minicity/minicity.osm"), "--categories".into(), fx("minicity/categories.toml")]),
    ];
    let run = |steps: &mut Vec<(String, Vec<String>)>, out: &mut Vec<(String, String)>| {
        for (name, args) in steps.drain(..) {
            let a: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
            out.push((name, cli_ok(&a)));
        }
    };
    let mut outputs = Vec::new();
    run(&mut steps, &mut outputs);
    fs::copy(fixture("minicity/scenarios.toml"), data.join(dataset::SCENARIOS)).unwrap();
    let args = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let exs = |f: &str| p(&ex.join(f));
    steps = vec![
        ("build-walk".into(), args(&["build-walk", "--data", &d, "--csv", &exs("walk.csv")])),
        ("build-matrix".into(), args(&["build-matrix", "--data", &d])),
        ("score-default".into(), args(&["score", "--data", &d, "--scenario", "default"])),
        ("score-night".into(), args(&["score", "--data", &d, "--scenario", "night", "--format", "geojson"])),
        ("score-car".into(), args(&["score", "--data", &d, "--scenario", "default", "--group", "car", "--format", "json", "--out", &exs("car.json")])),
        ("hex5".into(), args(&["hex", "--data", &d, "--scenario", "default", "--resolution", "5", "--out", &exs("hex5.csv")])),
        ("hex-zoom".into(), args(&["hex", "--data", &d, "--scenario", "night", "--group", "workers", "--zoom", "17", "--format", "geojson", "--out", &exs("hex-z17.geojson")])),
        ("diff".into(), args(&["diff", "--data", &d, "--a", "default", "--b", "night", "--out", &exs("diff.csv")])),
        ("export-matrix".into(), args(&["export", "matrix", "--data", &d, "--out", &exs("matrix.csv")])),
        ("export-surface".into(), args(&["export", "surface", "--data", &d, "--scenario", "default", "--group", "pupils", "--format", "geojson", "--out", &exs("pupils.geojson")])),
        ("edit-replay".into(), args(&["edit-replay", "--data", &d, "--edits", &fx("minicity/session.jsonl"), "--out", &e])),
        ("score-edited".into(), args(&["score", "--data", &e, "--scenario", "default"])),
        ("validate".into(), args(&["validate", "--data", &d])),
        ("validate-edited".into(), args(&["validate", "--data", &e, "--deep"])),
    ];
    run(&mut steps, &mut outputs);
    // Step outputs name absolute paths; keep them relative to `root`.
    let prefix = format!("{}/", root.display());
    outputs.into_iter().map(|(n, o)| (n, o.replace(&prefix, ""))).collect()
}

/// Every file under `root` as `(relative path, bytes)`, sorted.
pub fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                out.push((p.strip_prefix(base).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out
}

/// Compares `actual` with the golden file, rewriting it when `TSIM_BLESS`
/// is set.
pub fn golden(name: &str, actual: &str) {
    let p = fixture("minicity/golden").join(name);
    if std::env::var_os("TSIM_BLESS").is_some() {
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(&p, actual).unwrap();
        return;
    }
    let want = fs::read_to_string(&p).unwrap_or_else(|_| panic!("missing golden {}; run with TSIM_BLESS=1", p.display()));
    assert!(want == actual, "{name} differs from its golden file");
}
