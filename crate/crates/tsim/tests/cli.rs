mod support;

use std::fs;
use std::process::Command;
use std::sync::OnceLock;

use support::{cli, cli_ok, cli_pipeline, golden, tree};
use tempfile::TempDir;

struct Run {
    dir: TempDir,
    steps: Vec<(String, String)>,
}

fn first() -> &'static Run {
    static R: OnceLock<Run> = OnceLock::new();
    R.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let steps = cli_pipeline(dir.path());
        Run { dir, steps }
    })
}

fn step<'a>(r: &'a Run, name: &str) -> &'a str {
    &r.steps.iter().find(|(n, _)| n == name).unwrap().1
}

fn read(r: &Run, rel: &str) -> String {
    fs::read_to_string(r.dir.path().join(rel)).unwrap()
}

#[test]
fn two_runs_are_byte_identical() {
    let a = first();
    let b = TempDir::new().unwrap();
    let steps = cli_pipeline(b.path());
    assert_eq!(a.steps, steps);
    let (ta, tb) = (tree(a.dir.path()), tree(b.path()));
    assert_eq!(ta.iter().map(|f| &f.0).collect::<Vec<_>>(), tb.iter().map(|f| &f.0).collect::<Vec<_>>());
    for (x, y) in ta.iter().zip(&tb) {
        assert!(x.1 == y.1, "{} differs", x.0);
    }
    assert!(ta.len() > 20);
}

#[test]
fn thread_count_does_not_change_matrices() {
    let a = first();
    let tmp = TempDir::new().unwrap();
    let d = tmp.path().join("data");
    tsim::dataset::copy_config(&a.dir.path().join("data"), &d).unwrap();
    for sub in ["network", "osm"] {
        let from = a.dir.path().join("data").join(sub);
        fs::create_dir_all(d.join(sub)).unwrap();
        for e in fs::read_dir(&from).unwrap() {
            let p = e.unwrap().path();
            fs::copy(&p, d.join(sub).join(p.file_name().unwrap())).unwrap();
        }
    }
    cli_ok(&["build-matrix", "--data", d.to_str().unwrap(), "--threads", "1"]);
    let name = tsim::dataset::matrix_file(tscore::ModeMask::ALL);
    assert!(fs::read(d.join(&name)).unwrap() == fs::read(a.dir.path().join("data").join(&name)).unwrap());
}

#[test]
fn validate_reports_zero_errors() {
    let r = first();
    for s in ["validate", "validate-edited"] {
        let out = step(r, s);
        assert!(out.lines().any(|l| l.starts_with("0 errors, ")), "{s}: {out}");
        assert!(!out.contains("error:"), "{out}");
    }
}

#[test]
fn validate_catches_a_corrupt_matrix() {
    let r = first();
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    for (rel, bytes) in tree(&r.dir.path().join("data")) {
        fs::create_dir_all(d.join(&rel).parent().unwrap()).unwrap();
        fs::write(d.join(&rel), bytes).unwrap();
    }
    let m = d.join(tsim::dataset::matrix_file(tscore::ModeMask::ALL));
    let mut bytes = fs::read(&m).unwrap();
    let n = bytes.len();
    bytes[n - 4..].copy_from_slice(&7u32.to_le_bytes());
    fs::write(&m, bytes).unwrap();
    let (code, out, _) = cli(&["validate", "--data", d.to_str().unwrap(), "--deep"]);
    assert_eq!(code, tsim::cli::EXIT_INVALID);
    assert!(out.contains("error:"), "{out}");
}

#[test]
fn goldens() {
    let r = first();
    for g in ["aggregate", "pupils", "workers", "elderly"] {
        golden(&format!("surfaces/default/{g}.csv"), &read(r, &format!("data/surfaces/default/{g}.csv")));
        golden(&format!("edited/default/{g}.csv"), &read(r, &format!("edited/surfaces/default/{g}.csv")));
    }
    golden("hex5.csv", &read(r, "data/exports/hex5.csv"));
    golden("diff_default_night.csv", &read(r, "data/exports/diff.csv"));
    golden("car.json", &read(r, "data/exports/car.json"));
    golden("edit_replay.jsonl", step(r, "edit-replay"));
    assert!(read(r, "data/exports/car.json").contains("\"approximation\""));
}

#[test]
fn edit_replay_equals_rebuild() {
    let r = first();
    let edited = r.dir.path().join("edited");
    let tmp = TempDir::new().unwrap();
    let d = tmp.path().join("rebuilt");
    for (rel, bytes) in tree(&edited) {
        if rel.starts_with("network/") || rel.starts_with("osm/") || !rel.contains('/') && rel.ends_with(".toml") {
            fs::create_dir_all(d.join(&rel).parent().unwrap()).unwrap();
            fs::write(d.join(&rel), bytes).unwrap();
        }
    }
    let ds = d.to_str().unwrap();
    cli_ok(&["build-matrix", "--data", ds]);
    cli_ok(&["score", "--data", ds, "--scenario", "default"]);
    let name = tsim::dataset::matrix_file(tscore::ModeMask::ALL);
    for f in [name.as_str(), tsim::dataset::WALK, "surfaces/default/aggregate.csv", "surfaces/default/workers.csv"] {
        assert!(fs::read(d.join(f)).unwrap() == fs::read(edited.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn edit_replay_refuses_a_non_empty_target() {
    let r = first();
    let data = r.dir.path().join("data");
    let (code, _, err) = cli(&["edit-replay", "--data", data.to_str().unwrap(), "--edits", support::fixture("minicity/session.jsonl").to_str().unwrap(), "--out", data.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("not empty"), "{err}");
}

const SUBCOMMANDS: [&str; 11] = [
    "ingest-gtfs", "ingest-osm", "build-walk", "build-matrix", "score", "hex", "diff", "edit-replay", "serve", "export", "validate",
];

#[test]
fn help_for_every_subcommand() {
    let top = cli_ok(&["--help"]);
    for s in SUBCOMMANDS {
        assert!(top.contains(s), "{s} missing from --help");
        let h = cli_ok(&[s, "--help"]);
        assert!(h.contains("Usage: tsim ") && h.contains("--data"), "{s}: {h}");
    }
    assert!(cli_ok(&["--version"]).starts_with("tsim "));
}

#[test]
fn usage_errors_exit_64() {
    assert_eq!(cli(&[]).0, 64);
    assert_eq!(cli(&["frobnicate"]).0, 64);
    assert_eq!(cli(&["score", "--data", "/nowhere"]).0, 64);
    assert_eq!(cli(&["hex", "--data", "x", "--scenario", "s", "--zoom", "3", "--resolution", "2"]).0, 64);
}

#[test]
fn runtime_errors_exit_1() {
    let r = first();
    let d = r.dir.path().join("data");
    let (code, _, err) = cli(&["score", "--data", d.to_str().unwrap(), "--scenario", "nope"]);
    assert_eq!(code, 1);
    assert!(err.contains("unknown scenario `nope`") && err.contains("default"), "{err}");
    let (code, _, err) = cli(&["build-walk", "--data", "/nonexistent/tsim"]);
    assert_eq!(code, 1);
    assert!(err.contains("ingest-gtfs"), "{err}");
}

#[test]
fn binary_uses_environment_defaults() {
    let r = first();
    let out = Command::new(env!("CARGO_BIN_EXE_tsim"))
        .args(["score", "--scenario", "default", "--group", "aggregate"])
        .env("TSIM_DATA", r.dir.path().join("data"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8(out.stdout).unwrap(), read(r, "data/surfaces/default/aggregate.csv"));
    let bad = Command::new(env!("CARGO_BIN_EXE_tsim")).arg("frobnicate").output().unwrap();
    assert_eq!(bad.status.code(), Some(64));
}

#[test]
fn surface_files_have_expected_shape() {
    let r = first();
    let csv = read(r, "data/surfaces/default/aggregate.csv");
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("residence_id,lat,lon,seconds"));
    assert_eq!(lines.count(), 50);
    let night: serde_json::Value = serde_json::from_str(&read(r, "data/surfaces/night/aggregate.geojson")).unwrap();
    assert_eq!(night["type"], "FeatureCollection");
    assert_eq!(night["features"].as_array().unwrap().len(), 50);
    assert_eq!(step(r, "score-default").lines().count(), 4);
}
