//! `tsim` command line. Flags are listed in the README.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tscore::analysis::{resolution_for_zoom, MAX_RESOLUTION};
use tscore::ModeMask;

use crate::dataset::{self, Dataset};
use crate::exec::RayonExec;
use crate::formats;
use crate::pipeline;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Parser, Debug)]
#[command(name = "tsim", version, about = "Household-level public transport accessibility simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Data directory.
    #[arg(long, env = "TSIM_DATA")]
    pub data: PathBuf,
    /// Simulation constants file; defaults to `<data>/sim.toml`.
    #[arg(long, env = "TSIM_SIM")]
    pub sim: Option<PathBuf>,
    /// Worker threads for matrix builds (0 = all cores).
    #[arg(long, env = "TSIM_THREADS", default_value_t = 0)]
    pub threads: usize,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Geojson,
    Json,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExportKind {
    Walk,
    Matrix,
    Surface,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Parse a GTFS feed (zip or directory) into `<data>/network`.
    IngestGtfs {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        gtfs: PathBuf,
        /// Monday of the modelled week, YYYY-MM-DD.
        #[arg(long)]
        date: Option<chrono::NaiveDate>,
    },
    /// Extract streets, POIs and residences from OSM XML into `<data>/osm`.
    IngestOsm {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        osm: PathBuf,
        /// Category config; defaults to `<data>/categories.toml` or the shipped set.
        #[arg(long)]
        categories: Option<PathBuf>,
        /// Clip box `s,w,n,e`.
        #[arg(long)]
        bbox: Option<String>,
        /// Residence override CSV `id,lat,lon,weight`.
        #[arg(long)]
        residences: Option<PathBuf>,
        /// Scale residence weights to this total.
        #[arg(long)]
        population: Option<f64>,
    },
    /// Build the walk table (`walk.tswalk`).
    BuildWalk {
        #[command(flatten)]
        common: Common,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Build travel-time matrices, one per mode mask.
    BuildMatrix {
        #[command(flatten)]
        common: Common,
        /// Mode masks (`all`, `bus,tram`, `-rail`); defaults to the scenarios' masks.
        #[arg(long = "modes")]
        modes: Vec<String>,
    },
    /// Score a scenario.
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenario: String,
        /// Group id, `aggregate` or `car`; all groups into `<data>/surfaces` when absent.
        #[arg(long)]
        group: Option<String>,
        /// Only keep these categories (comma list).
        #[arg(long)]
        categories: Option<String>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Hexagonal aggregation of a surface.
    Hex {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value = "aggregate")]
        group: String,
        #[arg(long, conflicts_with = "zoom")]
        resolution: Option<u8>,
        /// Map zoom level; picks the resolution.
        #[arg(long)]
        zoom: Option<u8>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-residence difference `a - b` of two surfaces (`scenario[:group]`).
    Diff {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
        /// Data directory for `b`; defaults to `--data`.
        #[arg(long)]
        b_data: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply a JSON-lines edit script and write the result as a new data directory.
    EditReplay {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        edits: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP service.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
        #[arg(long, env = "TSIM_PORT", default_value_t = 8080)]
        port: u16,
    },
    /// Export a stored table as CSV or GeoJSON.
    Export {
        #[command(flatten)]
        common: Common,
        #[arg(value_enum)]
        what: ExportKind,
        #[arg(long, default_value = "all")]
        modes: String,
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long, default_value = "aggregate")]
        group: String,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dataset integrity checks.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Recompute every matrix row instead of a sample.
        #[arg(long)]
        deep: bool,
    },
}

/// Parses `argv` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    let _ = write!(stdout, "{}", e.render());
                    return if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand { EXIT_USAGE } else { EXIT_OK };
                }
                _ => EXIT_USAGE,
            };
            let _ = write!(stderr, "{}", e.render());
            return code;
        }
    };
    match execute(cli.command, stdout) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e:#}");
            EXIT_ERROR
        }
    }
}

fn emit(out: Option<&Path>, stdout: &mut dyn Write, text: &str) -> Result<()> {
    match out {
        Some(p) => dataset::write_text(p, text),
        None => stdout.write_all(text.as_bytes()).context("writing output"),
    }
}

fn json(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn open(c: &Common) -> Result<Dataset> {
    Dataset::open(&c.data, c.sim.as_deref())
}

fn parse_masks(v: &[String]) -> Result<Vec<ModeMask>> {
    let mut out: Vec<ModeMask> = v.iter().map(|s| ModeMask::parse(s).map_err(|e| anyhow!(e))).collect::<Result<_>>()?;
    out.sort();
    out.dedup();
    Ok(out)
}

fn execute(cmd: Command, stdout: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::IngestGtfs { common, gtfs, date } => {
            let s = pipeline::ingest_gtfs(&common.data, &gtfs, date)?;
            emit(None, stdout, &json(&s))?;
        }
        Command::IngestOsm { common, osm, categories, bbox, residences, population } => {
            let bbox = bbox.as_deref().map(pipeline::parse_bbox).transpose()?;
            let o = pipeline::OsmIngest { categories: categories.as_deref(), bbox, residences: residences.as_deref(), population };
            let s = pipeline::ingest_osm(&common.data, &osm, &o)?;
            emit(None, stdout, &json(&s))?;
        }
        Command::BuildWalk { common, csv } => {
            let ds = open(&common)?;
            let snap = pipeline::build_walk(&ds)?;
            if let Some(p) = csv {
                dataset::write_text(&p, &formats::walk_csv(&snap.walk, snap.config.walk_speed))?;
            }
            let summary = serde_json::json!({
                "residences": snap.walk.residences.len(),
                "pois": snap.walk.pois.len(),
                "unreachable_residences": snap.walk.unreachable_residences.len(),
                "transfer_stops": snap.walk.transfers.len(),
                "dropped": snap.dropped,
            });
            emit(None, stdout, &json(&summary))?;
        }
        Command::BuildMatrix { common, modes } => {
            let ds = open(&common)?;
            let masks = if modes.is_empty() { ds.masks() } else { parse_masks(&modes)? };
            let exec = RayonExec::new(common.threads);
            let snap = pipeline::build_matrix(&ds, &masks, &exec)?;
            let files: Vec<serde_json::Value> = snap
                .matrices
                .iter()
                .map(|(m, s)| {
                    let unreachable = s.matrix.values().iter().filter(|v| **v == tscore::router::UNREACHABLE).count();
                    serde_json::json!({
                        "file": dataset::matrix_file(*m),
                        "modes": m.to_string(),
                        "stops": s.matrix.stop_ids.len(),
                        "pois": s.matrix.poi_ids.len(),
                        "unreachable_entries": unreachable,
                    })
                })
                .collect();
            emit(None, stdout, &json(&files))?;
        }
        Command::Score { common, scenario, group, categories, format, out } => {
            let ds = open(&common)?;
            let mut def = ds.scenario(&scenario)?.clone();
            if let Some(c) = categories {
                def = pipeline::filter_categories(&def, &c.split(',').map(|s| s.trim().to_string()).collect());
            }
            let snap = ds.snapshot(&[def.mode_mask], &RayonExec::new(common.threads))?;
            let render = |s: &tscore::profile::ScoreSurface| match format {
                Format::Csv => formats::surface_csv(s, snap.residences.values()),
                Format::Geojson => json(&formats::surface_geojson(s, snap.residences.values())),
                Format::Json => json(&formats::surface_json(s)),
            };
            let ext = match format {
                Format::Csv => "csv",
                Format::Geojson => "geojson",
                Format::Json => "json",
            };
            match group {
                Some(g) => emit(out.as_deref(), stdout, &render(&pipeline::surface(&snap, &def, &g)?))?,
                None => {
                    let root = out.unwrap_or_else(|| common.data.join(dataset::SURFACES).join(&def.scenario_id));
                    for s in pipeline::all_surfaces(&snap, &def)? {
                        let p = root.join(format!("{}.{ext}", s.group));
                        dataset::write_text(&p, &render(&s))?;
                        writeln!(stdout, "{}", p.display())?;
                    }
                }
            }
        }
        Command::Hex { common, scenario, group, resolution, zoom, format, out } => {
            let res = match (resolution, zoom) {
                (Some(r), _) => r,
                (None, Some(z)) => resolution_for_zoom(z),
                (None, None) => MAX_RESOLUTION,
            };
            let ds = open(&common)?;
            let def = ds.scenario(&scenario)?;
            let snap = ds.snapshot(&[def.mode_mask], &RayonExec::new(common.threads))?;
            let grid = pipeline::hex(&snap, &pipeline::surface(&snap, def, &group)?, res)?;
            let text = match format {
                Format::Csv => formats::hex_csv(&grid),
                Format::Geojson => json(&formats::hex_geojson(&grid, &snap.graph.projection)),
                Format::Json => json(&grid_json(&grid)),
            };
            emit(out.as_deref(), stdout, &text)?;
        }
        Command::Diff { common, a, b, b_data, format, out } => {
            let exec = RayonExec::new(common.threads);
            let load = |dir: &Path, r: &str| -> Result<tscore::profile::ScoreSurface> {
                let ds = Dataset::open(dir, common.sim.as_deref())?;
                let (sc, g) = pipeline::parse_surface_ref(r);
                let def = ds.scenario(sc)?;
                let snap = ds.snapshot(&[def.mode_mask], &exec)?;
                pipeline::surface(&snap, def, g)
            };
            let sa = load(&common.data, &a)?;
            let sb = load(b_data.as_deref().unwrap_or(&common.data), &b)?;
            let d = tscore::analysis::diff(&sa, &sb, &a, &b)?;
            let text = match format {
                Format::Csv => formats::diff_csv(&d),
                Format::Json | Format::Geojson => json(&d),
            };
            emit(out.as_deref(), stdout, &text)?;
        }
        Command::EditReplay { common, edits, out } => {
            let ds = open(&common)?;
            let script = std::fs::read_to_string(&edits).with_context(|| format!("reading {}", edits.display()))?;
            let steps = pipeline::edit_replay(&ds, &script, &out, Arc::new(RayonExec::new(common.threads)))?;
            for s in steps {
                writeln!(stdout, "{}", serde_json::to_string(&s)?)?;
            }
        }
        Command::Serve { common, bind, port } => {
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            let cfg = crate::service::ServiceConfig { data: common.data, sim: common.sim, threads: common.threads };
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind((bind.as_str(), port))
                    .await
                    .with_context(|| format!("cannot listen on {bind}:{port} (port busy?)"))?;
                log::info!("listening on {}", listener.local_addr()?);
                crate::service::serve(cfg, listener).await
            })?;
        }
        Command::Export { common, what, modes, scenario, group, format, out } => {
            let ds = open(&common)?;
            let text = match what {
                ExportKind::Walk => {
                    let w = ds.stored_walk()?.ok_or_else(|| anyhow!("{} not built; run build-walk", dataset::WALK))?;
                    formats::walk_csv(&w, ds.config.walk_speed)
                }
                ExportKind::Matrix => {
                    let m = ModeMask::parse(&modes).map_err(|e| anyhow!(e))?;
                    let mx = ds.stored_matrix(m)?.ok_or_else(|| anyhow!("{} not built; run build-matrix", dataset::matrix_file(m)))?;
                    formats::matrix_csv(&mx)
                }
                ExportKind::Surface => {
                    let Some(sc) = scenario else { bail!("--scenario is required for surface export") };
                    let def = ds.scenario(&sc)?;
                    let snap = ds.snapshot(&[def.mode_mask], &RayonExec::new(common.threads))?;
                    let s = pipeline::surface(&snap, def, &group)?;
                    match format {
                        Format::Csv => formats::surface_csv(&s, snap.residences.values()),
                        Format::Geojson => json(&formats::surface_geojson(&s, snap.residences.values())),
                        Format::Json => json(&formats::surface_json(&s)),
                    }
                }
            };
            emit(out.as_deref(), stdout, &text)?;
        }
        Command::Validate { common, deep } => {
            let r = dataset::validate(&common.data, common.sim.as_deref(), deep, &RayonExec::new(common.threads));
            write!(stdout, "{r}")?;
            return Ok(if r.ok() { EXIT_OK } else { EXIT_INVALID });
        }
    }
    Ok(EXIT_OK)
}

pub fn grid_json(grid: &tscore::analysis::HexGrid) -> serde_json::Value {
    let cells: Vec<serde_json::Value> = grid
        .cells
        .iter()
        .map(|(c, s)| serde_json::json!({"cell": c.id(), "mean_s": s.mean_s, "count": s.count, "served": s.served}))
        .collect();
    serde_json::json!({
        "resolution": grid.resolution,
        "edge_m": grid.edge_m,
        "grand_mean_s": grid.grand_mean(),
        "cells": cells,
    })
}
