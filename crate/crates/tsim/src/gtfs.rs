//! GTFS static feed ingestion.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Cursor, Read};

use chrono::{Datelike, NaiveDate};
use serde::Serialize;
use tscore::geo::haversine_m;
use tscore::network::{LineRecord, NetworkParts, StopRecord, StopTimeRecord, TripRecord};
use tscore::time::{parse_hms, Weekday, WeekdaySet};
use tscore::{LatLon, Mode, TransitNetwork};

pub const MANDATORY: [&str; 5] = ["stops.txt", "routes.txt", "trips.txt", "stop_times.txt", "calendar.txt"];
/// Offenses listed in an ingestion report.
pub const REPORT_LIMIT: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Offense {
    MissingFile { name: String },
    MalformedRow { file: String, line: u64, reason: String },
    DanglingReference { entity: String, id: String },
}

impl fmt::Display for Offense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Offense::MissingFile { name } => write!(f, "MissingFile({name})"),
            Offense::MalformedRow { file, line, reason } => write!(f, "MalformedRow({file}:{line}: {reason})"),
            Offense::DanglingReference { entity, id } => write!(f, "DanglingReference({entity} `{id}`)"),
        }
    }
}

/// Aborted ingestion: the first offenses and the total count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, thiserror::Error)]
pub struct GtfsError {
    pub offenses: Vec<Offense>,
    pub total: usize,
}

impl fmt::Display for GtfsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GTFS ingestion failed with {} offense(s)", self.total)?;
        for o in &self.offenses {
            write!(f, "\n  {o}")?;
        }
        if self.total > self.offenses.len() {
            write!(f, "\n  ... {} more", self.total - self.offenses.len())?;
        }
        Ok(())
    }
}

#[derive(Default)]
struct Report {
    offenses: Vec<Offense>,
    total: usize,
}

impl Report {
    fn push(&mut self, o: Offense) {
        self.total += 1;
        if self.offenses.len() < REPORT_LIMIT {
            self.offenses.push(o);
        }
    }

    fn malformed(&mut self, file: &str, line: u64, reason: impl Into<String>) {
        self.push(Offense::MalformedRow { file: file.into(), line, reason: reason.into() });
    }

    fn dangling(&mut self, entity: &str, id: &str) {
        self.push(Offense::DanglingReference { entity: entity.into(), id: id.into() });
    }

    fn finish(self) -> Result<(), GtfsError> {
        if self.total == 0 {
            Ok(())
        } else {
            Err(GtfsError { offenses: self.offenses, total: self.total })
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GtfsOptions {
    /// Monday of the modelled week; defaults to the first Monday on or after
    /// the feed start date.
    pub reference_date: Option<NaiveDate>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GtfsSummary {
    pub reference_date: String,
    pub stops: usize,
    pub lines: usize,
    pub trips: usize,
    pub stop_times: usize,
    pub trips_on_reference_day: usize,
    pub dropped_inactive_trips: usize,
    pub expanded_frequency_trips: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct GtfsFeed {
    pub network: TransitNetwork,
    pub summary: GtfsSummary,
}

/// One CSV table with a header lookup.
struct Table {
    name: &'static str,
    header: BTreeMap<String, usize>,
    rows: Vec<(u64, Vec<String>)>,
}

impl Table {
    fn col(&self, name: &str) -> Option<usize> {
        self.header.get(name).copied()
    }

    fn require(&self, names: &[&str], report: &mut Report) -> bool {
        let mut ok = true;
        for n in names {
            if self.col(n).is_none() {
                report.malformed(self.name, 1, format!("missing column `{n}`"));
                ok = false;
            }
        }
        ok
    }
}

fn get<'a>(row: &'a [String], col: Option<usize>) -> &'a str {
    col.and_then(|c| row.get(c)).map(|s| s.trim()).unwrap_or("")
}

fn read_table(name: &'static str, bytes: &[u8], report: &mut Report) -> Table {
    let bytes = bytes.strip_prefix(b"\xEF\xBB\xBF").unwrap_or(bytes);
    let mut rdr = csv::ReaderBuilder::new().flexible(true).has_headers(false).from_reader(bytes);
    let mut header = BTreeMap::new();
    let mut rows = Vec::new();
    let mut first = true;
    for rec in rdr.byte_records() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                report.malformed(name, line, e.to_string());
                continue;
            }
        };
        let line = rec.position().map_or(0, |p| p.line());
        let mut fields = Vec::with_capacity(rec.len());
        let mut bad = false;
        for f in rec.iter() {
            match std::str::from_utf8(f) {
                Ok(s) => fields.push(s.to_string()),
                Err(_) => bad = true,
            }
        }
        if bad {
            report.malformed(name, line, "field is not valid UTF-8");
            continue;
        }
        if first {
            first = false;
            for (i, h) in fields.iter().enumerate() {
                header.insert(h.trim().to_string(), i);
            }
            continue;
        }
        if fields.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        rows.push((line, fields));
    }
    Table { name, header, rows }
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y%m%d").ok()
}

fn weekday_of(d: NaiveDate) -> Weekday {
    Weekday::from_index(d.weekday().num_days_from_monday() as usize)
}

struct Calendar {
    weekly: Option<([bool; 7], NaiveDate, NaiveDate)>,
    added: BTreeSet<NaiveDate>,
    removed: BTreeSet<NaiveDate>,
}

impl Calendar {
    fn active(&self, d: NaiveDate) -> bool {
        if self.added.contains(&d) {
            return true;
        }
        if self.removed.contains(&d) {
            return false;
        }
        match &self.weekly {
            Some((days, start, end)) => *start <= d && d <= *end && days[d.weekday().num_days_from_monday() as usize],
            None => false,
        }
    }
}

/// Parses a zipped feed.
pub fn parse_gtfs(archive: &[u8], opts: &GtfsOptions) -> Result<GtfsFeed, GtfsError> {
    let mut zip = zip::ZipArchive::new(Cursor::new(archive)).map_err(|e| GtfsError {
        offenses: vec![Offense::MalformedRow { file: "<archive>".into(), line: 0, reason: e.to_string() }],
        total: 1,
    })?;
    let mut files: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    for i in 0..zip.len() {
        let mut f = zip.by_index(i).map_err(|e| GtfsError {
            offenses: vec![Offense::MalformedRow { file: "<archive>".into(), line: 0, reason: e.to_string() }],
            total: 1,
        })?;
        if f.is_dir() {
            continue;
        }
        let name = f.name().rsplit('/').next().unwrap_or("").to_string();
        let mut buf = Vec::new();
        if let Err(e) = f.read_to_end(&mut buf) {
            return Err(GtfsError {
                offenses: vec![Offense::MalformedRow { file: name, line: 0, reason: e.to_string() }],
                total: 1,
            });
        }
        files.insert(name, buf);
    }
    parse_files(&files, opts)
}

/// Parses a feed given as file name to contents.
pub fn parse_files(files: &BTreeMap<String, Vec<u8>>, opts: &GtfsOptions) -> Result<GtfsFeed, GtfsError> {
    let mut report = Report::default();
    for m in MANDATORY {
        if !files.contains_key(m) {
            report.push(Offense::MissingFile { name: m.into() });
        }
    }
    report.finish()?;
    let mut report = Report::default();
    let mut warnings = Vec::new();

    let stops_t = read_table("stops.txt", &files["stops.txt"], &mut report);
    let routes_t = read_table("routes.txt", &files["routes.txt"], &mut report);
    let trips_t = read_table("trips.txt", &files["trips.txt"], &mut report);
    let st_t = read_table("stop_times.txt", &files["stop_times.txt"], &mut report);
    let cal_t = read_table("calendar.txt", &files["calendar.txt"], &mut report);
    let dates_t = files.get("calendar_dates.txt").map(|b| read_table("calendar_dates.txt", b, &mut report));
    let freq_t = files.get("frequencies.txt").map(|b| read_table("frequencies.txt", b, &mut report));

    let mut ok = stops_t.require(&["stop_id", "stop_lat", "stop_lon"], &mut report);
    ok &= routes_t.require(&["route_id", "route_type"], &mut report);
    ok &= trips_t.require(&["route_id", "service_id", "trip_id"], &mut report);
    ok &= st_t.require(&["trip_id", "arrival_time", "departure_time", "stop_id", "stop_sequence"], &mut report);
    let days = ["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"];
    let mut cal_cols = vec!["service_id", "start_date", "end_date"];
    cal_cols.extend(days);
    ok &= cal_t.require(&cal_cols, &mut report);
    if let Some(t) = &dates_t {
        ok &= t.require(&["service_id", "date", "exception_type"], &mut report);
    }
    if let Some(t) = &freq_t {
        ok &= t.require(&["trip_id", "start_time", "end_time", "headway_secs"], &mut report);
    }
    if !ok {
        return Err(report.finish().unwrap_err());
    }

    // stops
    let mut stops: BTreeMap<String, StopRecord> = BTreeMap::new();
    let mut stations = BTreeSet::new();
    let (c_id, c_name, c_lat, c_lon, c_type) =
        (stops_t.col("stop_id"), stops_t.col("stop_name"), stops_t.col("stop_lat"), stops_t.col("stop_lon"), stops_t.col("location_type"));
    for (line, row) in &stops_t.rows {
        let id = get(row, c_id);
        if id.is_empty() {
            report.malformed("stops.txt", *line, "empty stop_id");
            continue;
        }
        let ty = get(row, c_type);
        if !(ty.is_empty() || ty == "0") {
            stations.insert(id.to_string());
            continue;
        }
        let (lat, lon) = (get(row, c_lat).parse::<f64>(), get(row, c_lon).parse::<f64>());
        let (Ok(lat), Ok(lon)) = (lat, lon) else {
            report.malformed("stops.txt", *line, "stop_lat/stop_lon not a number");
            continue;
        };
        let position = LatLon::new(lat, lon);
        if !position.is_valid() {
            report.malformed("stops.txt", *line, "coordinates out of range");
            continue;
        }
        let name = get(row, c_name);
        let rec = StopRecord { id: id.into(), name: if name.is_empty() { id.into() } else { name.into() }, position };
        if stops.insert(id.into(), rec).is_some() {
            report.malformed("stops.txt", *line, format!("duplicate stop_id `{id}`"));
        }
    }
    if !stations.is_empty() {
        warnings.push(format!("{} station/entrance records (location_type != 0) ignored", stations.len()));
    }

    // routes
    let mut lines: BTreeMap<String, LineRecord> = BTreeMap::new();
    let (c_id, c_short, c_long, c_type) =
        (routes_t.col("route_id"), routes_t.col("route_short_name"), routes_t.col("route_long_name"), routes_t.col("route_type"));
    for (line, row) in &routes_t.rows {
        let id = get(row, c_id);
        let Some(mode) = get(row, c_type).parse::<u32>().ok().and_then(Mode::from_route_type) else {
            report.malformed("routes.txt", *line, format!("unsupported route_type `{}`", get(row, c_type)));
            continue;
        };
        let name = [get(row, c_short), get(row, c_long)].into_iter().find(|s| !s.is_empty()).unwrap_or(id);
        if lines.insert(id.into(), LineRecord { id: id.into(), name: name.into(), mode }).is_some() {
            report.malformed("routes.txt", *line, format!("duplicate route_id `{id}`"));
        }
    }

    // calendars
    let mut calendars: BTreeMap<String, Calendar> = BTreeMap::new();
    let mut feed_start: Option<NaiveDate> = None;
    let day_cols: Vec<Option<usize>> = days.iter().map(|d| cal_t.col(d)).collect();
    for (line, row) in &cal_t.rows {
        let sid = get(row, cal_t.col("service_id"));
        let (Some(start), Some(end)) = (parse_date(get(row, cal_t.col("start_date"))), parse_date(get(row, cal_t.col("end_date")))) else {
            report.malformed("calendar.txt", *line, "bad start_date/end_date");
            continue;
        };
        let mut flags = [false; 7];
        let mut bad = false;
        for (i, c) in day_cols.iter().enumerate() {
            match get(row, *c) {
                "1" => flags[i] = true,
                "0" => {}
                _ => bad = true,
            }
        }
        if bad {
            report.malformed("calendar.txt", *line, "weekday flags must be 0 or 1");
            continue;
        }
        feed_start = Some(feed_start.map_or(start, |f| f.min(start)));
        let cal = Calendar { weekly: Some((flags, start, end)), added: BTreeSet::new(), removed: BTreeSet::new() };
        if calendars.insert(sid.into(), cal).is_some() {
            report.malformed("calendar.txt", *line, format!("duplicate service_id `{sid}`"));
        }
    }
    if let Some(t) = &dates_t {
        let (c_sid, c_date, c_ex) = (t.col("service_id"), t.col("date"), t.col("exception_type"));
        let only_dates = feed_start.is_none();
        for (line, row) in &t.rows {
            let sid = get(row, c_sid);
            let Some(date) = parse_date(get(row, c_date)) else {
                report.malformed("calendar_dates.txt", *line, "bad date");
                continue;
            };
            let cal = calendars
                .entry(sid.into())
                .or_insert_with(|| Calendar { weekly: None, added: BTreeSet::new(), removed: BTreeSet::new() });
            match get(row, c_ex) {
                "1" => {
                    cal.added.insert(date);
                    if only_dates {
                        feed_start = Some(feed_start.map_or(date, |f: NaiveDate| f.min(date)));
                    }
                }
                "2" => {
                    cal.removed.insert(date);
                }
                other => report.malformed("calendar_dates.txt", *line, format!("exception_type `{other}`")),
            }
        }
    }
    let reference = match opts.reference_date.or(feed_start) {
        Some(d) => {
            let back = (7 - d.weekday().num_days_from_monday()) % 7;
            d + chrono::Duration::days(back as i64)
        }
        None => {
            report.malformed("calendar.txt", 1, "no service dates; cannot choose a reference week");
            return Err(report.finish().unwrap_err());
        }
    };
    let week: Vec<NaiveDate> = (0..7).map(|i| reference + chrono::Duration::days(i)).collect();
    let service_days: BTreeMap<&str, WeekdaySet> = calendars
        .iter()
        .map(|(sid, cal)| (sid.as_str(), week.iter().filter(|d| cal.active(**d)).map(|d| weekday_of(*d)).collect()))
        .collect();

    // trips
    struct TripHead {
        line_id: String,
        days: WeekdaySet,
    }
    let mut trips: BTreeMap<String, TripHead> = BTreeMap::new();
    let (c_r, c_s, c_t) = (trips_t.col("route_id"), trips_t.col("service_id"), trips_t.col("trip_id"));
    for (line, row) in &trips_t.rows {
        let (rid, sid, tid) = (get(row, c_r), get(row, c_s), get(row, c_t));
        if !lines.contains_key(rid) {
            report.dangling("route", rid);
            continue;
        }
        let Some(days) = service_days.get(sid) else {
            report.dangling("service", sid);
            continue;
        };
        if trips.insert(tid.into(), TripHead { line_id: rid.into(), days: *days }).is_some() {
            report.malformed("trips.txt", *line, format!("duplicate trip_id `{tid}`"));
        }
    }

    // stop times
    let mut raw: BTreeMap<String, Vec<Raw>> = BTreeMap::new();
    let (c_t, c_a, c_d, c_s, c_q) =
        (st_t.col("trip_id"), st_t.col("arrival_time"), st_t.col("departure_time"), st_t.col("stop_id"), st_t.col("stop_sequence"));
    for (line, row) in &st_t.rows {
        let (tid, sid) = (get(row, c_t), get(row, c_s));
        if !trips.contains_key(tid) {
            report.dangling("trip", tid);
            continue;
        }
        if !stops.contains_key(sid) {
            report.dangling("stop", sid);
            continue;
        }
        let Ok(seq) = get(row, c_q).parse::<u32>() else {
            report.malformed("stop_times.txt", *line, "stop_sequence is not a non-negative integer");
            continue;
        };
        let time = |s: &str| if s.is_empty() { Ok(None) } else { parse_hms(s).map(Some).ok_or(()) };
        let (Ok(mut arr), Ok(mut dep)) = (time(get(row, c_a)), time(get(row, c_d))) else {
            report.malformed("stop_times.txt", *line, "time is not H:MM:SS");
            continue;
        };
        if arr.is_none() {
            arr = dep;
        }
        if dep.is_none() {
            dep = arr;
        }
        raw.entry(tid.into()).or_default().push(Raw { seq, line: *line, stop: sid.into(), arr, dep });
    }

    let mut records: Vec<TripRecord> = Vec::new();
    let mut interpolated = 0usize;
    let mut short = 0usize;
    for (tid, mut rows) in raw {
        rows.sort_by_key(|r| r.seq);
        if rows.windows(2).any(|w| w[0].seq == w[1].seq) {
            let l = rows.windows(2).find(|w| w[0].seq == w[1].seq).map_or(0, |w| w[1].line);
            report.malformed("stop_times.txt", l, format!("duplicate stop_sequence in trip `{tid}`"));
            continue;
        }
        if rows.len() < 2 {
            short += 1;
            continue;
        }
        if rows[0].dep.is_none() || rows[rows.len() - 1].arr.is_none() {
            report.malformed("stop_times.txt", rows[0].line, format!("first and last stop of trip `{tid}` need times"));
            continue;
        }
        interpolated += interpolate(&mut rows, &stops);
        let mut bad = None;
        let mut prev = 0;
        for (i, r) in rows.iter().enumerate() {
            let (a, d) = (r.arr.unwrap(), r.dep.unwrap());
            if a > d || (i > 0 && a < prev) {
                bad = Some(r.line);
                break;
            }
            prev = d;
        }
        if let Some(l) = bad {
            report.malformed("stop_times.txt", l, format!("times decrease along trip `{tid}`"));
            continue;
        }
        let head = &trips[&tid];
        records.push(TripRecord {
            id: tid.clone(),
            line_id: head.line_id.clone(),
            service_days: head.days,
            stop_times: rows
                .iter()
                .map(|r| StopTimeRecord { stop_id: r.stop.clone(), arrival: r.arr.unwrap(), departure: r.dep.unwrap() })
                .collect(),
        });
    }
    if interpolated > 0 {
        warnings.push(format!("{interpolated} stop times without times interpolated by distance"));
    }
    if short > 0 {
        warnings.push(format!("{short} trips with fewer than two stop times dropped"));
    }
    let without_times = trips.len() - records.len() - short;
    if without_times > 0 && report.total == 0 {
        warnings.push(format!("{without_times} trips without stop times dropped"));
    }

    // frequencies
    let mut expanded = 0usize;
    if let Some(t) = &freq_t {
        let mut windows: BTreeMap<String, Vec<(u64, u32, u32, u32)>> = BTreeMap::new();
        for (line, row) in &t.rows {
            let tid = get(row, t.col("trip_id"));
            if !trips.contains_key(tid) {
                report.dangling("trip", tid);
                continue;
            }
            let (s, e) = (parse_hms(get(row, t.col("start_time"))), parse_hms(get(row, t.col("end_time"))));
            let h = get(row, t.col("headway_secs")).parse::<u32>().ok().filter(|h| *h > 0);
            match (s, e, h) {
                (Some(s), Some(e), Some(h)) if s <= e => windows.entry(tid.into()).or_default().push((*line, s, e, h)),
                _ => report.malformed("frequencies.txt", *line, "bad start_time/end_time/headway_secs"),
            }
        }
        let mut out = Vec::with_capacity(records.len());
        for rec in records {
            let Some(ws) = windows.get(&rec.id) else {
                out.push(rec);
                continue;
            };
            let base = rec.stop_times[0].departure;
            for &(_, s, e, h) in ws {
                let mut t0 = s;
                while t0 < e {
                    let mut r = rec.clone();
                    r.id = format!("{}@{}", rec.id, tscore::time::format_hms(t0));
                    for st in &mut r.stop_times {
                        st.arrival = st.arrival - base + t0;
                        st.departure = st.departure - base + t0;
                    }
                    out.push(r);
                    expanded += 1;
                    t0 += h;
                }
            }
        }
        records = out;
    }

    report.finish()?;

    let total = records.len();
    records.retain(|r| !r.service_days.is_empty());
    let dropped = total - records.len();
    let ref_day = weekday_of(reference);
    let n_stop_times = records.iter().map(|r| r.stop_times.len()).sum();
    let parts = NetworkParts {
        reference_day: ref_day,
        stops: stops.into_values().collect(),
        lines: lines.into_values().collect(),
        trips: records,
    };
    let network = TransitNetwork::from_parts(parts).map_err(|e| {
        let mut r = Report::default();
        for i in e.issues {
            r.malformed("<network>", 0, i.to_string());
        }
        r.finish().unwrap_err()
    })?;
    let summary = GtfsSummary {
        reference_date: reference.format("%Y-%m-%d").to_string(),
        stops: network.stops.len(),
        lines: network.lines.len(),
        trips: network.trips.len(),
        stop_times: n_stop_times,
        trips_on_reference_day: network.trips_on(ref_day),
        dropped_inactive_trips: dropped,
        expanded_frequency_trips: expanded,
        warnings,
    };
    Ok(GtfsFeed { network, summary })
}

struct Raw {
    seq: u32,
    line: u64,
    stop: String,
    arr: Option<u32>,
    dep: Option<u32>,
}

/// Fills missing intermediate times by straight-line distance between the
/// surrounding timed stops. Returns the number of filled rows.
fn interpolate(rows: &mut [Raw], stops: &BTreeMap<String, StopRecord>) -> usize {
    let mut filled = 0;
    let mut i = 0;
    while i + 1 < rows.len() {
        if rows[i + 1].arr.is_some() {
            i += 1;
            continue;
        }
        let j = (i + 1..rows.len()).find(|&k| rows[k].arr.is_some()).expect("last row has a time");
        let mut cum = vec![0.0];
        for k in i + 1..=j {
            let d = haversine_m(stops[&rows[k - 1].stop].position, stops[&rows[k].stop].position);
            cum.push(cum.last().unwrap() + d);
        }
        let t0 = rows[i].dep.unwrap() as f64;
        let t1 = rows[j].arr.unwrap() as f64;
        let total = *cum.last().unwrap();
        for k in i + 1..j {
            let frac = if total > 0.0 { cum[k - i] / total } else { (k - i) as f64 / (j - i) as f64 };
            let t = (t0 + frac * (t1 - t0)).round() as u32;
            rows[k].arr = Some(t);
            rows[k].dep = Some(t);
            filled += 1;
        }
        i = j;
    }
    filled
}
