//! Validated in-memory transit network: stops, lines and timetabled trips.
//!
//! A network is always built from [`NetworkParts`] (string-keyed records) so
//! that edited and freshly ingested networks go through the same derivation
//! and compare equal when their records do.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use serde::{Deserialize, Serialize};

use crate::geo::LatLon;
use crate::mode::Mode;
use crate::time::{Weekday, WeekdaySet, DAY, HOUR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StopIdx(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LineIdx(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TripIdx(pub u32);

impl StopIdx {
    pub fn get(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopRecord {
    pub id: String,
    pub name: String,
    pub position: LatLon,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineRecord {
    pub id: String,
    pub name: String,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopTimeRecord {
    pub stop_id: String,
    pub arrival: u32,
    pub departure: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripRecord {
    pub id: String,
    pub line_id: String,
    pub service_days: WeekdaySet,
    pub stop_times: Vec<StopTimeRecord>,
}

/// String-keyed network records, the persisted and editable form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParts {
    pub reference_day: Weekday,
    pub stops: Vec<StopRecord>,
    pub lines: Vec<LineRecord>,
    pub trips: Vec<TripRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stop {
    pub id: String,
    pub name: String,
    pub position: LatLon,
    pub served_lines: BTreeSet<String>,
    pub hourly_frequency: [u32; 24],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopTime {
    pub stop: StopIdx,
    pub arrival: u32,
    pub departure: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trip {
    pub id: String,
    pub line: LineIdx,
    pub service_days: WeekdaySet,
    pub stop_times: Vec<StopTime>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Line {
    pub id: String,
    pub name: String,
    pub mode: Mode,
    /// Distinct stop sequences of the line's trips, sorted.
    pub patterns: Vec<Vec<StopIdx>>,
}

/// A single invariant violation found while building a network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NetworkIssue {
    DuplicateId { kind: &'static str, id: String },
    InvalidPosition { stop_id: String },
    DanglingReference { kind: &'static str, id: String },
    ShortTrip { trip_id: String },
    TimesOutOfOrder { trip_id: String, index: usize },
}

impl fmt::Display for NetworkIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NetworkIssue::DuplicateId { kind, id } => write!(f, "duplicate {kind} id `{id}`"),
            NetworkIssue::InvalidPosition { stop_id } => write!(f, "stop `{stop_id}` has an invalid position"),
            NetworkIssue::DanglingReference { kind, id } => write!(f, "reference to unknown {kind} `{id}`"),
            NetworkIssue::ShortTrip { trip_id } => write!(f, "trip `{trip_id}` has fewer than two stop times"),
            NetworkIssue::TimesOutOfOrder { trip_id, index } => {
                write!(f, "trip `{trip_id}` times decrease at stop time {index}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid network ({} issues, first: {})", .issues.len(), .issues[0])]
pub struct NetworkError {
    pub issues: Vec<NetworkIssue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitNetwork {
    pub reference_day: Weekday,
    pub stops: Vec<Stop>,
    pub lines: Vec<Line>,
    pub trips: Vec<Trip>,
    stop_lookup: BTreeMap<String, StopIdx>,
    line_lookup: BTreeMap<String, LineIdx>,
}

impl TransitNetwork {
    pub fn from_parts(mut parts: NetworkParts) -> Result<TransitNetwork, NetworkError> {
        let mut issues = Vec::new();
        parts.stops.sort_by(|a, b| a.id.cmp(&b.id));
        parts.lines.sort_by(|a, b| a.id.cmp(&b.id));
        parts.trips.sort_by(|a, b| a.id.cmp(&b.id));

        let mut stop_lookup = BTreeMap::new();
        for (i, s) in parts.stops.iter().enumerate() {
            if stop_lookup.insert(s.id.clone(), StopIdx(i as u32)).is_some() {
                issues.push(NetworkIssue::DuplicateId { kind: "stop", id: s.id.clone() });
            }
            if !s.position.is_valid() {
                issues.push(NetworkIssue::InvalidPosition { stop_id: s.id.clone() });
            }
        }
        let mut line_lookup = BTreeMap::new();
        for (i, l) in parts.lines.iter().enumerate() {
            if line_lookup.insert(l.id.clone(), LineIdx(i as u32)).is_some() {
                issues.push(NetworkIssue::DuplicateId { kind: "line", id: l.id.clone() });
            }
        }

        let mut trips = Vec::with_capacity(parts.trips.len());
        let mut last_trip: Option<&str> = None;
        for t in &parts.trips {
            if last_trip == Some(t.id.as_str()) {
                issues.push(NetworkIssue::DuplicateId { kind: "trip", id: t.id.clone() });
            }
            last_trip = Some(t.id.as_str());
            let Some(&line) = line_lookup.get(&t.line_id) else {
                issues.push(NetworkIssue::DanglingReference { kind: "line", id: t.line_id.clone() });
                continue;
            };
            if t.stop_times.len() < 2 {
                issues.push(NetworkIssue::ShortTrip { trip_id: t.id.clone() });
                continue;
            }
            let mut stop_times = Vec::with_capacity(t.stop_times.len());
            let mut prev_departure = 0;
            let mut ok = true;
            for (i, st) in t.stop_times.iter().enumerate() {
                let Some(&stop) = stop_lookup.get(&st.stop_id) else {
                    issues.push(NetworkIssue::DanglingReference { kind: "stop", id: st.stop_id.clone() });
                    ok = false;
                    break;
                };
                if st.arrival > st.departure || (i > 0 && st.arrival < prev_departure) {
                    issues.push(NetworkIssue::TimesOutOfOrder { trip_id: t.id.clone(), index: i });
                    ok = false;
                    break;
                }
                prev_departure = st.departure;
                stop_times.push(StopTime { stop, arrival: st.arrival, departure: st.departure });
            }
            if ok {
                trips.push(Trip {
                    id: t.id.clone(),
                    line,
                    service_days: t.service_days,
                    stop_times,
                });
            }
        }
        if !issues.is_empty() {
            return Err(NetworkError { issues });
        }

        let mut patterns: Vec<BTreeSet<Vec<StopIdx>>> = alloc::vec![BTreeSet::new(); parts.lines.len()];
        let mut served: Vec<BTreeSet<String>> = alloc::vec![BTreeSet::new(); parts.stops.len()];
        for t in &trips {
            let seq: Vec<StopIdx> = t.stop_times.iter().map(|st| st.stop).collect();
            for s in &seq {
                served[s.get()].insert(parts.lines[t.line.0 as usize].id.clone());
            }
            patterns[t.line.0 as usize].insert(seq);
        }
        let lines = parts
            .lines
            .into_iter()
            .zip(patterns)
            .map(|(l, p)| Line { id: l.id, name: l.name, mode: l.mode, patterns: p.into_iter().collect() })
            .collect();
        let stops = parts
            .stops
            .into_iter()
            .zip(served)
            .map(|(s, served_lines)| Stop {
                id: s.id,
                name: s.name,
                position: s.position,
                served_lines,
                hourly_frequency: [0; 24],
            })
            .collect();

        let mut net = TransitNetwork {
            reference_day: parts.reference_day,
            stops,
            lines,
            trips,
            stop_lookup,
            line_lookup,
        };
        let freq = net.frequency_vectors(net.reference_day);
        for (s, f) in net.stops.iter_mut().zip(freq) {
            s.hourly_frequency = f;
        }
        Ok(net)
    }

    pub fn to_parts(&self) -> NetworkParts {
        NetworkParts {
            reference_day: self.reference_day,
            stops: self
                .stops
                .iter()
                .map(|s| StopRecord { id: s.id.clone(), name: s.name.clone(), position: s.position })
                .collect(),
            lines: self
                .lines
                .iter()
                .map(|l| LineRecord { id: l.id.clone(), name: l.name.clone(), mode: l.mode })
                .collect(),
            trips: self
                .trips
                .iter()
                .map(|t| TripRecord {
                    id: t.id.clone(),
                    line_id: self.lines[t.line.0 as usize].id.clone(),
                    service_days: t.service_days,
                    stop_times: t
                        .stop_times
                        .iter()
                        .map(|st| StopTimeRecord {
                            stop_id: self.stops[st.stop.get()].id.clone(),
                            arrival: st.arrival,
                            departure: st.departure,
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn stop_index(&self, id: &str) -> Option<StopIdx> {
        self.stop_lookup.get(id).copied()
    }

    pub fn line_index(&self, id: &str) -> Option<LineIdx> {
        self.line_lookup.get(id).copied()
    }

    pub fn stop(&self, idx: StopIdx) -> &Stop {
        &self.stops[idx.get()]
    }

    pub fn line(&self, idx: LineIdx) -> &Line {
        &self.lines[idx.0 as usize]
    }

    /// Trips of `line`, in id order.
    pub fn trips_of_line(&self, line: LineIdx) -> impl Iterator<Item = &Trip> {
        self.trips.iter().filter(move |t| t.line == line)
    }

    fn frequency_vectors(&self, day: Weekday) -> Vec<[u32; 24]> {
        let mut out = alloc::vec![[0u32; 24]; self.stops.len()];
        let yesterday = day.offset(-1);
        for t in &self.trips {
            let today = t.service_days.contains(day);
            let overnight = t.service_days.contains(yesterday);
            if !today && !overnight {
                continue;
            }
            // The terminal stop time offers no departure.
            for st in &t.stop_times[..t.stop_times.len() - 1] {
                let dep = st.departure;
                if today && dep < DAY {
                    out[st.stop.get()][(dep / HOUR) as usize] += 1;
                }
                if overnight && dep >= DAY {
                    out[st.stop.get()][((dep / HOUR) % 24) as usize] += 1;
                }
            }
        }
        out
    }

    /// Departures per hour at every stop on `day`. Departures at or after
    /// 24:00 count towards the following day.
    pub fn stop_frequency_index(&self, day: Weekday) -> BTreeMap<String, [u32; 24]> {
        self.stops
            .iter()
            .zip(self.frequency_vectors(day))
            .map(|(s, f)| (s.id.clone(), f))
            .collect()
    }

    /// Number of trips running on `day`.
    pub fn trips_on(&self, day: Weekday) -> usize {
        self.trips.iter().filter(|t| t.service_days.contains(day)).count()
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use alloc::format;
    use alloc::string::ToString;
    use alloc::vec;

    pub fn stop(id: &str, lat: f64, lon: f64) -> StopRecord {
        StopRecord { id: id.to_string(), name: id.to_string(), position: LatLon::new(lat, lon) }
    }

    /// Trip visiting `stops` with `gaps[i]` seconds between consecutive stops.
    pub fn trip(id: &str, line: &str, stops: &[&str], start: u32, gap: u32) -> TripRecord {
        TripRecord {
            id: id.to_string(),
            line_id: line.to_string(),
            service_days: WeekdaySet::ALL,
            stop_times: stops
                .iter()
                .enumerate()
                .map(|(i, s)| StopTimeRecord {
                    stop_id: s.to_string(),
                    arrival: start + gap * i as u32,
                    departure: start + gap * i as u32,
                })
                .collect(),
        }
    }

    pub fn line(id: &str) -> LineRecord {
        LineRecord { id: id.to_string(), name: format!("Line {id}"), mode: Mode::Bus }
    }

    pub fn parts(stops: Vec<StopRecord>, lines: Vec<LineRecord>, trips: Vec<TripRecord>) -> NetworkParts {
        NetworkParts { reference_day: Weekday::Monday, stops, lines, trips }
    }

    pub fn simple() -> TransitNetwork {
        TransitNetwork::from_parts(parts(
            vec![stop("A", 0.0, 0.0), stop("B", 0.0, 0.01), stop("C", 0.0, 0.02)],
            vec![line("L")],
            vec![trip("t1", "L", &["A", "B", "C"], 7 * 3600 + 600, 300)],
        ))
        .unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    #[test]
    fn bucketing_direct() {
        let mut t1 = trip("t1", "L", &["A", "B"], 7 * 3600 + 600, 60);
        let t2 = trip("t2", "L", &["A", "B"], 7 * 3600 + 2400, 60);
        let t3 = trip("t3", "L", &["A", "B"], 8 * 3600 + 300, 60);
        t1.service_days = WeekdaySet::ALL;
        let net = TransitNetwork::from_parts(parts(
            vec![stop("A", 0.0, 0.0), stop("B", 0.0, 0.01)],
            vec![line("L")],
            vec![t1, t2, t3],
        ))
        .unwrap();
        let idx = net.stop_frequency_index(Weekday::Monday);
        let a = idx["A"];
        assert_eq!(a[7], 2);
        assert_eq!(a[8], 1);
        assert_eq!(a.iter().sum::<u32>(), 3);
        // terminal stop: no departures
        assert_eq!(idx["B"].iter().sum::<u32>(), 0);
        assert_eq!(net.stops[0].hourly_frequency, a);
    }

    #[test]
    fn overnight_departures_move_to_next_day() {
        let mut t = trip("night", "L", &["A", "B"], DAY + 1800, 60);
        t.service_days = [Weekday::Sunday].into_iter().collect();
        let net = TransitNetwork::from_parts(parts(
            vec![stop("A", 0.0, 0.0), stop("B", 0.0, 0.01)],
            vec![line("L")],
            vec![t],
        ))
        .unwrap();
        assert_eq!(net.stop_frequency_index(Weekday::Sunday)["A"].iter().sum::<u32>(), 0);
        assert_eq!(net.stop_frequency_index(Weekday::Monday)["A"][0], 1);
    }

    #[test]
    fn no_trips_on_day_gives_zero_vectors() {
        let mut t = trip("t", "L", &["A", "B"], 3600, 60);
        t.service_days = [Weekday::Saturday].into_iter().collect();
        let net = TransitNetwork::from_parts(parts(
            vec![stop("A", 0.0, 0.0), stop("B", 0.0, 0.01)],
            vec![line("L")],
            vec![t],
        ))
        .unwrap();
        assert!(net.stop_frequency_index(Weekday::Wednesday).values().all(|v| v.iter().all(|&c| c == 0)));
        let empty = TransitNetwork::from_parts(parts(vec![], vec![], vec![])).unwrap();
        assert!(empty.stop_frequency_index(Weekday::Monday).is_empty());
    }

    #[test]
    fn rejects_invalid_records() {
        let mut bad = trip("t", "L", &["A", "B"], 3600, 60);
        bad.stop_times[1].arrival = 10;
        let err = TransitNetwork::from_parts(parts(
            vec![stop("A", 0.0, 0.0), stop("B", 95.0, 0.0), stop("A", 1.0, 1.0)],
            vec![line("L")],
            vec![bad, trip("u", "X", &["A", "B"], 0, 1), trip("v", "L", &["A", "Z"], 0, 1)],
        ))
        .unwrap_err();
        let kinds: Vec<_> = err.issues.iter().map(|i| i.to_string()).collect();
        assert!(kinds.iter().any(|k| k.contains("duplicate stop")));
        assert!(kinds.iter().any(|k| k.contains("invalid position")));
        assert!(kinds.iter().any(|k| k.contains("unknown line `X`")));
        assert!(kinds.iter().any(|k| k.contains("unknown stop `Z`")));
        assert!(kinds.iter().any(|k| k.contains("times decrease")));
    }

    #[test]
    fn parts_round_trip() {
        let net = simple();
        let again = TransitNetwork::from_parts(net.to_parts()).unwrap();
        assert_eq!(net, again);
        assert_eq!(net.lines[0].patterns.len(), 1);
        assert!(net.stops[1].served_lines.contains("L"));
    }
}
