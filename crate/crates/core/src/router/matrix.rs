//! Hour-bucketed stop to POI travel times.
//!
//! Each hour is sampled at a few departures (minutes past the hour). A sample
//! is the earliest arrival at any of the POI's closest stops plus the walk
//! from that stop to the POI. The hour entry is the mean over reachable
//! samples, rounded half up to whole seconds.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::journey::{Journey, Leg, LegKind};
use super::raptor::{Raptor, RaptorScratch};
use super::timetable::Timetable;
use super::RouteError;
use crate::mode::ModeMask;
use crate::network::StopIdx;
use crate::time::HOUR;

pub const UNREACHABLE: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixMeta {
    pub mode_mask: ModeMask,
    pub sampling_minutes: Vec<u32>,
}

/// Dense `T[stop][poi][hour]` in seconds, [`UNREACHABLE`] when no sample of
/// the hour reaches the POI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TravelTimeMatrix {
    pub meta: MatrixMeta,
    pub stop_ids: Vec<String>,
    pub poi_ids: Vec<String>,
    values: Vec<u32>,
}

impl TravelTimeMatrix {
    pub fn from_values(meta: MatrixMeta, stop_ids: Vec<String>, poi_ids: Vec<String>, values: Vec<u32>) -> Option<TravelTimeMatrix> {
        (values.len() == stop_ids.len() * poi_ids.len() * 24).then_some(TravelTimeMatrix { meta, stop_ids, poi_ids, values })
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn stop_pos(&self, id: &str) -> Option<usize> {
        self.stop_ids.binary_search_by(|s| s.as_str().cmp(id)).ok()
    }

    pub fn poi_pos(&self, id: &str) -> Option<usize> {
        self.poi_ids.binary_search_by(|s| s.as_str().cmp(id)).ok()
    }

    /// The 24 hourly values for one (stop, poi) pair.
    pub fn hours(&self, stop: usize, poi: usize) -> &[u32] {
        let i = (stop * self.poi_ids.len() + poi) * 24;
        &self.values[i..i + 24]
    }

    pub fn get(&self, hour: usize, stop: usize, poi: usize) -> u32 {
        self.hours(stop, poi)[hour]
    }

    pub fn get_by_id(&self, hour: usize, stop: &str, poi: &str) -> Option<u32> {
        Some(self.get(hour, self.stop_pos(stop)?, self.poi_pos(poi)?))
    }

    /// All values of one origin stop, `[poi][hour]`.
    pub fn stop_row(&self, stop: usize) -> &[u32] {
        let w = self.poi_ids.len() * 24;
        &self.values[stop * w..(stop + 1) * w]
    }

    /// Replaces (or inserts) the column of a POI.
    pub fn set_poi_column(&mut self, poi: &str, column: &[[u32; 24]]) {
        assert_eq!(column.len(), self.stop_ids.len());
        let p = match self.poi_pos(poi) {
            Some(p) => p,
            None => {
                let p = self.poi_ids.partition_point(|x| x.as_str() < poi);
                let old = self.poi_ids.len();
                let mut values = Vec::with_capacity(self.stop_ids.len() * (old + 1) * 24);
                for s in 0..self.stop_ids.len() {
                    let row = &self.values[s * old * 24..(s + 1) * old * 24];
                    values.extend_from_slice(&row[..p * 24]);
                    values.extend_from_slice(&[UNREACHABLE; 24]);
                    values.extend_from_slice(&row[p * 24..]);
                }
                self.values = values;
                self.poi_ids.insert(p, String::from(poi));
                p
            }
        };
        let np = self.poi_ids.len();
        for (s, col) in column.iter().enumerate() {
            let i = (s * np + p) * 24;
            self.values[i..i + 24].copy_from_slice(col);
        }
    }

    pub fn remove_poi(&mut self, poi: &str) {
        let Some(p) = self.poi_pos(poi) else { return };
        let old = self.poi_ids.len();
        let mut values = Vec::with_capacity(self.stop_ids.len() * (old - 1) * 24);
        for s in 0..self.stop_ids.len() {
            let row = &self.values[s * old * 24..(s + 1) * old * 24];
            values.extend_from_slice(&row[..p * 24]);
            values.extend_from_slice(&row[(p + 1) * 24..]);
        }
        self.values = values;
        self.poi_ids.remove(p);
    }
}

/// Closest stops of a POI with the final walking time from each.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PoiAccess {
    pub stops: Vec<(StopIdx, u32)>,
}

/// Durations from one origin to every stop for each sampled departure,
/// `[sample][stop]`.
pub type OriginDurations = Vec<u32>;

/// Cached stop-to-stop durations for every origin, used to rebuild POI
/// columns without rerouting.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StopDurations {
    pub n_stops: usize,
    pub samples: usize,
    pub data: Vec<u32>,
}

impl StopDurations {
    pub fn origin(&self, s: usize) -> &[u32] {
        let w = self.samples * self.n_stops;
        &self.data[s * w..(s + 1) * w]
    }
}

fn hour_value(sum: u64, count: u64) -> u32 {
    if count == 0 {
        UNREACHABLE
    } else {
        ((sum + count / 2) / count) as u32
    }
}

/// Hourly entries for one (origin, POI) pair from the origin's durations.
pub fn poi_column(durs: &[u32], n_stops: usize, per_hour: usize, access: &PoiAccess) -> [u32; 24] {
    let mut out = [UNREACHABLE; 24];
    for (h, slot) in out.iter_mut().enumerate() {
        let (mut sum, mut count) = (0u64, 0u64);
        for m in 0..per_hour {
            let base = (h * per_hour + m) * n_stops;
            let best = access
                .stops
                .iter()
                .filter_map(|(q, w)| {
                    let d = durs[base + q.get()];
                    (d != UNREACHABLE).then(|| d as u64 + *w as u64)
                })
                .min();
            if let Some(v) = best {
                sum += v;
                count += 1;
            }
        }
        *slot = hour_value(sum, count);
    }
    out
}

/// Matrix construction, split per origin stop so callers can parallelize.
pub struct MatrixBuilder<'a> {
    pub raptor: Raptor<'a>,
    pub departures: Vec<u32>,
    pub per_hour: usize,
    pub poi_ids: Vec<String>,
    pub access: Vec<PoiAccess>,
    pub meta: MatrixMeta,
}

impl<'a> MatrixBuilder<'a> {
    /// `access[i]` belongs to `poi_ids[i]`; ids must be sorted.
    pub fn new(tt: &'a Timetable, sampling_minutes: &[u32], poi_ids: Vec<String>, access: Vec<PoiAccess>) -> Self {
        let departures = (0..24u32)
            .flat_map(|h| sampling_minutes.iter().map(move |m| h * HOUR + m * 60))
            .collect();
        MatrixBuilder {
            raptor: Raptor::new(tt),
            departures,
            per_hour: sampling_minutes.len(),
            poi_ids,
            access,
            meta: MatrixMeta { mode_mask: tt.mode_mask, sampling_minutes: sampling_minutes.to_vec() },
        }
    }

    pub fn stop_count(&self) -> usize {
        self.raptor.tt.stop_count()
    }

    pub fn origin_durations(&self, sc: &mut RaptorScratch, origin: StopIdx) -> OriginDurations {
        let n = self.stop_count();
        let mut out = vec![UNREACHABLE; self.departures.len() * n];
        for (i, &t) in self.departures.iter().enumerate() {
            self.raptor.run(sc, origin, t);
            for q in 0..n {
                if let Some(d) = sc.duration(StopIdx(q as u32)) {
                    out[i * n + q] = d;
                }
            }
        }
        out
    }

    /// Matrix row `[poi][hour]` for one origin.
    pub fn row(&self, durs: &[u32]) -> Vec<u32> {
        let n = self.stop_count();
        let mut row = Vec::with_capacity(self.access.len() * 24);
        for a in &self.access {
            row.extend_from_slice(&poi_column(durs, n, self.per_hour, a));
        }
        row
    }

    pub fn assemble(&self, rows: Vec<Vec<u32>>) -> TravelTimeMatrix {
        let values = rows.into_iter().flatten().collect();
        TravelTimeMatrix {
            meta: self.meta.clone(),
            stop_ids: self.raptor.tt.stop_ids.clone(),
            poi_ids: self.poi_ids.clone(),
            values,
        }
    }

    /// Sequential build; also returns the stop-to-stop durations.
    pub fn build(&self) -> (TravelTimeMatrix, StopDurations) {
        let mut sc = RaptorScratch::default();
        let n = self.stop_count();
        let mut rows = Vec::with_capacity(n);
        let mut data = Vec::with_capacity(n * n * self.departures.len());
        for s in 0..n {
            let d = self.origin_durations(&mut sc, StopIdx(s as u32));
            rows.push(self.row(&d));
            data.extend_from_slice(&d);
        }
        let cache = StopDurations { n_stops: n, samples: self.departures.len(), data };
        (self.assemble(rows), cache)
    }

    /// Journey behind the first reachable sample of an hour, ending with the
    /// walk to the POI.
    pub fn explain(&self, origin: StopIdx, poi: usize, hour: usize) -> Result<Journey, RouteError> {
        let mut sc = RaptorScratch::default();
        let access = &self.access[poi];
        for m in 0..self.per_hour {
            self.raptor.run(&mut sc, origin, self.departures[hour * self.per_hour + m]);
            let best = access
                .stops
                .iter()
                .filter_map(|(q, w)| sc.duration(*q).map(|d| (d as u64 + *w as u64, *q, *w)))
                .min_by_key(|(v, _, _)| *v);
            if let Some((_, q, w)) = best {
                let mut j = self.raptor.journey(&sc, q).ok_or(RouteError::EntryUnreachable)?;
                if w > 0 || j.legs.is_empty() {
                    let at = j.arrive;
                    j.push(Leg {
                        kind: LegKind::Walk,
                        from: String::from(self.raptor.tt.stop_id(q)),
                        to: self.poi_ids[poi].clone(),
                        depart: at,
                        arrive: at + w as i64,
                        line_id: None,
                        trip_id: None,
                        day_offset: 0,
                    });
                }
                return Ok(j);
            }
        }
        Err(RouteError::EntryUnreachable)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_rounds_half_up() {
        assert_eq!(hour_value(0, 0), UNREACHABLE);
        assert_eq!(hour_value(3, 2), 2);
        assert_eq!(hour_value(5, 4), 1);
        assert_eq!(hour_value(6, 4), 2);
    }

    #[test]
    fn column_takes_best_stop_and_skips_unreachable_samples() {
        // 2 stops, 2 samples per hour
        let mut durs = vec![UNREACHABLE; 24 * 2 * 2];
        durs[0] = 100; // h0 m0 stop0
        durs[1] = 50; // h0 m0 stop1
        durs[2] = 300; // h0 m1 stop0
        let access = PoiAccess { stops: vec![(StopIdx(0), 10), (StopIdx(1), 100)] };
        let col = poi_column(&durs, 2, 2, &access);
        assert_eq!(col[0], (110 + 310 + 1) / 2);
        assert!(col[1..].iter().all(|&v| v == UNREACHABLE));
    }

    #[test]
    fn set_and_remove_columns() {
        let meta = MatrixMeta { mode_mask: ModeMask::ALL, sampling_minutes: vec![0] };
        let mut m = TravelTimeMatrix::from_values(meta, vec!["s1".into(), "s2".into()], vec!["b".into()], vec![7; 48]).unwrap();
        m.set_poi_column("a", &[[1; 24], [2; 24]]);
        assert_eq!(m.poi_ids, vec!["a", "b"]);
        assert_eq!(m.get(5, 1, 0), 2);
        assert_eq!(m.get(5, 1, 1), 7);
        m.remove_poi("a");
        assert_eq!(m.values(), &[7; 48][..]);
    }
}
