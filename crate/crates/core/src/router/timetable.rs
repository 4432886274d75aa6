//! Routing view of a network: trip instances over a few consecutive service
//! days, grouped into routes whose trips never overtake each other.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::config::SimConfig;
use crate::mode::ModeMask;
use crate::network::{LineIdx, StopIdx, TransitNetwork, TripIdx};
use crate::time::DAY;
use crate::walk::{walk_time_mm, StopDist, WalkError};

/// Day offsets, relative to the reference day, whose trips are routable.
/// Queries depart within two days and look at most one further day ahead;
/// the previous day contributes trips still running after midnight.
pub const DAY_OFFSETS: [i32; 4] = [-1, 0, 1, 2];

/// A trip running on a given day relative to the reference day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct TripInstance {
    pub trip: TripIdx,
    pub day_offset: i32,
}

#[derive(Debug, Clone)]
pub(crate) struct Route {
    pub line: LineIdx,
    pub stops: Vec<StopIdx>,
    /// Instance id of each row, rows sorted so that times never decrease
    /// down any column.
    pub rows: Vec<u32>,
    /// `(arrival, departure)` by row then position.
    pub times: Vec<(i64, i64)>,
}

impl Route {
    #[inline]
    pub fn at(&self, row: usize, pos: usize) -> (i64, i64) {
        self.times[row * self.stops.len() + pos]
    }
}

#[derive(Debug, Clone)]
pub struct Timetable {
    pub(crate) routes: Vec<Route>,
    /// `(route, position)` pairs serving each stop.
    pub(crate) stop_routes: Vec<Vec<(u32, u32)>>,
    /// Walking transfers `(to, seconds)` per stop.
    pub(crate) transfers: Vec<Vec<(StopIdx, u32)>>,
    pub(crate) instances: Vec<TripInstance>,
    pub(crate) stop_ids: Vec<String>,
    pub(crate) line_ids: Vec<String>,
    pub(crate) trip_ids: Vec<String>,
    pub min_change_s: u32,
    pub max_rides: usize,
    pub horizon_s: u32,
    pub mode_mask: ModeMask,
}

impl Timetable {
    pub fn new(
        net: &TransitNetwork,
        transfers: &BTreeMap<String, Vec<StopDist>>,
        mask: ModeMask,
        cfg: &SimConfig,
    ) -> Result<Timetable, WalkError> {
        let n = net.stops.len();
        let mut walk = vec![Vec::new(); n];
        for (from, list) in transfers {
            let Some(a) = net.stop_index(from) else { continue };
            for sd in list {
                if let Some(b) = net.stop_index(&sd.stop_id) {
                    walk[a.get()].push((b, walk_time_mm(sd.distance_mm, cfg.walk_speed)?));
                }
            }
        }

        let mut instances = Vec::new();
        // (line, pattern) -> instance ids
        let mut groups: BTreeMap<(LineIdx, Vec<StopIdx>), Vec<u32>> = BTreeMap::new();
        for (ti, t) in net.trips.iter().enumerate() {
            if !mask.contains(net.line(t.line).mode) {
                continue;
            }
            for d in DAY_OFFSETS {
                if !t.service_days.contains(net.reference_day.offset(d)) {
                    continue;
                }
                let shift = d as i64 * DAY as i64;
                let last = t.stop_times.last().map_or(0, |st| st.arrival as i64) + shift;
                if last < 0 {
                    continue;
                }
                let id = instances.len() as u32;
                instances.push(TripInstance { trip: TripIdx(ti as u32), day_offset: d });
                let pattern: Vec<StopIdx> = t.stop_times.iter().map(|st| st.stop).collect();
                groups.entry((t.line, pattern)).or_default().push(id);
            }
        }

        let times_of = |id: u32| -> Vec<(i64, i64)> {
            let inst = instances[id as usize];
            let shift = inst.day_offset as i64 * DAY as i64;
            net.trips[inst.trip.0 as usize]
                .stop_times
                .iter()
                .map(|st| (st.arrival as i64 + shift, st.departure as i64 + shift))
                .collect()
        };

        let mut routes = Vec::new();
        for ((line, stops), mut ids) in groups {
            let mut keyed: Vec<(Vec<(i64, i64)>, u32)> = ids.drain(..).map(|id| (times_of(id), id)).collect();
            keyed.sort();
            // Greedy split into non-overtaking chains.
            let mut chains: Vec<Vec<(Vec<(i64, i64)>, u32)>> = Vec::new();
            for item in keyed {
                let slot = chains.iter().position(|c| {
                    let last = &c.last().unwrap().0;
                    last.iter().zip(&item.0).all(|(p, q)| q.0 >= p.0 && q.1 >= p.1)
                });
                match slot {
                    Some(i) => chains[i].push(item),
                    None => chains.push(vec![item]),
                }
            }
            for chain in chains {
                let mut times = Vec::with_capacity(chain.len() * stops.len());
                let mut rows = Vec::with_capacity(chain.len());
                for (t, id) in chain {
                    times.extend(t);
                    rows.push(id);
                }
                routes.push(Route { line, stops: stops.clone(), rows, times });
            }
        }

        let mut stop_routes = vec![Vec::new(); n];
        for (ri, r) in routes.iter().enumerate() {
            for (pos, s) in r.stops.iter().enumerate() {
                stop_routes[s.get()].push((ri as u32, pos as u32));
            }
        }

        Ok(Timetable {
            routes,
            stop_routes,
            transfers: walk,
            instances,
            stop_ids: net.stops.iter().map(|s| s.id.clone()).collect(),
            line_ids: net.lines.iter().map(|l| l.id.clone()).collect(),
            trip_ids: net.trips.iter().map(|t| t.id.clone()).collect(),
            min_change_s: cfg.min_change_s,
            max_rides: cfg.max_transfers + 1,
            horizon_s: cfg.horizon_s,
            mode_mask: mask,
        })
    }

    pub fn stop_count(&self) -> usize {
        self.stop_ids.len()
    }

    pub fn stop_index(&self, id: &str) -> Option<StopIdx> {
        self.stop_ids.binary_search_by(|s| s.as_str().cmp(id)).ok().map(|i| StopIdx(i as u32))
    }

    pub fn stop_id(&self, s: StopIdx) -> &str {
        &self.stop_ids[s.get()]
    }

    pub fn route_count(&self) -> usize {
        self.routes.len()
    }

    pub fn instance_count(&self) -> usize {
        self.instances.len()
    }

    pub fn transfers_from(&self, s: StopIdx) -> &[(StopIdx, u32)] {
        &self.transfers[s.get()]
    }
}
