//! Round-based earliest-arrival search.
//!
//! Round `k` settles arrivals that use exactly `k` rides. Each stop carries
//! three labels: the best ride arrival (per round, kept for path recovery),
//! the earliest time a traveller stands at the stop, and the earliest time a
//! traveller is ready to board there. Between rides there is at most one
//! walking transfer; changing vehicles takes at least `min_change_s`.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use super::journey::{Journey, Leg, LegKind};
use super::timetable::Timetable;
use super::{RouteError, Router};
use crate::network::StopIdx;
use crate::time::MAX_DEPARTURE;

const INF: i64 = i64::MAX;

#[derive(Debug, Clone, Copy)]
enum BoardSrc {
    None,
    Origin,
    OriginWalk { w: u32 },
    Same { round: u8 },
    Walk { round: u8, from: StopIdx, w: u32 },
}

#[derive(Debug, Clone, Copy)]
struct BoardLabel {
    time: i64,
    src: BoardSrc,
}

#[derive(Debug, Clone, Copy)]
struct RideLabel {
    time: i64,
    route: u32,
    row: u32,
    board_pos: u32,
    board: BoardLabel,
}

#[derive(Debug, Clone, Copy)]
enum StandSrc {
    None,
    Origin,
    OriginWalk { w: u32 },
    Ride { round: u8 },
    RideWalk { round: u8, from: StopIdx, w: u32 },
}

#[derive(Debug, Clone, Copy)]
struct StandLabel {
    time: i64,
    rides: u8,
    src: StandSrc,
}

const NO_BOARD: BoardLabel = BoardLabel { time: INF, src: BoardSrc::None };
const NO_STAND: StandLabel = StandLabel { time: INF, rides: 0, src: StandSrc::None };
const NO_RIDE: RideLabel = RideLabel { time: INF, route: 0, row: 0, board_pos: 0, board: NO_BOARD };

/// Reusable per-query buffers; also holds the result of the last query.
#[derive(Debug, Clone, Default)]
pub struct RaptorScratch {
    origin: Option<StopIdx>,
    depart: i64,
    /// `ride[k - 1][stop]` for rounds `k >= 1`.
    ride: Vec<Vec<RideLabel>>,
    ride_best: Vec<i64>,
    board: Vec<BoardLabel>,
    stand: Vec<StandLabel>,
    marked: Vec<bool>,
    marked_list: Vec<StopIdx>,
    improved: Vec<bool>,
    improved_list: Vec<StopIdx>,
    queue: Vec<u32>,
    queued: Vec<u32>,
}

impl RaptorScratch {
    fn reset(&mut self, stops: usize, routes: usize, rounds: usize) {
        self.ride.resize(rounds, Vec::new());
        for r in &mut self.ride {
            r.clear();
            r.resize(stops, NO_RIDE);
        }
        self.ride_best.clear();
        self.ride_best.resize(stops, INF);
        self.board.clear();
        self.board.resize(stops, NO_BOARD);
        self.stand.clear();
        self.stand.resize(stops, NO_STAND);
        self.marked.clear();
        self.marked.resize(stops, false);
        self.marked_list.clear();
        self.improved.clear();
        self.improved.resize(stops, false);
        self.improved_list.clear();
        self.queue.clear();
        self.queue.resize(routes, u32::MAX);
        self.queued.clear();
    }

    fn mark(&mut self, s: StopIdx) {
        if !self.marked[s.get()] {
            self.marked[s.get()] = true;
            self.marked_list.push(s);
        }
    }

    /// Earliest time standing at `s`, if reachable within the horizon.
    pub fn arrival(&self, s: StopIdx) -> Option<i64> {
        let t = self.stand.get(s.get())?.time;
        (t != INF).then_some(t)
    }

    /// Travel time from the query departure to `s`.
    pub fn duration(&self, s: StopIdx) -> Option<u32> {
        self.arrival(s).map(|t| (t - self.depart) as u32)
    }

    /// Rides used by the earliest arrival at `s`.
    pub fn rides(&self, s: StopIdx) -> Option<usize> {
        self.arrival(s).map(|_| self.stand[s.get()].rides as usize)
    }

    pub fn depart(&self) -> i64 {
        self.depart
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Raptor<'a> {
    pub tt: &'a Timetable,
}

impl<'a> Raptor<'a> {
    pub fn new(tt: &'a Timetable) -> Self {
        Raptor { tt }
    }

    /// Runs one query; results are read from `sc`.
    pub fn run(&self, sc: &mut RaptorScratch, origin: StopIdx, depart: u32) {
        let tt = self.tt;
        let rounds = tt.max_rides;
        sc.reset(tt.stop_count(), tt.routes.len(), rounds);
        let t0 = depart as i64;
        let limit = t0 + tt.horizon_s as i64;
        let change = tt.min_change_s as i64;
        sc.origin = Some(origin);
        sc.depart = t0;

        sc.stand[origin.get()] = StandLabel { time: t0, rides: 0, src: StandSrc::Origin };
        sc.board[origin.get()] = BoardLabel { time: t0, src: BoardSrc::Origin };
        sc.mark(origin);
        for &(q, w) in tt.transfers_from(origin) {
            let t = t0 + w as i64;
            if t <= limit && t < sc.stand[q.get()].time {
                sc.stand[q.get()] = StandLabel { time: t, rides: 0, src: StandSrc::OriginWalk { w } };
            }
            if t <= limit && t < sc.board[q.get()].time {
                sc.board[q.get()] = BoardLabel { time: t, src: BoardSrc::OriginWalk { w } };
                sc.mark(q);
            }
        }

        for k in 1..=rounds {
            if sc.marked_list.is_empty() {
                break;
            }
            let mut marked = core::mem::take(&mut sc.marked_list);
            for &p in &marked {
                sc.marked[p.get()] = false;
                for &(r, pos) in &tt.stop_routes[p.get()] {
                    let q = &mut sc.queue[r as usize];
                    if *q == u32::MAX {
                        sc.queued.push(r);
                    }
                    *q = (*q).min(pos);
                }
            }
            marked.clear();
            sc.marked_list = marked;
            sc.queued.sort_unstable();
            let queued = core::mem::take(&mut sc.queued);
            for &r in &queued {
                let start = core::mem::replace(&mut sc.queue[r as usize], u32::MAX) as usize;
                self.scan_route(sc, k, r, start, limit);
            }
            sc.queued = queued;
            sc.queued.clear();

            let mut improved = core::mem::take(&mut sc.improved_list);
            improved.sort_unstable();
            for &q in &improved {
                sc.improved[q.get()] = false;
                let lab = sc.ride[k - 1][q.get()];
                let round = k as u8;
                if lab.time < sc.stand[q.get()].time {
                    sc.stand[q.get()] = StandLabel { time: lab.time, rides: round, src: StandSrc::Ride { round } };
                }
                let tb = lab.time + change;
                if tb < sc.board[q.get()].time {
                    sc.board[q.get()] = BoardLabel { time: tb, src: BoardSrc::Same { round } };
                    sc.mark(q);
                }
                for &(p, w) in tt.transfers_from(q) {
                    let ta = lab.time + w as i64;
                    if ta <= limit && ta < sc.stand[p.get()].time {
                        sc.stand[p.get()] = StandLabel { time: ta, rides: round, src: StandSrc::RideWalk { round, from: q, w } };
                    }
                    let tb = lab.time + (w as i64).max(change);
                    if tb < sc.board[p.get()].time {
                        sc.board[p.get()] = BoardLabel { time: tb, src: BoardSrc::Walk { round, from: q, w } };
                        sc.mark(p);
                    }
                }
            }
            improved.clear();
            sc.improved_list = improved;
        }
    }

    fn scan_route(&self, sc: &mut RaptorScratch, k: usize, r: u32, start: usize, limit: i64) {
        let route = &self.tt.routes[r as usize];
        let nrows = route.rows.len();
        // (row, board position, board label)
        let mut cur: Option<(usize, usize, BoardLabel)> = None;
        for i in start..route.stops.len() {
            let p = route.stops[i];
            if let Some((row, bp, bl)) = cur {
                let a = route.at(row, i).0;
                if a <= limit && a < sc.ride_best[p.get()] {
                    sc.ride_best[p.get()] = a;
                    sc.ride[k - 1][p.get()] = RideLabel { time: a, route: r, row: row as u32, board_pos: bp as u32, board: bl };
                    if !sc.improved[p.get()] {
                        sc.improved[p.get()] = true;
                        sc.improved_list.push(p);
                    }
                }
            }
            let bl = sc.board[p.get()];
            if bl.time == INF || bl.time > limit {
                continue;
            }
            let upper = match cur {
                None => nrows,
                Some((row, _, _)) if bl.time <= route.at(row, i).1 => row,
                Some(_) => continue,
            };
            let found = partition_point(upper, |row| route.at(row, i).1 < bl.time);
            if found < upper {
                cur = Some((found, i, bl));
            }
        }
    }

    /// Journey to the stop label of `target` from the last query in `sc`.
    pub fn journey(&self, sc: &RaptorScratch, target: StopIdx) -> Option<Journey> {
        let lab = sc.stand.get(target.get())?;
        if lab.time == INF {
            return None;
        }
        let origin = sc.origin?;
        let mut rev: Vec<Leg> = Vec::new();
        match lab.src {
            StandSrc::None | StandSrc::Origin => {}
            StandSrc::OriginWalk { w } => rev.push(self.walk(origin, target, sc.depart, w)),
            StandSrc::Ride { round } => self.ride_chain(sc, round, target, &mut rev),
            StandSrc::RideWalk { round, from, w } => {
                rev.push(self.walk(from, target, sc.ride[round as usize - 1][from.get()].time, w));
                self.ride_chain(sc, round, from, &mut rev);
            }
        }
        let mut j = Journey::empty(sc.depart);
        for leg in rev.into_iter().rev() {
            j.push(leg);
        }
        Some(j)
    }

    fn walk(&self, from: StopIdx, to: StopIdx, at: i64, w: u32) -> Leg {
        Leg {
            kind: LegKind::Walk,
            from: String::from(self.tt.stop_id(from)),
            to: String::from(self.tt.stop_id(to)),
            depart: at,
            arrive: at + w as i64,
            line_id: None,
            trip_id: None,
            day_offset: 0,
        }
    }

    fn ride_chain(&self, sc: &RaptorScratch, mut round: u8, mut at: StopIdx, rev: &mut Vec<Leg>) {
        let origin = sc.origin.unwrap();
        loop {
            let lab = sc.ride[round as usize - 1][at.get()];
            let route = &self.tt.routes[lab.route as usize];
            let b = route.stops[lab.board_pos as usize];
            let inst = self.tt.instances[route.rows[lab.row as usize] as usize];
            rev.push(Leg {
                kind: LegKind::Ride,
                from: String::from(self.tt.stop_id(b)),
                to: String::from(self.tt.stop_id(at)),
                depart: route.at(lab.row as usize, lab.board_pos as usize).1,
                arrive: lab.time,
                line_id: Some(self.tt.line_ids[route.line.0 as usize].clone()),
                trip_id: Some(self.tt.trip_ids[inst.trip.0 as usize].clone()),
                day_offset: inst.day_offset,
            });
            match lab.board.src {
                BoardSrc::None | BoardSrc::Origin => return,
                BoardSrc::OriginWalk { w } => {
                    rev.push(self.walk(origin, b, sc.depart, w));
                    return;
                }
                BoardSrc::Same { round: r } => {
                    round = r;
                    at = b;
                }
                BoardSrc::Walk { round: r, from, w } => {
                    rev.push(self.walk(from, b, sc.ride[r as usize - 1][from.get()].time, w));
                    round = r;
                    at = from;
                }
            }
        }
    }
}

fn partition_point(n: usize, pred: impl Fn(usize) -> bool) -> usize {
    let (mut lo, mut hi) = (0, n);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if pred(mid) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}

impl Router for Timetable {
    fn earliest_arrival(
        &self,
        origin: &str,
        targets: &[&str],
        depart_at: u32,
    ) -> Result<BTreeMap<String, (u32, Journey)>, RouteError> {
        if depart_at >= MAX_DEPARTURE {
            return Err(RouteError::DepartureOutOfRange(depart_at));
        }
        let o = self.stop_index(origin).ok_or_else(|| RouteError::UnknownStop(String::from(origin)))?;
        let mut idx = Vec::with_capacity(targets.len());
        for t in targets {
            idx.push((*t, self.stop_index(t).ok_or_else(|| RouteError::UnknownStop(String::from(*t)))?));
        }
        let raptor = Raptor::new(self);
        let mut sc = RaptorScratch::default();
        raptor.run(&mut sc, o, depart_at);
        let mut out = BTreeMap::new();
        for (id, s) in idx {
            if let (Some(t), Some(j)) = (sc.arrival(s), raptor.journey(&sc, s)) {
                out.insert(String::from(id), (t as u32, j));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SimConfig;
    use crate::mode::ModeMask;
    use crate::network::test_support::*;
    use crate::network::{TransitNetwork, TripRecord};
    use crate::walk::StopDist;
    use alloc::vec;

    fn tt(net: &TransitNetwork, transfers: &[(&str, &str, u64)], cfg: &SimConfig) -> Timetable {
        let mut map: BTreeMap<String, Vec<StopDist>> = BTreeMap::new();
        for (a, b, mm) in transfers {
            map.entry((*a).into()).or_default().push(StopDist { distance_mm: *mm, stop_id: (*b).into() });
            map.entry((*b).into()).or_default().push(StopDist { distance_mm: *mm, stop_id: (*a).into() });
        }
        Timetable::new(net, &map, ModeMask::ALL, cfg).unwrap()
    }

    fn arrive(t: &Timetable, from: &str, to: &str, at: u32) -> Option<u32> {
        t.earliest_arrival(from, &[to], at).unwrap().get(to).map(|(a, _)| *a)
    }

    const H7: u32 = 7 * 3600;

    #[test]
    fn origin_is_target() {
        let net = simple();
        let t = tt(&net, &[], &SimConfig::default());
        let r = t.earliest_arrival("A", &["A"], 1000).unwrap();
        assert_eq!(r["A"].0, 1000);
        assert!(r["A"].1.legs.is_empty());
        assert_eq!(t.earliest_arrival("Q", &["A"], 0), Err(RouteError::UnknownStop("Q".into())));
    }

    #[test]
    fn next_day_or_horizon() {
        let net = simple();
        let t = tt(&net, &[], &SimConfig::default());
        assert_eq!(arrive(&t, "A", "B", H7), Some(H7 + 900));
        // the only trip has left; tomorrow's is beyond 24 h
        assert_eq!(arrive(&t, "A", "B", H7 + 601), None);
        let two = TransitNetwork::from_parts(parts(
            vec![stop("A", 0.0, 0.0), stop("B", 0.0, 0.01)],
            vec![line("L")],
            vec![trip("t1", "L", &["A", "B"], 6 * 3600, 300), trip("t2", "L", &["A", "B"], 20 * 3600, 300)],
        ))
        .unwrap();
        let t = tt(&two, &[], &SimConfig::default());
        assert_eq!(arrive(&t, "A", "B", 21 * 3600), Some(86_400 + 6 * 3600 + 300));
    }

    fn two_lines(gap: u32) -> TransitNetwork {
        TransitNetwork::from_parts(parts(
            vec![stop("A", 0.0, 0.0), stop("B", 0.0, 0.01), stop("C", 0.0, 0.011), stop("D", 0.0, 0.02)],
            vec![line("L1"), line("L2")],
            vec![
                trip("a", "L1", &["A", "B"], H7, 600),
                trip("b1", "L2", &["C", "D"], H7 + 600 + gap, 600),
                trip("b2", "L2", &["C", "D"], H7 + 600 + 1800, 600),
                trip("c", "L2", &["B", "D"], H7 + 600 + 30, 60),
            ],
        ))
        .unwrap()
    }

    #[test]
    fn transfer_buffer_rules() {
        let cfg = SimConfig::default();
        // 120 m walk at 1.2 m/s = 100 s
        let net = two_lines(100);
        let t = tt(&net, &[("B", "C", 120_000)], &cfg);
        assert_eq!(arrive(&t, "A", "D", H7), Some(H7 + 1200 + 100));
        let net = two_lines(99);
        let t = tt(&net, &[("B", "C", 120_000)], &cfg);
        // b1 missed, same-stop change at B to trip c also too tight (30 s < 60 s)
        assert_eq!(arrive(&t, "A", "D", H7), Some(H7 + 600 + 1800 + 600));
        // short walk still needs the full change time
        let net = two_lines(59);
        let t = tt(&net, &[("B", "C", 12_000)], &cfg);
        assert_eq!(arrive(&t, "A", "D", H7), Some(H7 + 600 + 1800 + 600));
        let net = two_lines(60);
        let t = tt(&net, &[("B", "C", 12_000)], &cfg);
        assert_eq!(arrive(&t, "A", "D", H7), Some(H7 + 1200 + 60));
        // walking alone after the ride
        assert_eq!(arrive(&t, "A", "C", H7), Some(H7 + 600 + 10));
    }

    #[test]
    fn ride_cap() {
        let names = ["S0", "S1", "S2", "S3", "S4", "S5", "S6", "S7"];
        let stops = names.iter().enumerate().map(|(i, n)| stop(n, 0.0, i as f64 * 0.01)).collect();
        let lines = (0..7).map(|i| line(&alloc::format!("L{i}"))).collect();
        let trips: Vec<TripRecord> = (0..7)
            .map(|i| trip(&alloc::format!("t{i}"), &alloc::format!("L{i}"), &[names[i], names[i + 1]], H7 + i as u32 * 600, 300))
            .collect();
        let net = TransitNetwork::from_parts(parts(stops, lines, trips)).unwrap();
        let t = tt(&net, &[], &SimConfig::default());
        assert!(arrive(&t, "S0", "S5", H7).is_some());
        assert_eq!(arrive(&t, "S0", "S6", H7), None);
        let j = &t.earliest_arrival("S0", &["S5"], H7).unwrap()["S5"].1;
        assert_eq!(j.rides(), 5);
        assert!(j.is_contiguous());
    }

    #[test]
    fn journey_legs_replay() {
        let net = two_lines(100);
        let t = tt(&net, &[("B", "C", 120_000)], &SimConfig::default());
        let (a, j) = t.earliest_arrival("A", &["D"], H7 - 50).unwrap().remove("D").unwrap();
        assert!(j.is_contiguous());
        assert_eq!(j.arrive, a as i64);
        let kinds: Vec<LegKind> = j.legs.iter().map(|l| l.kind).collect();
        assert_eq!(kinds, vec![LegKind::Wait, LegKind::Ride, LegKind::Walk, LegKind::Ride]);
        assert_eq!(j.legs[3].trip_id.as_deref(), Some("b1"));
    }

    #[test]
    fn mode_mask_excludes_lines() {
        let net = simple();
        let mask = ModeMask::ALL.without(crate::mode::Mode::Bus);
        let t = Timetable::new(&net, &BTreeMap::new(), mask, &SimConfig::default()).unwrap();
        assert_eq!(arrive(&t, "A", "C", H7), None);
        assert_eq!(t.route_count(), 0);
    }
}
