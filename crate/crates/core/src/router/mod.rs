//! Time-dependent transit routing and the hour-bucketed stop to POI matrix.

mod journey;
mod matrix;
mod raptor;
mod timetable;

pub use journey::{Journey, Leg, LegKind};
pub use matrix::{poi_column, MatrixBuilder, MatrixMeta, PoiAccess, StopDurations, TravelTimeMatrix, UNREACHABLE};
pub use raptor::{Raptor, RaptorScratch};
pub use timetable::{Timetable, TripInstance};

use alloc::collections::BTreeMap;
use alloc::string::String;

/// Errors raised by routing queries.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RouteError {
    #[error("unknown stop `{0}`")]
    UnknownStop(String),
    #[error("departure {0} outside the two-day query window")]
    DepartureOutOfRange(u32),
    #[error("matrix entry is unreachable")]
    EntryUnreachable,
    #[error("unknown poi `{0}`")]
    UnknownPoi(String),
}

/// Earliest-arrival routing between stops.
pub trait Router {
    /// Earliest arrival (seconds since reference midnight) and journey for
    /// every reachable target.
    fn earliest_arrival(
        &self,
        origin: &str,
        targets: &[&str],
        depart_at: u32,
    ) -> Result<BTreeMap<String, (u32, Journey)>, RouteError>;
}
