//! Kernels for household-level public transport accessibility scoring.
//!
//! The crate is `no_std` and only needs `alloc`. It owns the in-memory data
//! model (transit network, street graph, places), the walking and transit
//! routers, the travel-time matrix, mobility-profile evaluation, the
//! copy-on-write edit overlay and the spatial analysis helpers. Reading feeds,
//! persisting tables and serving them lives in the `tsim` companion crate.
//!
//! Typical flow:
//!
//! 1. Build a [`network::TransitNetwork`] and a [`street::StreetGraph`] with
//!    snapped [`places::Poi`]s and [`places::Residence`]s.
//! 2. [`snapshot::Snapshot::build`] derives the walk table, stop transfers,
//!    home areas and the [`router::TravelTimeMatrix`].
//! 3. [`profile::score_scenario`] turns a [`profile::ScenarioDefinition`] into
//!    [`profile::ScoreSurface`]s.
//! 4. [`edit::ScenarioOverlay`] applies edits and rescores only the dirty
//!    residences.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod config;
pub mod edit;
pub mod geo;
pub mod mode;
pub mod network;
pub mod places;
pub mod profile;
pub mod router;
pub mod snapshot;
pub mod street;
pub mod time;
pub mod walk;

pub use config::SimConfig;
pub use geo::LatLon;
pub use mode::{Mode, ModeMask};
pub use network::TransitNetwork;
pub use snapshot::Snapshot;
pub use time::Weekday;
