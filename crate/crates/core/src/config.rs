//! Tunable constants shared by the precompute and scoring stages.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Closest stops kept per residence and per POI.
    pub n_closest: usize,
    /// m/s, used for transfers, final walks and profiles without their own speed.
    pub walk_speed: f64,
    /// Minutes past each hour at which matrix departures are sampled.
    pub sampling_minutes: Vec<u32>,
    /// Walking transfers between stops up to this network distance.
    pub transfer_max_m: f64,
    /// Minimum time to change vehicles, also applied to same-stop changes.
    pub min_change_s: u32,
    pub max_transfers: usize,
    /// Horizon after departure beyond which a target counts as unreachable.
    pub horizon_s: u32,
    /// Entities farther than this from any walkable node are dropped.
    pub snap_radius_m: f64,
    /// Network radius of a residence's home area for random sampling.
    pub home_radius_m: f64,
    /// Walking legs added per visit (2 = out and back).
    pub walk_legs_per_visit: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_closest: 3,
            walk_speed: 1.2,
            sampling_minutes: vec![0, 15, 30, 45],
            transfer_max_m: 300.0,
            min_change_s: 60,
            max_transfers: 4,
            horizon_s: 86_400,
            snap_radius_m: 500.0,
            home_radius_m: 8_000.0,
            walk_legs_per_visit: 2,
        }
    }
}
