//! Mobility profiles and their evaluation into weekly travel times.
//!
//! For one profile entry (a POI category) the expected time between a stop
//! and a POI weights the hourly matrix values by the entry's hourly
//! likelihoods, normalized over the reachable hours. A residence takes, per
//! category, the best of its closest stops including the walk to it, and the
//! weekly time is the visit-weighted mean over categories.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::geo::haversine_m;
use crate::mode::ModeMask;
use crate::places::{Poi, PoiCategory, Residence, Sampling, SamplingKind};
use crate::router::{TravelTimeMatrix, UNREACHABLE};
use crate::walk::{walk_time, WalkTable};

/// Group key of the share-weighted surface.
pub const AGGREGATE: &str = "aggregate";

/// Car baseline: constant urban speed on straight-line distance times a
/// detour factor. An approximation, not a routed car time.
pub const CAR_SPEED_KMH: f64 = 30.0;
pub const CAR_DETOUR: f64 = 1.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileEntry {
    pub category: String,
    pub visits_per_week: f64,
    pub hourly_weights: [f64; 24],
    /// Falls back to the category default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<Sampling>,
    #[serde(default = "one")]
    pub near_k: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MobilityProfile {
    pub group_id: String,
    pub group_name: String,
    /// m/s; the configured default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub walking_speed: Option<f64>,
    pub entries: Vec<ProfileEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDefinition {
    pub scenario_id: String,
    pub name: String,
    pub profiles: Vec<MobilityProfile>,
    pub demographic_shares: BTreeMap<String, f64>,
    #[serde(default)]
    pub mode_mask: ModeMask,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProfileError {
    #[error("group `{group}`, category `{category}`: all hourly weights are zero")]
    AllWeightsZero { group: String, category: String },
    #[error("group `{group}`: invalid entry for `{category}`: {reason}")]
    InvalidEntry { group: String, category: String, reason: &'static str },
    #[error("group `{0}` has no entry with visits")]
    NoVisits(String),
    #[error("group `{0}`: walking speed must be positive")]
    NonPositiveSpeed(String),
    #[error("unknown category `{0}`")]
    UnknownCategory(String),
    #[error("category `{0}` has no POIs")]
    EmptyCategory(String),
    #[error("specific POI `{0}` does not exist")]
    MissingSpecificPoi(String),
    #[error("category `{0}` defaults to specific sampling; the entry must name a POI")]
    SpecificWithoutPoi(String),
    #[error("scenario `{0}`: demographic shares must lie in [0, 1] and sum to 1")]
    InvalidShares(String),
    #[error("scenario `{scenario}`: group `{group}` {reason}")]
    GroupMismatch { scenario: String, group: String, reason: &'static str },
}

/// Normalized hourly weighting of one (stop, POI) series. `None` when no
/// weighted hour is reachable.
pub fn expected_poi_time(weights: &[f64; 24], hours: &[u32]) -> Result<Option<f64>, ProfileError> {
    if weights.iter().all(|&w| w == 0.0) {
        return Err(ProfileError::AllWeightsZero { group: String::new(), category: String::new() });
    }
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for (w, &t) in weights.iter().zip(hours) {
        if *w > 0.0 && t != UNREACHABLE {
            num += w * t as f64;
            den += w;
        }
    }
    Ok((den > 0.0).then(|| num / den))
}

impl MobilityProfile {
    pub fn speed(&self, cfg: &SimConfig) -> f64 {
        self.walking_speed.unwrap_or(cfg.walk_speed)
    }

    pub fn validate(&self, categories: &[PoiCategory], pois: &BTreeMap<String, Poi>) -> Result<(), ProfileError> {
        if let Some(s) = self.walking_speed {
            if !(s > 0.0 && s.is_finite()) {
                return Err(ProfileError::NonPositiveSpeed(self.group_id.clone()));
            }
        }
        let bad = |category: &str, reason| ProfileError::InvalidEntry {
            group: self.group_id.clone(),
            category: String::from(category),
            reason,
        };
        for e in &self.entries {
            let cat = categories
                .iter()
                .find(|c| c.id == e.category)
                .ok_or_else(|| ProfileError::UnknownCategory(e.category.clone()))?;
            if !(e.visits_per_week >= 0.0) || !e.visits_per_week.is_finite() {
                return Err(bad(&e.category, "visits per week must be a non-negative number"));
            }
            if e.hourly_weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
                return Err(bad(&e.category, "hourly weights must be non-negative numbers"));
            }
            if e.near_k == 0 {
                return Err(bad(&e.category, "near_k must be at least 1"));
            }
            if e.visits_per_week > 0.0 && e.hourly_weights.iter().all(|&w| w == 0.0) {
                return Err(ProfileError::AllWeightsZero { group: self.group_id.clone(), category: e.category.clone() });
            }
            match entry_sampling(e, cat)? {
                Sampling::Specific(id) => match pois.get(&id) {
                    Some(p) if p.category == e.category => {}
                    _ => return Err(ProfileError::MissingSpecificPoi(id)),
                },
                Sampling::Near | Sampling::Random => {}
            }
        }
        if !self.entries.iter().any(|e| e.visits_per_week > 0.0) {
            return Err(ProfileError::NoVisits(self.group_id.clone()));
        }
        Ok(())
    }
}

fn entry_sampling(e: &ProfileEntry, cat: &PoiCategory) -> Result<Sampling, ProfileError> {
    match (&e.sampling, cat.sampling) {
        (Some(s), _) => Ok(s.clone()),
        (None, SamplingKind::Near) => Ok(Sampling::Near),
        (None, SamplingKind::Random) => Ok(Sampling::Random),
        (None, SamplingKind::Specific) => Err(ProfileError::SpecificWithoutPoi(cat.id.clone())),
    }
}

impl ScenarioDefinition {
    pub fn validate(&self, categories: &[PoiCategory], pois: &BTreeMap<String, Poi>) -> Result<(), ProfileError> {
        let mut seen = BTreeSet::new();
        for p in &self.profiles {
            if !seen.insert(p.group_id.as_str()) {
                return Err(self.mismatch(&p.group_id, "is defined twice"));
            }
            if p.group_id == AGGREGATE {
                return Err(self.mismatch(&p.group_id, "uses a reserved id"));
            }
            if !self.demographic_shares.contains_key(&p.group_id) {
                return Err(self.mismatch(&p.group_id, "has no demographic share"));
            }
            p.validate(categories, pois)?;
        }
        for g in self.demographic_shares.keys() {
            if !seen.contains(g.as_str()) {
                return Err(self.mismatch(g, "has a share but no profile"));
            }
        }
        let sum: f64 = self.demographic_shares.values().sum();
        let in_range = self.demographic_shares.values().all(|s| (0.0..=1.0).contains(s));
        if !in_range || libm::fabs(sum - 1.0) > 1e-9 {
            return Err(ProfileError::InvalidShares(self.scenario_id.clone()));
        }
        Ok(())
    }

    fn mismatch(&self, group: &str, reason: &'static str) -> ProfileError {
        ProfileError::GroupMismatch { scenario: self.scenario_id.clone(), group: String::from(group), reason }
    }
}

/// Per-residence values of one (scenario, group); `None` is Unserved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSurface {
    pub scenario_id: String,
    pub group: String,
    pub values: BTreeMap<String, Option<f64>>,
}

impl ScoreSurface {
    pub fn served(&self) -> impl Iterator<Item = (&str, f64)> {
        self.values.iter().filter_map(|(k, v)| v.map(|v| (k.as_str(), v)))
    }
}

/// Everything scoring reads.
#[derive(Debug, Clone, Copy)]
pub struct ScoreInputs<'a> {
    pub config: &'a SimConfig,
    pub categories: &'a [PoiCategory],
    pub pois: &'a BTreeMap<String, Poi>,
    pub residences: &'a BTreeMap<String, Residence>,
    pub walk: &'a WalkTable,
    pub home_areas: &'a BTreeMap<String, BTreeSet<String>>,
    pub matrix: &'a TravelTimeMatrix,
}

/// Expected times of one profile entry for every (category POI, stop).
#[derive(Debug, Clone)]
pub struct EntryTable {
    pub category: String,
    pub sampling: Sampling,
    pub near_k: usize,
    pub visits: f64,
    /// Candidate POIs, sorted by id.
    pub pois: Vec<String>,
    n_stops: usize,
    expected: Vec<Option<f64>>,
}

impl EntryTable {
    pub fn new(e: &ProfileEntry, cat: &PoiCategory, inputs: &ScoreInputs<'_>) -> Result<EntryTable, ProfileError> {
        let sampling = entry_sampling(e, cat)?;
        let pois: Vec<String> = match &sampling {
            Sampling::Specific(id) => inputs.pois.get(id).map(|p| p.id.clone()).into_iter().collect(),
            _ => inputs.pois.values().filter(|p| p.category == cat.id).map(|p| p.id.clone()).collect(),
        };
        let m = inputs.matrix;
        let n_stops = m.stop_ids.len();
        let mut expected = Vec::with_capacity(pois.len() * n_stops);
        for p in &pois {
            let col = m.poi_pos(p);
            for s in 0..n_stops {
                let v = match col {
                    Some(c) if e.visits_per_week > 0.0 => expected_poi_time(&e.hourly_weights, m.hours(s, c)).unwrap_or(None),
                    _ => None,
                };
                expected.push(v);
            }
        }
        Ok(EntryTable {
            category: cat.id.clone(),
            sampling,
            near_k: e.near_k,
            visits: e.visits_per_week,
            pois,
            n_stops,
            expected,
        })
    }

    pub fn expected(&self, poi: usize, stop: usize) -> Option<f64> {
        self.expected[poi * self.n_stops + stop]
    }

    /// Cost of visiting `poi` from the best access stop: walking legs plus
    /// the expected ride.
    fn near_cost(&self, poi: usize, access: &[(usize, u32)], legs: u32) -> Option<f64> {
        access
            .iter()
            .filter_map(|&(s, w)| self.expected(poi, s).map(|e| (legs as f64) * w as f64 + e))
            .reduce(f64::min)
    }

    /// Near-sampling cost of an arbitrary POI column (used for edits).
    pub fn cost_of(&self, poi: &str, access: &[(usize, u32)], legs: u32) -> Option<f64> {
        let i = self.pois.binary_search_by(|p| p.as_str().cmp(poi)).ok()?;
        self.near_cost(i, access, legs)
    }
}

/// Sampled POIs `(index into table.pois, weight)` for one residence.
pub fn sample_pois(
    table: &EntryTable,
    access: &[(usize, u32)],
    home: Option<&BTreeSet<String>>,
    legs: u32,
) -> Result<(Vec<(usize, f64)>, Option<f64>), ProfileError> {
    if table.pois.is_empty() {
        return Err(match &table.sampling {
            Sampling::Specific(id) => ProfileError::MissingSpecificPoi(id.clone()),
            _ => ProfileError::EmptyCategory(table.category.clone()),
        });
    }
    Ok(match &table.sampling {
        Sampling::Specific(_) => (alloc::vec![(0, 1.0)], None),
        Sampling::Near => {
            let mut costs: Vec<(f64, usize)> = (0..table.pois.len())
                .filter_map(|i| table.near_cost(i, access, legs).map(|c| (c, i)))
                .collect();
            costs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            costs.truncate(table.near_k);
            let kth = costs.last().map(|c| c.0);
            let w = 1.0 / costs.len().max(1) as f64;
            let mut picked: Vec<(usize, f64)> = costs.into_iter().map(|(_, i)| (i, w)).collect();
            picked.sort_by_key(|p| p.0);
            (picked, kth)
        }
        Sampling::Random => {
            let area: Vec<usize> = match home {
                Some(h) => (0..table.pois.len()).filter(|i| h.contains(&table.pois[*i])).collect(),
                None => Vec::new(),
            };
            let w = 1.0 / area.len().max(1) as f64;
            (area.into_iter().map(|i| (i, w)).collect(), None)
        }
    })
}

/// Category time: the best access stop's walking legs plus the weighted
/// expectation over the sampled POIs reachable from it.
fn category_time(table: &EntryTable, sampled: &[(usize, f64)], access: &[(usize, u32)], legs: u32) -> Option<f64> {
    let mut best: Option<f64> = None;
    for &(s, w) in access {
        let (mut num, mut den) = (0.0, 0.0);
        for &(p, weight) in sampled {
            if let Some(e) = table.expected(p, s) {
                num += weight * e;
                den += weight;
            }
        }
        if den > 0.0 {
            let v = (legs as f64) * w as f64 + num / den;
            best = Some(best.map_or(v, |b: f64| b.min(v)));
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryEval {
    /// Sampled POI ids with weights.
    pub sampled: Vec<(String, f64)>,
    /// Cost of the last POI admitted by near sampling.
    pub kth_cost: Option<f64>,
    pub time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidenceEval {
    pub weekly: Option<f64>,
    pub entries: Vec<EntryEval>,
}

/// Per-group evaluation state.
#[derive(Debug, Clone)]
pub struct GroupEvaluator {
    pub group_id: String,
    pub speed: f64,
    pub tables: Vec<EntryTable>,
}

#[derive(Debug, Clone)]
pub struct Evaluator<'a> {
    pub inputs: ScoreInputs<'a>,
    pub scenario: &'a ScenarioDefinition,
    pub groups: Vec<GroupEvaluator>,
}

impl<'a> Evaluator<'a> {
    pub fn new(inputs: ScoreInputs<'a>, scenario: &'a ScenarioDefinition) -> Result<Evaluator<'a>, ProfileError> {
        scenario.validate(inputs.categories, inputs.pois)?;
        let mut groups = Vec::new();
        for p in &scenario.profiles {
            let mut tables = Vec::new();
            for e in &p.entries {
                let cat = inputs
                    .categories
                    .iter()
                    .find(|c| c.id == e.category)
                    .ok_or_else(|| ProfileError::UnknownCategory(e.category.clone()))?;
                tables.push(EntryTable::new(e, cat, &inputs)?);
            }
            groups.push(GroupEvaluator { group_id: p.group_id.clone(), speed: p.speed(inputs.config), tables });
        }
        Ok(Evaluator { inputs, scenario, groups })
    }

    /// Access stops of a residence as `(matrix stop position, walk seconds)`.
    pub fn access(&self, residence: &str, speed: f64) -> Vec<(usize, u32)> {
        let Some(list) = self.inputs.walk.residences.get(residence) else { return Vec::new() };
        list.iter()
            .filter_map(|sd| {
                let s = self.inputs.matrix.stop_pos(&sd.stop_id)?;
                Some((s, walk_time(sd.distance_m(), speed).ok()?))
            })
            .collect()
    }

    pub fn residence(&self, group: usize, residence: &str) -> ResidenceEval {
        let g = &self.groups[group];
        let legs = self.inputs.config.walk_legs_per_visit;
        let access = self.access(residence, g.speed);
        let home = self.inputs.home_areas.get(residence);
        let mut entries = Vec::with_capacity(g.tables.len());
        let (mut num, mut den) = (0.0, 0.0);
        for t in &g.tables {
            let (sampled, kth) = if access.is_empty() || t.visits <= 0.0 {
                (Vec::new(), None)
            } else {
                sample_pois(t, &access, home, legs).unwrap_or((Vec::new(), None))
            };
            let time = category_time(t, &sampled, &access, legs);
            if let Some(v) = time {
                num += t.visits * v;
                den += t.visits;
            }
            entries.push(EntryEval {
                sampled: sampled.iter().map(|(i, w)| (t.pois[*i].clone(), *w)).collect(),
                kth_cost: kth,
                time,
            });
        }
        ResidenceEval { weekly: (den > 0.0).then(|| num / den), entries }
    }

    pub fn aggregate_one(&self, values: &[Option<f64>]) -> Option<f64> {
        aggregate_values(self.scenario, self.groups.iter().map(|g| g.group_id.as_str()).zip(values.iter().copied()))
    }
}

/// Share-weighted mean over the served groups, renormalized.
pub fn aggregate_values<'s, I>(scenario: &ScenarioDefinition, values: I) -> Option<f64>
where
    I: IntoIterator<Item = (&'s str, Option<f64>)>,
{
    let (mut num, mut den) = (0.0, 0.0);
    for (g, v) in values {
        if let Some(v) = v {
            let share = scenario.demographic_shares.get(g).copied().unwrap_or(0.0);
            num += share * v;
            den += share;
        }
    }
    (den > 0.0).then(|| num / den)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupScores {
    pub surface: ScoreSurface,
    pub evals: BTreeMap<String, ResidenceEval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScores {
    pub scenario_id: String,
    pub groups: BTreeMap<String, GroupScores>,
    pub aggregate: ScoreSurface,
}

impl ScenarioScores {
    pub fn surface(&self, group: &str) -> Option<&ScoreSurface> {
        if group == AGGREGATE {
            Some(&self.aggregate)
        } else {
            self.groups.get(group).map(|g| &g.surface)
        }
    }

    /// Recomputes `dirty` residences and drops residences no longer present.
    pub fn patch(&mut self, ev: &Evaluator<'_>, dirty: &BTreeSet<String>) {
        for id in dirty {
            let present = ev.inputs.residences.contains_key(id);
            let mut vals = Vec::with_capacity(ev.groups.len());
            for (gi, g) in ev.groups.iter().enumerate() {
                let gs = self.groups.get_mut(&g.group_id).expect("group set is fixed per scenario");
                if present {
                    let e = ev.residence(gi, id);
                    vals.push(e.weekly);
                    gs.surface.values.insert(id.clone(), e.weekly);
                    gs.evals.insert(id.clone(), e);
                } else {
                    gs.surface.values.remove(id);
                    gs.evals.remove(id);
                }
            }
            if present {
                self.aggregate.values.insert(id.clone(), ev.aggregate_one(&vals));
            } else {
                self.aggregate.values.remove(id);
            }
        }
    }
}

/// Scores every residence for every group of the scenario.
pub fn score_scenario(inputs: ScoreInputs<'_>, scenario: &ScenarioDefinition) -> Result<ScenarioScores, ProfileError> {
    let ev = Evaluator::new(inputs, scenario)?;
    Ok(score_with(&ev))
}

pub fn score_with(ev: &Evaluator<'_>) -> ScenarioScores {
    let scenario = ev.scenario;
    let mut groups = BTreeMap::new();
    for g in &ev.groups {
        groups.insert(
            g.group_id.clone(),
            GroupScores {
                surface: ScoreSurface { scenario_id: scenario.scenario_id.clone(), group: g.group_id.clone(), values: BTreeMap::new() },
                evals: BTreeMap::new(),
            },
        );
    }
    let mut out = ScenarioScores {
        scenario_id: scenario.scenario_id.clone(),
        groups,
        aggregate: ScoreSurface { scenario_id: scenario.scenario_id.clone(), group: String::from(AGGREGATE), values: BTreeMap::new() },
    };
    let all: BTreeSet<String> = ev.inputs.residences.keys().cloned().collect();
    out.patch(ev, &all);
    out
}

/// Weekly car time per residence for one profile, same sampling and visit
/// weighting as transit but with straight-line times.
pub fn car_weekly_times(inputs: &ScoreInputs<'_>, profile: &MobilityProfile) -> Result<BTreeMap<String, Option<f64>>, ProfileError> {
    let speed = CAR_SPEED_KMH / 3.6;
    let mut out = BTreeMap::new();
    for r in inputs.residences.values() {
        let (mut num, mut den) = (0.0, 0.0);
        for e in &profile.entries {
            if e.visits_per_week <= 0.0 {
                continue;
            }
            let cat = inputs
                .categories
                .iter()
                .find(|c| c.id == e.category)
                .ok_or_else(|| ProfileError::UnknownCategory(e.category.clone()))?;
            let time = |p: &Poi| haversine_m(r.position, p.position) * CAR_DETOUR / speed;
            let mut cands: Vec<(f64, &str)> = match entry_sampling(e, cat)? {
                Sampling::Specific(id) => inputs.pois.get(&id).map(|p| (time(p), p.id.as_str())).into_iter().collect(),
                Sampling::Near => {
                    let mut v: Vec<(f64, &str)> =
                        inputs.pois.values().filter(|p| p.category == cat.id).map(|p| (time(p), p.id.as_str())).collect();
                    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
                    v.truncate(e.near_k);
                    v
                }
                Sampling::Random => {
                    let home = inputs.home_areas.get(&r.id);
                    inputs
                        .pois
                        .values()
                        .filter(|p| p.category == cat.id && home.is_some_and(|h| h.contains(&p.id)))
                        .map(|p| (time(p), p.id.as_str()))
                        .collect()
                }
            };
            cands.sort_by(|a, b| a.1.cmp(b.1));
            if !cands.is_empty() {
                let mean = cands.iter().map(|c| c.0).sum::<f64>() / cands.len() as f64;
                num += e.visits_per_week * mean;
                den += e.visits_per_week;
            }
        }
        out.insert(r.id.clone(), (den > 0.0).then(|| num / den));
    }
    Ok(out)
}

/// Car baseline surfaces aggregated with the scenario's shares.
pub fn car_surface(inputs: &ScoreInputs<'_>, scenario: &ScenarioDefinition) -> Result<ScoreSurface, ProfileError> {
    let mut per_group = Vec::new();
    for p in &scenario.profiles {
        per_group.push((p.group_id.as_str(), car_weekly_times(inputs, p)?));
    }
    let values = inputs
        .residences
        .keys()
        .map(|id| {
            let v = aggregate_values(scenario, per_group.iter().map(|(g, m)| (*g, m.get(id).copied().flatten())));
            (id.clone(), v)
        })
        .collect();
    Ok(ScoreSurface { scenario_id: alloc::format!("{}:car", scenario.scenario_id), group: String::from(AGGREGATE), values })
}
