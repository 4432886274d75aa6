//! TOML configuration: categories, mobility profiles, scenarios and the
//! simulation constants. Schemas are documented in `docs/formats.md`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use tscore::places::{validate_categories, PoiCategory, Sampling};
use tscore::profile::{MobilityProfile, ProfileEntry, ScenarioDefinition};
use tscore::{ModeMask, SimConfig};

pub const DEFAULT_CATEGORIES: &str = include_str!("../defaults/categories.toml");
pub const DEFAULT_PROFILES: &str = include_str!("../defaults/profiles.toml");

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{file}: {reason}")]
    Parse { file: String, reason: String },
    #[error("{0}")]
    Invalid(String),
}

fn parse<T: for<'de> Deserialize<'de>>(file: &str, text: &str) -> Result<T, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError::Parse { file: file.into(), reason: e.to_string() })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CategoryFile {
    #[serde(default)]
    category: Vec<PoiCategory>,
}

pub fn parse_categories(text: &str) -> Result<Vec<PoiCategory>, ConfigError> {
    let f: CategoryFile = parse("categories", text)?;
    validate_categories(&f.category).map_err(ConfigError::Invalid)?;
    Ok(f.category)
}

pub fn categories_toml(cats: &[PoiCategory]) -> String {
    toml::to_string(&CategoryFile { category: cats.to_vec() }).expect("categories serialize")
}

/// Either all 24 values or a table of `"H"` / `"H-H"` (end exclusive) keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HourWeights {
    Dense([f64; 24]),
    Ranges(BTreeMap<String, f64>),
}

impl HourWeights {
    pub fn expand(&self) -> Result<[f64; 24], String> {
        match self {
            HourWeights::Dense(w) => Ok(*w),
            HourWeights::Ranges(m) => {
                let mut w = [0.0; 24];
                for (k, v) in m {
                    let (a, b) = match k.split_once('-') {
                        Some((a, b)) => (a.trim().parse::<usize>(), b.trim().parse::<usize>()),
                        None => (k.trim().parse(), k.trim().parse::<usize>().map(|h| h + 1)),
                    };
                    match (a, b) {
                        (Ok(a), Ok(b)) if a < b && b <= 24 => w[a..b].iter_mut().for_each(|x| *x += v),
                        _ => return Err(format!("bad hour range `{k}`")),
                    }
                }
                Ok(w)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntrySpec {
    pub category: String,
    pub visits_per_week: f64,
    pub hourly_weights: HourWeights,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<Sampling>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub near_k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSpec {
    pub group_id: String,
    pub group_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub walking_speed: Option<f64>,
    #[serde(default)]
    pub entries: Vec<EntrySpec>,
}

impl ProfileSpec {
    pub fn resolve(&self) -> Result<MobilityProfile, ConfigError> {
        let entries = self
            .entries
            .iter()
            .map(|e| {
                Ok(ProfileEntry {
                    category: e.category.clone(),
                    visits_per_week: e.visits_per_week,
                    hourly_weights: e
                        .hourly_weights
                        .expand()
                        .map_err(|r| ConfigError::Invalid(format!("profile `{}`: {r}", self.group_id)))?,
                    sampling: e.sampling.clone(),
                    near_k: e.near_k.unwrap_or(1),
                })
            })
            .collect::<Result<_, ConfigError>>()?;
        Ok(MobilityProfile {
            group_id: self.group_id.clone(),
            group_name: self.group_name.clone(),
            walking_speed: self.walking_speed,
            entries,
        })
    }

    pub fn from_profile(p: &MobilityProfile) -> ProfileSpec {
        ProfileSpec {
            group_id: p.group_id.clone(),
            group_name: p.group_name.clone(),
            walking_speed: p.walking_speed,
            entries: p
                .entries
                .iter()
                .map(|e| EntrySpec {
                    category: e.category.clone(),
                    visits_per_week: e.visits_per_week,
                    hourly_weights: HourWeights::Dense(e.hourly_weights),
                    sampling: e.sampling.clone(),
                    near_k: (e.near_k != 1).then_some(e.near_k),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileFile {
    #[serde(default)]
    profile: Vec<ProfileSpec>,
}

/// Profile library keyed by group id.
pub fn parse_profiles(text: &str) -> Result<BTreeMap<String, MobilityProfile>, ConfigError> {
    let f: ProfileFile = parse("profiles", text)?;
    let mut out = BTreeMap::new();
    for p in &f.profile {
        if out.insert(p.group_id.clone(), p.resolve()?).is_some() {
            return Err(ConfigError::Invalid(format!("profile `{}` defined twice", p.group_id)));
        }
    }
    Ok(out)
}

pub fn profiles_toml(lib: &BTreeMap<String, MobilityProfile>) -> String {
    let f = ProfileFile { profile: lib.values().map(ProfileSpec::from_profile).collect() };
    toml::to_string(&f).expect("profiles serialize")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileRef {
    Library(String),
    Inline(ProfileSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub scenario_id: String,
    pub name: String,
    pub profiles: Vec<ProfileRef>,
    pub demographic_shares: BTreeMap<String, f64>,
    /// `all`, `bus,tram`, `-rail`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode_mask: Option<String>,
}

impl ScenarioSpec {
    pub fn resolve(&self, lib: &BTreeMap<String, MobilityProfile>) -> Result<ScenarioDefinition, ConfigError> {
        let profiles = self
            .profiles
            .iter()
            .map(|r| match r {
                ProfileRef::Library(g) => lib.get(g).cloned().ok_or_else(|| {
                    ConfigError::Invalid(format!("scenario `{}`: unknown profile `{g}`", self.scenario_id))
                }),
                ProfileRef::Inline(p) => p.resolve(),
            })
            .collect::<Result<_, _>>()?;
        let mode_mask = match &self.mode_mask {
            Some(s) => ModeMask::parse(s).map_err(|e| ConfigError::Invalid(format!("scenario `{}`: {e}", self.scenario_id)))?,
            None => ModeMask::ALL,
        };
        Ok(ScenarioDefinition {
            scenario_id: self.scenario_id.clone(),
            name: self.name.clone(),
            profiles,
            demographic_shares: self.demographic_shares.clone(),
            mode_mask,
        })
    }

    pub fn from_definition(d: &ScenarioDefinition) -> ScenarioSpec {
        ScenarioSpec {
            scenario_id: d.scenario_id.clone(),
            name: d.name.clone(),
            profiles: d.profiles.iter().map(|p| ProfileRef::Inline(ProfileSpec::from_profile(p))).collect(),
            demographic_shares: d.demographic_shares.clone(),
            mode_mask: (d.mode_mask != ModeMask::ALL).then(|| d.mode_mask.to_string()),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default)]
    scenario: Vec<ScenarioSpec>,
}

pub fn parse_scenarios(text: &str, lib: &BTreeMap<String, MobilityProfile>) -> Result<Vec<ScenarioDefinition>, ConfigError> {
    let f: ScenarioFile = parse("scenarios", text)?;
    let mut out: Vec<ScenarioDefinition> = Vec::new();
    for s in &f.scenario {
        if out.iter().any(|o| o.scenario_id == s.scenario_id) {
            return Err(ConfigError::Invalid(format!("scenario `{}` defined twice", s.scenario_id)));
        }
        out.push(s.resolve(lib)?);
    }
    Ok(out)
}

/// Writes scenarios with every profile inlined.
pub fn scenarios_toml(defs: &[ScenarioDefinition]) -> String {
    let f = ScenarioFile { scenario: defs.iter().map(ScenarioSpec::from_definition).collect() };
    toml::to_string(&f).expect("scenarios serialize")
}

pub fn parse_sim(text: &str) -> Result<SimConfig, ConfigError> {
    let cfg: SimConfig = parse("sim", text)?;
    let bad = |r: &str| Err(ConfigError::Invalid(format!("sim: {r}")));
    if cfg.n_closest == 0 {
        return bad("n_closest must be at least 1");
    }
    if !(cfg.walk_speed > 0.0 && cfg.walk_speed.is_finite()) {
        return bad("walk_speed must be positive");
    }
    if cfg.sampling_minutes.is_empty() || cfg.sampling_minutes.iter().any(|m| *m >= 60) {
        return bad("sampling_minutes must be a non-empty list of minutes below 60");
    }
    if !(cfg.walk_legs_per_visit == 1 || cfg.walk_legs_per_visit == 2) {
        return bad("walk_legs_per_visit must be 1 or 2");
    }
    Ok(cfg)
}

pub fn sim_toml(cfg: &SimConfig) -> String {
    toml::to_string(cfg).expect("sim config serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse() {
        let cats = parse_categories(DEFAULT_CATEGORIES).unwrap();
        let lib = parse_profiles(DEFAULT_PROFILES).unwrap();
        assert_eq!(lib.keys().collect::<Vec<_>>(), ["elderly", "pupils", "students", "workers"]);
        for p in lib.values() {
            for e in &p.entries {
                assert!(cats.iter().any(|c| c.id == e.category), "{}", e.category);
            }
        }
        assert_eq!(parse_categories(&categories_toml(&cats)).unwrap(), cats);
        assert_eq!(parse_profiles(&profiles_toml(&lib)).unwrap(), lib);
    }

    #[test]
    fn hour_ranges() {
        let w = HourWeights::Ranges(BTreeMap::from([("7-9".into(), 1.0), ("12".into(), 0.5)])).expand().unwrap();
        assert_eq!(&w[6..10], &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(w[12], 0.5);
        assert!(HourWeights::Ranges(BTreeMap::from([("9-7".into(), 1.0)])).expand().is_err());
    }

    #[test]
    fn scenario_refs_and_round_trip() {
        let lib = parse_profiles(DEFAULT_PROFILES).unwrap();
        let text = r#"
[[scenario]]
scenario_id = "s"
name = "S"
profiles = ["elderly", { group_id = "x", group_name = "X", entries = [
  { category = "groceries", visits_per_week = 1, hourly_weights = { "10" = 1 } },
] }]
demographic_shares = { elderly = 0.5, x = 0.5 }
mode_mask = "-rail"
"#;
        let defs = parse_scenarios(text, &lib).unwrap();
        assert_eq!(defs[0].profiles[0], lib["elderly"]);
        assert_eq!(defs[0].profiles[1].entries[0].hourly_weights[10], 1.0);
        assert_eq!(parse_scenarios(&scenarios_toml(&defs), &lib).unwrap(), defs);
        assert!(parse_scenarios(&text.replace("\"elderly\",", "\"nobody\","), &lib).is_err());
    }

    #[test]
    fn sim_defaults_and_checks() {
        assert_eq!(parse_sim("").unwrap(), SimConfig::default());
        assert_eq!(parse_sim(&sim_toml(&SimConfig::default())).unwrap(), SimConfig::default());
        assert!(parse_sim("walk_legs_per_visit = 3").is_err());
        assert!(parse_sim("bogus = 1").is_err());
    }
}
