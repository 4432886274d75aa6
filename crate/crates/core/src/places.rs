//! Points of interest, residences and POI categories.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;
use serde::{Deserialize, Serialize};

use crate::geo::LatLon;
use crate::street::NodeIdx;

/// `key=value` tag selector; `key=*` (or bare `key`) matches any value.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TagSelector {
    pub key: String,
    pub value: Option<String>,
}

impl TagSelector {
    pub fn matches<'a, I>(&self, tags: I) -> bool
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        tags.into_iter().any(|(k, v)| {
            k == self.key && self.value.as_deref().map_or(true, |want| want == v)
        })
    }
}

impl FromStr for TagSelector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (k, v) = match s.split_once('=') {
            Some((k, v)) => (k.trim(), Some(v.trim())),
            None => (s.trim(), None),
        };
        if k.is_empty() {
            return Err(alloc::format!("empty tag key in selector `{s}`"));
        }
        Ok(TagSelector {
            key: k.to_string(),
            value: v.filter(|v| *v != "*").map(ToString::to_string),
        })
    }
}

impl fmt::Display for TagSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.value {
            Some(v) => write!(f, "{}={}", self.key, v),
            None => write!(f, "{}=*", self.key),
        }
    }
}

impl Serialize for TagSelector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TagSelector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// How a profile picks the concrete POIs of a category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// The `near_k` lowest-cost POIs of the category.
    Near,
    /// Uniform choice among the category POIs within the home area.
    Random,
    /// One fixed POI.
    Specific(String),
}

/// Default sampling declared by a category (no POI id for `specific`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingKind {
    Near,
    Random,
    Specific,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoiCategory {
    pub id: String,
    pub name: String,
    pub matcher: Vec<TagSelector>,
    #[serde(default = "default_sampling")]
    pub sampling: SamplingKind,
}

fn default_sampling() -> SamplingKind {
    SamplingKind::Near
}

impl PoiCategory {
    pub fn matches<'a, I>(&self, tags: I) -> bool
    where
        I: IntoIterator<Item = (&'a str, &'a str)> + Clone,
    {
        self.matcher.iter().any(|sel| sel.matches(tags.clone()))
    }
}

/// Checks category invariants: non-empty matchers, unique ids and names.
pub fn validate_categories(cats: &[PoiCategory]) -> Result<(), String> {
    for (i, c) in cats.iter().enumerate() {
        if c.matcher.is_empty() {
            return Err(alloc::format!("category `{}` has no tag selectors", c.id));
        }
        if cats[..i].iter().any(|o| o.id == c.id) {
            return Err(alloc::format!("duplicate category id `{}`", c.id));
        }
        if cats[..i].iter().any(|o| o.name == c.name) {
            return Err(alloc::format!("duplicate category name `{}`", c.name));
        }
    }
    Ok(())
}

/// Snap result: nearest walkable node and the straight-line offset to it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Snapped {
    pub node: NodeIdx,
    /// Offset to the node in millimeters.
    pub offset_mm: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poi {
    pub id: String,
    pub category: String,
    pub position: LatLon,
    pub name: String,
    pub snapped: Snapped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residence {
    pub id: String,
    pub position: LatLon,
    pub snapped: Snapped,
    pub weight: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn selector_semantics() {
        let sel: TagSelector = "shop=supermarket".parse().unwrap();
        assert!(sel.matches([("shop", "supermarket")]));
        assert!(!sel.matches([("shop", "bakery")]));
        let any: TagSelector = "amenity".parse().unwrap();
        assert!(any.matches([("amenity", "bar")]));
        assert_eq!(any.to_string(), "amenity=*");
        assert!("=x".parse::<TagSelector>().is_err());
    }

    #[test]
    fn category_validation() {
        let cat = |id: &str, name: &str, m: Vec<TagSelector>| PoiCategory {
            id: id.into(),
            name: name.into(),
            matcher: m,
            sampling: SamplingKind::Near,
        };
        let sel: TagSelector = "shop=supermarket".parse().unwrap();
        assert!(validate_categories(&[cat("a", "A", vec![sel.clone()])]).is_ok());
        assert!(validate_categories(&[cat("a", "A", vec![])]).is_err());
        assert!(validate_categories(&[cat("a", "A", vec![sel.clone()]), cat("b", "A", vec![sel])]).is_err());
    }
}
