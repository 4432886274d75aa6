use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LegKind {
    Walk,
    Wait,
    Ride,
}

/// One leg; times are seconds since midnight of the reference day.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Leg {
    pub kind: LegKind,
    pub from: String,
    pub to: String,
    pub depart: i64,
    pub arrive: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trip_id: Option<String>,
    /// Service day of the ridden trip relative to the reference day.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub day_offset: i32,
}

fn is_zero(d: &i32) -> bool {
    *d == 0
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Journey {
    pub depart: i64,
    pub arrive: i64,
    pub legs: Vec<Leg>,
}

impl Journey {
    pub fn empty(at: i64) -> Journey {
        Journey { depart: at, arrive: at, legs: Vec::new() }
    }

    pub fn duration(&self) -> i64 {
        self.arrive - self.depart
    }

    pub fn rides(&self) -> usize {
        self.legs.iter().filter(|l| l.kind == LegKind::Ride).count()
    }

    /// Appends a leg, inserting a wait if it starts after the current end.
    pub fn push(&mut self, leg: Leg) {
        if leg.depart > self.arrive {
            let at = self.legs.last().map_or_else(|| leg.from.clone(), |l| l.to.clone());
            self.legs.push(Leg {
                kind: LegKind::Wait,
                from: at.clone(),
                to: at,
                depart: self.arrive,
                arrive: leg.depart,
                line_id: None,
                trip_id: None,
                day_offset: 0,
            });
        }
        self.arrive = leg.arrive;
        self.legs.push(leg);
    }

    /// Legs chain in place and time, from `depart` to `arrive`.
    pub fn is_contiguous(&self) -> bool {
        let mut t = self.depart;
        let mut at: Option<&str> = None;
        for l in &self.legs {
            if l.depart != t || l.arrive < l.depart || at.is_some_and(|a| a != l.from) {
                return false;
            }
            t = l.arrive;
            at = Some(&l.to);
        }
        t == self.arrive
    }
}
