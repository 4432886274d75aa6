//! Weekdays and seconds-since-midnight service times.

use alloc::string::String;
use core::fmt;
use serde::{Deserialize, Serialize};

pub const DAY: u32 = 86_400;
pub const HOUR: u32 = 3_600;

/// Upper bound (exclusive) of a query departure time: two service days.
pub const MAX_DEPARTURE: u32 = 2 * DAY;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weekday {
    Monday,
    Tuesday,
    Wednesday,
    Thursday,
    Friday,
    Saturday,
    Sunday,
}

impl Weekday {
    pub const ALL: [Weekday; 7] = [
        Weekday::Monday,
        Weekday::Tuesday,
        Weekday::Wednesday,
        Weekday::Thursday,
        Weekday::Friday,
        Weekday::Saturday,
        Weekday::Sunday,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Weekday {
        Self::ALL[i % 7]
    }

    /// Weekday `days` after this one (negative goes back).
    pub fn offset(self, days: i32) -> Weekday {
        let i = (self.index() as i32 + days).rem_euclid(7);
        Self::from_index(i as usize)
    }

    pub fn name(self) -> &'static str {
        match self {
            Weekday::Monday => "monday",
            Weekday::Tuesday => "tuesday",
            Weekday::Wednesday => "wednesday",
            Weekday::Thursday => "thursday",
            Weekday::Friday => "friday",
            Weekday::Saturday => "saturday",
            Weekday::Sunday => "sunday",
        }
    }

    pub fn parse(s: &str) -> Option<Weekday> {
        let s = s.trim();
        Self::ALL
            .iter()
            .copied()
            .find(|d| d.name().eq_ignore_ascii_case(s) || d.name()[..3].eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Weekday {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Set of weekdays, bit `i` for `Weekday::from_index(i)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeekdaySet(pub u8);

impl WeekdaySet {
    pub const EMPTY: WeekdaySet = WeekdaySet(0);
    pub const ALL: WeekdaySet = WeekdaySet(0x7f);

    pub fn contains(self, d: Weekday) -> bool {
        self.0 & (1 << d.index()) != 0
    }

    pub fn insert(&mut self, d: Weekday) {
        self.0 |= 1 << d.index();
    }

    pub fn is_empty(self) -> bool {
        self.0 & 0x7f == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Weekday> {
        Weekday::ALL.into_iter().filter(move |d| self.contains(*d))
    }
}

impl FromIterator<Weekday> for WeekdaySet {
    fn from_iter<I: IntoIterator<Item = Weekday>>(iter: I) -> Self {
        let mut s = WeekdaySet::EMPTY;
        for d in iter {
            s.insert(d);
        }
        s
    }
}

/// Parses `H:MM:SS` / `HH:MM:SS`; hours may exceed 23 for overnight trips.
pub fn parse_hms(s: &str) -> Option<u32> {
    let s = s.trim();
    let mut parts = s.split(':');
    let h: u32 = parts.next()?.trim().parse().ok()?;
    let m: u32 = parts.next()?.parse().ok()?;
    let sec: u32 = parts.next()?.parse().ok()?;
    if parts.next().is_some() || m > 59 || sec > 59 || h > 99 {
        return None;
    }
    Some(h * HOUR + m * 60 + sec)
}

pub fn format_hms(t: u32) -> String {
    alloc::format!("{:02}:{:02}:{:02}", t / HOUR, (t / 60) % 60, t % 60)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hms_round_trip_past_midnight() {
        assert_eq!(parse_hms("25:03:09"), Some(25 * 3600 + 189));
        assert_eq!(format_hms(90_189), "25:03:09");
        assert_eq!(parse_hms("7:10:00"), Some(7 * 3600 + 600));
        assert_eq!(parse_hms("07:60:00"), None);
        assert_eq!(parse_hms("07:10"), None);
    }

    #[test]
    fn weekday_wraps() {
        assert_eq!(Weekday::Monday.offset(-1), Weekday::Sunday);
        assert_eq!(Weekday::Sunday.offset(1), Weekday::Monday);
        assert_eq!(Weekday::parse("Tue"), Some(Weekday::Tuesday));
    }
}
