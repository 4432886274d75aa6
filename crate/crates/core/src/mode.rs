//! Transport modes and mode masks.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Tram,
    Subway,
    Rail,
    Bus,
    Ferry,
    CableTram,
    Aerial,
    Funicular,
    Trolleybus,
    Monorail,
}

impl Mode {
    pub const ALL: [Mode; 10] = [
        Mode::Tram,
        Mode::Subway,
        Mode::Rail,
        Mode::Bus,
        Mode::Ferry,
        Mode::CableTram,
        Mode::Aerial,
        Mode::Funicular,
        Mode::Trolleybus,
        Mode::Monorail,
    ];

    /// Maps basic and extended GTFS `route_type` codes.
    pub fn from_route_type(code: u32) -> Option<Mode> {
        Some(match code {
            0 => Mode::Tram,
            1 => Mode::Subway,
            2 => Mode::Rail,
            3 => Mode::Bus,
            4 => Mode::Ferry,
            5 => Mode::CableTram,
            6 => Mode::Aerial,
            7 => Mode::Funicular,
            11 => Mode::Trolleybus,
            12 => Mode::Monorail,
            100..=199 => Mode::Rail,
            200..=299 => Mode::Bus,
            400..=499 => Mode::Subway,
            700..=799 => Mode::Bus,
            800..=899 => Mode::Trolleybus,
            900..=999 => Mode::Tram,
            1000..=1299 => Mode::Ferry,
            1300..=1399 => Mode::Aerial,
            1400..=1499 => Mode::Funicular,
            1500..=1599 => Mode::Bus,
            _ => return None,
        })
    }

    pub fn route_type(self) -> u32 {
        match self {
            Mode::Tram => 0,
            Mode::Subway => 1,
            Mode::Rail => 2,
            Mode::Bus => 3,
            Mode::Ferry => 4,
            Mode::CableTram => 5,
            Mode::Aerial => 6,
            Mode::Funicular => 7,
            Mode::Trolleybus => 11,
            Mode::Monorail => 12,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Tram => "tram",
            Mode::Subway => "subway",
            Mode::Rail => "rail",
            Mode::Bus => "bus",
            Mode::Ferry => "ferry",
            Mode::CableTram => "cabletram",
            Mode::Aerial => "aerial",
            Mode::Funicular => "funicular",
            Mode::Trolleybus => "trolleybus",
            Mode::Monorail => "monorail",
        }
    }

    fn bit(self) -> u16 {
        1 << (self as u16)
    }
}

/// Set of permitted modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModeMask(pub u16);

impl ModeMask {
    pub const ALL: ModeMask = ModeMask(0x03ff);
    pub const NONE: ModeMask = ModeMask(0);

    pub fn contains(self, m: Mode) -> bool {
        self.0 & m.bit() != 0
    }

    pub fn with(self, m: Mode) -> ModeMask {
        ModeMask(self.0 | m.bit())
    }

    pub fn without(self, m: Mode) -> ModeMask {
        ModeMask(self.0 & !m.bit())
    }

    pub fn modes(self) -> impl Iterator<Item = Mode> {
        Mode::ALL.into_iter().filter(move |m| self.contains(*m))
    }

    /// Parses `all`, `none` or a comma list such as `bus,tram`.
    /// A leading `-` removes a mode from `all`: `-bus`.
    pub fn parse(s: &str) -> Result<ModeMask, String> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("all") || s.is_empty() {
            return Ok(ModeMask::ALL);
        }
        if s.eq_ignore_ascii_case("none") {
            return Ok(ModeMask::NONE);
        }
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let subtractive = parts.iter().all(|p| p.starts_with('-'));
        let mut mask = if subtractive { ModeMask::ALL } else { ModeMask::NONE };
        for p in parts {
            let name = p.trim_start_matches('-');
            let m = Mode::ALL
                .into_iter()
                .find(|m| m.name().eq_ignore_ascii_case(name))
                .ok_or_else(|| alloc::format!("unknown mode `{name}`"))?;
            mask = if subtractive { mask.without(m) } else { mask.with(m) };
        }
        Ok(mask)
    }
}

impl Default for ModeMask {
    fn default() -> Self {
        ModeMask::ALL
    }
}

impl fmt::Display for ModeMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == ModeMask::ALL {
            return f.write_str("all");
        }
        if *self == ModeMask::NONE {
            return f.write_str("none");
        }
        let mut first = true;
        for m in self.modes() {
            if !first {
                f.write_str(",")?;
            }
            f.write_str(m.name())?;
            first = false;
        }
        Ok(())
    }
}
