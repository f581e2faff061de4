use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Right,
    Left,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Level {
    Base,
    Mid,
    Apex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Zone {
    Medial,
    Lateral,
}

impl Side {
    pub const ALL: [Side; 2] = [Side::Right, Side::Left];
    fn name(self) -> &'static str {
        match self {
            Side::Right => "right",
            Side::Left => "left",
        }
    }
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Base, Level::Mid, Level::Apex];
    fn name(self) -> &'static str {
        match self {
            Level::Base => "base",
            Level::Mid => "mid",
            Level::Apex => "apex",
        }
    }
}

impl Zone {
    pub const ALL: [Zone; 2] = [Zone::Medial, Zone::Lateral];
    fn name(self) -> &'static str {
        match self {
            Zone::Medial => "medial",
            Zone::Lateral => "lateral",
        }
    }
}

/// One of the twelve sectors: side × level × zone.
///
/// Written as `right-base-medial` etc. in every serialized form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SectorLabel {
    pub side: Side,
    pub level: Level,
    pub zone: Zone,
}

impl SectorLabel {
    pub const fn new(side: Side, level: Level, zone: Zone) -> Self {
        Self { side, level, zone }
    }

    /// All twelve labels in index order.
    pub fn all() -> [SectorLabel; 12] {
        std::array::from_fn(Self::from_index)
    }

    pub fn index(self) -> usize {
        self.side as usize * 6 + self.level as usize * 2 + self.zone as usize
    }

    pub fn from_index(i: usize) -> Self {
        assert!(i < 12, "sector index {i} out of range");
        Self {
            side: Side::ALL[i / 6],
            level: Level::ALL[(i / 2) % 3],
            zone: Zone::ALL[i % 2],
        }
    }
}

impl fmt::Display for SectorLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}-{}", self.side.name(), self.level.name(), self.zone.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseLabelError(pub String);

impl fmt::Display for ParseLabelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown sector label '{}'", self.0)
    }
}

impl std::error::Error for ParseLabelError {}

impl FromStr for SectorLabel {
    type Err = ParseLabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        SectorLabel::all()
            .into_iter()
            .find(|l| l.to_string() == lower)
            .ok_or_else(|| ParseLabelError(s.to_string()))
    }
}

impl Serialize for SectorLabel {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SectorLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
