use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Instrument classes plus the `Miscellaneous` reject class for background
/// and non-instrument objects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InstrumentLabel {
    Carver,
    #[serde(rename = "Bandage Scissors")]
    BandageScissors,
    Scalpel,
    Scissors,
    #[serde(rename = "Dressing Forceps")]
    DressingForceps,
    #[serde(rename = "TV Forceps")]
    TvForceps,
    #[serde(rename = "McIndoe Forceps")]
    McIndoeForceps,
    #[serde(rename = "Ex-Probe")]
    ExProbe,
    Probe,
    #[serde(rename = "Uterine Curette")]
    UterineCurette,
    #[serde(rename = "Nail Clipper")]
    NailClipper,
    Miscellaneous,
}

impl InstrumentLabel {
    /// Every label, instruments first, `Miscellaneous` last.
    pub const ALL: [InstrumentLabel; 12] = [
        InstrumentLabel::Carver,
        InstrumentLabel::BandageScissors,
        InstrumentLabel::Scalpel,
        InstrumentLabel::Scissors,
        InstrumentLabel::DressingForceps,
        InstrumentLabel::TvForceps,
        InstrumentLabel::McIndoeForceps,
        InstrumentLabel::ExProbe,
        InstrumentLabel::Probe,
        InstrumentLabel::UterineCurette,
        InstrumentLabel::NailClipper,
        InstrumentLabel::Miscellaneous,
    ];

    /// The eleven real instruments.
    pub fn instruments() -> &'static [InstrumentLabel] {
        &Self::ALL[..11]
    }

    pub fn name(self) -> &'static str {
        match self {
            InstrumentLabel::Carver => "Carver",
            InstrumentLabel::BandageScissors => "Bandage Scissors",
            InstrumentLabel::Scalpel => "Scalpel",
            InstrumentLabel::Scissors => "Scissors",
            InstrumentLabel::DressingForceps => "Dressing Forceps",
            InstrumentLabel::TvForceps => "TV Forceps",
            InstrumentLabel::McIndoeForceps => "McIndoe Forceps",
            InstrumentLabel::ExProbe => "Ex-Probe",
            InstrumentLabel::Probe => "Probe",
            InstrumentLabel::UterineCurette => "Uterine Curette",
            InstrumentLabel::NailClipper => "Nail Clipper",
            InstrumentLabel::Miscellaneous => "Miscellaneous",
        }
    }

    /// File-name friendly form, e.g. `bandage-scissors`.
    pub fn slug(self) -> String {
        slugify(self.name())
    }

    pub fn is_miscellaneous(self) -> bool {
        self == InstrumentLabel::Miscellaneous
    }
}

impl fmt::Display for InstrumentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown {kind} label {value:?}")]
pub struct UnknownLabel {
    pub kind: &'static str,
    pub value: String,
}

impl FromStr for InstrumentLabel {
    type Err = UnknownLabel;

    /// Accepts display names and slugs, case-insensitively. "TAN Forceps" is
    /// an alias of TV Forceps.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = slugify(s.trim());
        if key == "tan-forceps" {
            return Ok(InstrumentLabel::TvForceps);
        }
        if key == "misc" {
            return Ok(InstrumentLabel::Miscellaneous);
        }
        Self::ALL
            .into_iter()
            .find(|l| l.slug() == key)
            .ok_or_else(|| UnknownLabel {
                kind: "instrument",
                value: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DefectLabel {
    Crack,
    Cuts,
    Pores,
    Scratches,
    Corrosion,
    NoDefect,
}

impl DefectLabel {
    pub const ALL: [DefectLabel; 6] = [
        DefectLabel::Crack,
        DefectLabel::Cuts,
        DefectLabel::Pores,
        DefectLabel::Scratches,
        DefectLabel::Corrosion,
        DefectLabel::NoDefect,
    ];

    /// The five defect categories, without `NoDefect`.
    pub fn defects() -> &'static [DefectLabel] {
        &Self::ALL[..5]
    }

    pub fn name(self) -> &'static str {
        match self {
            DefectLabel::Crack => "Crack",
            DefectLabel::Cuts => "Cuts",
            DefectLabel::Pores => "Pores",
            DefectLabel::Scratches => "Scratches",
            DefectLabel::Corrosion => "Corrosion",
            DefectLabel::NoDefect => "NoDefect",
        }
    }

    pub fn slug(self) -> String {
        match self {
            DefectLabel::NoDefect => "no-defect".to_string(),
            other => slugify(other.name()),
        }
    }

    pub fn is_defect(self) -> bool {
        self != DefectLabel::NoDefect
    }
}

impl fmt::Display for DefectLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DefectLabel {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = slugify(s.trim());
        if matches!(key.as_str(), "nodefect" | "none" | "no-defect-detected") {
            return Ok(DefectLabel::NoDefect);
        }
        Self::ALL
            .into_iter()
            .find(|l| l.slug() == key)
            .ok_or_else(|| UnknownLabel {
                kind: "defect",
                value: s.to_string(),
            })
    }
}

fn slugify(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        if ch.is_ascii_alphanumeric() {
            out.push(ch.to_ascii_lowercase());
        } else if !out.ends_with('-') && !out.is_empty() {
            out.push('-');
        }
    }
    while out.ends_with('-') {
        out.pop();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for l in InstrumentLabel::ALL {
            assert_eq!(l.name().parse::<InstrumentLabel>().unwrap(), l);
            assert_eq!(l.slug().parse::<InstrumentLabel>().unwrap(), l);
            let json = serde_json::to_string(&l).unwrap();
            assert_eq!(json, format!("\"{}\"", l.name()));
        }
        for l in DefectLabel::ALL {
            assert_eq!(l.name().parse::<DefectLabel>().unwrap(), l);
            assert_eq!(l.slug().parse::<DefectLabel>().unwrap(), l);
        }
    }

    #[test]
    fn aliases() {
        assert_eq!("TAN Forceps".parse::<InstrumentLabel>().unwrap(), InstrumentLabel::TvForceps);
        assert_eq!("ex-probe".parse::<InstrumentLabel>().unwrap(), InstrumentLabel::ExProbe);
        assert_eq!("No Defect".parse::<DefectLabel>().unwrap(), DefectLabel::NoDefect);
        assert!("Clamp".parse::<InstrumentLabel>().is_err());
    }

    #[test]
    fn closed_set_sizes() {
        assert_eq!(InstrumentLabel::instruments().len(), 11);
        assert!(!InstrumentLabel::instruments().contains(&InstrumentLabel::Miscellaneous));
        assert_eq!(DefectLabel::defects().len(), 5);
    }
}
