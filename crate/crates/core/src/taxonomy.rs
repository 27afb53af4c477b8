//! The 13-class wildfire post scheme.
//!
//! Machine order follows the zero-shot prompt letters A–M so that prompt
//! parsing, confusion-matrix axes and report rows all share one index space.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Number of classes in the scheme.
pub const NUM_CLASSES: usize = 13;

/// Total number of labeled posts in the reference corpus.
pub const REFERENCE_TOTAL: u32 = 4688;

struct ClassInfo {
    letter: char,
    name: &'static str,
    alt_names: &'static [&'static str],
    description: &'static str,
    prompt_hint: &'static str,
    reference_count: u32,
}

const CLASSES: [ClassInfo; NUM_CLASSES] = [
    ClassInfo {
        letter: 'A',
        name: "Evacuees",
        alt_names: &[],
        description: "Information relating to evacuees, their movements, needs, location.",
        prompt_hint: "information relating to evacuees, their movements, needs, location, etc",
        reference_count: 252,
    },
    ClassInfo {
        letter: 'B',
        name: "General Information",
        alt_names: &[],
        description: "General info about the wildfire situation, such as total hectares burned.",
        prompt_hint: "GENERAL facts about the wildfire situation, hectares burned",
        reference_count: 170,
    },
    ClassInfo {
        letter: 'C',
        name: "Preparedness",
        alt_names: &[],
        description: "Information for the general public to prepare themselves and their property.",
        prompt_hint: "information for the general public to prepare themselves and property for wildfires",
        reference_count: 264,
    },
    ClassInfo {
        letter: 'D',
        name: "Weather Reports",
        alt_names: &[],
        description: "Information relating to the weather with a specific location mentioned.",
        prompt_hint: "information relating to the weather, satellite imagery, radar imagery",
        reference_count: 296,
    },
    ClassInfo {
        letter: 'E',
        name: "Warnings & Status Updates",
        alt_names: &["Warnings and Status Updates"],
        description: "Fire bans in certain areas, new information about a specific area, updates from officials.",
        prompt_hint: "warnings/updates to the public from authoritative bodies, fire bans, specific information relating to a certain time or area",
        reference_count: 669,
    },
    ClassInfo {
        letter: 'F',
        name: "Reports of Actions of Responders",
        alt_names: &[],
        description: "Actions of responders within specific areas or times, including prescribed burns.",
        prompt_hint: "prescribed burns, responders responding to a specific location",
        reference_count: 356,
    },
    ClassInfo {
        letter: 'G',
        name: "Infrastructure",
        alt_names: &[],
        description: "Detours, road closures, damage to infrastructure (e.g., utility poles, highways), repairs by crews.",
        prompt_hint: "road closures, damaged buildings or property, traffic",
        reference_count: 264,
    },
    ClassInfo {
        letter: 'H',
        name: "Political",
        alt_names: &[],
        description: "Posts directed towards political figures or parties (excluding situation updates).",
        prompt_hint: "mentions of political or public figures or parties",
        reference_count: 329,
    },
    ClassInfo {
        letter: 'I',
        name: "Insurance",
        alt_names: &[],
        description: "Information relating to insurance, employment insurance, and EI benefits.",
        prompt_hint: "mentions of insurance",
        reference_count: 158,
    },
    ClassInfo {
        letter: 'J',
        name: "Advertisement",
        alt_names: &[],
        description: "Posts about food, restaurants, off-topic ads for services (e.g., apps, air purifiers, not insurance-related).",
        prompt_hint: "information about restaurants, food, apps or services",
        reference_count: 117,
    },
    ClassInfo {
        letter: 'K',
        name: "Smoke & Air Quality",
        alt_names: &["Smoke and Air Quality"],
        description: "Tweets related to or showing signs of smoke or the current air quality.",
        prompt_hint: "information about smoke or air quality, masks, breathing",
        reference_count: 1128,
    },
    ClassInfo {
        letter: 'L',
        name: "Support",
        alt_names: &[],
        description: "Mental health and financial support, temporary housing for livestock.",
        prompt_hint: "information about financial, mental health, or other types of support for people",
        reference_count: 178,
    },
    ClassInfo {
        letter: 'M',
        name: "Other",
        alt_names: &[],
        description: "No 'useful' information, focusing on images (e.g., scenery), general complaining, or irrelevant content.",
        prompt_hint: "the post does not fit well in one of the previous categories",
        reference_count: 507,
    },
];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TaxonomyError {
    #[error("letter {0:?} is outside A-M")]
    BadLetter(char),
    #[error("unknown class name {0:?}")]
    UnknownName(String),
    #[error("class index {0} out of range")]
    BadIndex(usize),
}

/// One of the 13 classes, stored as its canonical index (A = 0 … M = 12).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClassLabel(u8);

impl ClassLabel {
    pub const EVACUEES: ClassLabel = ClassLabel(0);
    pub const GENERAL_INFORMATION: ClassLabel = ClassLabel(1);
    pub const PREPAREDNESS: ClassLabel = ClassLabel(2);
    pub const WEATHER_REPORTS: ClassLabel = ClassLabel(3);
    pub const WARNINGS: ClassLabel = ClassLabel(4);
    pub const RESPONDERS: ClassLabel = ClassLabel(5);
    pub const INFRASTRUCTURE: ClassLabel = ClassLabel(6);
    pub const POLITICAL: ClassLabel = ClassLabel(7);
    pub const INSURANCE: ClassLabel = ClassLabel(8);
    pub const ADVERTISEMENT: ClassLabel = ClassLabel(9);
    pub const SMOKE: ClassLabel = ClassLabel(10);
    pub const SUPPORT: ClassLabel = ClassLabel(11);
    pub const OTHER: ClassLabel = ClassLabel(12);

    pub fn from_index(index: usize) -> Result<Self, TaxonomyError> {
        if index < NUM_CLASSES {
            Ok(ClassLabel(index as u8))
        } else {
            Err(TaxonomyError::BadIndex(index))
        }
    }

    /// Case-insensitive lookup by prompt letter.
    pub fn from_letter(letter: char) -> Result<Self, TaxonomyError> {
        let up = letter.to_ascii_uppercase();
        if ('A'..='M').contains(&up) {
            Ok(ClassLabel(up as u8 - b'A'))
        } else {
            Err(TaxonomyError::BadLetter(letter))
        }
    }

    /// Lookup by canonical name; also accepts the spelled-out "and" variants.
    pub fn from_name(name: &str) -> Result<Self, TaxonomyError> {
        let trimmed = name.trim();
        CLASSES
            .iter()
            .position(|c| {
                c.name.eq_ignore_ascii_case(trimmed)
                    || c.alt_names.iter().any(|a| a.eq_ignore_ascii_case(trimmed))
            })
            .map(|i| ClassLabel(i as u8))
            .ok_or_else(|| TaxonomyError::UnknownName(name.to_string()))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn letter(self) -> char {
        CLASSES[self.index()].letter
    }

    pub fn name(self) -> &'static str {
        CLASSES[self.index()].name
    }

    pub fn description(self) -> &'static str {
        CLASSES[self.index()].description
    }

    /// Parenthetical used in the zero-shot option list.
    pub fn prompt_hint(self) -> &'static str {
        CLASSES[self.index()].prompt_hint
    }

    /// Class count in the reference labeled corpus. Metadata only.
    pub fn reference_count(self) -> u32 {
        CLASSES[self.index()].reference_count
    }

    /// All classes in A–M order.
    pub fn all() -> impl ExactSizeIterator<Item = ClassLabel> + Clone {
        (0..NUM_CLASSES as u8).map(ClassLabel)
    }
}

/// The 13 labels in canonical A–M order.
pub fn canonical_order() -> Vec<ClassLabel> {
    ClassLabel::all().collect()
}

impl fmt::Debug for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.letter(), self.name())
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassLabel {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let mut chars = t.chars();
        if let (Some(c), None) = (chars.next(), chars.next()) {
            return ClassLabel::from_letter(c);
        }
        ClassLabel::from_name(t)
    }
}

impl Serialize for ClassLabel {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for ClassLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Serializable view of the scheme for downstream tools (legends, label UIs).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyFile {
    pub classes: Vec<TaxonomyEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyEntry {
    pub letter: char,
    pub name: String,
    pub description: String,
    pub prompt_hint: String,
    pub reference_count: u32,
}

impl TaxonomyFile {
    pub fn wildfire() -> Self {
        TaxonomyFile {
            classes: ClassLabel::all()
                .map(|c| TaxonomyEntry {
                    letter: c.letter(),
                    name: c.name().to_string(),
                    description: c.description().to_string(),
                    prompt_hint: c.prompt_hint().to_string(),
                    reference_count: c.reference_count(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("taxonomy serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn letters_map_to_prompt_options() {
        assert_eq!(ClassLabel::from_letter('A').unwrap().name(), "Evacuees");
        assert_eq!(ClassLabel::from_letter('M').unwrap().name(), "Other");
        assert_eq!(
            ClassLabel::from_letter('k').unwrap().name(),
            "Smoke & Air Quality"
        );
        assert_eq!(
            ClassLabel::from_letter('N'),
            Err(TaxonomyError::BadLetter('N'))
        );
        assert!(ClassLabel::from_letter('1').is_err());
    }

    #[test]
    fn canonical_order_is_a_to_m() {
        let order = canonical_order();
        assert_eq!(order.len(), 13);
        assert_eq!(order[0].name(), "Evacuees");
        let letters: String = order.iter().map(|c| c.letter()).collect();
        assert_eq!(letters, "ABCDEFGHIJKLM");
        let total: u32 = order.iter().map(|c| c.reference_count()).sum();
        assert_eq!(total, REFERENCE_TOTAL);
    }

    #[test]
    fn letter_round_trip() {
        for c in ClassLabel::all() {
            assert_eq!(ClassLabel::from_letter(c.letter()).unwrap(), c);
            assert_eq!(ClassLabel::from_name(c.name()).unwrap(), c);
            assert_eq!(c.to_string().parse::<ClassLabel>().unwrap(), c);
        }
    }

    #[test]
    fn names_keep_ampersand_and_accept_spelled_variant() {
        assert_eq!(ClassLabel::WARNINGS.name(), "Warnings & Status Updates");
        assert_eq!(
            ClassLabel::from_name("Smoke and Air Quality").unwrap(),
            ClassLabel::SMOKE
        );
        assert!(ClassLabel::from_name("Wildlife").is_err());
    }

    #[test]
    fn taxonomy_file_round_trips() {
        let t = TaxonomyFile::wildfire();
        let back: TaxonomyFile = serde_json::from_str(&t.to_json()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.classes[4].name, "Warnings & Status Updates");
    }
}
