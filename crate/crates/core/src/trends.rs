//! Retrospective trend analysis: offline location resolution, weekly post
//! counts and per-class weekly series over classifier predictions.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io;
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, Days, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::corpus::Post;
use crate::taxonomy::ClassLabel;

#[derive(Debug, thiserror::Error)]
pub enum TrendError {
    #[error("gazetteer: {0}")]
    Csv(#[from] csv::Error),
    #[error("gazetteer line {line}: unknown province {value:?}")]
    BadProvince { line: usize, value: String },
    #[error("gazetteer line {line}: duplicate name {name:?}")]
    DuplicateName { line: usize, name: String },
    #[error("gazetteer line {line}: Canadian entry {name:?} needs a province")]
    MissingProvince { line: usize, name: String },
    #[error("unknown class {0:?}")]
    UnknownClass(String),
    #[error("year {0} is out of range")]
    BadYear(i32),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Canadian provinces and territories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Province {
    AB,
    BC,
    MB,
    NB,
    NL,
    NS,
    NT,
    NU,
    ON,
    PE,
    QC,
    SK,
    YT,
}

impl Province {
    pub const ALL: [Province; 13] = [
        Province::AB,
        Province::BC,
        Province::MB,
        Province::NB,
        Province::NL,
        Province::NS,
        Province::NT,
        Province::NU,
        Province::ON,
        Province::PE,
        Province::QC,
        Province::SK,
        Province::YT,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Province::AB => "AB",
            Province::BC => "BC",
            Province::MB => "MB",
            Province::NB => "NB",
            Province::NL => "NL",
            Province::NS => "NS",
            Province::NT => "NT",
            Province::NU => "NU",
            Province::ON => "ON",
            Province::PE => "PE",
            Province::QC => "QC",
            Province::SK => "SK",
            Province::YT => "YT",
        }
    }
}

impl FromStr for Province {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        let up = s.trim().to_ascii_uppercase();
        Province::ALL
            .into_iter()
            .find(|p| p.code() == up)
            .ok_or(())
    }
}

/// Where a post's author location resolved to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Resolution {
    Province(Province),
    NotFound,
    NotCanada,
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Resolution::Province(p) => f.write_str(p.code()),
            Resolution::NotFound => f.write_str("NOT_FOUND"),
            Resolution::NotCanada => f.write_str("NOT_CANADA"),
        }
    }
}

impl Serialize for Resolution {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GazetteerEntry {
    pub name: String,
    pub aliases: Vec<String>,
    pub province: Option<Province>,
    pub country: String,
}

impl GazetteerEntry {
    fn is_canadian(&self) -> bool {
        normalize(&self.country) == "canada"
    }
}

/// Casefolds, trims, replaces punctuation with spaces and collapses runs of
/// whitespace. Idempotent.
pub fn normalize(raw: &str) -> String {
    let cleaned: String = raw
        .chars()
        .map(|c| {
            if c.is_alphanumeric() || c.is_whitespace() {
                c
            } else {
                ' '
            }
        })
        .collect::<String>()
        .to_lowercase();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Offline place-name lookup table.
#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    entries: Vec<GazetteerEntry>,
    index: HashMap<String, usize>,
}

#[derive(Deserialize)]
struct GazetteerRow {
    name: String,
    #[serde(default)]
    aliases: String,
    #[serde(default)]
    province: String,
    country: String,
}

impl Gazetteer {
    /// Builds the lookup index. Names must be unique after normalization;
    /// an alias that collides with an earlier name or alias is ignored.
    pub fn new(entries: Vec<GazetteerEntry>) -> Result<Self, TrendError> {
        let mut index = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            if e.is_canadian() && e.province.is_none() {
                return Err(TrendError::MissingProvince {
                    line: i + 2,
                    name: e.name.clone(),
                });
            }
            let key = normalize(&e.name);
            if index.insert(key.clone(), i).is_some() {
                return Err(TrendError::DuplicateName {
                    line: i + 2,
                    name: e.name.clone(),
                });
            }
        }
        for (i, e) in entries.iter().enumerate() {
            for a in &e.aliases {
                index.entry(normalize(a)).or_insert(i);
            }
        }
        Ok(Gazetteer { entries, index })
    }

    /// Reads a delimited file with header `name,aliases,province,country`;
    /// aliases are `|`-separated.
    pub fn from_reader<R: io::Read>(reader: R) -> Result<Self, TrendError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut entries = Vec::new();
        for (i, row) in rdr.deserialize::<GazetteerRow>().enumerate() {
            let row = row?;
            let province = if row.province.trim().is_empty() {
                None
            } else {
                Some(row.province.parse().map_err(|_| TrendError::BadProvince {
                    line: i + 2,
                    value: row.province.clone(),
                })?)
            };
            entries.push(GazetteerEntry {
                name: row.name,
                aliases: row
                    .aliases
                    .split('|')
                    .map(str::trim)
                    .filter(|a| !a.is_empty())
                    .map(String::from)
                    .collect(),
                province,
                country: row.country,
            });
        }
        Gazetteer::new(entries)
    }

    pub fn from_path(path: &Path) -> Result<Self, TrendError> {
        Gazetteer::from_reader(std::fs::File::open(path)?)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn lookup(&self, key: &str) -> Option<&GazetteerEntry> {
        self.index.get(key).map(|&i| &self.entries[i])
    }
}

/// Resolves a free-text author location.
///
/// Candidates are tried in order: the whole normalized string, then each
/// comma-separated segment left to right, then word n-grams longest first.
/// The first candidate found in the gazetteer decides the answer.
pub fn resolve_location(raw: Option<&str>, gazetteer: &Gazetteer) -> Resolution {
    let Some(raw) = raw else {
        return Resolution::NotFound;
    };
    let whole = normalize(raw);
    let words: Vec<&str> = whole.split(' ').filter(|w| !w.is_empty()).collect();
    let mut candidates = vec![whole.clone()];
    candidates.extend(raw.split([',', ';', '/', '|']).map(normalize));
    for len in (1..words.len()).rev() {
        for start in 0..=words.len() - len {
            candidates.push(words[start..start + len].join(" "));
        }
    }
    for c in candidates.iter().filter(|c| !c.is_empty()) {
        if let Some(e) = gazetteer.lookup(c) {
            return match (e.is_canadian(), e.province) {
                (true, Some(p)) => Resolution::Province(p),
                _ => Resolution::NotCanada,
            };
        }
    }
    Resolution::NotFound
}

/// Counts of posts per resolved location. Only non-empty keys appear.
pub fn province_distribution(posts: &[Post], gazetteer: &Gazetteer) -> BTreeMap<Resolution, usize> {
    let mut out = BTreeMap::new();
    for p in posts {
        *out.entry(resolve_location(p.author_location_raw.as_deref(), gazetteer))
            .or_insert(0) += 1;
    }
    out
}

/// Weekly counts for one year, optionally restricted to one class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrendSeries {
    pub year: i32,
    pub class: Option<ClassLabel>,
    pub buckets: Vec<(NaiveDate, u64)>,
}

impl TrendSeries {
    /// Two-column CSV: ISO-8601 week start, count.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("week_start,count\n");
        for (d, c) in &self.buckets {
            out.push_str(&format!("{},{}\n", d.format("%Y-%m-%d"), c));
        }
        out
    }

    pub fn total(&self) -> u64 {
        self.buckets.iter().map(|(_, c)| c).sum()
    }

    /// Start of the week with the highest count (earliest on ties).
    pub fn peak_week(&self) -> Option<NaiveDate> {
        self.buckets
            .iter()
            .fold(None::<(NaiveDate, u64)>, |best, &(d, c)| match best {
                Some((_, bc)) if bc >= c => best,
                _ => Some((d, c)),
            })
            .map(|(d, _)| d)
    }
}

/// Week anchoring recorded alongside emitted series.
pub const WEEK_ANCHOR: &str = "monday-on-or-before-jan-1";

/// Monday on or before January 1 of `year`.
pub fn week_anchor(year: i32) -> Result<NaiveDate, TrendError> {
    let jan1 = NaiveDate::from_ymd_opt(year, 1, 1).ok_or(TrendError::BadYear(year))?;
    let back = jan1.weekday().num_days_from_monday() as u64;
    Ok(jan1 - Days::new(back))
}

fn empty_buckets(year: i32) -> Result<Vec<(NaiveDate, u64)>, TrendError> {
    let anchor = week_anchor(year)?;
    let dec31 = NaiveDate::from_ymd_opt(year, 12, 31).ok_or(TrendError::BadYear(year))?;
    let weeks = (dec31 - anchor).num_days() / 7 + 1;
    Ok((0..weeks)
        .map(|w| (anchor + Days::new(7 * w as u64), 0))
        .collect())
}

fn week_index(anchor: NaiveDate, day: NaiveDate) -> usize {
    ((day - anchor).num_days() / 7) as usize
}

/// Consecutive Monday-anchored weekly counts for posts created in `year`
/// (UTC). Weeks without posts are present with count 0.
pub fn weekly_counts(posts: &[Post], year: i32) -> Result<TrendSeries, TrendError> {
    let mut buckets = empty_buckets(year)?;
    let anchor = buckets[0].0;
    for p in posts {
        let day = p.created_at.date_naive();
        if day.year() == year {
            buckets[week_index(anchor, day)].1 += 1;
        }
    }
    Ok(TrendSeries {
        year,
        class: None,
        buckets,
    })
}

/// One weekly series per requested class.
pub fn class_trend_series(
    predicted: &[(Post, ClassLabel)],
    year: i32,
    classes: &[ClassLabel],
) -> Result<Vec<TrendSeries>, TrendError> {
    let template = empty_buckets(year)?;
    let anchor = template[0].0;
    let mut series: Vec<TrendSeries> = classes
        .iter()
        .map(|&c| TrendSeries {
            year,
            class: Some(c),
            buckets: template.clone(),
        })
        .collect();
    for (p, label) in predicted {
        let day = p.created_at.date_naive();
        if day.year() != year {
            continue;
        }
        let w = week_index(anchor, day);
        for s in series.iter_mut().filter(|s| s.class == Some(*label)) {
            s.buckets[w].1 += 1;
        }
    }
    Ok(series)
}

/// Parses class names (or letters) for a series request.
pub fn parse_classes(names: &[String]) -> Result<Vec<ClassLabel>, TrendError> {
    names
        .iter()
        .map(|n| n.parse().map_err(|_| TrendError::UnknownClass(n.clone())))
        .collect()
}

/// Minimal SVG line chart of one or more series over the same year.
pub fn render_svg(series: &[TrendSeries], title: &str) -> String {
    const W: f64 = 900.0;
    const H: f64 = 360.0;
    const PAD: f64 = 40.0;
    const COLORS: [&str; 8] = [
        "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    ];
    let weeks = series.iter().map(|s| s.buckets.len()).max().unwrap_or(1).max(2);
    let peak = series
        .iter()
        .flat_map(|s| s.buckets.iter().map(|(_, c)| *c))
        .max()
        .unwrap_or(0)
        .max(1) as f64;
    let x = |i: usize| PAD + (W - 2.0 * PAD) * i as f64 / (weeks - 1) as f64;
    let y = |c: u64| H - PAD - (H - 2.0 * PAD) * c as f64 / peak;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\">\n<text x=\"{PAD}\" y=\"20\">{}</text>\n",
        xml_escape(title)
    );
    for (k, s) in series.iter().enumerate() {
        let pts: Vec<String> = s
            .buckets
            .iter()
            .enumerate()
            .map(|(i, (_, c))| format!("{:.1},{:.1}", x(i), y(*c)))
            .collect();
        let label = s.class.map(|c| c.name()).unwrap_or("all posts");
        out.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{}\" points=\"{}\"><title>{}</title></polyline>\n",
            COLORS[k % COLORS.len()],
            pts.join(" "),
            xml_escape(label)
        ));
    }
    out.push_str("</svg>\n");
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// True if `d` is a Monday; every bucket start satisfies this.
pub fn is_week_start(d: NaiveDate) -> bool {
    d.weekday() == Weekday::Mon
}
