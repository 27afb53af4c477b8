//! Post data model, line-delimited ingestion, collection queries,
//! deduplication and stratified splitting.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{self, BufRead, BufReader};
use std::path::{Component, Path, PathBuf};

use chrono::{DateTime, Datelike, NaiveDateTime, Utc};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::seeds::{self, Stream};
use crate::taxonomy::ClassLabel;

/// Filter suffix appended to every collection query.
pub const QUERY_FILTER_SUFFIX: &str =
    " -has:videos has:images lang:en -is:retweet -is:quote -is:reply";

/// Default train fraction: 938 of 4,688 posts held out for testing.
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("query needs at least one hashtag")]
    EmptyHashtags,
    #[error("class {class} has {count} sample(s); stratified splitting needs at least 2")]
    ClassTooSmall { class: ClassLabel, count: usize },
    #[error("train fraction {0} must lie strictly between 0 and 1")]
    BadFraction(f64),
}

/// One social-media sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Post {
    pub id: String,
    pub text: String,
    /// Image reference relative to the configured image root; empty when absent.
    #[serde(rename = "image", default)]
    pub image_path: String,
    pub created_at: DateTime<Utc>,
    #[serde(rename = "location", default)]
    pub author_location_raw: Option<String>,
    #[serde(rename = "year")]
    pub source_year: i32,
}

impl Post {
    /// Resolves the image reference under `root`, or `None` for text-only posts.
    pub fn image_file(&self, root: &Path) -> Option<PathBuf> {
        if self.image_path.is_empty() {
            None
        } else {
            Some(root.join(&self.image_path))
        }
    }
}

/// What went wrong with one input line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RecordErrorKind {
    Malformed { message: String },
    EmptyId,
    BadTimestamp { value: String },
    YearMismatch { year: i32, timestamp_year: i32 },
    DuplicateId { id: String, first_line: usize },
    BadImagePath { path: String },
}

/// A per-line ingestion failure. Line numbers are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecordError {
    pub line: usize,
    #[serde(flatten)]
    pub kind: RecordErrorKind,
}

/// Posts that loaded cleanly plus every rejected line.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub posts: Vec<Post>,
    pub errors: Vec<RecordError>,
}

#[derive(Deserialize)]
struct RawPost {
    id: String,
    text: String,
    #[serde(default)]
    image: Option<String>,
    created_at: String,
    #[serde(default)]
    location: Option<String>,
    year: i32,
}

/// Parses a timestamp and normalizes it to UTC.
///
/// Accepts RFC 3339, `YYYY-MM-DD HH:MM:SS` (taken as UTC) and the legacy
/// `Wed Jun 07 18:02:11 +0000 2023` platform format.
pub fn parse_timestamp(raw: &str) -> Option<DateTime<Utc>> {
    let s = raw.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t.and_utc());
        }
    }
    DateTime::parse_from_str(s, "%a %b %d %H:%M:%S %z %Y")
        .ok()
        .map(|t| t.with_timezone(&Utc))
}

fn image_path_is_resolvable(p: &str) -> bool {
    let path = Path::new(p);
    !path.is_absolute()
        && path
            .components()
            .all(|c| matches!(c, Component::Normal(_) | Component::CurDir))
}

/// Loads a line-delimited post file.
///
/// A missing or unreadable file is fatal; everything else is reported per
/// line and the remaining records still load. Image references must stay
/// inside `image_root` (relative, no `..`); existence is checked lazily by
/// the encoders.
pub fn load_posts(path: &Path, image_root: &Path) -> Result<LoadReport, CorpusError> {
    let file = fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let _ = image_root;
    let mut report = LoadReport::default();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |kind| RecordError { line: lineno, kind };
        let raw: RawPost = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                report.errors.push(err(RecordErrorKind::Malformed {
                    message: e.to_string(),
                }));
                continue;
            }
        };
        if raw.id.trim().is_empty() {
            report.errors.push(err(RecordErrorKind::EmptyId));
            continue;
        }
        let Some(created_at) = parse_timestamp(&raw.created_at) else {
            report.errors.push(err(RecordErrorKind::BadTimestamp {
                value: raw.created_at,
            }));
            continue;
        };
        if created_at.year() != raw.year {
            report.errors.push(err(RecordErrorKind::YearMismatch {
                year: raw.year,
                timestamp_year: created_at.year(),
            }));
            continue;
        }
        let image = raw.image.unwrap_or_default();
        if !image.is_empty() && !image_path_is_resolvable(&image) {
            report
                .errors
                .push(err(RecordErrorKind::BadImagePath { path: image }));
            continue;
        }
        if let Some(&first_line) = seen.get(&raw.id) {
            report.errors.push(err(RecordErrorKind::DuplicateId {
                id: raw.id,
                first_line,
            }));
            continue;
        }
        seen.insert(raw.id.clone(), lineno);
        report.posts.push(Post {
            id: raw.id,
            text: raw.text,
            image_path: image,
            created_at,
            author_location_raw: raw.location.filter(|l| !l.trim().is_empty()),
            source_year: raw.year,
        });
    }
    Ok(report)
}

/// Writes posts back out in the ingestion format.
pub fn write_posts(path: &Path, posts: &[Post]) -> io::Result<()> {
    let mut out = String::new();
    for p in posts {
        let rec = serde_json::json!({
            "id": p.id,
            "text": p.text,
            "image": p.image_path,
            "created_at": p.created_at.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            "location": p.author_location_raw,
            "year": p.source_year,
        });
        out.push_str(&rec.to_string());
        out.push('\n');
    }
    fs::write(path, out)
}

/// A post id paired with its final label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub id: String,
    pub label: ClassLabel,
}

/// Loads a line-delimited `{id, label}` file; bad lines are reported, not fatal.
pub fn load_labels(path: &Path) -> Result<(Vec<LabelRecord>, Vec<RecordError>), CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut labels = Vec::new();
    let mut errors = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<LabelRecord>(line) {
            Ok(rec) => {
                if let Some(&first_line) = seen.get(&rec.id) {
                    errors.push(RecordError {
                        line: i + 1,
                        kind: RecordErrorKind::DuplicateId {
                            id: rec.id,
                            first_line,
                        },
                    });
                } else {
                    seen.insert(rec.id.clone(), i + 1);
                    labels.push(rec);
                }
            }
            Err(e) => errors.push(RecordError {
                line: i + 1,
                kind: RecordErrorKind::Malformed {
                    message: e.to_string(),
                },
            }),
        }
    }
    Ok((labels, errors))
}

/// One hashtag-based collection query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub year: i32,
    pub hashtags: Vec<String>,
    /// Companion keyword clause, kept verbatim.
    #[serde(default)]
    pub keywords: Option<String>,
    #[serde(default = "default_filters")]
    pub filters: String,
}

fn default_filters() -> String {
    QUERY_FILTER_SUFFIX.to_string()
}

impl QuerySpec {
    pub fn new(year: i32, hashtags: &[&str]) -> Self {
        QuerySpec {
            year,
            hashtags: hashtags.iter().map(|h| h.to_string()).collect(),
            keywords: None,
            filters: default_filters(),
        }
    }

    pub fn with_keywords(mut self, clause: &str) -> Self {
        self.keywords = Some(clause.to_string());
        self
    }
}

/// Builds the hashtag query: `(#a OR #b ...)` followed by the filter suffix.
pub fn build_query(spec: &QuerySpec) -> Result<String, CorpusError> {
    if spec.hashtags.is_empty() {
        return Err(CorpusError::EmptyHashtags);
    }
    Ok(format!("({}){}", spec.hashtags.join(" OR "), spec.filters))
}

/// Builds the companion keyword query, when the spec carries one.
///
/// Keyword and hashtag searches run as separate requests whose results are
/// merged and deduplicated afterwards.
pub fn build_keyword_query(spec: &QuerySpec) -> Option<String> {
    spec.keywords
        .as_ref()
        .map(|k| format!("{}{}", k, spec.filters))
}

/// Every request string for one spec: the hashtag query, then the keyword query.
pub fn build_queries(spec: &QuerySpec) -> Result<Vec<String>, CorpusError> {
    let mut out = vec![build_query(spec)?];
    out.extend(build_keyword_query(spec));
    Ok(out)
}

const BASE_TAGS: [&str; 5] = [
    "#BCwildfire",
    "#BCfire",
    "#ABWildfire",
    "#albertawildfire",
    "#ABFire",
];

/// Queries used to collect the labeled corpus (2022, 2023 and 2024 seasons).
pub fn labeled_collection_queries() -> Vec<QuerySpec> {
    let mut jasper: Vec<&str> = BASE_TAGS.to_vec();
    jasper.extend(["#JasperStrong", "#JasperWildfire", "#JasperAB"]);
    vec![
        QuerySpec::new(2022, &BASE_TAGS),
        QuerySpec::new(2023, &BASE_TAGS),
        QuerySpec::new(2024, &jasper),
    ]
}

const WEST_TAGS: [&str; 6] = [
    "#BCwildfire",
    "#britishcolumbiawildfire",
    "#BCfire",
    "#ABwildfire",
    "#albertawildfire",
    "#ABFire",
];
const PRAIRIE_NORTH_TAGS: [&str; 11] = [
    "#SKwildfire",
    "#sasksatchewanwildfire",
    "#SKfire",
    "#YTwildfire",
    "#yukonwildfire",
    "#YTfire",
    "#NTwildfire",
    "#northwestterritorieswildfire",
    "#NTfire",
    "#NWTwildfire",
    "#NWTfire",
];
const EAST_TAGS: [&str; 8] = [
    "#MBwildfire",
    "#manitobawildfire",
    "#MBfire",
    "#ONwildfire",
    "#ontariowildfire",
    "#QCwildfire",
    "#quebecwildfire",
    "#QCfire",
];
const CANADA_TAGS: [&str; 4] = [
    "#CanadaOnFire",
    "#CanadaWildfire",
    "#CanadaFires",
    "#CanadaIsOnFire",
];
const FIRE_CLAUSE: &str = "(wildfire OR forest fire)";

/// Hashtag and keyword queries for the 2018–2024 unlabeled trend corpus.
pub fn trend_collection_queries() -> Vec<QuerySpec> {
    let kw = |places: &str| format!("({places}) {FIRE_CLAUSE}");
    let national: Vec<&str> = WEST_TAGS
        .iter()
        .chain(&PRAIRIE_NORTH_TAGS)
        .chain(&EAST_TAGS)
        .copied()
        .collect();
    let mut y2018 = WEST_TAGS.to_vec();
    y2018[3] = "#ABWildfire";
    let mut y2023 = national.clone();
    y2023.extend(CANADA_TAGS);
    let mut y2024 = vec!["#JasperStrong", "#JasperWildfire", "#JasperAB"];
    y2024.extend(WEST_TAGS);
    y2024.extend(CANADA_TAGS);
    vec![
        QuerySpec::new(2018, &y2018).with_keywords(&kw(
            "alberta OR british columbia OR Prince George OR Grande Praire OR Waterton OR Bulkley Nechako OR Nadina Lake OR Kootenay OR Crowsnest Pass OR Medicine Lake OR Comstock Lake OR Tugwell Creek OR Sooke OR Nanaimo Lakes OR Tweedsmuir OR Johnny Creek OR Alkali Lake OR Lutz Creek OR Shovel Lake OR Nadina Lake OR Verdun Mountain OR Silver Lake OR Tommy Lakes OR Island Lake OR Chutanli Lake",
        )),
        QuerySpec::new(2019, &["#ABWildfire", "#albertawildfire", "#ABFire"]).with_keywords(&kw(
            "alberta OR calgary OR edson OR Fort McMurray OR Grande Prairie OR High Level OR Lac La Biche OR Whitecourt OR Steen River OR Chuckegg Creek OR Peace River OR Slave Lake OR Wood Buffalo National Park",
        )),
        QuerySpec::new(2020, &national).with_keywords(&kw(
            "british columbia OR alberta OR sasksatchewan OR yukon OR northwest territories OR manitoba OR ontario OR quebec",
        )),
        QuerySpec::new(
            2021,
            &[
                "#MBwildfire",
                "#manitobawildfire",
                "#MBfire",
                "#ONwildfire",
                "#ontariowildfire",
                "#SKwildfire",
                "#sasksatchewanwildfire",
                "#SKfire",
                "#pafire",
                "#ontariofire",
                "#manitobafire",
                "#sasksatchewanfire",
            ],
        )
        .with_keywords(&kw("manitoba OR ontario OR sasksatchewan OR british columbia")),
        QuerySpec::new(
            2022,
            &[
                "#YTwildfire",
                "#yukonwildfire",
                "#YTfire",
                "#yukonforestfire",
                "#NTwildfire",
                "#northwestterritorieswildfire",
                "#NTfire",
                "#NWTwildfire",
                "#NWTfire",
                "#nwtforestfire",
            ],
        )
        .with_keywords(&format!(
            "({}) {FIRE_CLAUSE} (-alaska -Eielson -CityofNorthPole)",
            "#yzf OR #nwt OR #Yellowknife OR Yukon OR Northwest Territories OR Whitehorse OR Yellowknife OR Dawson City OR Great Slave Lake OR Norman Wells OR Inuvik OR Watson Lake OR Hay River OR Fort Smith OR Tuktoyaktuk OR Behchoko"
        )),
        QuerySpec::new(2023, &y2023).with_keywords(&kw(
            "ontario OR quebec OR sasksatchewan OR british columbia OR manitoba OR northwest territories OR yukon OR alberta",
        )),
        QuerySpec::new(2024, &y2024).with_keywords(&kw(
            "canada OR ontario OR quebec OR sasksatchewan OR manitoba OR northwest territories OR yukon OR british columbia OR alberta OR jasper",
        )),
    ]
}

/// Keeps the first occurrence of every id, preserving order.
pub fn dedupe(posts: Vec<Post>) -> Vec<Post> {
    let mut seen = HashSet::new();
    posts
        .into_iter()
        .filter(|p| seen.insert(p.id.clone()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SplitStrategy {
    #[default]
    Stratified,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub train_fraction: f64,
    #[serde(default)]
    pub strategy: SplitStrategy,
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        SplitSpec {
            seed,
            train_fraction: DEFAULT_TRAIN_FRACTION,
            strategy: SplitStrategy::Stratified,
        }
    }
}

/// Index-level split result; both lists are ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Number of held-out samples for a class of `count` members.
pub fn class_test_count(count: usize, train_fraction: f64) -> usize {
    let raw = (count as f64 * (1.0 - train_fraction)).round() as usize;
    raw.clamp(1, count.saturating_sub(1).max(1))
}

/// Stratified split over a label sequence, deterministic in `spec.seed`.
///
/// Each class holds out `round(count × (1 − train_fraction))` members, but
/// never all of them and never none.
pub fn stratified_split_indices(
    labels: &[ClassLabel],
    spec: &SplitSpec,
) -> Result<SplitIndices, CorpusError> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(CorpusError::BadFraction(spec.train_fraction));
    }
    let mut by_class: BTreeMap<ClassLabel, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    if let Some((&class, members)) = by_class.iter().find(|(_, m)| m.len() < 2) {
        return Err(CorpusError::ClassTooSmall {
            class,
            count: members.len(),
        });
    }
    let mut rng = seeds::rng(spec.seed, Stream::Split);
    let mut test = Vec::new();
    let mut train = Vec::new();
    for members in by_class.values_mut() {
        let k = class_test_count(members.len(), spec.train_fraction);
        members.shuffle(&mut rng);
        test.extend_from_slice(&members[..k]);
        train.extend_from_slice(&members[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, test })
}

/// Stratified split over labeled posts; returns (train, test) in input order.
#[allow(clippy::type_complexity)]
pub fn stratified_split(
    labeled: &[(Post, ClassLabel)],
    spec: &SplitSpec,
) -> Result<(Vec<(Post, ClassLabel)>, Vec<(Post, ClassLabel)>), CorpusError> {
    let labels: Vec<ClassLabel> = labeled.iter().map(|(_, l)| *l).collect();
    let idx = stratified_split_indices(&labels, spec)?;
    let pick = |ix: &[usize]| ix.iter().map(|&i| labeled[i].clone()).collect();
    Ok((pick(&idx.train), pick(&idx.test)))
}
