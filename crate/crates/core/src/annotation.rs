//! Multi-annotator label storage, adjudication and agreement statistics.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::hash::Hash;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::taxonomy::ClassLabel;

#[derive(Debug, thiserror::Error)]
pub enum AnnotationError {
    #[error("label sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("agreement needs at least one item")]
    Empty,
    #[error("row {row} has {got} ratings, expected {expected}")]
    Ragged {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("Fleiss' kappa needs at least two raters per item")]
    TooFewRaters,
    #[error("post {post_id} has no votes")]
    NoVotes { post_id: String },
    #[error("post {post_id} has no majority and expert {expert} did not vote")]
    ExpertMissing { post_id: String, expert: String },
    #[error("annotator {annotator} voted twice on post {post_id}")]
    DuplicateVote { post_id: String, annotator: String },
    #[error("post {post_id} roster {found:?} differs from {expected:?}")]
    RosterMismatch {
        post_id: String,
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// All votes cast on one post.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub post_id: String,
    pub votes: Vec<(String, ClassLabel)>,
    #[serde(rename = "final", default)]
    pub final_label: Option<ClassLabel>,
    #[serde(default)]
    pub flags: BTreeSet<String>,
}

impl AnnotationSet {
    pub fn new(post_id: impl Into<String>) -> Self {
        AnnotationSet {
            post_id: post_id.into(),
            votes: Vec::new(),
            final_label: None,
            flags: BTreeSet::new(),
        }
    }

    /// Records one vote; an annotator may vote only once.
    pub fn add_vote(
        &mut self,
        annotator: impl Into<String>,
        label: ClassLabel,
    ) -> Result<(), AnnotationError> {
        let annotator = annotator.into();
        if self.votes.iter().any(|(a, _)| *a == annotator) {
            return Err(AnnotationError::DuplicateVote {
                post_id: self.post_id.clone(),
                annotator,
            });
        }
        self.votes.push((annotator, label));
        Ok(())
    }

    pub fn vote_of(&self, annotator: &str) -> Option<ClassLabel> {
        self.votes
            .iter()
            .find(|(a, _)| a == annotator)
            .map(|(_, l)| *l)
    }

    fn roster(&self) -> Vec<String> {
        let mut r: Vec<String> = self.votes.iter().map(|(a, _)| a.clone()).collect();
        r.sort();
        r
    }

    /// Label held by more than half of the votes, if any.
    pub fn strict_majority(&self) -> Option<ClassLabel> {
        let mut counts: BTreeMap<ClassLabel, usize> = BTreeMap::new();
        for (_, l) in &self.votes {
            *counts.entry(*l).or_default() += 1;
        }
        counts
            .into_iter()
            .find(|&(_, c)| 2 * c > self.votes.len())
            .map(|(l, _)| l)
    }

    pub fn is_unanimous(&self) -> bool {
        self.votes.windows(2).all(|w| w[0].1 == w[1].1)
    }
}

/// Final label: the strict majority when one exists, otherwise the expert's vote.
pub fn adjudicate(set: &AnnotationSet, expert: &str) -> Result<ClassLabel, AnnotationError> {
    if set.votes.is_empty() {
        return Err(AnnotationError::NoVotes {
            post_id: set.post_id.clone(),
        });
    }
    if let Some(l) = set.strict_majority() {
        return Ok(l);
    }
    set.vote_of(expert)
        .ok_or_else(|| AnnotationError::ExpertMissing {
            post_id: set.post_id.clone(),
            expert: expert.to_string(),
        })
}

/// Cohen's kappa between two raters.
///
/// Chance agreement uses each rater's own marginal label frequencies. When
/// chance agreement is 1 (both raters used one identical label throughout)
/// the statistic is undefined and 1.0 is returned by convention.
pub fn cohen_kappa<T: Eq + Hash>(a: &[T], b: &[T]) -> Result<f64, AnnotationError> {
    if a.len() != b.len() {
        return Err(AnnotationError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(AnnotationError::Empty);
    }
    let n = a.len() as u128;
    let mut observed: u128 = 0;
    let mut marg: HashMap<&T, (u128, u128)> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        if x == y {
            observed += 1;
        }
        marg.entry(x).or_default().0 += 1;
        marg.entry(y).or_default().1 += 1;
    }
    // kappa = (n*agree - sum a_c b_c) / (n^2 - sum a_c b_c), exact in integers.
    let chance: u128 = marg.values().map(|(ca, cb)| ca * cb).sum();
    let denom = n * n - chance;
    if denom == 0 {
        return Ok(1.0);
    }
    Ok((n as f64 * observed as f64 - chance as f64) / denom as f64)
}

/// Fleiss' kappa over an items × raters table of category assignments.
///
/// Every row must hold the same number (at least two) of ratings. Returns 1.0
/// when every rating in the table falls in one category.
pub fn fleiss_kappa<T: Eq + Hash, R: AsRef<[T]>>(table: &[R]) -> Result<f64, AnnotationError> {
    let first = table.first().ok_or(AnnotationError::Empty)?;
    let raters = first.as_ref().len();
    if raters < 2 {
        return Err(AnnotationError::TooFewRaters);
    }
    let mut totals: HashMap<&T, u64> = HashMap::new();
    let mut sum_pi = 0.0;
    for (row_ix, row) in table.iter().enumerate() {
        let row = row.as_ref();
        if row.len() != raters {
            return Err(AnnotationError::Ragged {
                row: row_ix,
                got: row.len(),
                expected: raters,
            });
        }
        let mut counts: HashMap<&T, u64> = HashMap::new();
        for x in row {
            *counts.entry(x).or_default() += 1;
            *totals.entry(x).or_default() += 1;
        }
        let sq: u64 = counts.values().map(|c| c * c).sum();
        let n = raters as u64;
        sum_pi += (sq - n) as f64 / (n * (n - 1)) as f64;
    }
    let items = table.len() as f64;
    let all = items * raters as f64;
    let p_bar = sum_pi / items;
    let p_e: f64 = totals
        .values()
        .map(|&c| {
            let p = c as f64 / all;
            p * p
        })
        .sum();
    if totals.len() == 1 {
        return Ok(1.0);
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

/// Cohen's kappa for one annotator pair, identified by 1-based roster position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairKappa {
    pub first: String,
    pub second: String,
    pub kappa: f64,
}

/// Every agreement statistic over a fixed annotator roster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub items: usize,
    pub roster: Vec<String>,
    pub expert: String,
    pub majority_rate: f64,
    pub full_rate: f64,
    pub vote_vs_annotator: BTreeMap<String, f64>,
    pub pairwise_cohen: Vec<PairKappa>,
    pub fleiss: f64,
}

/// Reference values from the original three-annotator study, kept as metadata.
pub const REFERENCE_TABLE: [(&str, f64); 9] = [
    ("Majority Agreement (2 same)", 0.884),
    ("Full Agreement (all same)", 0.451),
    ("Vote between all/annotator 1", 0.787),
    ("Vote between all/annotator 2", 0.777),
    ("Vote between all/annotator 3", 0.658),
    ("Cohen's Kappa annotator 1-2", 0.635),
    ("Cohen's Kappa annotator 1-3", 0.506),
    ("Cohen's Kappa annotator 2-3", 0.492),
    ("Fleiss' Kappa", 0.543),
];

impl AgreementReport {
    /// Named rows in the order of the agreement table.
    pub fn table_rows(&self) -> Vec<(String, f64)> {
        let n = self.roster.len();
        let majority_name = if n == 3 {
            "Majority Agreement (2 same)".to_string()
        } else {
            format!("Majority Agreement (>{} same)", n / 2)
        };
        let mut rows = vec![
            (majority_name, self.majority_rate),
            ("Full Agreement (all same)".to_string(), self.full_rate),
        ];
        for (i, a) in self.roster.iter().enumerate() {
            rows.push((
                format!("Vote between all/annotator {}", i + 1),
                self.vote_vs_annotator[a],
            ));
        }
        let pos = |name: &str| self.roster.iter().position(|r| r == name).unwrap() + 1;
        for p in &self.pairwise_cohen {
            rows.push((
                format!("Cohen's Kappa annotator {}-{}", pos(&p.first), pos(&p.second)),
                p.kappa,
            ));
        }
        rows.push(("Fleiss' Kappa".to_string(), self.fleiss));
        rows
    }

    /// Structured report file: rows keyed by table name plus the raw report.
    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<serde_json::Value> = self
            .table_rows()
            .into_iter()
            .map(|(metric, value)| serde_json::json!({ "metric": metric, "value": value }))
            .collect();
        serde_json::json!({
            "rows": rows,
            "report": self,
        })
    }
}

/// Computes majority/full agreement, vote-vs-annotator rates, pairwise Cohen
/// and Fleiss kappa. The roster is taken from the first set (in vote order)
/// and every other set must carry exactly the same annotators.
pub fn agreement_report(
    sets: &[AnnotationSet],
    expert: Option<&str>,
) -> Result<AgreementReport, AnnotationError> {
    let first = sets.first().ok_or(AnnotationError::Empty)?;
    let roster: Vec<String> = first.votes.iter().map(|(a, _)| a.clone()).collect();
    if roster.is_empty() {
        return Err(AnnotationError::NoVotes {
            post_id: first.post_id.clone(),
        });
    }
    let expected = first.roster();
    for s in sets {
        let found = s.roster();
        if found != expected {
            return Err(AnnotationError::RosterMismatch {
                post_id: s.post_id.clone(),
                expected,
                found,
            });
        }
    }
    let expert = expert.unwrap_or(&roster[0]).to_string();

    // Column-aligned table: table[item][k] is roster[k]'s vote.
    let table: Vec<Vec<ClassLabel>> = sets
        .iter()
        .map(|s| roster.iter().map(|a| s.vote_of(a).unwrap()).collect())
        .collect();
    let voted: Vec<ClassLabel> = sets
        .iter()
        .map(|s| adjudicate(s, &expert))
        .collect::<Result<_, _>>()?;

    let items = sets.len() as f64;
    let majority = sets.iter().filter(|s| s.strict_majority().is_some()).count();
    let full = sets.iter().filter(|s| s.is_unanimous()).count();

    let column = |k: usize| -> Vec<ClassLabel> { table.iter().map(|r| r[k]).collect() };
    let mut vote_vs_annotator = BTreeMap::new();
    for (k, a) in roster.iter().enumerate() {
        let agree = column(k)
            .iter()
            .zip(&voted)
            .filter(|(x, y)| x == y)
            .count();
        vote_vs_annotator.insert(a.clone(), agree as f64 / items);
    }
    let mut pairwise_cohen = Vec::new();
    for i in 0..roster.len() {
        for j in i + 1..roster.len() {
            pairwise_cohen.push(PairKappa {
                first: roster[i].clone(),
                second: roster[j].clone(),
                kappa: cohen_kappa(&column(i), &column(j))?,
            });
        }
    }
    let fleiss = if roster.len() >= 2 {
        fleiss_kappa(&table)?
    } else {
        1.0
    };
    Ok(AgreementReport {
        items: sets.len(),
        roster,
        expert,
        majority_rate: majority as f64 / items,
        full_rate: full as f64 / items,
        vote_vs_annotator,
        pairwise_cohen,
        fleiss,
    })
}

/// One line of an annotation file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub post_id: String,
    pub annotator_id: String,
    pub label: ClassLabel,
    #[serde(default)]
    pub flags: Vec<String>,
}

/// Groups annotation records into per-post sets, in order of first appearance.
pub fn group_records(records: Vec<AnnotationRecord>) -> Result<Vec<AnnotationSet>, AnnotationError> {
    let mut order: Vec<AnnotationSet> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for r in records {
        let slot = *index.entry(r.post_id.clone()).or_insert_with(|| {
            order.push(AnnotationSet::new(r.post_id.clone()));
            order.len() - 1
        });
        let set = &mut order[slot];
        set.add_vote(r.annotator_id, r.label)?;
        set.flags.extend(r.flags);
    }
    Ok(order)
}

/// Reads a line-delimited `{post_id, annotator_id, label, flags}` file.
pub fn load_annotations(path: &Path) -> Result<Vec<AnnotationSet>, AnnotationError> {
    let text = fs::read_to_string(path).map_err(|source| AnnotationError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: AnnotationRecord =
            serde_json::from_str(line).map_err(|e| AnnotationError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
        records.push(rec);
    }
    group_records(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const A: ClassLabel = ClassLabel::EVACUEES;
    const B: ClassLabel = ClassLabel::GENERAL_INFORMATION;
    const C: ClassLabel = ClassLabel::PREPAREDNESS;

    fn set(id: &str, votes: &[ClassLabel]) -> AnnotationSet {
        let mut s = AnnotationSet::new(id);
        for (i, &v) in votes.iter().enumerate() {
            s.add_vote(format!("annotator{}", i + 1), v).unwrap();
        }
        s
    }

    #[test]
    fn adjudication_cases() {
        assert_eq!(adjudicate(&set("p", &[A, A, B]), "annotator1").unwrap(), A);
        assert_eq!(adjudicate(&set("p", &[A, B, C]), "annotator1").unwrap(), A);
        assert_eq!(adjudicate(&set("p", &[A, B, C]), "annotator3").unwrap(), C);
        assert_eq!(adjudicate(&set("p", &[B]), "annotator1").unwrap(), B);
        // Majority wins over the expert.
        assert_eq!(adjudicate(&set("p", &[A, B, B]), "annotator1").unwrap(), B);
        assert!(matches!(
            adjudicate(&set("p", &[A, B, C]), "annotator9"),
            Err(AnnotationError::ExpertMissing { .. })
        ));
        assert!(matches!(
            adjudicate(&AnnotationSet::new("p"), "annotator1"),
            Err(AnnotationError::NoVotes { .. })
        ));
        // Two of four is not a strict majority.
        assert_eq!(
            adjudicate(&set("p", &[B, A, A, B]), "annotator1").unwrap(),
            B
        );
    }

    #[test]
    fn duplicate_vote_rejected() {
        let mut s = AnnotationSet::new("p");
        s.add_vote("x", A).unwrap();
        assert!(s.add_vote("x", B).is_err());
    }

    #[test]
    fn cohen_perfect_and_hand_cases() {
        assert_eq!(cohen_kappa(&[A, B, A, C], &[A, B, A, C]).unwrap(), 1.0);
        // p_o = 0.5, p_e = 0.5.
        assert_eq!(cohen_kappa(&["x", "x", "y", "y"], &["x", "y", "x", "y"]).unwrap(), 0.0);
        // Constant identical raters: p_e = 1, convention 1.
        assert_eq!(cohen_kappa(&[A, A, A], &[A, A, A]).unwrap(), 1.0);
        assert!(matches!(
            cohen_kappa(&[A], &[A, B]),
            Err(AnnotationError::LengthMismatch(1, 2))
        ));
        assert!(cohen_kappa::<u8>(&[], &[]).is_err());
    }

    #[test]
    fn fleiss_hand_case() {
        // P_1 = (4+1-3)/6 = 1/3, P_2 = 1, P_bar = 2/3,
        // p_A = 1/3, p_B = 2/3, P_e = 5/9, kappa = (1/9)/(4/9) = 1/4.
        let k = fleiss_kappa(&[vec![A, A, B], vec![B, B, B]]).unwrap();
        assert!((k - 0.25).abs() < 1e-12, "{k}");
        assert_eq!(fleiss_kappa(&[vec![A, A], vec![C, C]]).unwrap(), 1.0);
        assert_eq!(fleiss_kappa(&[vec![A, A, A]]).unwrap(), 1.0);
        assert!(matches!(
            fleiss_kappa(&[vec![A, A, B], vec![B, B]]),
            Err(AnnotationError::Ragged { row: 1, .. })
        ));
        assert!(matches!(
            fleiss_kappa(&[vec![A]]),
            Err(AnnotationError::TooFewRaters)
        ));
    }

    #[test]
    fn report_all_identical() {
        let sets: Vec<_> = (0..5).map(|i| set(&format!("p{i}"), &[C, C, C])).collect();
        let r = agreement_report(&sets, None).unwrap();
        assert_eq!(r.majority_rate, 1.0);
        assert_eq!(r.full_rate, 1.0);
        assert!(r.pairwise_cohen.iter().all(|p| p.kappa == 1.0));
        assert_eq!(r.fleiss, 1.0);
        assert_eq!(r.expert, "annotator1");
    }

    #[test]
    fn report_majority_fixture() {
        // 7 of 10 sets have a majority; 2 of those are unanimous.
        let mut sets = Vec::new();
        for i in 0..5 {
            sets.push(set(&format!("m{i}"), &[A, A, B]));
        }
        for i in 0..2 {
            sets.push(set(&format!("u{i}"), &[B, B, B]));
        }
        for i in 0..3 {
            sets.push(set(&format!("n{i}"), &[A, B, C]));
        }
        let r = agreement_report(&sets, None).unwrap();
        assert!((r.majority_rate - 0.7).abs() < 1e-15);
        assert!((r.full_rate - 0.2).abs() < 1e-15);
        // Voted labels: A x5, B x2, A x3 (expert tie-break).
        assert_eq!(r.vote_vs_annotator["annotator1"], 1.0);
        assert!((r.vote_vs_annotator["annotator2"] - 0.7).abs() < 1e-15);
        assert!((r.vote_vs_annotator["annotator3"] - 0.2).abs() < 1e-15);
        let rows = r.table_rows();
        assert_eq!(rows.len(), 9);
        assert_eq!(rows[0].0, "Majority Agreement (2 same)");
        assert_eq!(rows[6].0, "Cohen's Kappa annotator 1-3");
    }

    #[test]
    fn report_rejects_roster_mismatch() {
        let mut odd = AnnotationSet::new("q");
        odd.add_vote("annotator1", A).unwrap();
        odd.add_vote("annotator2", A).unwrap();
        odd.add_vote("someone_else", A).unwrap();
        let sets = vec![set("p", &[A, A, A]), odd];
        assert!(matches!(
            agreement_report(&sets, None),
            Err(AnnotationError::RosterMismatch { .. })
        ));
    }

    #[test]
    fn records_group_by_post() {
        let rec = |p: &str, a: &str, l| AnnotationRecord {
            post_id: p.into(),
            annotator_id: a.into(),
            label: l,
            flags: if a == "x" { vec!["personal_info".into()] } else { vec![] },
        };
        let sets = group_records(vec![
            rec("p2", "x", A),
            rec("p1", "x", B),
            rec("p2", "y", A),
        ])
        .unwrap();
        assert_eq!(sets.len(), 2);
        assert_eq!(sets[0].post_id, "p2");
        assert_eq!(sets[0].votes.len(), 2);
        assert!(sets[0].flags.contains("personal_info"));
    }

    fn label_strategy() -> impl Strategy<Value = ClassLabel> {
        (0usize..13).prop_map(|i| ClassLabel::from_index(i).unwrap())
    }

    proptest! {
        #[test]
        fn cohen_is_symmetric(pairs in prop::collection::vec((label_strategy(), label_strategy()), 1..80)) {
            let (a, b): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let k1 = cohen_kappa(&a, &b).unwrap();
            let k2 = cohen_kappa(&b, &a).unwrap();
            prop_assert!((k1 - k2).abs() < 1e-12);
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&k1));
        }

        #[test]
        fn stats_ignore_item_order_and_label_names(
            rows in prop::collection::vec(prop::collection::vec(label_strategy(), 3), 1..60),
            shift in 1usize..13,
            rot in 0usize..60,
        ) {
            let sets: Vec<AnnotationSet> = rows.iter().enumerate()
                .map(|(i, r)| set(&format!("p{i}"), r)).collect();
            let base = agreement_report(&sets, None).unwrap();
            prop_assert!(base.full_rate <= base.majority_rate);

            let mut rotated = sets.clone();
            let n = rotated.len();
            rotated.rotate_left(rot % n);
            let r2 = agreement_report(&rotated, None).unwrap();

            let relabel = |l: ClassLabel| ClassLabel::from_index((l.index() + shift) % 13).unwrap();
            let renamed: Vec<AnnotationSet> = rows.iter().enumerate()
                .map(|(i, r)| set(&format!("p{i}"), &r.iter().map(|&l| relabel(l)).collect::<Vec<_>>()))
                .collect();
            let r3 = agreement_report(&renamed, None).unwrap();
            for other in [&r2, &r3] {
                prop_assert!((other.majority_rate - base.majority_rate).abs() < 1e-12);
                prop_assert!((other.full_rate - base.full_rate).abs() < 1e-12);
                prop_assert!((other.fleiss - base.fleiss).abs() < 1e-9);
                for (p, q) in other.pairwise_cohen.iter().zip(&base.pairwise_cohen) {
                    prop_assert!((p.kappa - q.kappa).abs() < 1e-9);
                }
                for (k, v) in &base.vote_vs_annotator {
                    prop_assert!((other.vote_vs_annotator[k] - v).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn adjudicate_returns_a_cast_vote(votes in prop::collection::vec(label_strategy(), 1..7)) {
            let s = set("p", &votes);
            let l = adjudicate(&s, "annotator1").unwrap();
            prop_assert!(votes.contains(&l));
        }
    }
}
