//! Confusion matrices, per-class and weighted F1, and cross-seed aggregation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::taxonomy::{ClassLabel, NUM_CLASSES};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("truth has {0} labels but predictions have {1}")]
    LengthMismatch(usize, usize),
    #[error("metrics need at least one sample")]
    Empty,
    #[error("aggregation needs at least one report")]
    NoReports,
    #[error("{reports} reports but {seeds} seeds")]
    SeedCount { reports: usize, seeds: usize },
    #[error("seed {0} appears more than once")]
    DuplicateSeed(u64),
}

/// A prediction that may be a zero-shot response which failed to parse.
///
/// `Unparseable` lands in a reserved column and never matches any truth label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Predicted {
    Class(ClassLabel),
    Unparseable,
}

/// Serialized spelling of [`Predicted::Unparseable`].
pub const UNPARSEABLE: &str = "UNPARSEABLE";

impl Serialize for Predicted {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Predicted::Class(c) => c.serialize(s),
            Predicted::Unparseable => s.serialize_str(UNPARSEABLE),
        }
    }
}

impl<'de> Deserialize<'de> for Predicted {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s == UNPARSEABLE {
            Ok(Predicted::Unparseable)
        } else {
            s.parse().map(Predicted::Class).map_err(serde::de::Error::custom)
        }
    }
}

impl From<ClassLabel> for Predicted {
    fn from(c: ClassLabel) -> Self {
        Predicted::Class(c)
    }
}

impl Predicted {
    pub fn class(self) -> Option<ClassLabel> {
        match self {
            Predicted::Class(c) => Some(c),
            Predicted::Unparseable => None,
        }
    }
}

/// Counts indexed `[true][predicted]` in canonical A–M order, plus a reserved
/// column for unparseable predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
    pub unparseable: [u64; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum::<u64>() + self.unparseable.iter().sum::<u64>()
    }

    /// Number of samples whose true class is `c`.
    pub fn support(&self, c: usize) -> u64 {
        self.counts[c].iter().sum::<u64>() + self.unparseable[c]
    }

    fn predicted(&self, c: usize) -> u64 {
        self.counts.iter().map(|row| row[c]).sum()
    }

    /// F1 of class `c` as 2·TP / (2·TP + FP + FN); 0 when the class never
    /// appears in truth or predictions.
    pub fn f1(&self, c: usize) -> f64 {
        let tp = self.counts[c][c];
        let fp = self.predicted(c) - tp;
        let fn_ = self.support(c) - tp;
        let denom = 2 * tp + fp + fn_;
        if denom == 0 {
            0.0
        } else {
            (2 * tp) as f64 / denom as f64
        }
    }

    /// Count grid with an axis legend, rows = truth, columns = prediction.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\pred");
        for c in ClassLabel::all() {
            write!(out, ",{}", c.letter()).unwrap();
        }
        out.push_str(",UNPARSEABLE\n");
        for c in ClassLabel::all() {
            write!(out, "{}", c.letter()).unwrap();
            for v in self.counts[c.index()] {
                write!(out, ",{v}").unwrap();
            }
            writeln!(out, ",{}", self.unparseable[c.index()]).unwrap();
        }
        out.push('\n');
        for c in ClassLabel::all() {
            writeln!(out, "# {} = {}", c.letter(), c.name()).unwrap();
        }
        out
    }
}

/// Builds the confusion matrix of `pred` against `truth`.
pub fn confusion_matrix(
    truth: &[ClassLabel],
    pred: &[Predicted],
) -> Result<ConfusionMatrix, EvalError> {
    if truth.len() != pred.len() {
        return Err(EvalError::LengthMismatch(truth.len(), pred.len()));
    }
    let mut m = ConfusionMatrix {
        counts: [[0; NUM_CLASSES]; NUM_CLASSES],
        unparseable: [0; NUM_CLASSES],
    };
    for (t, p) in truth.iter().zip(pred) {
        match p {
            Predicted::Class(c) => m.counts[t.index()][c.index()] += 1,
            Predicted::Unparseable => m.unparseable[t.index()] += 1,
        }
    }
    Ok(m)
}

/// Metrics for one evaluated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    /// Per-class F1 in canonical order.
    pub per_class_f1: Vec<f64>,
    pub weighted_f1: f64,
    pub n: u64,
}

impl EvalReport {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Result<Self, EvalError> {
        let n = confusion.total();
        if n == 0 {
            return Err(EvalError::Empty);
        }
        let per_class_f1: Vec<f64> = (0..NUM_CLASSES).map(|c| confusion.f1(c)).collect();
        let weighted_f1 = (0..NUM_CLASSES)
            .map(|c| confusion.support(c) as f64 * per_class_f1[c])
            .sum::<f64>()
            / n as f64;
        Ok(EvalReport {
            confusion,
            per_class_f1,
            weighted_f1,
            n,
        })
    }

    pub fn accuracy(&self) -> f64 {
        let diag: u64 = (0..NUM_CLASSES).map(|c| self.confusion.counts[c][c]).sum();
        diag as f64 / self.n as f64
    }
}

/// Evaluates predictions against truth.
pub fn evaluate(truth: &[ClassLabel], pred: &[Predicted]) -> Result<EvalReport, EvalError> {
    EvalReport::from_confusion(confusion_matrix(truth, pred)?)
}

/// Support-weighted mean of per-class F1.
pub fn weighted_f1(truth: &[ClassLabel], pred: &[Predicted]) -> Result<f64, EvalError> {
    Ok(evaluate(truth, pred)?.weighted_f1)
}

/// Mean and population standard deviation of one metric across runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> MeanStd {
        // Identical runs report exactly zero spread, not summation residue.
        if let Some(&first) = values.first() {
            if values.iter().all(|&v| v == first) {
                return MeanStd { mean: first, std: 0.0 };
            }
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        MeanStd {
            mean,
            std: var.sqrt(),
        }
    }

    /// Percent cell such as `84.48±0.69`.
    pub fn to_percent_cell(self) -> String {
        format!("{:05.2}±{:.2}", self.mean * 100.0, self.std * 100.0)
    }
}

/// Cross-seed summary in the layout of the per-class results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunAggregate {
    /// Per-class (mean, std) in canonical order.
    pub per_class: Vec<MeanStd>,
    pub weighted: MeanStd,
    pub seeds: Vec<u64>,
    /// Which standard deviation estimator produced `std`.
    pub std_estimator: String,
}

/// Aggregates per-class and weighted F1 across runs (population std).
pub fn aggregate_runs(reports: &[EvalReport], seeds: &[u64]) -> Result<RunAggregate, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::NoReports);
    }
    if reports.len() != seeds.len() {
        return Err(EvalError::SeedCount {
            reports: reports.len(),
            seeds: seeds.len(),
        });
    }
    for (i, s) in seeds.iter().enumerate() {
        if seeds[..i].contains(s) {
            return Err(EvalError::DuplicateSeed(*s));
        }
    }
    let per_class = (0..NUM_CLASSES)
        .map(|c| MeanStd::of(&reports.iter().map(|r| r.per_class_f1[c]).collect::<Vec<_>>()))
        .collect();
    let weighted = MeanStd::of(&reports.iter().map(|r| r.weighted_f1).collect::<Vec<_>>());
    Ok(RunAggregate {
        per_class,
        weighted,
        seeds: seeds.to_vec(),
        std_estimator: "population".to_string(),
    })
}

impl RunAggregate {
    /// Markdown table with one row per class and the weighted average last.
    pub fn render_table(&self, column: &str) -> String {
        let mut out = format!("| Class | {column} |\n|---|---|\n");
        for c in ClassLabel::all() {
            writeln!(
                out,
                "| {} | {} |",
                c.name(),
                self.per_class[c.index()].to_percent_cell()
            )
            .unwrap();
        }
        writeln!(
            out,
            "| F1 Weighted Average | {} |",
            self.weighted.to_percent_cell()
        )
        .unwrap();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const A: ClassLabel = ClassLabel::EVACUEES;
    const B: ClassLabel = ClassLabel::GENERAL_INFORMATION;
    const M: ClassLabel = ClassLabel::OTHER;

    fn p(v: &[ClassLabel]) -> Vec<Predicted> {
        v.iter().map(|&c| c.into()).collect()
    }

    #[test]
    fn perfect_predictions_give_diagonal() {
        let t = [A, B, B, M];
        let m = confusion_matrix(&t, &p(&t)).unwrap();
        assert_eq!(m.counts[0][0], 1);
        assert_eq!(m.counts[1][1], 2);
        assert_eq!(m.counts[12][12], 1);
        assert_eq!(m.total(), 4);
        assert_eq!(weighted_f1(&t, &p(&t)).unwrap(), 1.0);
    }

    #[test]
    fn single_off_diagonal_cell() {
        let m = confusion_matrix(&[A], &p(&[M])).unwrap();
        assert_eq!(m.counts[0][12], 1);
        assert_eq!(m.total(), 1);
    }

    #[test]
    fn hand_case_eleven_fifteenths() {
        let r = evaluate(&[A, A, B, B], &p(&[A, B, B, B])).unwrap();
        assert!((r.per_class_f1[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.per_class_f1[1] - 0.8).abs() < 1e-15);
        assert!((r.weighted_f1 - 11.0 / 15.0).abs() < 1e-12);
    }

    #[test]
    fn unparseable_counts_as_wrong() {
        let r = evaluate(&[A, A], &[A.into(), Predicted::Unparseable]).unwrap();
        assert_eq!(r.confusion.unparseable[0], 1);
        // TP 1, FN 1: F1 = 2/3.
        assert!((r.weighted_f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert_eq!(
            confusion_matrix(&[A], &[]).unwrap_err(),
            EvalError::LengthMismatch(1, 0)
        );
        assert_eq!(weighted_f1(&[], &[]).unwrap_err(), EvalError::Empty);
        assert_eq!(aggregate_runs(&[], &[]).unwrap_err(), EvalError::NoReports);
    }

    #[test]
    fn aggregation_population_std() {
        let mk = |w: f64| EvalReport {
            confusion: confusion_matrix(&[A], &p(&[A])).unwrap(),
            per_class_f1: vec![w; NUM_CLASSES],
            weighted_f1: w,
            n: 1,
        };
        let agg = aggregate_runs(&[mk(0.8), mk(0.9), mk(1.0)], &[8, 12, 14]).unwrap();
        assert!((agg.weighted.mean - 0.9).abs() < 1e-12);
        assert!((agg.weighted.std - 0.081_649_658).abs() < 5e-7);
        let one = aggregate_runs(&[mk(0.7)], &[8]).unwrap();
        assert!(one.per_class.iter().all(|m| m.std == 0.0));
        let same = aggregate_runs(&[mk(0.7), mk(0.7), mk(0.7)], &[8, 12, 14]).unwrap();
        assert!(same.per_class.iter().all(|m| m.std == 0.0));
        assert_eq!(same.std_estimator, "population");
    }

    #[test]
    fn percent_cells() {
        assert_eq!(
            MeanStd { mean: 0.8448, std: 0.0069 }.to_percent_cell(),
            "84.48±0.69"
        );
        assert_eq!(MeanStd { mean: 0.0833, std: 0.0 }.to_percent_cell(), "08.33±0.00");
    }

    #[test]
    fn confusion_csv_has_legend() {
        let csv = confusion_matrix(&[A], &p(&[B])).unwrap().to_csv();
        assert!(csv.starts_with("true\\pred,A,B,"));
        assert!(csv.contains("# K = Smoke & Air Quality"));
    }

    #[test]
    fn predicted_serde() {
        let j = serde_json::to_string(&vec![Predicted::Class(A), Predicted::Unparseable]).unwrap();
        assert_eq!(j, r#"["Evacuees","UNPARSEABLE"]"#);
        let back: Vec<Predicted> = serde_json::from_str(&j).unwrap();
        assert_eq!(back, vec![Predicted::Class(A), Predicted::Unparseable]);
    }

    fn labels(n: usize) -> impl Strategy<Value = Vec<(usize, usize)>> {
        prop::collection::vec((0usize..13, 0usize..13), 1..n)
    }

    proptest! {
        #[test]
        fn f1_invariants(pairs in labels(120), shift in 0usize..13, rot in 0usize..120) {
            let to = |i: usize| ClassLabel::from_index(i).unwrap();
            let truth: Vec<_> = pairs.iter().map(|&(t, _)| to(t)).collect();
            let pred: Vec<Predicted> = pairs.iter().map(|&(_, q)| to(q).into()).collect();
            let base = evaluate(&truth, &pred).unwrap();

            prop_assert_eq!(weighted_f1(&truth, &p(&truth)).unwrap(), 1.0);
            for c in 0..NUM_CLASSES {
                let expect = truth.iter().filter(|t| t.index() == c).count() as u64;
                prop_assert_eq!(base.confusion.support(c), expect);
            }

            let mut t2 = truth.clone();
            let mut p2 = pred.clone();
            let k = rot % t2.len();
            t2.rotate_left(k);
            p2.rotate_left(k);
            prop_assert!((weighted_f1(&t2, &p2).unwrap() - base.weighted_f1).abs() < 1e-12);

            let rl = |i: usize| to((i + shift) % 13);
            let t3: Vec<_> = pairs.iter().map(|&(t, _)| rl(t)).collect();
            let p3: Vec<Predicted> = pairs.iter().map(|&(_, q)| rl(q).into()).collect();
            let r3 = evaluate(&t3, &p3).unwrap();
            prop_assert!((r3.weighted_f1 - base.weighted_f1).abs() < 1e-12);
            for i in 0..13 {
                for j in 0..13 {
                    prop_assert_eq!(
                        r3.confusion.counts[(i + shift) % 13][(j + shift) % 13],
                        base.confusion.counts[i][j]
                    );
                }
            }
        }
    }
}
