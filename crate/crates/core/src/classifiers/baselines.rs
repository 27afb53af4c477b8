use std::collections::BTreeMap;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use super::ClassifierError;
use crate::par::{self, ExecMode};
use crate::taxonomy::ClassLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum BaselineKind {
    Dt,
    Gnb,
    Knn,
    Svm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    pub knn_k: usize,
    /// Weight samples inversely to class frequency when growing the tree.
    pub dt_balanced: bool,
    pub pca_components: usize,
    pub svm_c: f64,
    pub gnb_var_smoothing: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            kind: BaselineKind::Knn,
            knn_k: 1,
            dt_balanced: true,
            pca_components: 250,
            svm_c: 1.0,
            gnb_var_smoothing: 1e-9,
        }
    }
}

impl BaselineConfig {
    pub fn of(kind: BaselineKind) -> Self {
        BaselineConfig {
            kind,
            ..BaselineConfig::default()
        }
    }
}

#[derive(Debug, Clone)]
pub enum FittedBaseline {
    Dt(DecisionTree),
    Gnb(GaussianNb),
    Knn(NearestNeighbor),
    Svm(SvmClassifier),
}

impl FittedBaseline {
    pub fn kind(&self) -> BaselineKind {
        match self {
            FittedBaseline::Dt(_) => BaselineKind::Dt,
            FittedBaseline::Gnb(_) => BaselineKind::Gnb,
            FittedBaseline::Knn(_) => BaselineKind::Knn,
            FittedBaseline::Svm(_) => BaselineKind::Svm,
        }
    }

    pub fn predict(&self, x: &Array2<f64>, mode: ExecMode) -> Vec<ClassLabel> {
        match self {
            FittedBaseline::Dt(m) => par_rows(x, mode, |r| m.predict_one(r)),
            FittedBaseline::Gnb(m) => par_rows(x, mode, |r| m.predict_one(r)),
            FittedBaseline::Knn(m) => par_rows(x, mode, |r| m.predict_one(r)),
            FittedBaseline::Svm(m) => {
                let z = m.pca.transform(x);
                par_rows(&z, mode, |r| m.predict_reduced(r))
            }
        }
    }
}

fn par_rows(x: &Array2<f64>, mode: ExecMode, f: impl Fn(ArrayView1<f64>) -> ClassLabel + Sync) -> Vec<ClassLabel> {
    par::map_range(mode, x.nrows(), |i| f(x.row(i)))
}

/// Fits the configured baseline on row-aligned features and labels.
pub fn fit_baseline(
    x: &Array2<f64>,
    labels: &[ClassLabel],
    cfg: &BaselineConfig,
    mode: ExecMode,
) -> Result<FittedBaseline, ClassifierError> {
    if x.nrows() == 0 {
        return Err(ClassifierError::EmptyTrain);
    }
    if x.nrows() != labels.len() {
        return Err(ClassifierError::Shape(format!(
            "{} rows but {} labels",
            x.nrows(),
            labels.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ClassifierError::Shape("features must be finite".into()));
    }
    Ok(match cfg.kind {
        BaselineKind::Dt => FittedBaseline::Dt(DecisionTree::fit(x, labels, cfg.dt_balanced, mode)),
        BaselineKind::Gnb => FittedBaseline::Gnb(GaussianNb::fit(x, labels, cfg.gnb_var_smoothing)),
        BaselineKind::Knn => {
            if cfg.knn_k == 0 {
                return Err(ClassifierError::Config("knn_k must be positive".into()));
            }
            FittedBaseline::Knn(NearestNeighbor::fit(x, labels, cfg.knn_k))
        }
        BaselineKind::Svm => FittedBaseline::Svm(SvmClassifier::fit(x, labels, cfg, mode)?),
    })
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-nearest neighbours under Euclidean distance. Equal distances keep the
/// lower training index; vote ties go to the class of the nearer neighbour.
#[derive(Debug, Clone)]
pub struct NearestNeighbor {
    pub x: Array2<f64>,
    pub labels: Vec<ClassLabel>,
    pub k: usize,
}

impl NearestNeighbor {
    pub fn fit(x: &Array2<f64>, labels: &[ClassLabel], k: usize) -> Self {
        NearestNeighbor {
            x: x.clone(),
            labels: labels.to_vec(),
            k: k.min(labels.len()),
        }
    }

    pub fn predict_one(&self, q: ArrayView1<f64>) -> ClassLabel {
        let mut d: Vec<(f64, usize)> = self
            .x
            .rows()
            .into_iter()
            .enumerate()
            .map(|(i, r)| (sq_dist(q, r), i))
            .collect();
        // Ties break on training row order, so selection and full sort agree.
        let by = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < d.len() {
            d.select_nth_unstable_by(self.k - 1, by);
            d.truncate(self.k);
        }
        d.sort_by(by);
        let nearest = &d[..self.k.min(d.len())];
        let mut votes: BTreeMap<ClassLabel, usize> = BTreeMap::new();
        for &(_, i) in nearest {
            *votes.entry(self.labels[i]).or_insert(0) += 1;
        }
        let top = *votes.values().max().expect("k >= 1");
        nearest
            .iter()
            .map(|&(_, i)| self.labels[i])
            .find(|l| votes[l] == top)
            .expect("some neighbour holds the top vote")
    }
}

/// Gaussian naive Bayes with per-class diagonal variances. Every variance is
/// floored by `var_smoothing` times the largest feature variance.
#[derive(Debug, Clone)]
pub struct GaussianNb {
    pub classes: Vec<ClassLabel>,
    pub log_prior: Vec<f64>,
    pub mean: Array2<f64>,
    pub var: Array2<f64>,
}

impl GaussianNb {
    pub fn fit(x: &Array2<f64>, labels: &[ClassLabel], var_smoothing: f64) -> Self {
        let eps = var_smoothing * x.var_axis(Axis(0), 0.0).fold(0.0f64, |a, &b| a.max(b));
        let mut groups: BTreeMap<ClassLabel, Vec<usize>> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            groups.entry(l).or_default().push(i);
        }
        let d = x.ncols();
        let mut mean = Array2::zeros((groups.len(), d));
        let mut var = Array2::zeros((groups.len(), d));
        let mut log_prior = Vec::new();
        for (k, idx) in groups.values().enumerate() {
            let sub = x.select(Axis(0), idx);
            mean.row_mut(k).assign(&sub.mean_axis(Axis(0)).expect("class is non-empty"));
            var.row_mut(k).assign(&(sub.var_axis(Axis(0), 0.0) + eps));
            log_prior.push((idx.len() as f64 / labels.len() as f64).ln());
        }
        GaussianNb {
            classes: groups.into_keys().collect(),
            log_prior,
            mean,
            var,
        }
    }

    pub fn joint_log_likelihood(&self, q: ArrayView1<f64>) -> Vec<f64> {
        (0..self.classes.len())
            .map(|k| {
                let ll: f64 = q
                    .iter()
                    .zip(self.mean.row(k))
                    .zip(self.var.row(k))
                    .map(|((x, m), v)| {
                        if *v > 0.0 {
                            -0.5 * (2.0 * std::f64::consts::PI * v).ln() - 0.5 * (x - m) * (x - m) / v
                        } else if x == m {
                            0.0
                        } else {
                            f64::NEG_INFINITY
                        }
                    })
                    .sum();
                self.log_prior[k] + ll
            })
            .collect()
    }

    pub fn predict_one(&self, q: ArrayView1<f64>) -> ClassLabel {
        let jll = self.joint_log_likelihood(q);
        let mut best = 0;
        for (k, &v) in jll.iter().enumerate() {
            if v > jll[best] {
                best = k;
            }
        }
        self.classes[best]
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(ClassLabel),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// CART classification tree grown to purity on weighted Gini impurity.
/// Samples go left when `x[feature] <= threshold`.
#[derive(Debug, Clone)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

struct SplitChoice {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl DecisionTree {
    pub fn fit(x: &Array2<f64>, labels: &[ClassLabel], balanced: bool, mode: ExecMode) -> Self {
        let mut counts: BTreeMap<ClassLabel, usize> = BTreeMap::new();
        for &l in labels {
            *counts.entry(l).or_insert(0) += 1;
        }
        let n = labels.len() as f64;
        let k = counts.len() as f64;
        let weights: Vec<f64> = labels
            .iter()
            .map(|l| if balanced { n / (k * counts[l] as f64) } else { 1.0 })
            .collect();
        let mut tree = DecisionTree { nodes: Vec::new() };
        let all: Vec<usize> = (0..labels.len()).collect();
        tree.grow(x, labels, &weights, all, mode);
        tree
    }

    pub fn depth(&self) -> usize {
        fn d(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + d(nodes, left).max(d(nodes, right)),
            }
        }
        d(&self.nodes, 0)
    }

    fn class_weights(labels: &[ClassLabel], w: &[f64], idx: &[usize]) -> [f64; crate::taxonomy::NUM_CLASSES] {
        let mut cw = [0.0; crate::taxonomy::NUM_CLASSES];
        for &i in idx {
            cw[labels[i].index()] += w[i];
        }
        cw
    }

    fn gini(cw: &[f64], total: f64) -> f64 {
        if total <= 0.0 {
            return 0.0;
        }
        1.0 - cw.iter().map(|c| (c / total) * (c / total)).sum::<f64>()
    }

    fn grow(&mut self, x: &Array2<f64>, labels: &[ClassLabel], w: &[f64], idx: Vec<usize>, mode: ExecMode) -> usize {
        let id = self.nodes.len();
        let cw = Self::class_weights(labels, w, &idx);
        let majority = (0..cw.len())
            .fold(0, |b, c| if cw[c] > cw[b] { c } else { b });
        let leaf = Node::Leaf(ClassLabel::from_index(majority).expect("index < NUM_CLASSES"));
        self.nodes.push(leaf);
        let distinct = cw.iter().filter(|&&c| c > 0.0).count();
        if distinct <= 1 || idx.len() < 2 {
            return id;
        }
        let total: f64 = cw.iter().sum();
        let parent = Self::gini(&cw, total);
        let candidates = par::map_range(mode, x.ncols(), |f| best_split_on(x, labels, w, &idx, f, parent, total));
        let best = candidates
            .into_iter()
            .flatten()
            .fold(None::<SplitChoice>, |b, c| match b {
                Some(b) if b.gain >= c.gain => Some(b),
                _ => Some(c),
            });
        let Some(best) = best else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .into_iter()
            .partition(|&i| x[[i, best.feature]] <= best.threshold);
        let left = self.grow(x, labels, w, l, mode);
        let right = self.grow(x, labels, w, r, mode);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        id
    }

    pub fn predict_one(&self, q: ArrayView1<f64>) -> ClassLabel {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(c) => return c,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if q[feature] <= threshold { left } else { right },
            }
        }
    }
}

fn best_split_on(
    x: &Array2<f64>,
    labels: &[ClassLabel],
    w: &[f64],
    idx: &[usize],
    f: usize,
    parent: f64,
    total: f64,
) -> Option<SplitChoice> {
    let mut order: Vec<usize> = idx.to_vec();
    order.sort_by(|&a, &b| x[[a, f]].total_cmp(&x[[b, f]]).then(a.cmp(&b)));
    let mut left = [0.0; crate::taxonomy::NUM_CLASSES];
    let mut right = DecisionTree::class_weights(labels, w, idx);
    let mut wl = 0.0;
    let mut best: Option<SplitChoice> = None;
    for k in 0..order.len() - 1 {
        let i = order[k];
        left[labels[i].index()] += w[i];
        right[labels[i].index()] -= w[i];
        wl += w[i];
        let (a, b) = (x[[i, f]], x[[order[k + 1], f]]);
        if a == b {
            continue;
        }
        let wr = total - wl;
        let child = (wl * DecisionTree::gini(&left, wl) + wr * DecisionTree::gini(&right, wr)) / total;
        let gain = parent - child;
        if best.as_ref().is_none_or(|s| gain > s.gain) {
            let mut threshold = a + (b - a) / 2.0;
            if threshold >= b {
                threshold = a;
            }
            best = Some(SplitChoice {
                gain,
                feature: f,
                threshold,
            });
        }
    }
    best
}

/// Principal component projection with deterministic component signs (the
/// largest-magnitude loading of each component is positive).
#[derive(Debug, Clone)]
pub struct Pca {
    pub mean: Array1<f64>,
    /// `(components, width)`.
    pub components: Array2<f64>,
    pub explained_variance: Vec<f64>,
}

impl Pca {
    pub fn fit(x: &Array2<f64>, components: usize) -> Result<Self, ClassifierError> {
        let (n, d) = x.dim();
        if components == 0 || components >= d || components > n {
            return Err(ClassifierError::PcaWidth {
                components,
                width: d,
                samples: n,
            });
        }
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let centered = x - &mean;
        let m = DMatrix::from_row_iterator(n, d, centered.iter().copied());
        let svd = m.svd(false, true);
        let vt = svd.v_t.expect("requested right singular vectors");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
        let mut comps = Array2::zeros((components, d));
        let mut explained_variance = Vec::with_capacity(components);
        for (k, &o) in order.iter().take(components).enumerate() {
            let row: Vec<f64> = vt.row(o).iter().copied().collect();
            let pivot = row
                .iter()
                .fold(0.0f64, |acc, &v| if v.abs() > acc.abs() { v } else { acc });
            let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
            for (j, v) in row.into_iter().enumerate() {
                comps[[k, j]] = sign * v;
            }
            let s = svd.singular_values[o];
            explained_variance.push(s * s / (n.max(2) - 1) as f64);
        }
        Ok(Pca {
            mean,
            components: comps,
            explained_variance,
        })
    }

    pub fn transform(&self, x: &Array2<f64>) -> Array2<f64> {
        (x - &self.mean).dot(&self.components.t())
    }

    pub fn output_width(&self) -> usize {
        self.components.nrows()
    }
}

/// One binary machine of the one-vs-one ensemble. Positive decisions vote
/// for `pos`.
#[derive(Debug, Clone)]
struct PairMachine {
    pos: ClassLabel,
    neg: ClassLabel,
    /// `(training row, alpha * y)` for support vectors.
    coef: Vec<(usize, f64)>,
    rho: f64,
}

/// RBF-kernel C-SVM after PCA, one-vs-one with majority voting. Vote ties
/// go to the lower class.
#[derive(Debug, Clone)]
pub struct SvmClassifier {
    pub pca: Pca,
    pub gamma: f64,
    support: Array2<f64>,
    machines: Vec<PairMachine>,
}

const SMO_TOL: f64 = 1e-3;
const SMO_TAU: f64 = 1e-12;

impl SvmClassifier {
    pub fn fit(
        x: &Array2<f64>,
        labels: &[ClassLabel],
        cfg: &BaselineConfig,
        mode: ExecMode,
    ) -> Result<Self, ClassifierError> {
        let pca = Pca::fit(x, cfg.pca_components)?;
        let z = pca.transform(x);
        let var = z.var(0.0);
        let gamma = if var > 0.0 { 1.0 / (z.ncols() as f64 * var) } else { 1.0 };
        let kernel = rbf_gram(&z, gamma, mode);
        let classes: Vec<ClassLabel> = labels
            .iter()
            .copied()
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut pairs = Vec::new();
        for a in 0..classes.len() {
            for b in a + 1..classes.len() {
                pairs.push((classes[a], classes[b]));
            }
        }
        let machines = par::map(mode, &pairs, |&(pos, neg)| {
            let idx: Vec<usize> = (0..labels.len())
                .filter(|&i| labels[i] == pos || labels[i] == neg)
                .collect();
            let y: Vec<f64> = idx.iter().map(|&i| if labels[i] == pos { 1.0 } else { -1.0 }).collect();
            let (alpha, rho) = smo(&kernel, &idx, &y, cfg.svm_c);
            let coef = idx
                .iter()
                .zip(&alpha)
                .zip(&y)
                .filter(|((_, &a), _)| a > 0.0)
                .map(|((&i, &a), &yi)| (i, a * yi))
                .collect();
            PairMachine { pos, neg, coef, rho }
        });
        let single = if classes.len() == 1 { Some(classes[0]) } else { None };
        let mut svm = SvmClassifier {
            pca,
            gamma,
            support: z,
            machines,
        };
        if let Some(only) = single {
            svm.machines.push(PairMachine {
                pos: only,
                neg: only,
                coef: Vec::new(),
                rho: -1.0,
            });
        }
        Ok(svm)
    }

    /// Width of the features the kernel machines see.
    pub fn reduced_width(&self) -> usize {
        self.pca.output_width()
    }

    pub fn predict_reduced(&self, q: ArrayView1<f64>) -> ClassLabel {
        let mut kcache: BTreeMap<usize, f64> = BTreeMap::new();
        let mut votes: BTreeMap<ClassLabel, usize> = BTreeMap::new();
        for m in &self.machines {
            let mut f = -m.rho;
            for &(i, c) in &m.coef {
                let k = *kcache
                    .entry(i)
                    .or_insert_with(|| (-self.gamma * sq_dist(q, self.support.row(i))).exp());
                f += c * k;
            }
            *votes.entry(if f > 0.0 { m.pos } else { m.neg }).or_insert(0) += 1;
        }
        let top = *votes.values().max().expect("at least one machine");
        *votes.iter().find(|(_, &v)| v == top).expect("top exists").0
    }
}

fn rbf_gram(z: &Array2<f64>, gamma: f64, mode: ExecMode) -> Array2<f64> {
    let n = z.nrows();
    let norms: Vec<f64> = z.rows().into_iter().map(|r| r.dot(&r)).collect();
    let dots = z.dot(&z.t());
    let rows = par::map_range(mode, n, |i| {
        (0..n)
            .map(|j| (-gamma * (norms[i] + norms[j] - 2.0 * dots[[i, j]]).max(0.0)).exp())
            .collect::<Vec<f64>>()
    });
    Array2::from_shape_vec((n, n), rows.concat()).expect("n x n")
}

/// Solves the C-SVM dual over the rows `idx` of a precomputed kernel with
/// second-order working-set selection. Returns `(alpha, rho)` with the
/// decision function `sum(alpha_i y_i K(x_i, x)) - rho`.
fn smo(kernel: &Array2<f64>, idx: &[usize], y: &[f64], c: f64) -> (Vec<f64>, f64) {
    let n = idx.len();
    let q = |a: usize, b: usize| y[a] * y[b] * kernel[[idx[a], idx[b]]];
    let qd: Vec<f64> = (0..n).map(|a| kernel[[idx[a], idx[a]]]).collect();
    let mut alpha = vec![0.0; n];
    let mut g = vec![-1.0; n];
    let max_iter = 10_000_000usize.max(100 * n);
    let up = |a: f64, yi: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
    let low = |a: f64, yi: f64| (yi > 0.0 && a > 0.0) || (yi < 0.0 && a < c);
    for _ in 0..max_iter {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if up(alpha[t], y[t]) && -y[t] * g[t] >= gmax {
                gmax = -y[t] * g[t];
                i = t;
            }
        }
        let mut gmin = f64::INFINITY;
        let mut j = usize::MAX;
        let mut best_obj = f64::INFINITY;
        for t in 0..n {
            if !low(alpha[t], y[t]) {
                continue;
            }
            let v = -y[t] * g[t];
            gmin = gmin.min(v);
            if i != usize::MAX && v < gmax {
                let b = gmax - v;
                let mut a = qd[i] + qd[t] - 2.0 * y[i] * y[t] * kernel[[idx[i], idx[t]]];
                if a <= 0.0 {
                    a = SMO_TAU;
                }
                let obj = -(b * b) / a;
                if obj < best_obj {
                    best_obj = obj;
                    j = t;
                }
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax - gmin < SMO_TOL {
            break;
        }
        let (oi, oj) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = (qd[i] + qd[j] + 2.0 * q(i, j)).max(SMO_TAU);
            let delta = (-g[i] - g[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (qd[i] + qd[j] - 2.0 * q(i, j)).max(SMO_TAU);
            let delta = (g[i] - g[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - oi, alpha[j] - oj);
        for t in 0..n {
            g[t] += q(t, i) * di + q(t, j) * dj;
        }
    }
    // Offset: average over free vectors, else midpoint of the feasible range.
    let (mut ub, mut lb, mut sum, mut free) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * g[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum += yg;
        }
    }
    let rho = if free > 0 { sum / free as f64 } else { (ub + lb) / 2.0 };
    (alpha, rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::{rng, Stream};
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn blobs(n_per: usize, d: usize, sep: f64, seed: u64) -> (Array2<f64>, Vec<ClassLabel>) {
        let mut r = rng(seed, Stream::Fixture);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut x = Array2::zeros((2 * n_per, d));
        let mut y = Vec::new();
        for i in 0..2 * n_per {
            let c = i % 2;
            for j in 0..d {
                x[[i, j]] = normal.sample(&mut r) + if c == 0 { 0.0 } else { sep };
            }
            y.push(if c == 0 { ClassLabel::EVACUEES } else { ClassLabel::SMOKE });
        }
        (x, y)
    }

    fn accuracy(p: &[ClassLabel], t: &[ClassLabel]) -> f64 {
        p.iter().zip(t).filter(|(a, b)| a == b).count() as f64 / t.len() as f64
    }

    #[test]
    fn knn_memorizes() {
        let (x, y) = blobs(30, 4, 0.5, 1);
        let m = fit_baseline(&x, &y, &BaselineConfig::of(BaselineKind::Knn), ExecMode::default()).unwrap();
        assert_eq!(accuracy(&m.predict(&x, ExecMode::default()), &y), 1.0);
    }

    #[test]
    fn gnb_separates_blobs() {
        let (x, y) = blobs(100, 2, 6.0, 2);
        let m = fit_baseline(&x, &y, &BaselineConfig::of(BaselineKind::Gnb), ExecMode::default()).unwrap();
        assert!(accuracy(&m.predict(&x, ExecMode::default()), &y) >= 0.95);
    }

    #[test]
    fn tree_fits_training_set() {
        let (x, y) = blobs(40, 3, 1.0, 3);
        let m = fit_baseline(&x, &y, &BaselineConfig::of(BaselineKind::Dt), ExecMode::default()).unwrap();
        assert_eq!(accuracy(&m.predict(&x, ExecMode::default()), &y), 1.0);
    }

    #[test]
    fn tree_xor() {
        let x = ndarray::array![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]];
        let y = vec![ClassLabel::EVACUEES, ClassLabel::SMOKE, ClassLabel::SMOKE, ClassLabel::EVACUEES];
        let t = DecisionTree::fit(&x, &y, true, ExecMode::Sequential);
        assert_eq!(t.depth(), 2);
        for i in 0..4 {
            assert_eq!(t.predict_one(x.row(i)), y[i]);
        }
    }

    #[test]
    fn pca_width_checks() {
        let (x, _) = blobs(10, 5, 1.0, 4);
        assert!(matches!(Pca::fit(&x, 5), Err(ClassifierError::PcaWidth { .. })));
        let p = Pca::fit(&x, 3).unwrap();
        assert_eq!(p.transform(&x).ncols(), 3);
        let ev = &p.explained_variance;
        assert!(ev[0] >= ev[1] && ev[1] >= ev[2]);
    }

    #[test]
    fn pca_components_are_orthonormal() {
        let mut r = rng(5, Stream::Fixture);
        let x = Array2::from_shape_simple_fn((40, 12), || r.random_range(-1.0..1.0));
        let p = Pca::fit(&x, 6).unwrap();
        let g = p.components.dot(&p.components.t());
        for i in 0..6 {
            for j in 0..6 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g[[i, j]] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn svm_separates_blobs() {
        let (x, y) = blobs(40, 6, 3.0, 6);
        let cfg = BaselineConfig {
            pca_components: 4,
            ..BaselineConfig::of(BaselineKind::Svm)
        };
        let m = fit_baseline(&x, &y, &cfg, ExecMode::default()).unwrap();
        assert!(accuracy(&m.predict(&x, ExecMode::default()), &y) >= 0.95);
        let FittedBaseline::Svm(s) = m else { unreachable!() };
        assert_eq!(s.reduced_width(), 4);
    }

    #[test]
    fn svm_three_classes() {
        let mut r = rng(7, Stream::Fixture);
        let centers = [[0.0, 0.0, 0.0], [5.0, 0.0, 0.0], [0.0, 5.0, 0.0]];
        let mut x = Array2::zeros((60, 3));
        let mut y = Vec::new();
        for i in 0..60 {
            let c = i % 3;
            for j in 0..3 {
                x[[i, j]] = centers[c][j] + r.random_range(-1.0..1.0);
            }
            y.push(ClassLabel::from_index(c).unwrap());
        }
        let cfg = BaselineConfig {
            pca_components: 2,
            ..BaselineConfig::of(BaselineKind::Svm)
        };
        let m = fit_baseline(&x, &y, &cfg, ExecMode::default()).unwrap();
        assert!(accuracy(&m.predict(&x, ExecMode::default()), &y) >= 0.95);
    }
}
