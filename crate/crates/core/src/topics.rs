//! Topic exploration over joint text-image embeddings: neighbour-graph
//! dimensionality reduction, density clustering, class-based TF-IDF keywords
//! and centroid-distance topic merging.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::{Hash, Hasher};

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Post;
use crate::par::{self, ExecMode};
use crate::seeds::{self, Stream};

pub const OUTLIER: i64 = -1;
pub const DEFAULT_EMBEDDER: &str = "clip-ViT-B-32";

/// English stopword list used for keyword extraction.
pub const ENGLISH_STOPWORDS: &[&str] = &[
    "a", "about", "above", "across", "after", "afterwards", "again", "against", "all", "almost",
    "alone", "along", "already", "also", "although", "always", "am", "among", "amongst",
    "amoungst", "amount", "an", "and", "another", "any", "anyhow", "anyone", "anything", "anyway",
    "anywhere", "are", "around", "as", "at", "back", "be", "became", "because", "become",
    "becomes", "becoming", "been", "before", "beforehand", "behind", "being", "below", "beside",
    "besides", "between", "beyond", "bill", "both", "bottom", "but", "by", "call", "can", "cannot",
    "cant", "co", "con", "could", "couldnt", "cry", "de", "describe", "detail", "do", "done",
    "down", "due", "during", "each", "eg", "eight", "either", "eleven", "else", "elsewhere",
    "empty", "enough", "etc", "even", "ever", "every", "everyone", "everything", "everywhere",
    "except", "few", "fifteen", "fifty", "fill", "find", "fire", "first", "five", "for", "former",
    "formerly", "forty", "found", "four", "from", "front", "full", "further", "get", "give", "go",
    "had", "has", "hasnt", "have", "he", "hence", "her", "here", "hereafter", "hereby", "herein",
    "hereupon", "hers", "herself", "him", "himself", "his", "how", "however", "hundred", "i", "ie",
    "if", "in", "inc", "indeed", "interest", "into", "is", "it", "its", "itself", "keep", "last",
    "latter", "latterly", "least", "less", "ltd", "made", "many", "may", "me", "meanwhile",
    "might", "mill", "mine", "more", "moreover", "most", "mostly", "move", "much", "must", "my",
    "myself", "name", "namely", "neither", "never", "nevertheless", "next", "nine", "no", "nobody",
    "none", "noone", "nor", "not", "nothing", "now", "nowhere", "of", "off", "often", "on", "once",
    "one", "only", "onto", "or", "other", "others", "otherwise", "our", "ours", "ourselves", "out",
    "over", "own", "part", "per", "perhaps", "please", "put", "rather", "re", "same", "see",
    "seem", "seemed", "seeming", "seems", "serious", "several", "she", "should", "show", "side",
    "since", "sincere", "six", "sixty", "so", "some", "somehow", "someone", "something",
    "sometime", "sometimes", "somewhere", "still", "such", "system", "take", "ten", "than", "that",
    "the", "their", "them", "themselves", "then", "thence", "there", "thereafter", "thereby",
    "therefore", "therein", "thereupon", "these", "they", "thick", "thin", "third", "this",
    "those", "though", "three", "through", "throughout", "thru", "thus", "to", "together", "too",
    "top", "toward", "towards", "twelve", "twenty", "two", "un", "under", "until", "up", "upon",
    "us", "very", "via", "was", "we", "well", "were", "what", "whatever", "when", "whence",
    "whenever", "where", "whereafter", "whereas", "whereby", "wherein", "whereupon", "wherever",
    "whether", "which", "while", "whither", "who", "whoever", "whole", "whom", "whose", "why",
    "will", "with", "within", "without", "would", "yet", "you", "your", "yours", "yourself",
    "yourselves",
];

#[derive(Debug, thiserror::Error)]
pub enum TopicError {
    #[error("{rows} rows is too few: need more than neighborhood_size ({neighborhood})")]
    TooFewRows { rows: usize, neighborhood: usize },
    #[error("invalid topic config: {0}")]
    Config(String),
    #[error("target {target} must be between 1 and the current topic count {count}")]
    BadTarget { target: usize, count: usize },
    #[error("{rows} embedding rows but {texts} texts")]
    LengthMismatch { rows: usize, texts: usize },
    #[error("embedding failed for {} post(s); first: {}", .0.len(), .0[0])]
    Embed(Vec<EmbedError>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EmbedError {
    pub index: usize,
    pub post_id: String,
    pub message: String,
}

impl std::fmt::Display for EmbedError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "post {} ({}): {}", self.index, self.post_id, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopicModelConfig {
    pub reduced_dims: usize,
    pub neighborhood_size: usize,
    pub ngram_range: (usize, usize),
    pub stopword_removal: bool,
    pub extra_stopwords: Vec<String>,
    pub target_topics: Option<usize>,
    pub min_cluster_size: usize,
    pub layout_epochs: usize,
    pub top_keywords: usize,
    pub representatives: usize,
    pub seed: u64,
    pub embedder: String,
}

impl Default for TopicModelConfig {
    fn default() -> Self {
        TopicModelConfig {
            reduced_dims: 5,
            neighborhood_size: 15,
            ngram_range: (1, 2),
            stopword_removal: true,
            extra_stopwords: Vec::new(),
            target_topics: None,
            min_cluster_size: 10,
            layout_epochs: 200,
            top_keywords: 10,
            representatives: 3,
            seed: seeds::CANONICAL_SEEDS[0],
            embedder: DEFAULT_EMBEDDER.into(),
        }
    }
}

impl TopicModelConfig {
    pub fn validate(&self) -> Result<(), TopicError> {
        let bad = |m: &str| Err(TopicError::Config(m.into()));
        if self.reduced_dims < 2 {
            return bad("reduced_dims must be >= 2");
        }
        if self.neighborhood_size < 2 {
            return bad("neighborhood_size must be >= 2");
        }
        let (lo, hi) = self.ngram_range;
        if lo < 1 || hi < lo || hi > 2 {
            return bad("ngram_range must satisfy 1 <= lo <= hi <= 2");
        }
        if self.min_cluster_size < 2 {
            return bad("min_cluster_size must be >= 2");
        }
        if self.target_topics == Some(0) {
            return bad("target_topics must be >= 1");
        }
        Ok(())
    }

    fn stopwords(&self) -> BTreeSet<String> {
        if !self.stopword_removal {
            return self.extra_stopwords.iter().map(|w| w.to_lowercase()).collect();
        }
        ENGLISH_STOPWORDS
            .iter()
            .map(|w| w.to_string())
            .chain(self.extra_stopwords.iter().map(|w| w.to_lowercase()))
            .collect()
    }
}

/// Maps a post (text and image) to one fixed-width vector.
pub trait JointEmbedder: Send + Sync {
    fn width(&self) -> usize;
    fn embed(&self, post: &Post) -> Result<Vec<f64>, String>;
}

/// Replays stored vectors keyed by post id.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RecordedEmbedder {
    pub width: usize,
    pub vectors: HashMap<String, Vec<f64>>,
}

impl JointEmbedder for RecordedEmbedder {
    fn width(&self) -> usize {
        self.width
    }

    fn embed(&self, post: &Post) -> Result<Vec<f64>, String> {
        let v = self
            .vectors
            .get(&post.id)
            .ok_or_else(|| "no recorded embedding".to_string())?;
        if v.len() != self.width {
            return Err(format!("recorded width {} != {}", v.len(), self.width));
        }
        Ok(v.clone())
    }
}

/// Hashed bag of words plus a hashed image-path bucket, L2-normalised.
/// A dependency-free stand-in for a real joint embedder.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    pub width: usize,
}

impl JointEmbedder for HashingEmbedder {
    fn width(&self) -> usize {
        self.width
    }

    fn embed(&self, post: &Post) -> Result<Vec<f64>, String> {
        let bucket = |s: &str| {
            let mut h = std::collections::hash_map::DefaultHasher::new();
            s.hash(&mut h);
            (h.finish() % self.width as u64) as usize
        };
        let mut v = vec![0.0; self.width];
        for t in tokenize(&post.text) {
            v[bucket(&t)] += 1.0;
        }
        if !post.image_path.is_empty() {
            v[bucket(&format!("image:{}", post.image_path))] += 0.5;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(v)
    }
}

/// One row per post in input order.
pub fn embed_posts(posts: &[Post], embedder: &dyn JointEmbedder, mode: ExecMode) -> Result<Array2<f64>, TopicError> {
    let rows = par::map(mode, posts, |p| embedder.embed(p));
    let mut out = Array2::zeros((posts.len(), embedder.width()));
    let mut errors = Vec::new();
    for (index, (row, post)) in rows.into_iter().zip(posts).enumerate() {
        match row {
            Ok(v) if v.len() == embedder.width() => {
                out.row_mut(index).assign(&Array1::from(v));
            }
            Ok(v) => errors.push(EmbedError {
                index,
                post_id: post.id.clone(),
                message: format!("width {} != {}", v.len(), embedder.width()),
            }),
            Err(message) => errors.push(EmbedError {
                index,
                post_id: post.id.clone(),
                message,
            }),
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(TopicError::Embed(errors))
    }
}

/// Lowercased tokens of two or more word characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|t| t.chars().count() >= 2)
        .map(String::from)
        .collect()
}

/// Unigram and/or bigram terms after stopword removal.
pub fn candidate_terms(text: &str, ngram_range: (usize, usize), stopwords: &BTreeSet<String>) -> Vec<String> {
    let toks: Vec<String> = tokenize(text).into_iter().filter(|t| !stopwords.contains(t)).collect();
    let mut out = Vec::new();
    if ngram_range.0 <= 1 {
        out.extend(toks.iter().cloned());
    }
    if ngram_range.1 >= 2 {
        out.extend(toks.windows(2).map(|w| format!("{} {}", w[0], w[1])));
    }
    out
}

// Neighbour-graph layout constants for min_dist 0.1 and spread 1.0.
const CURVE_A: f64 = 1.929;
const CURVE_B: f64 = 0.7915;
const NEGATIVE_SAMPLES: usize = 5;

fn cosine_distances(x: &Array2<f64>) -> Array2<f64> {
    let norms: Vec<f64> = x.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let dots = x.dot(&x.t());
    let n = x.nrows();
    Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            return 0.0;
        }
        match (norms[i] > 0.0, norms[j] > 0.0) {
            (true, true) => (1.0 - dots[[i, j]] / (norms[i] * norms[j])).max(0.0),
            (false, false) => 0.0,
            _ => 1.0,
        }
    })
}

/// Fuzzy k-nearest-neighbour graph as symmetric edge weights.
fn fuzzy_graph(dist: &Array2<f64>, k: usize) -> BTreeMap<(usize, usize), f64> {
    let n = dist.nrows();
    let target = (k as f64).log2();
    let mut directed: HashMap<(usize, usize), f64> = HashMap::new();
    for i in 0..n {
        let mut nb: Vec<(f64, usize)> = (0..n).filter(|&j| j != i).map(|j| (dist[[i, j]], j)).collect();
        nb.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        nb.truncate(k);
        let rho = nb.iter().map(|p| p.0).find(|&d| d > 0.0).unwrap_or(0.0);
        let mass = |sigma: f64| nb.iter().map(|&(d, _)| (-(d - rho).max(0.0) / sigma).exp()).sum::<f64>();
        let (mut lo, mut hi, mut sigma) = (0.0, f64::INFINITY, 1.0);
        for _ in 0..64 {
            let m = mass(sigma);
            if (m - target).abs() < 1e-5 {
                break;
            }
            if m > target {
                hi = sigma;
                sigma = (lo + hi) / 2.0;
            } else {
                lo = sigma;
                sigma = if hi.is_finite() { (lo + hi) / 2.0 } else { sigma * 2.0 };
            }
        }
        for &(d, j) in &nb {
            directed.insert((i, j), (-(d - rho).max(0.0) / sigma.max(1e-12)).exp());
        }
    }
    let mut sym = BTreeMap::new();
    for (&(i, j), &w) in &directed {
        let back = directed.get(&(j, i)).copied().unwrap_or(0.0);
        let key = (i.min(j), i.max(j));
        sym.insert(key, w + back - w * back);
    }
    sym
}

fn pca_init(x: &Array2<f64>, dims: usize) -> Array2<f64> {
    let (n, d) = x.dim();
    let centered = x - &x.mean_axis(Axis(0)).expect("non-empty");
    let m = DMatrix::from_row_iterator(n, d, centered.iter().copied());
    let svd = m.svd(true, false);
    let u = svd.u.expect("requested left singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let mut y = Array2::zeros((n, dims));
    for (k, &o) in order.iter().take(dims).enumerate() {
        let s = svd.singular_values[o];
        let col: Vec<f64> = u.column(o).iter().map(|v| v * s).collect();
        let pivot = col.iter().fold(0.0f64, |a, &v| if v.abs() > a.abs() { v } else { a });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            y[[i, k]] = sign * col[i];
        }
    }
    let max = y.fold(0.0f64, |a, &v| a.max(v.abs()));
    if max > 0.0 {
        y *= 10.0 / max;
    }
    y
}

/// Reduces rows to `dims` dimensions by optimising a low-dimensional layout
/// of the cosine k-nearest-neighbour graph. Deterministic in `seed`.
pub fn reduce_dimensions(x: &Array2<f64>, dims: usize, k: usize, epochs: usize, seed: u64) -> Array2<f64> {
    let n = x.nrows();
    let dist = cosine_distances(x);
    if dist.iter().all(|&d| d == 0.0) {
        return Array2::zeros((n, dims));
    }
    let graph = fuzzy_graph(&dist, k.min(n - 1));
    let mut y = pca_init(x, dims);
    let mut rng = seeds::rng(seed, Stream::Topics);
    let wmax = graph.values().fold(0.0f64, |a, &b| a.max(b));
    let edges: Vec<(usize, usize, f64)> = graph.into_iter().map(|((i, j), w)| (i, j, w / wmax)).collect();
    let clip = |v: f64| v.clamp(-4.0, 4.0);
    for epoch in 0..epochs {
        let alpha = 1.0 - epoch as f64 / epochs as f64;
        for &(i, j, w) in &edges {
            if rng.random::<f64>() > w {
                continue;
            }
            let d2: f64 = (0..dims).map(|c| (y[[i, c]] - y[[j, c]]).powi(2)).sum();
            if d2 > 0.0 {
                let coef = -2.0 * CURVE_A * CURVE_B * d2.powf(CURVE_B - 1.0) / (1.0 + CURVE_A * d2.powf(CURVE_B));
                for c in 0..dims {
                    let g = clip(coef * (y[[i, c]] - y[[j, c]])) * alpha;
                    y[[i, c]] += g;
                    y[[j, c]] -= g;
                }
            }
            for _ in 0..NEGATIVE_SAMPLES {
                let m = rng.random_range(0..n);
                if m == i {
                    continue;
                }
                let d2: f64 = (0..dims).map(|c| (y[[i, c]] - y[[m, c]]).powi(2)).sum();
                let coef = 2.0 * CURVE_B / ((0.001 + d2) * (1.0 + CURVE_A * d2.powf(CURVE_B)));
                for c in 0..dims {
                    let g = if coef > 0.0 { clip(coef * (y[[i, c]] - y[[m, c]])) } else { 4.0 };
                    y[[i, c]] += g * alpha;
                }
            }
        }
    }
    y
}

fn euclidean(y: &Array2<f64>, i: usize, j: usize) -> f64 {
    y.row(i)
        .iter()
        .zip(y.row(j))
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Hierarchical density clustering with excess-of-mass selection. Returns a
/// label per row, `-1` for outliers. When no split survives
/// `min_cluster_size`, every row lands in one cluster.
pub fn density_cluster(y: &Array2<f64>, min_cluster_size: usize, min_samples: usize) -> Vec<i64> {
    let n = y.nrows();
    if n < min_cluster_size.max(2) {
        return vec![OUTLIER; n];
    }
    let dist = Array2::from_shape_fn((n, n), |(i, j)| euclidean(y, i, j));
    let ms = min_samples.clamp(1, n);
    let core: Vec<f64> = (0..n)
        .map(|i| {
            let mut row: Vec<f64> = dist.row(i).to_vec();
            row.sort_by(f64::total_cmp);
            row[ms - 1]
        })
        .collect();
    let mreach = |i: usize, j: usize| dist[[i, j]].max(core[i]).max(core[j]);

    // Minimum spanning tree (Prim) over mutual reachability.
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut from = vec![0usize; n];
    let mut edges: Vec<(f64, usize, usize)> = Vec::with_capacity(n - 1);
    let mut cur = 0;
    in_tree[0] = true;
    for _ in 1..n {
        let mut next = usize::MAX;
        for j in 0..n {
            if in_tree[j] {
                continue;
            }
            let d = mreach(cur, j);
            if d < best[j] {
                best[j] = d;
                from[j] = cur;
            }
            if next == usize::MAX || best[j] < best[next] {
                next = j;
            }
        }
        in_tree[next] = true;
        edges.push((best[next], from[next], next));
        cur = next;
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    // Single-linkage dendrogram: leaves 0..n, merges n..2n-1.
    let mut parent: Vec<usize> = (0..2 * n - 1).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut children: Vec<(usize, usize, f64)> = Vec::with_capacity(n - 1);
    let mut size = vec![1usize; 2 * n - 1];
    for (k, &(d, a, b)) in edges.iter().enumerate() {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        let id = n + k;
        parent[ra] = id;
        parent[rb] = id;
        size[id] = size[ra] + size[rb];
        children.push((ra, rb, d));
    }
    let root = 2 * n - 2;
    let lambda = |d: f64| 1.0 / d.max(1e-10);

    // Condensed tree: (parent cluster, child cluster or point, lambda, size).
    struct Rec {
        parent: usize,
        point: Option<usize>,
        lambda: f64,
        size: usize,
    }
    let mut recs: Vec<Rec> = Vec::new();
    let mut birth: Vec<f64> = vec![0.0];
    let mut cluster_parent: Vec<Option<usize>> = vec![None];
    let leaves = |node: usize| {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(x) = stack.pop() {
            if x < n {
                out.push(x);
            } else {
                let (l, r, _) = children[x - n];
                stack.push(l);
                stack.push(r);
            }
        }
        out
    };
    let mut stack = vec![(root, 0usize)];
    while let Some((node, label)) = stack.pop() {
        if node < n {
            recs.push(Rec { parent: label, point: Some(node), lambda: birth[label].max(0.0), size: 1 });
            continue;
        }
        let (l, r, d) = children[node - n];
        let lam = lambda(d);
        let (big_l, big_r) = (size[l] >= min_cluster_size, size[r] >= min_cluster_size);
        match (big_l, big_r) {
            (true, true) => {
                for c in [l, r] {
                    let id = birth.len();
                    birth.push(lam);
                    cluster_parent.push(Some(label));
                    recs.push(Rec { parent: label, point: None, lambda: lam, size: size[c] });
                    stack.push((c, id));
                }
            }
            (true, false) | (false, true) => {
                let (keep, drop) = if big_l { (l, r) } else { (r, l) };
                for p in leaves(drop) {
                    recs.push(Rec { parent: label, point: Some(p), lambda: lam, size: 1 });
                }
                stack.push((keep, label));
            }
            (false, false) => {
                for p in leaves(node) {
                    recs.push(Rec { parent: label, point: Some(p), lambda: lam, size: 1 });
                }
            }
        }
    }
    let clusters = birth.len();
    if clusters == 1 {
        return vec![0; n];
    }
    let mut stability = vec![0.0; clusters];
    for r in &recs {
        stability[r.parent] += (r.lambda - birth[r.parent]) * r.size as f64;
    }
    // Excess of mass, children before parents (children have larger ids).
    let mut selected = vec![false; clusters];
    let mut subtree = stability.clone();
    let mut kids: Vec<Vec<usize>> = vec![Vec::new(); clusters];
    for c in 1..clusters {
        kids[cluster_parent[c].expect("non-root")].push(c);
    }
    for c in (1..clusters).rev() {
        let child_sum: f64 = kids[c].iter().map(|&k| subtree[k]).sum();
        if kids[c].is_empty() || stability[c] >= child_sum {
            selected[c] = true;
            subtree[c] = stability[c];
            let mut st = kids[c].clone();
            while let Some(k) = st.pop() {
                selected[k] = false;
                st.extend(kids[k].iter().copied());
            }
        } else {
            subtree[c] = child_sum;
        }
    }
    let mut point_cluster = vec![0usize; n];
    for r in &recs {
        if let Some(p) = r.point {
            point_cluster[p] = r.parent;
        }
    }
    let chosen: Vec<usize> = (1..clusters).filter(|&c| selected[c]).collect();
    let mut labels = vec![OUTLIER; n];
    for (p, &c0) in point_cluster.iter().enumerate() {
        let mut c = Some(c0);
        while let Some(cc) = c {
            if selected[cc] {
                labels[p] = chosen.iter().position(|&x| x == cc).expect("selected") as i64;
                break;
            }
            c = cluster_parent[cc];
        }
    }
    labels
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topic {
    pub topic_id: i64,
    pub member_ids: Vec<String>,
    pub keywords: Vec<String>,
    pub representatives: Vec<String>,
}

impl Topic {
    pub fn size(&self) -> usize {
        self.member_ids.len()
    }
}

/// A fitted model: reduced coordinates, one topic id per row and the topics.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicModel {
    pub config: TopicModelConfig,
    pub ids: Vec<String>,
    pub texts: Vec<String>,
    pub reduced: Array2<f64>,
    /// Topic id per row, `-1` for outliers.
    pub assignments: Vec<i64>,
    pub topics: Vec<Topic>,
}

impl TopicModel {
    /// Builds topics from raw cluster labels. Topic ids are renumbered by
    /// decreasing size (ties by first member row); `-1` stays the outlier id.
    pub fn from_assignments(
        config: TopicModelConfig,
        ids: Vec<String>,
        texts: Vec<String>,
        reduced: Array2<f64>,
        raw: &[i64],
    ) -> Self {
        let mut groups: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
        for (i, &l) in raw.iter().enumerate() {
            if l != OUTLIER {
                groups.entry(l).or_default().push(i);
            }
        }
        let mut ordered: Vec<Vec<usize>> = groups.into_values().collect();
        ordered.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
        let mut assignments = vec![OUTLIER; raw.len()];
        for (t, rows) in ordered.iter().enumerate() {
            for &r in rows {
                assignments[r] = t as i64;
            }
        }
        let mut model = TopicModel {
            config,
            ids,
            texts,
            reduced,
            assignments,
            topics: Vec::new(),
        };
        model.topics = model.build_topics(&ordered);
        model
    }

    fn build_topics(&self, groups: &[Vec<usize>]) -> Vec<Topic> {
        let keywords = class_tfidf_keywords(
            &groups
                .iter()
                .map(|rows| rows.iter().map(|&r| self.texts[r].as_str()).collect::<Vec<_>>())
                .collect::<Vec<_>>(),
            self.config.ngram_range,
            &self.config.stopwords(),
            self.config.top_keywords,
        );
        groups
            .iter()
            .zip(keywords)
            .enumerate()
            .map(|(t, (rows, keywords))| {
                let centroid = self.centroid(rows);
                let mut by_dist: Vec<(f64, usize)> = rows
                    .iter()
                    .map(|&r| {
                        let d: f64 = self.reduced.row(r).iter().zip(&centroid).map(|(a, b)| (a - b).powi(2)).sum();
                        (d, r)
                    })
                    .collect();
                by_dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                Topic {
                    topic_id: t as i64,
                    member_ids: rows.iter().map(|&r| self.ids[r].clone()).collect(),
                    keywords,
                    representatives: by_dist
                        .iter()
                        .take(self.config.representatives)
                        .map(|&(_, r)| self.ids[r].clone())
                        .collect(),
                }
            })
            .collect()
    }

    fn centroid(&self, rows: &[usize]) -> Array1<f64> {
        self.reduced.select(Axis(0), rows).mean_axis(Axis(0)).expect("topic is non-empty")
    }

    fn groups(&self) -> Vec<Vec<usize>> {
        let mut g = vec![Vec::new(); self.topics.len()];
        for (r, &t) in self.assignments.iter().enumerate() {
            if t != OUTLIER {
                g[t as usize].push(r);
            }
        }
        g
    }

    pub fn outlier_count(&self) -> usize {
        self.assignments.iter().filter(|&&t| t == OUTLIER).count()
    }

    /// Topic report: id, size, keywords and representative post ids.
    pub fn report_json(&self) -> serde_json::Value {
        serde_json::json!({
            "outliers": self.outlier_count(),
            "topics": self.topics.iter().map(|t| serde_json::json!({
                "topic_id": t.topic_id,
                "size": t.size(),
                "keywords": t.keywords,
                "representatives": t.representatives,
                "member_ids": t.member_ids,
            })).collect::<Vec<_>>(),
        })
    }
}

/// Top keywords per group by class-based TF-IDF: term frequency normalised
/// within the group, weighted by `ln(1 + A / f)` where `A` is the mean term
/// count per group and `f` the term's count over all groups. Ties break
/// alphabetically.
pub fn class_tfidf_keywords(
    groups: &[Vec<&str>],
    ngram_range: (usize, usize),
    stopwords: &BTreeSet<String>,
    top: usize,
) -> Vec<Vec<String>> {
    let counts: Vec<BTreeMap<String, f64>> = groups
        .iter()
        .map(|texts| {
            let mut c = BTreeMap::new();
            for t in texts {
                for term in candidate_terms(t, ngram_range, stopwords) {
                    *c.entry(term).or_insert(0.0) += 1.0;
                }
            }
            c
        })
        .collect();
    let mut total: BTreeMap<&str, f64> = BTreeMap::new();
    for c in &counts {
        for (t, v) in c {
            *total.entry(t.as_str()).or_insert(0.0) += v;
        }
    }
    let avg = if groups.is_empty() {
        0.0
    } else {
        total.values().sum::<f64>() / groups.len() as f64
    };
    counts
        .iter()
        .map(|c| {
            let n: f64 = c.values().sum();
            let mut scored: Vec<(f64, &String)> = c
                .iter()
                .map(|(t, v)| (v / n * (1.0 + avg / total[t.as_str()]).ln(), t))
                .collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
            scored.into_iter().take(top).map(|(_, t)| t.clone()).collect()
        })
        .collect()
}

/// Reduces, clusters and describes the embedded posts.
pub fn fit_topics(
    embeddings: &Array2<f64>,
    ids: &[String],
    texts: &[String],
    config: &TopicModelConfig,
) -> Result<TopicModel, TopicError> {
    config.validate()?;
    let n = embeddings.nrows();
    if texts.len() != n || ids.len() != n {
        return Err(TopicError::LengthMismatch { rows: n, texts: texts.len() });
    }
    if n <= config.neighborhood_size {
        return Err(TopicError::TooFewRows {
            rows: n,
            neighborhood: config.neighborhood_size,
        });
    }
    let reduced = reduce_dimensions(
        embeddings,
        config.reduced_dims,
        config.neighborhood_size,
        config.layout_epochs,
        config.seed,
    );
    let raw = density_cluster(&reduced, config.min_cluster_size, config.min_cluster_size);
    let model = TopicModel::from_assignments(config.clone(), ids.to_vec(), texts.to_vec(), reduced, &raw);
    match config.target_topics {
        Some(t) if t < model.topics.len() => reduce_topics(&model, t),
        _ => Ok(model),
    }
}

/// Repeatedly merges the two topics with the nearest centroids (ties by
/// lower ids) until `target` topics remain, recomputing keywords.
pub fn reduce_topics(model: &TopicModel, target: usize) -> Result<TopicModel, TopicError> {
    let count = model.topics.len();
    if target == 0 || target > count {
        return Err(TopicError::BadTarget { target, count });
    }
    let mut groups = model.groups();
    while groups.len() > target {
        let cents: Vec<Array1<f64>> = groups.iter().map(|g| model.centroid(g)).collect();
        let mut best = (f64::INFINITY, 0, 1);
        for a in 0..groups.len() {
            for b in a + 1..groups.len() {
                let d: f64 = cents[a].iter().zip(&cents[b]).map(|(x, y)| (x - y).powi(2)).sum();
                if d < best.0 {
                    best = (d, a, b);
                }
            }
        }
        let merged = groups.remove(best.2);
        groups[best.1].extend(merged);
        groups[best.1].sort_unstable();
    }
    let mut raw = vec![OUTLIER; model.assignments.len()];
    for (t, g) in groups.iter().enumerate() {
        for &r in g {
            raw[r] = t as i64;
        }
    }
    Ok(TopicModel::from_assignments(
        model.config.clone(),
        model.ids.clone(),
        model.texts.clone(),
        model.reduced.clone(),
        &raw,
    ))
}
