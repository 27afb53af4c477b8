//! Run configuration: one TOML file per run, flags override, and every
//! relative path is resolved against the directory holding the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use triage_core::classifiers::{BaselineConfig, BaselineKind, FusionKind, FusionModelConfig, TrainConfig};
use triage_core::encoders::{EncoderConfig, Modality, Pooling, DEFAULT_IMAGE_CHECKPOINT, DEFAULT_IMAGE_SIZE, DEFAULT_MAX_TEXT_LENGTH, DEFAULT_TEXT_CHECKPOINT};
use triage_core::par::ExecMode;
use triage_core::seeds::CANONICAL_SEEDS;
use triage_core::topics::TopicModelConfig;
use triage_core::zeroshot::ImageMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub run: RunSection,
    pub paths: Paths,
    pub split: SplitSection,
    pub encoders: EncodersSection,
    pub model: FusionModelConfig,
    pub train: TrainConfig,
    pub baselines: BaselinesSection,
    pub topics: TopicModelConfig,
    pub agree: AgreeSection,
    pub zeroshot: ZeroShotSection,
    pub eval: EvalSection,
    pub trends: TrendsSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Single source of randomness; split, init, shuffle, dropout and topic
    /// streams all derive from it.
    pub seed: u64,
    /// Seeds of the multi-run protocol used by `eval`.
    pub seeds: Vec<u64>,
    pub parallel: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: CANONICAL_SEEDS[0],
            seeds: CANONICAL_SEEDS.to_vec(),
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub posts: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub image_root: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub gazetteer: Option<PathBuf>,
    pub responses: Option<PathBuf>,
    /// Feature cache written by `ingest`; features are recomputed when absent.
    pub features: Option<PathBuf>,
    /// `{id, label}` predictions used by `trends`; falls back to `labels`.
    pub predictions: Option<PathBuf>,
    /// Recorded joint embeddings for `topics` (`{width, vectors}` JSON).
    pub embeddings: Option<PathBuf>,
}

impl Paths {
    fn all_mut(&mut self) -> [(&'static str, &mut Option<PathBuf>); 9] {
        [
            ("posts", &mut self.posts),
            ("labels", &mut self.labels),
            ("image_root", &mut self.image_root),
            ("annotations", &mut self.annotations),
            ("gazetteer", &mut self.gazetteer),
            ("responses", &mut self.responses),
            ("features", &mut self.features),
            ("predictions", &mut self.predictions),
            ("embeddings", &mut self.embeddings),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub train_fraction: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection { train_fraction: 0.8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncodersSection {
    pub text_checkpoint: String,
    pub image_checkpoint: String,
    pub text_pooling: Pooling,
    pub image_pooling: Pooling,
    pub max_text_length: usize,
    pub image_size: (u32, u32, u32),
    /// Seed of the offline stand-in text encoder.
    pub stub_seed: u64,
}

impl Default for EncodersSection {
    fn default() -> Self {
        EncodersSection {
            text_checkpoint: DEFAULT_TEXT_CHECKPOINT.into(),
            image_checkpoint: DEFAULT_IMAGE_CHECKPOINT.into(),
            text_pooling: Pooling::Cls,
            image_pooling: Pooling::Cls,
            max_text_length: DEFAULT_MAX_TEXT_LENGTH,
            image_size: DEFAULT_IMAGE_SIZE,
            stub_seed: 0,
        }
    }
}

impl EncodersSection {
    pub fn text(&self) -> EncoderConfig {
        EncoderConfig {
            modality: Modality::Text,
            checkpoint: self.text_checkpoint.clone(),
            pooling: self.text_pooling,
            freeze_half: false,
            max_text_length: self.max_text_length,
            image_size: self.image_size,
        }
    }

    pub fn image(&self) -> EncoderConfig {
        EncoderConfig {
            modality: Modality::Image,
            checkpoint: self.image_checkpoint.clone(),
            pooling: self.image_pooling,
            ..self.text()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselinesSection {
    /// Baselines fitted alongside the fusion model by `eval`.
    pub kinds: Vec<BaselineKind>,
    pub knn_k: usize,
    pub dt_balanced: bool,
    pub pca_components: usize,
    pub svm_c: f64,
    pub gnb_var_smoothing: f64,
}

impl Default for BaselinesSection {
    fn default() -> Self {
        let d = BaselineConfig::default();
        BaselinesSection {
            kinds: Vec::new(),
            knn_k: d.knn_k,
            dt_balanced: d.dt_balanced,
            pca_components: d.pca_components,
            svm_c: d.svm_c,
            gnb_var_smoothing: d.gnb_var_smoothing,
        }
    }
}

impl BaselinesSection {
    pub fn config(&self, kind: BaselineKind) -> BaselineConfig {
        BaselineConfig {
            kind,
            knn_k: self.knn_k,
            dt_balanced: self.dt_balanced,
            pca_components: self.pca_components,
            svm_c: self.svm_c,
            gnb_var_smoothing: self.gnb_var_smoothing,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct AgreeSection {
    /// Annotator whose vote settles items without a majority; defaults to the
    /// first annotator seen.
    pub expert: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZeroShotSection {
    pub adapter: String,
    pub limit: Option<usize>,
    pub max_in_flight: usize,
    pub image_mode: ImageMode,
}

impl Default for ZeroShotSection {
    fn default() -> Self {
        ZeroShotSection {
            adapter: "recorded".into(),
            limit: None,
            max_in_flight: 4,
            image_mode: ImageMode::Binary,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Explicit runs; when empty, `eval` trains one model per `run.seeds` entry.
    pub runs: Vec<EvalRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRun {
    pub seed: u64,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrendsSection {
    pub year: i32,
    /// Class names or letters; empty means all thirteen.
    pub classes: Vec<String>,
    pub chart: bool,
}

impl Default for TrendsSection {
    fn default() -> Self {
        TrendsSection {
            year: 2023,
            classes: Vec::new(),
            chart: true,
        }
    }
}

impl Config {
    pub fn exec_mode(&self) -> ExecMode {
        if self.run.parallel {
            ExecMode::Parallel
        } else {
            ExecMode::Sequential
        }
    }

    /// Applies the seed override and fans the run seed out to every section
    /// that carries its own seed field.
    pub fn resolve(mut self, base: &Path, seed: Option<u64>) -> Config {
        if let Some(s) = seed {
            self.run.seed = s;
        }
        self.train.seed = self.run.seed;
        self.topics.seed = self.run.seed;
        for (_, p) in self.paths.all_mut() {
            if let Some(path) = p.as_mut() {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        }
        for r in &mut self.eval.runs {
            for p in [&mut r.checkpoint, &mut r.predictions].into_iter().flatten() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        self
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }
}

/// One problem found in a config file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn enum_check(table: &toml::Table, section: &str, key: &str, allowed: &[&str], out: &mut Vec<Violation>) {
    let Some(v) = table.get(section).and_then(|s| s.get(key)) else {
        return;
    };
    let ok = v.as_str().is_some_and(|s| allowed.contains(&s));
    if !ok {
        out.push(Violation {
            field: format!("{section}.{key}"),
            message: format!("got {v}; allowed values: {}", allowed.join(", ")),
        });
    }
}

/// Checks a config file without side effects. Returns the parsed config
/// (paths resolved) or every violation found.
pub fn validate_config(path: &Path) -> Result<Config, Vec<Violation>> {
    let one = |field: &str, message: String| {
        vec![Violation {
            field: field.into(),
            message,
        }]
    };
    let text = std::fs::read_to_string(path).map_err(|e| one("<file>", format!("{}: {e}", path.display())))?;
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| one("<syntax>", e.to_string()))?;

    // Enum fields are checked on the raw table so the message can list every allowed value.
    let mut v = Vec::new();
    let fusions: Vec<&str> = FusionKind::ALL.iter().map(|f| f.as_str()).collect();
    enum_check(&table, "model", "fusion", &fusions, &mut v);
    enum_check(&table, "model", "head", &["mlp", "linear"], &mut v);
    enum_check(&table, "model", "encoder_freeze", &["none", "half", "all"], &mut v);
    enum_check(&table, "encoders", "text_pooling", &["cls", "mean"], &mut v);
    enum_check(&table, "encoders", "image_pooling", &["cls", "mean"], &mut v);
    enum_check(&table, "zeroshot", "image_mode", &["url", "binary"], &mut v);
    if !v.is_empty() {
        return Err(v);
    }
    let cfg: Config = toml::from_str(&text).map_err(|e: toml::de::Error| {
        let field = e
            .message()
            .split('`')
            .nth(1)
            .filter(|_| e.message().starts_with("unknown field"))
            .unwrap_or("<schema>")
            .to_string();
        one(&field, e.to_string())
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let cfg = cfg.resolve(base, None);
    let v = semantic_violations(&cfg);
    if v.is_empty() {
        Ok(cfg)
    } else {
        Err(v)
    }
}

/// Range and existence checks on an already-typed config.
pub fn semantic_violations(cfg: &Config) -> Vec<Violation> {
    let mut v = Vec::new();
    let mut bad = |field: &str, message: String| {
        v.push(Violation {
            field: field.into(),
            message,
        })
    };
    let m = &cfg.model;
    if !(0.0..1.0).contains(&m.dropout) {
        bad("model.dropout", format!("{} is outside [0, 1)", m.dropout));
    } else if let Err(e) = m.validate() {
        bad("model", e.to_string());
    }
    if m.input_dim != triage_core::encoders::FEATURE_WIDTH {
        bad(
            "model.input_dim",
            format!("must equal the encoder width {}", triage_core::encoders::FEATURE_WIDTH),
        );
    }
    let t = &cfg.train;
    if !(t.learning_rate >= 0.0 && t.learning_rate.is_finite()) {
        bad("train.learning_rate", "must be a finite value >= 0".into());
    }
    if t.weight_decay < 0.0 {
        bad("train.weight_decay", "must be >= 0".into());
    }
    if t.batch_size == 0 {
        bad("train.batch_size", "must be >= 1".into());
    }
    if !(0.0..1.0).contains(&t.adam_beta1) || !(0.0..1.0).contains(&t.adam_beta2) {
        bad("train.adam_beta", "betas must lie in [0, 1)".into());
    }
    let f = cfg.split.train_fraction;
    if !(f > 0.0 && f < 1.0) {
        bad("split.train_fraction", format!("{f} is outside (0, 1)"));
    }
    if cfg.run.seeds.is_empty() {
        bad("run.seeds", "at least one seed is required".into());
    }
    for (i, s) in cfg.run.seeds.iter().enumerate() {
        if cfg.run.seeds[..i].contains(s) {
            bad("run.seeds", format!("seed {s} is repeated"));
        }
    }
    if let Err(e) = cfg.encoders.text().validate() {
        bad("encoders", e.to_string());
    }
    if let Err(e) = cfg.encoders.image().validate() {
        bad("encoders.image_size", e.to_string());
    }
    if let Err(e) = cfg.topics.validate() {
        bad("topics", e.to_string());
    }
    if cfg.zeroshot.max_in_flight == 0 {
        bad("zeroshot.max_in_flight", "must be >= 1".into());
    }
    if cfg.baselines.pca_components == 0 {
        bad("baselines.pca_components", "must be >= 1".into());
    }
    if let Err(e) = triage_core::trends::parse_classes(&cfg.trends.classes) {
        bad("trends.classes", e.to_string());
    }
    let mut paths = cfg.paths.clone();
    for (name, p) in paths.all_mut() {
        if let Some(p) = p {
            if !p.exists() {
                bad(&format!("paths.{name}"), format!("{} does not exist", p.display()));
            }
        }
    }
    for (i, r) in cfg.eval.runs.iter().enumerate() {
        if r.checkpoint.is_some() == r.predictions.is_some() {
            bad(
                &format!("eval.runs[{i}]"),
                "exactly one of checkpoint or predictions is required".into(),
            );
        }
        for p in [&r.checkpoint, &r.predictions].into_iter().flatten() {
            if !p.exists() {
                bad(&format!("eval.runs[{i}]"), format!("{} does not exist", p.display()));
            }
        }
    }
    v
}
