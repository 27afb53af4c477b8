//! Text and image encoder wrappers, pooling, the trainable encoder top and
//! the on-disk feature cache.
//!
//! Real transformer checkpoints are not bundled. Backends implement
//! [`EncoderBackend`]; the crate ships deterministic stub backends that run
//! the full tokenize/resize, hidden-state and pooling path, and a recorded
//! backend that replays stored vectors.

use std::collections::HashMap;
use std::fs::File;
use std::hash::{Hash, Hasher};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{DropoutCtx, Linear, Module, Param};
use crate::par::{self, ExecMode};

/// Width of every pooled encoder output.
pub const FEATURE_WIDTH: usize = 768;
pub const DEFAULT_MAX_TEXT_LENGTH: usize = 144;
pub const DEFAULT_IMAGE_SIZE: (u32, u32, u32) = (384, 384, 3);
pub const PATCH: u32 = 16;
pub const DEFAULT_TEXT_CHECKPOINT: &str = "roberta-base";
pub const DEFAULT_IMAGE_CHECKPOINT: &str = "google/vit-base-patch16-384";

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("encoder configured for {configured:?} input, got {requested:?}")]
    WrongModality {
        configured: Modality,
        requested: Modality,
    },
    #[error("invalid encoder config: {0}")]
    Config(String),
    #[error("item {index}: {message}")]
    Item { index: usize, message: String },
    #[error("backend: {0}")]
    Backend(String),
}

#[derive(Debug, thiserror::Error)]
pub enum CacheError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a feature cache")]
    BadMagic,
    #[error("unsupported cache version {0}")]
    Version(u32),
    #[error("stale cache: built for {found}, expected {expected}")]
    Stale { found: String, expected: String },
    #[error("bad cache header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("record {index}: non-finite value")]
    NonFinite { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Image,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Cls,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub modality: Modality,
    pub checkpoint: String,
    pub pooling: Pooling,
    #[serde(default)]
    pub freeze_half: bool,
    #[serde(default = "default_max_text_length")]
    pub max_text_length: usize,
    #[serde(default = "default_image_size")]
    pub image_size: (u32, u32, u32),
}

fn default_max_text_length() -> usize {
    DEFAULT_MAX_TEXT_LENGTH
}

fn default_image_size() -> (u32, u32, u32) {
    DEFAULT_IMAGE_SIZE
}

impl EncoderConfig {
    pub fn text() -> Self {
        EncoderConfig {
            modality: Modality::Text,
            checkpoint: DEFAULT_TEXT_CHECKPOINT.into(),
            pooling: Pooling::Cls,
            freeze_half: false,
            max_text_length: DEFAULT_MAX_TEXT_LENGTH,
            image_size: DEFAULT_IMAGE_SIZE,
        }
    }

    pub fn image() -> Self {
        EncoderConfig {
            modality: Modality::Image,
            checkpoint: DEFAULT_IMAGE_CHECKPOINT.into(),
            ..EncoderConfig::text()
        }
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.max_text_length == 0 {
            return Err(EncoderError::Config("max_text_length must be >= 1".into()));
        }
        let (w, h, c) = self.image_size;
        if c != 3 || w == 0 || h == 0 || w % PATCH != 0 || h % PATCH != 0 {
            return Err(EncoderError::Config(format!(
                "image_size must be (w, h, 3) with w and h multiples of {PATCH}"
            )));
        }
        Ok(())
    }
}

/// Token ids plus attention mask, both exactly `max_text_length` long.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokens {
    pub ids: Vec<u32>,
    pub mask: Vec<bool>,
}

pub const CLS_ID: u32 = 0;
pub const PAD_ID: u32 = 1;
const VOCAB: u64 = 50_000;

/// Whitespace tokenizer with hashed ids. The sequence starts with the CLS
/// token, the tail is truncated and the remainder padded.
pub fn tokenize(text: &str, max_len: usize) -> Tokens {
    let mut ids = vec![CLS_ID];
    ids.extend(text.split_whitespace().map(|w| {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        w.to_lowercase().hash(&mut h);
        2 + (h.finish() % (VOCAB - 2)) as u32
    }));
    ids.truncate(max_len);
    let real = ids.len();
    ids.resize(max_len, PAD_ID);
    let mask = (0..max_len).map(|i| i < real).collect();
    Tokens { ids, mask }
}

/// Reduces a `(seq, width)` hidden-state matrix to one vector.
pub fn pool(hidden: &Array2<f64>, mask: &[bool], pooling: Pooling) -> Array1<f64> {
    match pooling {
        Pooling::Cls => hidden.row(0).to_owned(),
        Pooling::Mean => {
            let mut sum = Array1::zeros(hidden.ncols());
            let mut n = 0usize;
            for (row, &m) in hidden.rows().into_iter().zip(mask) {
                if m {
                    sum += &row;
                    n += 1;
                }
            }
            sum / n.max(1) as f64
        }
    }
}

/// One input to an encoder: a text or an image file.
#[derive(Debug, Clone, Copy)]
pub enum EncoderInput<'a> {
    Text(&'a str),
    Image(&'a Path),
}

/// Produces one pooled 768-wide vector per input.
pub trait EncoderBackend: Send + Sync {
    fn encode_one(&self, input: EncoderInput<'_>, cfg: &EncoderConfig) -> Result<Array1<f64>, String>;
}

/// Deterministic stand-in for a text transformer: each token gets a fixed
/// pseudo-random embedding and every position also sees the masked mean of
/// the sequence, so the CLS state depends on the content.
#[derive(Debug, Clone)]
pub struct StubTextBackend {
    pub seed: u64,
}

impl StubTextBackend {
    fn embedding(&self, id: u32) -> Array1<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed ^ (id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        Array1::from_shape_simple_fn(FEATURE_WIDTH, || r.random_range(-1.0..1.0))
    }

    pub fn hidden_states(&self, tokens: &Tokens) -> Array2<f64> {
        let mut h = Array2::zeros((tokens.ids.len(), FEATURE_WIDTH));
        for (mut row, &id) in h.rows_mut().into_iter().zip(&tokens.ids) {
            row.assign(&self.embedding(id));
        }
        let context = pool(&h, &tokens.mask, Pooling::Mean);
        h + &context
    }
}

impl EncoderBackend for StubTextBackend {
    fn encode_one(&self, input: EncoderInput<'_>, cfg: &EncoderConfig) -> Result<Array1<f64>, String> {
        let EncoderInput::Text(text) = input else {
            return Err("text backend given an image".into());
        };
        let tokens = tokenize(text, cfg.max_text_length);
        Ok(pool(&self.hidden_states(&tokens), &tokens.mask, cfg.pooling))
    }
}

/// Loads an image, resizes it bilinearly to `(w, h)` and returns RGB values
/// scaled to `[-1, 1]` in row-major `h x w x 3` order.
pub fn load_image(path: &Path, size: (u32, u32, u32)) -> Result<Vec<f64>, String> {
    let img = image::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let rgb = img
        .resize_exact(size.0, size.1, image::imageops::FilterType::Triangle)
        .to_rgb8();
    Ok(rgb.as_raw().iter().map(|&v| v as f64 / 127.5 - 1.0).collect())
}

/// Splits an `h x w x 3` image into non-overlapping 16x16 patches, one
/// flattened 768-wide row per patch.
pub fn patchify(pixels: &[f64], size: (u32, u32, u32)) -> Array2<f64> {
    let (w, h) = (size.0 as usize, size.1 as usize);
    let p = PATCH as usize;
    let (gw, gh) = (w / p, h / p);
    let mut out = Array2::zeros((gw * gh, p * p * 3));
    for gy in 0..gh {
        for gx in 0..gw {
            let mut row = out.row_mut(gy * gw + gx);
            let mut k = 0;
            for y in 0..p {
                for x in 0..p {
                    let base = ((gy * p + y) * w + gx * p + x) * 3;
                    for c in 0..3 {
                        row[k] = pixels[base + c];
                        k += 1;
                    }
                }
            }
        }
    }
    out
}

/// Deterministic stand-in for a patch transformer: the hidden states are the
/// raw patches preceded by a CLS state equal to their elementwise maximum.
#[derive(Debug, Clone, Default)]
pub struct StubImageBackend;

impl StubImageBackend {
    pub fn hidden_states(&self, pixels: &[f64], size: (u32, u32, u32)) -> Array2<f64> {
        let patches = patchify(pixels, size);
        let cls = patches.fold_axis(Axis(0), f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut h = Array2::zeros((patches.nrows() + 1, FEATURE_WIDTH));
        h.row_mut(0).assign(&cls);
        h.slice_mut(ndarray::s![1.., ..]).assign(&patches);
        h
    }
}

impl EncoderBackend for StubImageBackend {
    fn encode_one(&self, input: EncoderInput<'_>, cfg: &EncoderConfig) -> Result<Array1<f64>, String> {
        let EncoderInput::Image(path) = input else {
            return Err("image backend given text".into());
        };
        let pixels = load_image(path, cfg.image_size)?;
        let h = self.hidden_states(&pixels, cfg.image_size);
        let mask = vec![true; h.nrows()];
        Ok(pool(&h, &mask, cfg.pooling))
    }
}

/// Replays stored vectors keyed by the input text or image path.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RecordedBackend {
    pub vectors: HashMap<String, Vec<f64>>,
}

impl RecordedBackend {
    pub fn from_json_file(path: &Path) -> io::Result<Self> {
        let f = BufReader::new(File::open(path)?);
        serde_json::from_reader(f).map_err(io::Error::other)
    }
}

impl EncoderBackend for RecordedBackend {
    fn encode_one(&self, input: EncoderInput<'_>, _cfg: &EncoderConfig) -> Result<Array1<f64>, String> {
        let key = match input {
            EncoderInput::Text(t) => t.to_string(),
            EncoderInput::Image(p) => p.to_string_lossy().into_owned(),
        };
        let v = self
            .vectors
            .get(&key)
            .ok_or_else(|| format!("no recorded vector for {key:?}"))?;
        if v.len() != FEATURE_WIDTH {
            return Err(format!("recorded vector for {key:?} has width {}", v.len()));
        }
        Ok(Array1::from(v.clone()))
    }
}

fn encode_all(
    inputs: Vec<EncoderInput<'_>>,
    modality: Modality,
    cfg: &EncoderConfig,
    backend: &dyn EncoderBackend,
    mode: ExecMode,
) -> Result<Array2<f64>, EncoderError> {
    if cfg.modality != modality {
        return Err(EncoderError::WrongModality {
            configured: cfg.modality,
            requested: modality,
        });
    }
    cfg.validate()?;
    let rows = par::map(mode, &inputs, |input| backend.encode_one(*input, cfg));
    let mut out = Array2::zeros((rows.len(), FEATURE_WIDTH));
    for (index, row) in rows.into_iter().enumerate() {
        let row = row.map_err(|message| EncoderError::Item { index, message })?;
        if row.len() != FEATURE_WIDTH || row.iter().any(|v| !v.is_finite()) {
            return Err(EncoderError::Item {
                index,
                message: "backend returned a malformed vector".into(),
            });
        }
        out.row_mut(index).assign(&row);
    }
    Ok(out)
}

/// One pooled row per text.
pub fn encode_text(
    texts: &[String],
    cfg: &EncoderConfig,
    backend: &dyn EncoderBackend,
    mode: ExecMode,
) -> Result<Array2<f64>, EncoderError> {
    let inputs = texts.iter().map(|t| EncoderInput::Text(t)).collect();
    encode_all(inputs, Modality::Text, cfg, backend, mode)
}

/// One pooled row per image file.
pub fn encode_image(
    paths: &[PathBuf],
    cfg: &EncoderConfig,
    backend: &dyn EncoderBackend,
    mode: ExecMode,
) -> Result<Array2<f64>, EncoderError> {
    let inputs = paths.iter().map(|p| EncoderInput::Image(p)).collect();
    encode_all(inputs, Modality::Image, cfg, backend, mode)
}

/// Trainable top of an encoder: residual layers `h + tanh(W h + b)` over the
/// pooled 768-wide output.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStack {
    pub layers: Vec<Linear>,
}

pub struct StackCache {
    inputs: Vec<Array2<f64>>,
    activations: Vec<Array2<f64>>,
}

impl EncoderStack {
    pub fn new(rng: &mut ChaCha8Rng, layers: usize, width: usize) -> Self {
        EncoderStack {
            layers: (0..layers).map(|_| Linear::new(rng, width, width)).collect(),
        }
    }

    /// Freezes the first `floor(n/2)` layers. Forward output is unaffected.
    pub fn freeze_half(mut self) -> Self {
        let n = self.layers.len() / 2;
        for l in &mut self.layers[..n] {
            l.set_frozen(true);
        }
        self
    }

    pub fn freeze_all(mut self) -> Self {
        self.set_frozen(true);
        self
    }

    /// Number of leading layers excluded from updates.
    pub fn frozen_layers(&self) -> usize {
        self.layers
            .iter()
            .take_while(|l| l.params().iter().all(|p| p.frozen))
            .count()
    }

    pub fn forward(&self, x: &Array2<f64>, _ctx: &mut DropoutCtx) -> (Array2<f64>, StackCache) {
        let mut h = x.clone();
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut activations = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let t = l.forward(&h).mapv(f64::tanh);
            inputs.push(h.clone());
            h += &t;
            activations.push(t);
        }
        (h, StackCache { inputs, activations })
    }

    pub fn backward(&mut self, c: &StackCache, dy: &Array2<f64>) -> Array2<f64> {
        let mut g = dy.clone();
        for (i, l) in self.layers.iter_mut().enumerate().rev() {
            let dpre = &g * &c.activations[i].mapv(|t| 1.0 - t * t);
            g = g + l.backward(&c.inputs[i], &dpre);
        }
        g
    }
}

impl Module for EncoderStack {
    fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

/// Cached encoder output for one post.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub post_id: String,
    pub text_vec: Vec<f64>,
    pub image_vec: Vec<f64>,
    pub pooling_used: (Pooling, Pooling),
}

/// What a cache was built with; a mismatch on read means the cache is stale.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheHeader {
    pub text_checkpoint: String,
    pub image_checkpoint: String,
    pub text_pooling: Pooling,
    pub image_pooling: Pooling,
    pub width: usize,
}

impl CacheHeader {
    pub fn for_configs(text: &EncoderConfig, image: &EncoderConfig) -> Self {
        CacheHeader {
            text_checkpoint: text.checkpoint.clone(),
            image_checkpoint: image.checkpoint.clone(),
            text_pooling: text.pooling,
            image_pooling: image.pooling,
            width: FEATURE_WIDTH,
        }
    }

    fn describe(&self) -> String {
        format!(
            "{}/{:?} + {}/{:?}",
            self.text_checkpoint, self.text_pooling, self.image_checkpoint, self.image_pooling
        )
    }
}

const CACHE_MAGIC: &[u8; 8] = b"TRIAGEFC";
const CACHE_VERSION: u32 = 1;

/// Writes records to a binary cache: magic, version, JSON header, record
/// count, then per record an id and two little-endian f64 vectors.
pub fn write_feature_cache(
    path: &Path,
    header: &CacheHeader,
    records: &[FeatureRecord],
) -> Result<(), CacheError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CACHE_MAGIC)?;
    w.write_u32::<LittleEndian>(CACHE_VERSION)?;
    let json = serde_json::to_vec(header)?;
    w.write_u64::<LittleEndian>(json.len() as u64)?;
    w.write_all(&json)?;
    w.write_u64::<LittleEndian>(records.len() as u64)?;
    for (index, r) in records.iter().enumerate() {
        if r.text_vec.len() != header.width || r.image_vec.len() != header.width {
            return Err(CacheError::Io(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!("record {index} does not match cache width {}", header.width),
            )));
        }
        if r.pooling_used != (header.text_pooling, header.image_pooling) {
            return Err(CacheError::Io(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!("record {index} pooling differs from the cache header"),
            )));
        }
        if r.text_vec.iter().chain(&r.image_vec).any(|v| !v.is_finite()) {
            return Err(CacheError::NonFinite { index });
        }
        let id = r.post_id.as_bytes();
        w.write_u32::<LittleEndian>(id.len() as u32)?;
        w.write_all(id)?;
        for v in r.text_vec.iter().chain(&r.image_vec) {
            w.write_f64::<LittleEndian>(*v)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a cache, rejecting it as stale unless its header equals `expected`.
pub fn read_feature_cache(path: &Path, expected: &CacheHeader) -> Result<Vec<FeatureRecord>, CacheError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(CacheError::BadMagic);
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != CACHE_VERSION {
        return Err(CacheError::Version(version));
    }
    let mut json = vec![0u8; r.read_u64::<LittleEndian>()? as usize];
    r.read_exact(&mut json)?;
    let header: CacheHeader = serde_json::from_slice(&json)?;
    if &header != expected {
        return Err(CacheError::Stale {
            found: header.describe(),
            expected: expected.describe(),
        });
    }
    let n = r.read_u64::<LittleEndian>()? as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut id = vec![0u8; r.read_u32::<LittleEndian>()? as usize];
        r.read_exact(&mut id)?;
        let mut read_vec = || -> io::Result<Vec<f64>> {
            (0..header.width).map(|_| r.read_f64::<LittleEndian>()).collect()
        };
        let text_vec = read_vec()?;
        let image_vec = read_vec()?;
        out.push(FeatureRecord {
            post_id: String::from_utf8(id).map_err(io::Error::other)?,
            text_vec,
            image_vec,
            pooling_used: (header.text_pooling, header.image_pooling),
        });
    }
    Ok(out)
}

/// Stacks cached records into `(text, image)` matrices in record order.
pub fn records_to_matrices(records: &[FeatureRecord]) -> (Array2<f64>, Array2<f64>) {
    let n = records.len();
    let mut t = Array2::zeros((n, FEATURE_WIDTH));
    let mut i = Array2::zeros((n, FEATURE_WIDTH));
    for (k, r) in records.iter().enumerate() {
        t.row_mut(k).assign(&ndarray::ArrayView1::from(&r.text_vec));
        i.row_mut(k).assign(&ndarray::ArrayView1::from(&r.image_vec));
    }
    (t, i)
}
