use ndarray::{concatenate, s, Array2, Axis};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ClassifierError;
use crate::encoders::{EncoderStack, StackCache, FEATURE_WIDTH};
use crate::nn::{cross_entropy, AttentionBlock, BlockCache, DropoutCtx, Linear, Module, Param};
use crate::par::{self, ExecMode};
use crate::taxonomy::{ClassLabel, NUM_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    /// Self-attention over the `[text, image]` token pair.
    Transformer,
    /// Head reads the concatenated projections.
    Concat,
    /// Image token attends to the text token.
    CrossAttention,
    /// Head reads the mean of the projections.
    None,
}

impl FusionKind {
    pub const ALL: [FusionKind; 4] = [
        FusionKind::Transformer,
        FusionKind::Concat,
        FusionKind::CrossAttention,
        FusionKind::None,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionKind::Transformer => "transformer",
            FusionKind::Concat => "concat",
            FusionKind::CrossAttention => "cross_attention",
            FusionKind::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Mlp,
    Linear,
}

/// Which part of each encoder top is excluded from training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderFreeze {
    #[default]
    None,
    Half,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionModelConfig {
    pub input_dim: usize,
    pub proj_dim: usize,
    pub fusion: FusionKind,
    pub fusion_layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub head_hidden: usize,
    pub num_classes: usize,
    pub head: HeadKind,
    /// Trainable residual layers on top of each frozen backbone output.
    pub encoder_layers: usize,
    pub encoder_freeze: EncoderFreeze,
}

impl Default for FusionModelConfig {
    fn default() -> Self {
        FusionModelConfig {
            input_dim: FEATURE_WIDTH,
            proj_dim: 512,
            fusion: FusionKind::Transformer,
            fusion_layers: 2,
            heads: 8,
            ffn_dim: 2048,
            dropout: 0.2,
            head_hidden: 256,
            num_classes: NUM_CLASSES,
            head: HeadKind::Mlp,
            encoder_layers: 0,
            encoder_freeze: EncoderFreeze::None,
        }
    }
}

impl FusionModelConfig {
    /// Small dimensions for gradient checks and quick tests.
    pub fn tiny(fusion: FusionKind) -> Self {
        FusionModelConfig {
            input_dim: 6,
            proj_dim: 8,
            fusion,
            fusion_layers: 2,
            heads: 2,
            ffn_dim: 16,
            head_hidden: 5,
            encoder_layers: 2,
            ..FusionModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |m: String| Err(ClassifierError::Config(m));
        if self.input_dim == 0 || self.proj_dim == 0 || self.head_hidden == 0 || self.ffn_dim == 0 {
            return bad("dimensions must be positive".into());
        }
        if self.num_classes != NUM_CLASSES {
            return bad(format!("num_classes must be {NUM_CLASSES}"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        let attends = matches!(self.fusion, FusionKind::Transformer | FusionKind::CrossAttention);
        if attends {
            if self.heads == 0 || !self.proj_dim.is_multiple_of(self.heads) {
                return bad(format!(
                    "proj_dim {} not divisible by heads {}",
                    self.proj_dim, self.heads
                ));
            }
            if self.fusion_layers == 0 {
                return bad(format!("{} fusion needs at least one layer", self.fusion.as_str()));
            }
        }
        Ok(())
    }

    fn head_input(&self) -> usize {
        match self.fusion {
            FusionKind::Concat => 2 * self.proj_dim,
            _ => self.proj_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    Mlp { hidden: Linear, out: Linear },
    Linear(Linear),
}

/// Per-modality projection, optional fusion layers and a classification head.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    pub config: FusionModelConfig,
    pub text_encoder: EncoderStack,
    pub image_encoder: EncoderStack,
    pub text_proj: Linear,
    pub image_proj: Linear,
    pub fusion: Vec<AttentionBlock>,
    pub head: Head,
}

pub struct ForwardCache {
    text_stack: StackCache,
    image_stack: StackCache,
    text_enc: Array2<f64>,
    image_enc: Array2<f64>,
    blocks: Vec<BlockCache>,
    fused: Array2<f64>,
    head_hidden: Option<(Array2<f64>, Option<Array2<f64>>, Array2<f64>)>,
}

impl FusionModel {
    pub fn new(config: FusionModelConfig, rng: &mut ChaCha8Rng) -> Result<Self, ClassifierError> {
        config.validate()?;
        let c = &config;
        let mut text_encoder = EncoderStack::new(rng, c.encoder_layers, c.input_dim);
        let mut image_encoder = EncoderStack::new(rng, c.encoder_layers, c.input_dim);
        match c.encoder_freeze {
            EncoderFreeze::None => {}
            EncoderFreeze::Half => {
                text_encoder = text_encoder.freeze_half();
                image_encoder = image_encoder.freeze_half();
            }
            EncoderFreeze::All => {
                text_encoder = text_encoder.freeze_all();
                image_encoder = image_encoder.freeze_all();
            }
        }
        let text_proj = Linear::new(rng, c.input_dim, c.proj_dim);
        let image_proj = Linear::new(rng, c.input_dim, c.proj_dim);
        let layers = match c.fusion {
            FusionKind::Transformer | FusionKind::CrossAttention => c.fusion_layers,
            _ => 0,
        };
        let fusion = (0..layers)
            .map(|_| AttentionBlock::new(rng, c.proj_dim, c.heads, c.ffn_dim, c.dropout))
            .collect();
        let head = match c.head {
            HeadKind::Mlp => Head::Mlp {
                hidden: Linear::new(rng, c.head_input(), c.head_hidden),
                out: Linear::new(rng, c.head_hidden, c.num_classes),
            },
            HeadKind::Linear => Head::Linear(Linear::new(rng, c.head_input(), c.num_classes)),
        };
        Ok(FusionModel {
            config,
            text_encoder,
            image_encoder,
            text_proj,
            image_proj,
            fusion,
            head,
        })
    }

    /// `(name, rows, cols)` for every parameter tensor in a fixed order.
    pub fn param_shapes(&self) -> Vec<(String, usize, usize)> {
        self.named_params()
            .into_iter()
            .map(|(n, p)| (n, p.shape().0, p.shape().1))
            .collect()
    }

    fn named_params(&self) -> Vec<(String, &Param)> {
        fn tag<'a>(out: &mut Vec<(String, &'a Param)>, prefix: &str, ps: Vec<&'a Param>) {
            out.extend(ps.into_iter().enumerate().map(|(i, p)| (format!("{prefix}.{i}"), p)));
        }
        let mut out = Vec::new();
        tag(&mut out, "text_encoder", self.text_encoder.params());
        tag(&mut out, "image_encoder", self.image_encoder.params());
        tag(&mut out, "text_proj", self.text_proj.params());
        tag(&mut out, "image_proj", self.image_proj.params());
        for (i, b) in self.fusion.iter().enumerate() {
            tag(&mut out, &format!("fusion.{i}"), b.params());
        }
        match &self.head {
            Head::Mlp { hidden, out: o } => {
                tag(&mut out, "head.hidden", hidden.params());
                tag(&mut out, "head.out", o.params());
            }
            Head::Linear(l) => tag(&mut out, "head.out", l.params()),
        }
        out
    }

    /// Encoder-top parameters only.
    pub fn encoder_params(&self) -> Vec<&Param> {
        let mut v = self.text_encoder.params();
        v.extend(self.image_encoder.params());
        v
    }

    /// All parameter values concatenated in [`Module::params`] order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.params()
            .into_iter()
            .flat_map(|p| p.value.iter().copied().collect::<Vec<_>>())
            .collect()
    }

    pub fn load_flat(&mut self, values: &[f64]) -> Result<(), ClassifierError> {
        let total = self.num_params();
        if values.len() != total {
            return Err(ClassifierError::Checkpoint(format!(
                "expected {total} parameters, got {}",
                values.len()
            )));
        }
        let mut offset = 0;
        for p in self.params_mut() {
            let n = p.len();
            for (dst, src) in p.value.iter_mut().zip(&values[offset..offset + n]) {
                *dst = *src;
            }
            offset += n;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn check_inputs(&self, text: &Array2<f64>, image: &Array2<f64>) -> Result<(), ClassifierError> {
        let d = self.config.input_dim;
        if text.nrows() == 0 {
            return Err(ClassifierError::Shape("empty batch".into()));
        }
        if text.nrows() != image.nrows() {
            return Err(ClassifierError::Shape(format!(
                "{} text rows but {} image rows",
                text.nrows(),
                image.nrows()
            )));
        }
        if text.ncols() != d || image.ncols() != d {
            return Err(ClassifierError::Shape(format!(
                "expected width {d}, got text {} and image {}",
                text.ncols(),
                image.ncols()
            )));
        }
        Ok(())
    }

    pub fn forward(
        &self,
        text: &Array2<f64>,
        image: &Array2<f64>,
        ctx: &mut DropoutCtx,
    ) -> Result<(Array2<f64>, ForwardCache), ClassifierError> {
        self.check_inputs(text, image)?;
        let b = text.nrows();
        let (text_enc, text_stack) = self.text_encoder.forward(text, ctx);
        let (image_enc, image_stack) = self.image_encoder.forward(image, ctx);
        let tp = self.text_proj.forward(&text_enc);
        let ip = self.image_proj.forward(&image_enc);
        let mut blocks = Vec::with_capacity(self.fusion.len());
        let fused = match self.config.fusion {
            FusionKind::Transformer => {
                let mut x = interleave(&tp, &ip);
                for block in &self.fusion {
                    let (y, c) = block.forward(&x, None, b, 2, 2, ctx);
                    blocks.push(c);
                    x = y;
                }
                (&x.slice(s![0..;2, ..]) + &x.slice(s![1..;2, ..])) * 0.5
            }
            FusionKind::CrossAttention => {
                let mut q = ip;
                for block in &self.fusion {
                    let (y, c) = block.forward(&q, Some(&tp), b, 1, 1, ctx);
                    blocks.push(c);
                    q = y;
                }
                (q + &tp) * 0.5
            }
            FusionKind::Concat => concatenate![Axis(1), tp, ip],
            FusionKind::None => (&tp + &ip) * 0.5,
        };
        let (logits, head_hidden) = match &self.head {
            Head::Mlp { hidden, out } => {
                let h = hidden.forward(&fused);
                let mask = ctx.mask(h.nrows(), h.ncols(), self.config.dropout);
                let mut hd = h.mapv(|v| v.max(0.0));
                if let Some(m) = &mask {
                    hd *= m;
                }
                (out.forward(&hd), Some((h, mask, hd)))
            }
            Head::Linear(l) => (l.forward(&fused), None),
        };
        let cache = ForwardCache {
            text_stack,
            image_stack,
            text_enc,
            image_enc,
            blocks,
            fused,
            head_hidden,
        };
        Ok((logits, cache))
    }

    /// Accumulates parameter gradients for `dlogits`.
    pub fn backward(&mut self, c: &ForwardCache, dlogits: &Array2<f64>) {
        let dfused = match (&mut self.head, &c.head_hidden) {
            (Head::Mlp { hidden, out }, Some((h, mask, hd))) => {
                let mut dh = out.backward(hd, dlogits);
                if let Some(m) = mask {
                    dh *= m;
                }
                ndarray::Zip::from(&mut dh).and(h).for_each(|g, &v| {
                    if v <= 0.0 {
                        *g = 0.0
                    }
                });
                hidden.backward(&c.fused, &dh)
            }
            (Head::Linear(l), _) => l.backward(&c.fused, dlogits),
            (Head::Mlp { .. }, None) => unreachable!("mlp head always caches its hidden layer"),
        };
        let p = self.config.proj_dim;
        let (dtp, dip) = match self.config.fusion {
            FusionKind::Transformer => {
                let half = &dfused * 0.5;
                let mut dx = interleave(&half, &half);
                for (block, cache) in self.fusion.iter_mut().zip(&c.blocks).rev() {
                    dx = block.backward(cache, &dx).0;
                }
                (
                    dx.slice(s![0..;2, ..]).to_owned(),
                    dx.slice(s![1..;2, ..]).to_owned(),
                )
            }
            FusionKind::CrossAttention => {
                let mut dq = &dfused * 0.5;
                let mut dtp = &dfused * 0.5;
                for (block, cache) in self.fusion.iter_mut().zip(&c.blocks).rev() {
                    let (g, dkv) = block.backward(cache, &dq);
                    dq = g;
                    dtp += &dkv.expect("cross-attention block returns a key/value gradient");
                }
                (dtp, dq)
            }
            FusionKind::Concat => (
                dfused.slice(s![.., ..p]).to_owned(),
                dfused.slice(s![.., p..]).to_owned(),
            ),
            FusionKind::None => (&dfused * 0.5, &dfused * 0.5),
        };
        let dt = self.text_proj.backward(&c.text_enc, &dtp);
        let di = self.image_proj.backward(&c.image_enc, &dip);
        if !self.text_encoder.layers.is_empty() {
            self.text_encoder.backward(&c.text_stack, &dt);
        }
        if !self.image_encoder.layers.is_empty() {
            self.image_encoder.backward(&c.image_stack, &di);
        }
    }

    /// Zeroes gradients, runs forward and backward on one batch and returns
    /// the mean cross-entropy.
    pub fn loss_and_grad(
        &mut self,
        text: &Array2<f64>,
        image: &Array2<f64>,
        labels: &[usize],
        ctx: &mut DropoutCtx,
    ) -> Result<f64, ClassifierError> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.config.num_classes) {
            return Err(ClassifierError::BadLabel(bad));
        }
        self.zero_grad();
        let (logits, cache) = self.forward(text, image, ctx)?;
        let (loss, dlogits) = cross_entropy(&logits, labels);
        self.backward(&cache, &dlogits);
        Ok(loss)
    }

    /// Evaluation-mode logits.
    pub fn logits(&self, text: &Array2<f64>, image: &Array2<f64>) -> Result<Array2<f64>, ClassifierError> {
        Ok(self.forward(text, image, &mut DropoutCtx::eval())?.0)
    }

    /// Argmax predictions in evaluation mode, computed in row chunks.
    pub fn predict(
        &self,
        text: &Array2<f64>,
        image: &Array2<f64>,
        mode: ExecMode,
    ) -> Result<Vec<ClassLabel>, ClassifierError> {
        const CHUNK: usize = 64;
        if text.nrows() == 0 && image.nrows() == 0 {
            return Ok(Vec::new());
        }
        let chunks = text.nrows().div_ceil(CHUNK);
        let parts = par::map_range(mode, chunks, |k| {
            let r = k * CHUNK..((k + 1) * CHUNK).min(text.nrows());
            let logits = self.logits(
                &text.slice(s![r.clone(), ..]).to_owned(),
                &image.slice(s![r, ..]).to_owned(),
            )?;
            Ok::<_, ClassifierError>(argmax_rows(&logits))
        });
        let mut out = Vec::with_capacity(text.nrows());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }
}

/// Index of the largest logit per row; ties go to the lower class.
pub fn argmax_rows(logits: &Array2<f64>) -> Vec<ClassLabel> {
    logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            ClassLabel::from_index(best).expect("logit width equals the class count")
        })
        .collect()
}

/// Rows `2i` from `a` and `2i+1` from `b`.
fn interleave(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let mut x = Array2::zeros((a.nrows() * 2, a.ncols()));
    x.slice_mut(s![0..;2, ..]).assign(a);
    x.slice_mut(s![1..;2, ..]).assign(b);
    x
}

impl Module for FusionModel {
    fn params(&self) -> Vec<&Param> {
        self.named_params().into_iter().map(|(_, p)| p).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.text_encoder.params_mut();
        v.extend(self.image_encoder.params_mut());
        v.extend(self.text_proj.params_mut());
        v.extend(self.image_proj.params_mut());
        for b in &mut self.fusion {
            v.extend(b.params_mut());
        }
        match &mut self.head {
            Head::Mlp { hidden, out } => {
                v.extend(hidden.params_mut());
                v.extend(out.params_mut());
            }
            Head::Linear(l) => v.extend(l.params_mut()),
        }
        v
    }
}
