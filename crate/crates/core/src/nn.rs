//! Dense layers in f64 with hand-written backward passes.
//!
//! Activations are row-major `(rows, features)` matrices. A token sequence of
//! length `t` for a batch of `b` samples is stored as `b * t` rows, sample
//! major. Forward passes are pure and return a cache; backward passes consume
//! the cache, accumulate into `Param::grad` (unless frozen) and return the
//! input gradient.

use ndarray::{s, Array2, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A trainable tensor. Biases and norm scales are stored as `1 x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
    pub frozen: bool,
}

impl Param {
    pub fn new(value: Array2<f64>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Param {
            value,
            grad,
            frozen: false,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Param::new(Array2::zeros((rows, cols)))
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Param::new(Array2::from_elem((rows, cols), v))
    }

    pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Self {
        Param::new(Array2::from_shape_simple_fn((rows, cols), || {
            rng.random_range(-bound..bound)
        }))
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.dim()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    fn accumulate(&mut self, g: &Array2<f64>) {
        if !self.frozen {
            self.grad += g;
        }
    }
}

/// Uniform parameter access for optimizers, checkpoints and freezing.
pub trait Module {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn set_frozen(&mut self, frozen: bool) {
        for p in self.params_mut() {
            p.frozen = frozen;
        }
    }
}

/// Source of dropout masks. `None` means evaluation mode.
pub struct DropoutCtx<'a> {
    rng: Option<&'a mut ChaCha8Rng>,
}

impl<'a> DropoutCtx<'a> {
    pub fn eval() -> Self {
        DropoutCtx { rng: None }
    }

    pub fn train(rng: &'a mut ChaCha8Rng) -> Self {
        DropoutCtx { rng: Some(rng) }
    }

    pub fn is_train(&self) -> bool {
        self.rng.is_some()
    }

    /// Inverted-dropout mask with entries `0` or `1/(1-p)`, or `None` when
    /// no dropout applies.
    pub fn mask(&mut self, rows: usize, cols: usize, p: f64) -> Option<Array2<f64>> {
        let rng = self.rng.as_mut()?;
        if p <= 0.0 {
            return None;
        }
        let keep = 1.0 / (1.0 - p);
        Some(Array2::from_shape_simple_fn((rows, cols), || {
            if rng.random::<f64>() < p {
                0.0
            } else {
                keep
            }
        }))
    }
}

fn apply_mask(x: Array2<f64>, mask: &Option<Array2<f64>>) -> Array2<f64> {
    match mask {
        Some(m) => x * m,
        None => x,
    }
}

/// `y = x W^T + b` with `W` stored `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    /// Weight and bias uniform in `+-1/sqrt(in)`.
    pub fn new(rng: &mut ChaCha8Rng, input: usize, output: usize) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Linear {
            weight: Param::uniform(rng, output, input, bound),
            bias: Param::uniform(rng, 1, output, bound),
        }
    }

    /// Xavier-uniform weight, zero bias.
    pub fn xavier(rng: &mut ChaCha8Rng, input: usize, output: usize, fan_total: usize) -> Self {
        let bound = (6.0 / fan_total as f64).sqrt();
        Linear {
            weight: Param::uniform(rng, output, input, bound),
            bias: Param::zeros(1, output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.value.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.value.nrows()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight.value.t()) + self.bias.value.row(0)
    }

    pub fn backward(&mut self, x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
        if !self.weight.frozen {
            self.weight.grad += &dy.t().dot(x);
        }
        if !self.bias.frozen {
            self.bias.grad += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        }
        dy.dot(&self.weight.value)
    }
}

impl Module for Linear {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
}

pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: Param::filled(1, dim, 1.0),
            beta: Param::zeros(1, dim),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, LayerNormCache) {
        let d = x.ncols() as f64;
        let mut xhat = x.clone();
        let mut inv_std = Vec::with_capacity(x.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.mapv_inplace(|v| (v - mean) * inv);
            inv_std.push(inv);
        }
        let y = &xhat * &self.gamma.value.row(0) + self.beta.value.row(0);
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&mut self, cache: &LayerNormCache, dy: &Array2<f64>) -> Array2<f64> {
        let xhat = &cache.xhat;
        self.gamma
            .accumulate(&(dy * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
        self.beta.accumulate(&dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
        let dxhat = dy * &self.gamma.value.row(0);
        let d = dy.ncols() as f64;
        let mut dx = Array2::zeros(dy.raw_dim());
        for (r, mut out) in dx.rows_mut().into_iter().enumerate() {
            let g = dxhat.row(r);
            let h = xhat.row(r);
            let sum_g = g.sum();
            let sum_gh = g.dot(&h);
            let inv = cache.inv_std[r];
            Zip::from(&mut out)
                .and(&g)
                .and(&h)
                .for_each(|o, &gi, &hi| *o = inv / d * (d * gi - sum_g - hi * sum_gh));
        }
        dx
    }
}

impl Module for LayerNorm {
    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

/// Row-wise softmax, max-shifted.
pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

/// Mean cross-entropy over rows and its gradient with respect to `logits`.
pub fn cross_entropy(logits: &Array2<f64>, targets: &[usize]) -> (f64, Array2<f64>) {
    let n = logits.nrows() as f64;
    let mut grad = softmax_rows(logits);
    let mut loss = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        let row = logits.row(r);
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - row[t];
        grad[[r, t]] -= 1.0;
    }
    grad /= n;
    (loss / n, grad)
}

/// Multi-head scaled dot-product attention with separate q/k/v projections.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub dropout: f64,
}

pub struct AttentionCache {
    q_in: Array2<f64>,
    kv_in: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Vec<Array2<f64>>,
    masks: Vec<Option<Array2<f64>>>,
    concat: Array2<f64>,
    batch: usize,
    tq: usize,
    tk: usize,
}

impl MultiHeadAttention {
    pub fn new(rng: &mut ChaCha8Rng, dim: usize, heads: usize, dropout: f64) -> Self {
        let mut out = Linear::new(rng, dim, dim);
        out.bias.value.fill(0.0);
        MultiHeadAttention {
            heads,
            q: Linear::xavier(rng, dim, dim, 4 * dim),
            k: Linear::xavier(rng, dim, dim, 4 * dim),
            v: Linear::xavier(rng, dim, dim, 4 * dim),
            out,
            dropout,
        }
    }

    fn head_dim(&self) -> usize {
        self.q.output_dim() / self.heads
    }

    /// `q_in` holds `batch * tq` rows and `kv_in` holds `batch * tk` rows.
    pub fn forward(
        &self,
        q_in: &Array2<f64>,
        kv_in: &Array2<f64>,
        batch: usize,
        tq: usize,
        tk: usize,
        ctx: &mut DropoutCtx,
    ) -> (Array2<f64>, AttentionCache) {
        let q = self.q.forward(q_in);
        let k = self.k.forward(kv_in);
        let v = self.v.forward(kv_in);
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut concat = Array2::zeros(q.raw_dim());
        let mut attn = Vec::with_capacity(batch * self.heads);
        let mut masks = Vec::with_capacity(batch * self.heads);
        for b in 0..batch {
            for h in 0..self.heads {
                let cols = h * dh..(h + 1) * dh;
                let qb = q.slice(s![b * tq..(b + 1) * tq, cols.clone()]);
                let kb = k.slice(s![b * tk..(b + 1) * tk, cols.clone()]);
                let vb = v.slice(s![b * tk..(b + 1) * tk, cols.clone()]);
                let a = softmax_rows(&(qb.dot(&kb.t()) * scale));
                let mask = ctx.mask(tq, tk, self.dropout);
                let ad = apply_mask(a.clone(), &mask);
                concat
                    .slice_mut(s![b * tq..(b + 1) * tq, cols])
                    .assign(&ad.dot(&vb));
                attn.push(a);
                masks.push(mask);
            }
        }
        let y = self.out.forward(&concat);
        let cache = AttentionCache {
            q_in: q_in.clone(),
            kv_in: kv_in.clone(),
            q,
            k,
            v,
            attn,
            masks,
            concat,
            batch,
            tq,
            tk,
        };
        (y, cache)
    }

    /// Returns gradients for `(q_in, kv_in)`.
    pub fn backward(
        &mut self,
        c: &AttentionCache,
        dy: &Array2<f64>,
    ) -> (Array2<f64>, Array2<f64>) {
        let dconcat = self.out.backward(&c.concat, dy);
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let (tq, tk) = (c.tq, c.tk);
        let mut dq = Array2::zeros(c.q.raw_dim());
        let mut dk = Array2::zeros(c.k.raw_dim());
        let mut dv = Array2::zeros(c.v.raw_dim());
        for b in 0..c.batch {
            for h in 0..self.heads {
                let i = b * self.heads + h;
                let cols = h * dh..(h + 1) * dh;
                let qrows = b * tq..(b + 1) * tq;
                let krows = b * tk..(b + 1) * tk;
                let qb = c.q.slice(s![qrows.clone(), cols.clone()]);
                let kb = c.k.slice(s![krows.clone(), cols.clone()]);
                let vb = c.v.slice(s![krows.clone(), cols.clone()]);
                let a = &c.attn[i];
                let ad = apply_mask(a.clone(), &c.masks[i]);
                let dout = dconcat.slice(s![qrows.clone(), cols.clone()]);
                dv.slice_mut(s![krows.clone(), cols.clone()])
                    .assign(&ad.t().dot(&dout));
                let da = apply_mask(dout.dot(&vb.t()), &c.masks[i]);
                let row_dot = (&da * a).sum_axis(Axis(1)).insert_axis(Axis(1));
                let ds = a * &(da - &row_dot) * scale;
                dq.slice_mut(s![qrows, cols.clone()]).assign(&ds.dot(&kb));
                dk.slice_mut(s![krows, cols]).assign(&ds.t().dot(&qb));
            }
        }
        let dq_in = self.q.backward(&c.q_in, &dq);
        let dkv_in = self.k.backward(&c.kv_in, &dk) + self.v.backward(&c.kv_in, &dv);
        (dq_in, dkv_in)
    }
}

impl Module for MultiHeadAttention {
    fn params(&self) -> Vec<&Param> {
        [&self.q, &self.k, &self.v, &self.out]
            .into_iter()
            .flat_map(|l| l.params())
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        [&mut self.q, &mut self.k, &mut self.v, &mut self.out]
            .into_iter()
            .flat_map(|l| l.params_mut())
            .collect()
    }
}

/// Post-norm attention block with a ReLU feed-forward sublayer:
/// `x1 = LN(x + drop(attn(x, kv)))`, `y = LN(x1 + drop(ff(x1)))`.
/// Self-attention when no separate key/value input is given.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBlock {
    pub attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub norm2: LayerNorm,
    pub dropout: f64,
}

pub struct BlockCache {
    attn: AttentionCache,
    m1: Option<Array2<f64>>,
    ln1: LayerNormCache,
    x1: Array2<f64>,
    h: Array2<f64>,
    m2: Option<Array2<f64>>,
    hd: Array2<f64>,
    m3: Option<Array2<f64>>,
    ln2: LayerNormCache,
    self_attention: bool,
}

impl AttentionBlock {
    pub fn new(rng: &mut ChaCha8Rng, dim: usize, heads: usize, ffn: usize, dropout: f64) -> Self {
        AttentionBlock {
            attn: MultiHeadAttention::new(rng, dim, heads, dropout),
            norm1: LayerNorm::new(dim),
            ff1: Linear::new(rng, dim, ffn),
            ff2: Linear::new(rng, ffn, dim),
            norm2: LayerNorm::new(dim),
            dropout,
        }
    }

    pub fn forward(
        &self,
        x: &Array2<f64>,
        kv: Option<&Array2<f64>>,
        batch: usize,
        tq: usize,
        tk: usize,
        ctx: &mut DropoutCtx,
    ) -> (Array2<f64>, BlockCache) {
        let (a, attn) = self.attn.forward(x, kv.unwrap_or(x), batch, tq, tk, ctx);
        let m1 = ctx.mask(a.nrows(), a.ncols(), self.dropout);
        let (x1, ln1) = self.norm1.forward(&(x + &apply_mask(a, &m1)));
        let h = self.ff1.forward(&x1);
        let m2 = ctx.mask(h.nrows(), h.ncols(), self.dropout);
        let hd = apply_mask(h.mapv(|v| v.max(0.0)), &m2);
        let f = self.ff2.forward(&hd);
        let m3 = ctx.mask(f.nrows(), f.ncols(), self.dropout);
        let (y, ln2) = self.norm2.forward(&(&x1 + &apply_mask(f, &m3)));
        let cache = BlockCache {
            attn,
            m1,
            ln1,
            x1,
            h,
            m2,
            hd,
            m3,
            ln2,
            self_attention: kv.is_none(),
        };
        (y, cache)
    }

    /// Returns the gradient for `x` and, for cross-attention, for `kv`.
    pub fn backward(
        &mut self,
        c: &BlockCache,
        dy: &Array2<f64>,
    ) -> (Array2<f64>, Option<Array2<f64>>) {
        let dr2 = self.norm2.backward(&c.ln2, dy);
        let df = apply_mask(dr2.clone(), &c.m3);
        let dhd = self.ff2.backward(&c.hd, &df);
        let mut dh = apply_mask(dhd, &c.m2);
        Zip::from(&mut dh).and(&c.h).for_each(|g, &h| {
            if h <= 0.0 {
                *g = 0.0
            }
        });
        let dx1 = dr2 + self.ff1.backward(&c.x1, &dh);
        let dr1 = self.norm1.backward(&c.ln1, &dx1);
        let da = apply_mask(dr1.clone(), &c.m1);
        let (dq, dkv) = self.attn.backward(&c.attn, &da);
        if c.self_attention {
            (dr1 + dq + dkv, None)
        } else {
            (dr1 + dq, Some(dkv))
        }
    }
}

impl Module for AttentionBlock {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.attn.params();
        v.extend(self.norm1.params());
        v.extend(self.ff1.params());
        v.extend(self.ff2.params());
        v.extend(self.norm2.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.attn.params_mut();
        v.extend(self.norm1.params_mut());
        v.extend(self.ff1.params_mut());
        v.extend(self.ff2.params_mut());
        v.extend(self.norm2.params_mut());
        v
    }
}

/// Adam with L2-style weight decay folded into the gradient. Frozen
/// parameters are skipped entirely.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: i32,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut Param>) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Array2::zeros(p.value.raw_dim())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, lr, eps, wd) = (self.beta1, self.beta2, self.lr, self.eps, self.weight_decay);
        for ((p, m), v) in params.into_iter().zip(&mut self.m).zip(&mut self.v) {
            if p.frozen {
                continue;
            }
            Zip::from(&mut p.value)
                .and(&p.grad)
                .and(m)
                .and(v)
                .for_each(|w, &g, m, v| {
                    let g = g + wd * *w;
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                });
        }
    }
}
