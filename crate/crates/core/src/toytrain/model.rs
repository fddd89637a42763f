//! A tiny guided denoiser:
//!
//! ```text
//! X = embed_x(ldct)          G = embed_g(ncct)            (per pixel, 1 -> C)
//! H = X + CrossAttn(X, G)    (M x M windows, keys from G)
//! Z = H + W2 tanh(W1 H + b1) + b2
//! pred = ldct + head(Z)
//! ```

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::attention::{attention_backward, window_attention, window_partition, window_reverse, AttentionCache, AttentionMode, AttentionParams, Differentiable, FeatureMap, Matrix, WindowFeatures};
use crate::error::{Error, Result};

use super::loss::{charbonnier, charbonnier_grad};
use super::train::TrainSample;

pub const MODEL_MAGIC: &[u8; 8] = b"PTSPTOY\0";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyDims {
    pub patch: usize,
    pub window: usize,
    pub channels: usize,
    pub hidden: usize,
}

impl Default for ToyDims {
    fn default() -> Self {
        Self {
            patch: 8,
            window: 4,
            channels: 8,
            hidden: 16,
        }
    }
}

impl ToyDims {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.window == 0 || self.channels == 0 || self.hidden == 0 {
            return Err(Error::Config(format!("toy dimensions must be positive: {self:?}")));
        }
        if self.patch % self.window != 0 {
            return Err(Error::Config(format!(
                "window {} must divide patch {}",
                self.window, self.patch
            )));
        }
        Ok(())
    }

    fn pixels(&self) -> usize {
        self.patch * self.patch
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDenoiser {
    pub dims: ToyDims,
    pub embed_x: Vec<f64>,
    pub embed_x_bias: Vec<f64>,
    pub embed_g: Vec<f64>,
    pub embed_g_bias: Vec<f64>,
    pub attn: AttentionParams,
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub head: Vec<f64>,
    pub head_bias: f64,
}

/// Gradients laid out like [`ToyDenoiser`].
pub type ToyGrads = ToyDenoiser;

struct Forward {
    x: Matrix,
    caches: Vec<AttentionCache>,
    h: Matrix,
    z_act: Matrix,
    out: Matrix,
    pred: Vec<f64>,
}

fn uniform(n: usize, scale: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn embed(values: &[f64], w: &[f64], b: &[f64]) -> Matrix {
    Matrix::from_fn(values.len(), w.len(), |t, c| values[t] * w[c] + b[c])
}

impl ToyDenoiser {
    pub fn new(dims: ToyDims, rng: &mut impl Rng) -> Result<Self> {
        dims.validate()?;
        let c = dims.channels;
        let attn = AttentionParams::random(dims.window, c, c, AttentionMode::CrossAttention, rng);
        Ok(Self {
            dims,
            embed_x: uniform(c, 1.0, rng),
            embed_x_bias: uniform(c, 0.1, rng),
            embed_g: uniform(c, 1.0, rng),
            embed_g_bias: uniform(c, 0.1, rng),
            attn,
            w1: Matrix::random(c, dims.hidden, 1.0 / (c as f64).sqrt(), rng),
            b1: vec![0.0; dims.hidden],
            w2: Matrix::random(dims.hidden, c, 1.0 / (dims.hidden as f64).sqrt(), rng),
            b2: vec![0.0; c],
            head: uniform(c, 0.1 / (c as f64).sqrt(), rng),
            head_bias: 0.0,
        })
    }

    /// All-zero parameters; also the gradient accumulator layout.
    pub fn zeros(dims: ToyDims) -> Result<Self> {
        dims.validate()?;
        let c = dims.channels;
        let m = dims.window;
        Ok(Self {
            dims,
            embed_x: vec![0.0; c],
            embed_x_bias: vec![0.0; c],
            embed_g: vec![0.0; c],
            embed_g_bias: vec![0.0; c],
            attn: AttentionParams {
                window: m,
                channels: c,
                dim: c,
                p_q: Matrix::zeros(c, c),
                p_k: Matrix::zeros(c, c),
                p_v: Matrix::zeros(c, c),
                bias_table: vec![0.0; (2 * m - 1) * (2 * m - 1)],
                mode: AttentionMode::CrossAttention,
            },
            w1: Matrix::zeros(c, dims.hidden),
            b1: vec![0.0; dims.hidden],
            w2: Matrix::zeros(dims.hidden, c),
            b2: vec![0.0; c],
            head: vec![0.0; c],
            head_bias: 0.0,
        })
    }

    /// Named parameter groups in flattening order.
    pub fn segments(&self) -> Vec<(&'static str, usize)> {
        let c = self.dims.channels;
        let h = self.dims.hidden;
        vec![
            ("embed_x", c),
            ("embed_x_bias", c),
            ("embed_g", c),
            ("embed_g_bias", c),
            ("attn.p_q", c * c),
            ("attn.p_k", c * c),
            ("attn.p_v", c * c),
            ("attn.bias_table", self.attn.bias_table.len()),
            ("mlp.w1", c * h),
            ("mlp.b1", h),
            ("mlp.w2", h * c),
            ("mlp.b2", c),
            ("head", c),
            ("head_bias", 1),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.segments().iter().map(|s| s.1).sum()
    }

    /// `"group[index]"` for flat parameter `i`.
    pub fn param_label(&self, mut i: usize) -> String {
        for (name, len) in self.segments() {
            if i < len {
                return format!("{name}[{i}]");
            }
            i -= len;
        }
        format!("#{i}")
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        v.extend_from_slice(&self.embed_x);
        v.extend_from_slice(&self.embed_x_bias);
        v.extend_from_slice(&self.embed_g);
        v.extend_from_slice(&self.embed_g_bias);
        v.extend_from_slice(self.attn.p_q.data());
        v.extend_from_slice(self.attn.p_k.data());
        v.extend_from_slice(self.attn.p_v.data());
        v.extend_from_slice(&self.attn.bias_table);
        v.extend_from_slice(self.w1.data());
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(self.w2.data());
        v.extend_from_slice(&self.b2);
        v.extend_from_slice(&self.head);
        v.push(self.head_bias);
        v
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Dimension(format!(
                "model has {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut rest = flat;
        let mut take = |dst: &mut [f64]| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        take(&mut self.embed_x);
        take(&mut self.embed_x_bias);
        take(&mut self.embed_g);
        take(&mut self.embed_g_bias);
        take(self.attn.p_q.data_mut());
        take(self.attn.p_k.data_mut());
        take(self.attn.p_v.data_mut());
        take(&mut self.attn.bias_table);
        take(self.w1.data_mut());
        take(&mut self.b1);
        take(self.w2.data_mut());
        take(&mut self.b2);
        take(&mut self.head);
        let mut hb = [0.0];
        take(&mut hb);
        self.head_bias = hb[0];
        Ok(())
    }

    fn check_sample(&self, s: &TrainSample) -> Result<()> {
        let n = self.dims.pixels();
        if s.ldct.len() != n || s.ncct.len() != n || s.ndct.len() != n {
            return Err(Error::Dimension(format!(
                "sample sizes {}/{}/{} do not match a {}x{} patch",
                s.ldct.len(),
                s.ndct.len(),
                s.ncct.len(),
                self.dims.patch,
                self.dims.patch
            )));
        }
        Ok(())
    }

    fn windows(&self, m: &Matrix) -> Result<WindowFeatures> {
        let p = self.dims.patch;
        window_partition(&FeatureMap::new(p, p, m.cols(), m.data().to_vec())?, self.dims.window)
    }

    fn unwindow(&self, w: Vec<Matrix>) -> Result<Matrix> {
        let p = self.dims.patch;
        let f = window_reverse(&WindowFeatures { window: self.dims.window, windows: w }, p, p)?;
        Ok(Matrix::new(p * p, f.channels, f.data))
    }

    fn forward_full(&self, ldct: &[f64], ncct: &[f64]) -> Result<Forward> {
        let x = embed(ldct, &self.embed_x, &self.embed_x_bias);
        let g = embed(ncct, &self.embed_g, &self.embed_g_bias);
        let xw = self.windows(&x)?;
        let gw = self.windows(&g)?;
        let mut outs = Vec::with_capacity(xw.windows.len());
        let mut caches = Vec::with_capacity(xw.windows.len());
        for (xi, gi) in xw.windows.iter().zip(&gw.windows) {
            let (o, cache) = window_attention(&self.attn, xi, Some(gi))?;
            outs.push(o);
            caches.push(cache);
        }
        let mut h = self.unwindow(outs)?;
        h.add_assign(&x);

        let mut z_act = h.matmul(&self.w1);
        for t in 0..z_act.rows() {
            for (v, b) in z_act.row_mut(t).iter_mut().zip(&self.b1) {
                *v = (*v + b).tanh();
            }
        }
        let mut out = z_act.matmul(&self.w2);
        for t in 0..out.rows() {
            for (v, b) in out.row_mut(t).iter_mut().zip(&self.b2) {
                *v += b;
            }
        }
        out.add_assign(&h);
        let pred = (0..out.rows())
            .map(|t| ldct[t] + out.row(t).iter().zip(&self.head).map(|(a, w)| a * w).sum::<f64>() + self.head_bias)
            .collect();
        Ok(Forward { x, caches, h, z_act, out, pred })
    }

    /// Denoised patch for normalized LDCT and NCCT inputs.
    pub fn predict(&self, ldct: &[f64], ncct: &[f64]) -> Result<Vec<f64>> {
        let n = self.dims.pixels();
        if ldct.len() != n || ncct.len() != n {
            return Err(Error::Dimension(format!("inputs must have {n} pixels")));
        }
        Ok(self.forward_full(ldct, ncct)?.pred)
    }

    /// Charbonnier loss of one sample and, when `grads` is given, accumulates
    /// `scale * dL/dθ` into it.
    pub fn sample_loss(&self, s: &TrainSample, eps: f64, grads: Option<(&mut ToyGrads, f64)>) -> Result<f64> {
        self.check_sample(s)?;
        let f = self.forward_full(&s.ldct, &s.ncct)?;
        let loss = charbonnier(&f.pred, &s.ndct, eps)?;
        if let Some((g, scale)) = grads {
            let dpred: Vec<f64> = charbonnier_grad(&f.pred, &s.ndct, eps).into_iter().map(|v| v * scale).collect();
            self.backward(s, &f, &dpred, g)?;
        }
        Ok(loss)
    }

    fn backward(&self, s: &TrainSample, f: &Forward, dpred: &[f64], g: &mut ToyGrads) -> Result<()> {
        let c = self.dims.channels;
        let n = dpred.len();
        // head
        let mut d_out = Matrix::zeros(n, c);
        for t in 0..n {
            g.head_bias += dpred[t];
            for k in 0..c {
                g.head[k] += f.out.get(t, k) * dpred[t];
                d_out.set(t, k, self.head[k] * dpred[t]);
            }
        }
        // MLP residual
        for t in 0..n {
            for (b, v) in g.b2.iter_mut().zip(d_out.row(t)) {
                *b += v;
            }
        }
        g.w2.add_assign(&f.z_act.t_matmul(&d_out));
        let mut d_pre = d_out.matmul_t(&self.w2);
        for (dp, z) in d_pre.data_mut().iter_mut().zip(f.z_act.data()) {
            *dp *= 1.0 - z * z;
        }
        for t in 0..n {
            for (b, v) in g.b1.iter_mut().zip(d_pre.row(t)) {
                *b += v;
            }
        }
        g.w1.add_assign(&f.h.t_matmul(&d_pre));
        let mut d_h = d_out;
        d_h.add_assign(&d_pre.matmul_t(&self.w1));

        // attention residual
        let dw = self.windows(&d_h)?;
        let mut dx_w = Vec::with_capacity(dw.windows.len());
        let mut dg_w = Vec::with_capacity(dw.windows.len());
        for (cache, go) in f.caches.iter().zip(&dw.windows) {
            let ag = attention_backward(&self.attn, cache, go)?;
            g.attn.p_q.add_assign(&ag.p_q);
            g.attn.p_k.add_assign(&ag.p_k);
            g.attn.p_v.add_assign(&ag.p_v);
            for (a, b) in g.attn.bias_table.iter_mut().zip(&ag.bias_table) {
                *a += b;
            }
            dx_w.push(ag.x);
            dg_w.push(ag.y.expect("cross-attention guidance gradient"));
        }
        let mut d_x = self.unwindow(dx_w)?;
        d_x.add_assign(&d_h);
        let d_g = self.unwindow(dg_w)?;
        debug_assert_eq!(f.x.shape(), d_x.shape());

        for t in 0..n {
            for k in 0..c {
                g.embed_x[k] += s.ldct[t] * d_x.get(t, k);
                g.embed_x_bias[k] += d_x.get(t, k);
                g.embed_g[k] += s.ncct[t] * d_g.get(t, k);
                g.embed_g_bias[k] += d_g.get(t, k);
            }
        }
        Ok(())
    }

    /// Mean loss over `batch` and its gradient. Samples are accumulated in the given order.
    pub fn batch_loss_and_grad(&self, batch: &[&TrainSample], eps: f64) -> Result<(f64, ToyGrads)> {
        if batch.is_empty() {
            return Err(Error::EmptyDataset("batch has no samples".into()));
        }
        let mut grads = Self::zeros(self.dims)?;
        let scale = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for s in batch {
            total += self.sample_loss(s, eps, Some((&mut grads, scale)))?;
        }
        Ok((total * scale, grads))
    }

    pub fn batch_loss(&self, batch: &[&TrainSample], eps: f64) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyDataset("batch has no samples".into()));
        }
        let mut total = 0.0;
        for s in batch {
            total += self.sample_loss(s, eps, None)?;
        }
        Ok(total / batch.len() as f64)
    }

    /// Versioned header (`PTSPTOY\0`, version, patch, window, channels, hidden, count)
    /// followed by little-endian `f64` parameters in [`Self::flatten`] order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let flat = self.flatten();
        let mut out = Vec::with_capacity(8 + 4 * 5 + 8 + flat.len() * 8);
        out.extend_from_slice(MODEL_MAGIC);
        for v in [MODEL_VERSION, self.dims.patch as u32, self.dims.window as u32, self.dims.channels as u32, self.dims.hidden as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(flat.len() as u64).to_le_bytes());
        for v in flat {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Parse(format!("model file: {m}"));
        if bytes.len() < 36 || &bytes[..8] != MODEL_MAGIC {
            return Err(bad("bad magic"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        if u32_at(8) as u32 != MODEL_VERSION {
            return Err(Error::Unsupported(format!("model version {}", u32_at(8))));
        }
        let dims = ToyDims {
            patch: u32_at(12),
            window: u32_at(16),
            channels: u32_at(20),
            hidden: u32_at(24),
        };
        dims.validate()?;
        let count = u64::from_le_bytes(bytes[28..36].try_into().unwrap()) as usize;
        let body = &bytes[36..];
        if body.len() != count * 8 {
            return Err(bad("truncated parameter block"));
        }
        let flat: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let mut model = Self::zeros(dims)?;
        model.unflatten(&flat)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Charbonnier eps for end-to-end gradient checks. Near-zero residuals give the loss a
/// curvature of order `1 / eps`, which at `1e-3` puts the central-difference truncation
/// error itself around a `1e-5` tolerance.
pub const GRADCHECK_EPS: f64 = 0.1;

/// The model on a fixed batch, exposed to the finite-difference checker.
pub struct ToyObjective {
    pub model: ToyDenoiser,
    pub samples: Vec<TrainSample>,
    pub eps: f64,
    flat: Vec<f64>,
}

impl ToyObjective {
    pub fn new(model: ToyDenoiser, samples: Vec<TrainSample>, eps: f64) -> Self {
        let flat = model.flatten();
        Self { model, samples, eps, flat }
    }
}

impl Differentiable for ToyObjective {
    fn param_count(&self) -> usize {
        self.flat.len()
    }

    fn param(&self, i: usize) -> f64 {
        self.flat[i]
    }

    fn set_param(&mut self, i: usize, value: f64) {
        self.flat[i] = value;
        self.model.unflatten(&self.flat).expect("same layout");
    }

    fn loss(&self) -> f64 {
        let batch: Vec<&TrainSample> = self.samples.iter().collect();
        self.model.batch_loss(&batch, self.eps).expect("valid batch")
    }

    fn gradient(&self) -> Vec<f64> {
        let batch: Vec<&TrainSample> = self.samples.iter().collect();
        self.model.batch_loss_and_grad(&batch, self.eps).expect("valid batch").1.flatten()
    }

    fn param_label(&self, i: usize) -> String {
        self.model.param_label(i)
    }
}
