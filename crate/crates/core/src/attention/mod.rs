//! Window self-attention and guided cross-attention with a relative position bias.
//!
//! Within an `M x M` window the queries and values come from the input feature `X`;
//! the keys come from `X` (self-attention) or from the guidance feature `Y`
//! (cross-attention):
//!
//! ```text
//! Q = X Pq,  K = Y Pk,  V = X Pv
//! out = softmax(Q K^T / sqrt(d) + B) V
//! ```
//!
//! `B[i][j]` reads a `(2M-1)^2` table at the relative offset `pos(j) - pos(i)`.
//! One head, `f64` throughout, with an exact backward pass.

mod gradcheck;
mod matrix;

pub use gradcheck::{grad_check, relative_error, AttentionBlock, Differentiable, GradCheckReport, GradFailure, LinearBlock, ScaledGradient, REL_ERR_FLOOR};
pub use matrix::Matrix;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// `H x W x C` feature map, stored as `data[(r * W + c) * C + ch]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Dimension(format!(
                "{height}x{width}x{channels} feature map needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn random(height: usize, width: usize, channels: usize, rng: &mut impl Rng) -> Self {
        let data = (0..height * width * channels).map(|_| rng.random_range(-1.0..1.0)).collect();
        Self { height, width, channels, data }
    }
}

/// Non-overlapping windows in row-major window order, each an `M^2 x C` matrix whose
/// rows are the window's pixels in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowFeatures {
    pub window: usize,
    pub windows: Vec<Matrix>,
}

fn check_divisible(height: usize, width: usize, m: usize) -> Result<()> {
    if m == 0 || height % m != 0 || width % m != 0 {
        return Err(Error::Dimension(format!(
            "window size {m} must divide feature dims H={height}, W={width}"
        )));
    }
    Ok(())
}

pub fn window_partition(f: &FeatureMap, m: usize) -> Result<WindowFeatures> {
    check_divisible(f.height, f.width, m)?;
    let c = f.channels;
    let mut windows = Vec::with_capacity(f.height * f.width / (m * m));
    for wr in 0..f.height / m {
        for wc in 0..f.width / m {
            let mut win = Matrix::zeros(m * m, c);
            for i in 0..m {
                for j in 0..m {
                    let src = ((wr * m + i) * f.width + wc * m + j) * c;
                    win.row_mut(i * m + j).copy_from_slice(&f.data[src..src + c]);
                }
            }
            windows.push(win);
        }
    }
    Ok(WindowFeatures { window: m, windows })
}

pub fn window_reverse(w: &WindowFeatures, height: usize, width: usize) -> Result<FeatureMap> {
    let m = w.window;
    check_divisible(height, width, m)?;
    let count = height * width / (m * m);
    if w.windows.len() != count {
        return Err(Error::Dimension(format!(
            "{} windows cannot tile {height}x{width} with window {m}",
            w.windows.len()
        )));
    }
    let c = w.windows.first().map_or(0, Matrix::cols);
    if w.windows.iter().any(|x| x.shape() != (m * m, c)) {
        return Err(Error::Dimension("windows have inconsistent shapes".into()));
    }
    let mut data = vec![0.0; height * width * c];
    let per_row = width / m;
    for (idx, win) in w.windows.iter().enumerate() {
        let (wr, wc) = (idx / per_row, idx % per_row);
        for i in 0..m {
            for j in 0..m {
                let dst = ((wr * m + i) * width + wc * m + j) * c;
                data[dst..dst + c].copy_from_slice(win.row(i * m + j));
            }
        }
    }
    FeatureMap::new(height, width, c, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionMode {
    /// Keys from the input feature.
    SelfAttention,
    /// Keys from the guidance feature.
    CrossAttention,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    /// Window side `M`.
    pub window: usize,
    pub channels: usize,
    /// Projection dimension `d`.
    pub dim: usize,
    pub p_q: Matrix,
    pub p_k: Matrix,
    pub p_v: Matrix,
    /// `(2M-1)^2` relative position biases, indexed `(dy + M - 1) * (2M - 1) + (dx + M - 1)`.
    pub bias_table: Vec<f64>,
    pub mode: AttentionMode,
}

impl AttentionParams {
    /// Projections uniform in `±1/sqrt(C)`, biases uniform in `±0.1`.
    pub fn random(window: usize, channels: usize, dim: usize, mode: AttentionMode, rng: &mut impl Rng) -> Self {
        let s = 1.0 / (channels as f64).sqrt();
        let t = (2 * window - 1).pow(2);
        Self {
            window,
            channels,
            dim,
            p_q: Matrix::random(channels, dim, s, rng),
            p_k: Matrix::random(channels, dim, s, rng),
            p_v: Matrix::random(channels, dim, s, rng),
            bias_table: (0..t).map(|_| rng.random_range(-0.1..0.1)).collect(),
            mode,
        }
    }

    pub fn tokens(&self) -> usize {
        self.window * self.window
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.dim == 0 || self.channels == 0 {
            return Err(Error::Config("window, channels and dim must be positive".into()));
        }
        for (name, p) in [("p_q", &self.p_q), ("p_k", &self.p_k), ("p_v", &self.p_v)] {
            if p.shape() != (self.channels, self.dim) {
                return Err(Error::Dimension(format!(
                    "{name} is {}x{}, expected {}x{}",
                    p.rows(),
                    p.cols(),
                    self.channels,
                    self.dim
                )));
            }
        }
        let t = (2 * self.window - 1).pow(2);
        if self.bias_table.len() != t {
            return Err(Error::Dimension(format!(
                "bias table has {} entries, window {} needs {t}",
                self.bias_table.len(),
                self.window
            )));
        }
        Ok(())
    }
}

/// Table index for every `(i, j)` token pair, flattened row-major over `M^2 x M^2`.
pub fn relative_position_index(m: usize) -> Vec<usize> {
    let n = m * m;
    let span = 2 * m - 1;
    let mut idx = Vec::with_capacity(n * n);
    for i in 0..n {
        let (yi, xi) = ((i / m) as isize, (i % m) as isize);
        for j in 0..n {
            let (yj, xj) = ((j / m) as isize, (j % m) as isize);
            let dy = (yj - yi + m as isize - 1) as usize;
            let dx = (xj - xi + m as isize - 1) as usize;
            idx.push(dy * span + dx);
        }
    }
    idx
}

/// Expands the bias table into the `M^2 x M^2` logit bias.
pub fn build_bias(params: &AttentionParams) -> Result<Matrix> {
    let m = params.window;
    let t = (2 * m - 1).pow(2);
    if params.bias_table.len() != t {
        return Err(Error::Dimension(format!(
            "bias table has {} entries, window {m} needs {t}",
            params.bias_table.len()
        )));
    }
    let n = m * m;
    let idx = relative_position_index(m);
    Ok(Matrix::new(n, n, idx.iter().map(|&k| params.bias_table[k]).collect()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Qkv {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
}

/// Projects a window. Self-attention takes its keys from `x` and ignores `y`;
/// cross-attention requires `y`.
pub fn project_qkv(x: &Matrix, y: Option<&Matrix>, params: &AttentionParams) -> Result<Qkv> {
    params.validate()?;
    let key_src = key_source(x, y, params)?;
    Ok(Qkv {
        q: x.matmul(&params.p_q),
        k: key_src.matmul(&params.p_k),
        v: x.matmul(&params.p_v),
    })
}

fn key_source<'a>(x: &'a Matrix, y: Option<&'a Matrix>, params: &AttentionParams) -> Result<&'a Matrix> {
    let shape = (params.tokens(), params.channels);
    if x.shape() != shape {
        return Err(Error::Dimension(format!(
            "window input is {}x{}, expected {}x{}",
            x.rows(),
            x.cols(),
            shape.0,
            shape.1
        )));
    }
    match params.mode {
        AttentionMode::SelfAttention => Ok(x),
        AttentionMode::CrossAttention => {
            let y = y.ok_or_else(|| Error::Config("cross-attention needs a guidance window".into()))?;
            if y.shape() != shape {
                return Err(Error::Dimension(format!(
                    "guidance window is {}x{}, expected {}x{}",
                    y.rows(),
                    y.cols(),
                    shape.0,
                    shape.1
                )));
            }
            Ok(y)
        }
    }
}

/// `softmax(Q K^T / sqrt(d) + B) V` with per-row max subtraction. Returns the output and
/// the attention matrix.
pub fn attention_forward(q: &Matrix, k: &Matrix, v: &Matrix, b: &Matrix) -> Result<(Matrix, Matrix)> {
    let n = q.rows();
    let d = q.cols();
    if k.shape() != (n, d) || v.rows() != n || b.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "attention shapes: q {:?}, k {:?}, v {:?}, b {:?}",
            q.shape(),
            k.shape(),
            v.shape(),
            b.shape()
        )));
    }
    if !(q.is_finite() && k.is_finite() && v.is_finite() && b.is_finite()) {
        return Err(Error::Numeric("non-finite attention input".into()));
    }
    let mut logits = q.matmul_t(k);
    logits.scale(1.0 / (d as f64).sqrt());
    logits.add_assign(b);
    softmax_rows(&mut logits);
    let out = logits.matmul(v);
    Ok((out, logits))
}

pub(crate) fn softmax_rows(m: &mut Matrix) {
    for i in 0..m.rows() {
        let row = m.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Intermediates of one window forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionCache {
    pub x: Matrix,
    /// Key source: the guidance window in cross-attention, a copy of `x` otherwise.
    pub y: Matrix,
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    /// Row-stochastic attention matrix.
    pub attn: Matrix,
}

/// Projection, bias and attention for one window.
pub fn window_attention(params: &AttentionParams, x: &Matrix, y: Option<&Matrix>) -> Result<(Matrix, AttentionCache)> {
    let Qkv { q, k, v } = project_qkv(x, y, params)?;
    let bias = build_bias(params)?;
    let (out, attn) = attention_forward(&q, &k, &v, &bias)?;
    let y = key_source(x, y, params)?.clone();
    Ok((out, AttentionCache { x: x.clone(), y, q, k, v, attn }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrads {
    /// Includes the key path in self-attention mode.
    pub x: Matrix,
    /// Guidance gradient, cross-attention only.
    pub y: Option<Matrix>,
    pub p_q: Matrix,
    pub p_k: Matrix,
    pub p_v: Matrix,
    pub bias_table: Vec<f64>,
}

/// Exact gradients of a window forward pass given `dL/d out`.
pub fn attention_backward(params: &AttentionParams, cache: &AttentionCache, grad_out: &Matrix) -> Result<AttentionGrads> {
    let n = params.tokens();
    if grad_out.shape() != (n, params.dim) || cache.attn.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "grad_out is {:?}, cache attention {:?}, expected {n}x{} and {n}x{n}",
            grad_out.shape(),
            cache.attn.shape(),
            params.dim
        )));
    }
    let a = &cache.attn;
    let grad_v = a.t_matmul(grad_out);
    let grad_a = grad_out.matmul_t(&cache.v);

    // softmax Jacobian, row by row: dS = A ∘ (dA - rowsum(A ∘ dA))
    let mut grad_s = Matrix::zeros(n, n);
    for i in 0..n {
        let dot: f64 = a.row(i).iter().zip(grad_a.row(i)).map(|(p, g)| p * g).sum();
        for j in 0..n {
            grad_s.set(i, j, a.get(i, j) * (grad_a.get(i, j) - dot));
        }
    }

    let mut bias_table = vec![0.0; params.bias_table.len()];
    for (g, &k) in grad_s.data().iter().zip(&relative_position_index(params.window)) {
        bias_table[k] += g;
    }

    let inv = 1.0 / (params.dim as f64).sqrt();
    let mut grad_q = grad_s.matmul(&cache.k);
    grad_q.scale(inv);
    let mut grad_k = grad_s.t_matmul(&cache.q);
    grad_k.scale(inv);

    let p_q = cache.x.t_matmul(&grad_q);
    let p_k = cache.y.t_matmul(&grad_k);
    let p_v = cache.x.t_matmul(&grad_v);

    let mut grad_x = grad_q.matmul_t(&params.p_q);
    grad_x.add_assign(&grad_v.matmul_t(&params.p_v));
    let grad_y = grad_k.matmul_t(&params.p_k);
    let y = match params.mode {
        AttentionMode::CrossAttention => Some(grad_y),
        AttentionMode::SelfAttention => {
            grad_x.add_assign(&grad_y);
            None
        }
    };
    Ok(AttentionGrads { x: grad_x, y, p_q, p_k, p_v, bias_table })
}

/// Applies window attention to every window of `x` (guided by `y` in cross-attention)
/// and stitches the outputs back into a `H x W x d` map. Windows run in parallel.
pub fn attend_feature_map(params: &AttentionParams, x: &FeatureMap, y: Option<&FeatureMap>) -> Result<FeatureMap> {
    let xw = window_partition(x, params.window)?;
    let yw = match y {
        Some(y) if params.mode == AttentionMode::CrossAttention => {
            if (y.height, y.width) != (x.height, x.width) {
                return Err(Error::Dimension("guidance map must match the input map".into()));
            }
            Some(window_partition(y, params.window)?)
        }
        _ => None,
    };
    let outs = xw
        .windows
        .par_iter()
        .enumerate()
        .map(|(i, w)| window_attention(params, w, yw.as_ref().map(|g| &g.windows[i])).map(|(o, _)| o))
        .collect::<Result<Vec<_>>>()?;
    window_reverse(&WindowFeatures { window: params.window, windows: outs }, x.height, x.width)
}
