use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{attention_backward, window_attention, AttentionMode, AttentionParams, Matrix};

/// Denominator floor for relative errors, so near-zero gradients are compared on an
/// absolute scale of this size.
pub const REL_ERR_FLOOR: f64 = 1e-4;

/// A scalar objective over a flat parameter vector with an analytic gradient.
pub trait Differentiable {
    fn param_count(&self) -> usize;
    fn param(&self, i: usize) -> f64;
    fn set_param(&mut self, i: usize, value: f64);
    fn loss(&self) -> f64;
    fn gradient(&self) -> Vec<f64>;

    fn param_label(&self, i: usize) -> String {
        format!("#{i}")
    }
}

/// `|a - n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradFailure {
    pub label: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_param: String,
    pub tol: f64,
    /// Every entry whose relative error exceeds `tol`.
    pub failures: Vec<GradFailure>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "checked {} parameters: max_rel_err {:.3e} at {} (tol {:.1e}) -> {}",
            self.checked,
            self.max_rel_err,
            self.worst_param,
            self.tol,
            if self.passed() { "PASS" } else { "FAIL" }
        )?;
        for x in &self.failures {
            writeln!(
                f,
                "  {}: analytic {:.9e} numeric {:.9e} rel_err {:.3e}",
                x.label, x.analytic, x.numeric, x.rel_err
            )?;
        }
        Ok(())
    }
}

/// Central differences `(L(p + h) - L(p - h)) / 2h` for every parameter, compared with
/// the analytic gradient. Parameters are restored afterwards.
pub fn grad_check(block: &mut dyn Differentiable, h: f64, tol: f64) -> GradCheckReport {
    let analytic = block.gradient();
    let mut report = GradCheckReport {
        checked: block.param_count(),
        max_rel_err: 0.0,
        worst_param: String::from("-"),
        tol,
        failures: Vec::new(),
    };
    for (i, &a) in analytic.iter().enumerate().take(block.param_count()) {
        let orig = block.param(i);
        block.set_param(i, orig + h);
        let plus = block.loss();
        block.set_param(i, orig - h);
        let minus = block.loss();
        block.set_param(i, orig);
        let numeric = (plus - minus) / (2.0 * h);
        let rel = relative_error(a, numeric);
        if i == 0 || rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_param = block.param_label(i);
        }
        if !(rel <= tol) {
            report.failures.push(GradFailure {
                label: block.param_label(i),
                analytic: a,
                numeric,
                rel_err: rel,
            });
        }
    }
    report
}

/// One attention window with a fixed linear loss head `L = sum(out ∘ head)`.
/// Parameters, in order: `x`, `y` (cross-attention only), `p_q`, `p_k`, `p_v`, bias table.
#[derive(Debug, Clone)]
pub struct AttentionBlock {
    pub params: AttentionParams,
    pub x: Matrix,
    pub y: Option<Matrix>,
    pub head: Matrix,
}

impl AttentionBlock {
    pub fn random(window: usize, channels: usize, dim: usize, mode: AttentionMode, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = AttentionParams::random(window, channels, dim, mode, &mut rng);
        // larger biases than the default init so the bias path is well exercised
        let params = AttentionParams {
            bias_table: params.bias_table.iter().map(|b| b * 5.0).collect(),
            ..params
        };
        let n = window * window;
        let x = Matrix::random(n, channels, 1.0, &mut rng);
        let y = (mode == AttentionMode::CrossAttention).then(|| Matrix::random(n, channels, 1.0, &mut rng));
        let head = Matrix::random(n, dim, 1.0, &mut rng);
        Self { params, x, y, head }
    }

    fn segments(&self) -> Vec<(&'static str, usize, usize)> {
        let c = self.params.channels;
        let n = self.params.tokens();
        let mut segs = vec![("x", n * c, c)];
        if self.y.is_some() {
            segs.push(("y", n * c, c));
        }
        let d = self.params.dim;
        segs.extend([("p_q", c * d, d), ("p_k", c * d, d), ("p_v", c * d, d)]);
        segs.push(("bias_table", self.params.bias_table.len(), 2 * self.params.window - 1));
        segs
    }

    fn slot(&mut self, name: &str) -> &mut [f64] {
        match name {
            "x" => self.x.data_mut(),
            "y" => self.y.as_mut().expect("cross-attention guidance").data_mut(),
            "p_q" => self.params.p_q.data_mut(),
            "p_k" => self.params.p_k.data_mut(),
            "p_v" => self.params.p_v.data_mut(),
            _ => &mut self.params.bias_table,
        }
    }

    fn locate(&self, mut i: usize) -> (&'static str, usize, usize) {
        for (name, len, cols) in self.segments() {
            if i < len {
                return (name, i, cols);
            }
            i -= len;
        }
        panic!("parameter index out of range");
    }
}

impl Differentiable for AttentionBlock {
    fn param_count(&self) -> usize {
        self.segments().iter().map(|s| s.1).sum()
    }

    fn param(&self, i: usize) -> f64 {
        let (name, k, _) = self.locate(i);
        match name {
            "x" => self.x.data()[k],
            "y" => self.y.as_ref().expect("cross-attention guidance").data()[k],
            "p_q" => self.params.p_q.data()[k],
            "p_k" => self.params.p_k.data()[k],
            "p_v" => self.params.p_v.data()[k],
            _ => self.params.bias_table[k],
        }
    }

    fn set_param(&mut self, i: usize, value: f64) {
        let (name, k, _) = self.locate(i);
        self.slot(name)[k] = value;
    }

    fn loss(&self) -> f64 {
        let (out, _) = window_attention(&self.params, &self.x, self.y.as_ref()).expect("valid block");
        out.data().iter().zip(self.head.data()).map(|(o, h)| o * h).sum()
    }

    fn gradient(&self) -> Vec<f64> {
        let (_, cache) = window_attention(&self.params, &self.x, self.y.as_ref()).expect("valid block");
        let g = attention_backward(&self.params, &cache, &self.head).expect("valid block");
        let mut flat = g.x.data().to_vec();
        if let Some(gy) = &g.y {
            flat.extend_from_slice(gy.data());
        }
        flat.extend_from_slice(g.p_q.data());
        flat.extend_from_slice(g.p_k.data());
        flat.extend_from_slice(g.p_v.data());
        flat.extend_from_slice(&g.bias_table);
        flat
    }

    fn param_label(&self, i: usize) -> String {
        let (name, k, cols) = self.locate(i);
        format!("{name}[{},{}]", k / cols, k % cols)
    }
}

/// Attention bypassed: `L = sum((X Pv) ∘ head)`, parameters `x` then `p_v`.
#[derive(Debug, Clone)]
pub struct LinearBlock {
    pub x: Matrix,
    pub p_v: Matrix,
    pub head: Matrix,
}

impl LinearBlock {
    pub fn random(tokens: usize, channels: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            x: Matrix::random(tokens, channels, 1.0, &mut rng),
            p_v: Matrix::random(channels, dim, 1.0, &mut rng),
            head: Matrix::random(tokens, dim, 1.0, &mut rng),
        }
    }
}

impl Differentiable for LinearBlock {
    fn param_count(&self) -> usize {
        self.x.data().len() + self.p_v.data().len()
    }

    fn param(&self, i: usize) -> f64 {
        let nx = self.x.data().len();
        if i < nx { self.x.data()[i] } else { self.p_v.data()[i - nx] }
    }

    fn set_param(&mut self, i: usize, value: f64) {
        let nx = self.x.data().len();
        if i < nx {
            self.x.data_mut()[i] = value;
        } else {
            self.p_v.data_mut()[i - nx] = value;
        }
    }

    fn loss(&self) -> f64 {
        let out = self.x.matmul(&self.p_v);
        out.data().iter().zip(self.head.data()).map(|(o, h)| o * h).sum()
    }

    fn gradient(&self) -> Vec<f64> {
        let mut flat = self.head.matmul_t(&self.p_v).data().to_vec();
        flat.extend_from_slice(self.x.t_matmul(&self.head).data());
        flat
    }
}

/// Wraps a block and scales its analytic gradient, to confirm the checker notices.
pub struct ScaledGradient<B> {
    pub inner: B,
    pub factor: f64,
}

impl<B: Differentiable> Differentiable for ScaledGradient<B> {
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    fn param(&self, i: usize) -> f64 {
        self.inner.param(i)
    }

    fn set_param(&mut self, i: usize, value: f64) {
        self.inner.set_param(i, value)
    }

    fn loss(&self) -> f64 {
        self.inner.loss()
    }

    fn gradient(&self) -> Vec<f64> {
        self.inner.gradient().into_iter().map(|g| g * self.factor).collect()
    }

    fn param_label(&self, i: usize) -> String {
        self.inner.param_label(i)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_block_is_exact() {
        let mut b = LinearBlock::random(4, 3, 4, 1);
        let r = grad_check(&mut b, 1e-5, 1e-9);
        assert!(r.max_rel_err < 1e-9, "{r}");
    }

    #[test]
    fn cross_attention_block_passes() {
        let mut b = AttentionBlock::random(2, 3, 4, AttentionMode::CrossAttention, 7);
        let r = grad_check(&mut b, 1e-5, 1e-5);
        assert!(r.passed(), "{r}");
        assert_eq!(r.checked, 12 + 12 + 36 + 9);
    }

    #[test]
    fn corrupted_gradient_is_flagged() {
        let mut b = ScaledGradient {
            inner: AttentionBlock::random(2, 3, 4, AttentionMode::CrossAttention, 7),
            factor: 1.1,
        };
        let r = grad_check(&mut b, 1e-5, 1e-5);
        assert!(!r.passed());
        assert!(r.max_rel_err > 0.05);
    }

    #[test]
    fn labels_and_restoration() {
        let mut b = AttentionBlock::random(2, 3, 4, AttentionMode::SelfAttention, 3);
        assert_eq!(b.param_label(0), "x[0,0]");
        assert_eq!(b.param_label(12), "p_q[0,0]");
        assert_eq!(b.param_label(12 + 36), "bias_table[0,0]");
        let before = b.loss();
        grad_check(&mut b, 1e-5, 1e-5);
        assert_eq!(b.loss(), before);
    }
}
