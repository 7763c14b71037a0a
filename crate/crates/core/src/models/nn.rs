//! Dense layers with hand-written backward passes.
//!
//! Activations are row-major `[rows, cols]` slices. Every `forward` returns
//! the output together with whatever its `backward` needs; `backward`
//! accumulates parameter gradients and returns the input gradient.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

/// A parameter block with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
            grad: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        let mut t = Tensor::zeros(rows, cols);
        t.data.fill(v);
        t
    }

    /// Glorot-uniform initialisation.
    pub fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let dist = Uniform::new_inclusive(-a, a).expect("finite bound");
        let mut t = Tensor::zeros(rows, cols);
        t.data.iter_mut().for_each(|x| *x = dist.sample(rng));
        t
    }

    pub fn normal(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Self {
        let dist = Normal::new(0.0, std).expect("finite std");
        let mut t = Tensor::zeros(rows, cols);
        t.data.iter_mut().for_each(|x| *x = dist.sample(rng));
        t
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Visits parameter tensors in a fixed order.
pub trait Params {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor));

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, t| t.zero_grad());
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.len());
        n
    }

    /// Rounds every parameter to the nearest `f32`.
    fn round_to_f32(&mut self) {
        self.visit_mut("", &mut |_, t| {
            t.data.iter_mut().for_each(|x| *x = *x as f32 as f64)
        });
    }
}

/// `c = beta * c + op(a) * op(b)` for row-major operands. `a` is `[m, k]`
/// (or `[k, m]` when `ta`), `b` is `[k, n]` (or `[n, k]` when `tb`).
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    ta: bool,
    tb: bool,
    m: usize,
    n: usize,
    k: usize,
    a: &[f64],
    b: &[f64],
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if ta { (1, m) } else { (k, 1) };
    let (rsb, csb) = if tb { (1, k) } else { (n, 1) };
    // SAFETY: the asserts above bound every index touched by the given
    // strides, and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Strided block product used by attention heads.
#[allow(clippy::too_many_arguments)]
fn gemm_strided(
    m: usize,
    n: usize,
    k: usize,
    alpha: f64,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |r: usize, cs: usize, rows: usize, cols: usize| (rows - 1) * r + (cols.max(1) - 1) * cs;
    if k > 0 {
        assert!(last(rsa, csa, m, k) < a.len() && last(rsb, csb, k, n) < b.len());
    }
    assert!(last(rsc, csc, m, n) < c.len());
    // SAFETY: bounds asserted above; `c` is a distinct mutable borrow.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    pub fn new(inp: usize, out: usize, rng: &mut impl Rng) -> Self {
        Linear {
            w: Tensor::glorot(inp, out, rng),
            b: Tensor::zeros(1, out),
        }
    }

    pub fn zeros(inp: usize, out: usize) -> Self {
        Linear {
            w: Tensor::zeros(inp, out),
            b: Tensor::zeros(1, out),
        }
    }

    pub fn inp(&self) -> usize {
        self.w.rows
    }

    pub fn out(&self) -> usize {
        self.w.cols
    }

    pub fn forward(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let out = self.out();
        let mut y = Vec::with_capacity(rows * out);
        for _ in 0..rows {
            y.extend_from_slice(&self.b.data);
        }
        gemm(false, false, rows, out, self.inp(), x, &self.w.data, 1.0, &mut y);
        y
    }

    pub fn backward(&mut self, x: &[f64], dy: &[f64], rows: usize) -> Vec<f64> {
        let (inp, out) = (self.inp(), self.out());
        gemm(true, false, inp, out, rows, x, dy, 1.0, &mut self.w.grad);
        for r in 0..rows {
            for (g, d) in self.b.grad.iter_mut().zip(&dy[r * out..(r + 1) * out]) {
                *g += d;
            }
        }
        let mut dx = vec![0.0; rows * inp];
        gemm(false, true, rows, inp, out, dy, &self.w.data, 0.0, &mut dx);
        dx
    }
}

impl Params for Linear {
    fn visit(&self, p: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&format!("{p}w"), &self.w);
        f(&format!("{p}b"), &self.b);
    }
    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{p}w"), &mut self.w);
        f(&format!("{p}b"), &mut self.b);
    }
}

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

pub struct LnCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

impl LayerNorm {
    pub fn new(d: usize) -> Self {
        LayerNorm {
            gamma: Tensor::filled(1, d, 1.0),
            beta: Tensor::zeros(1, d),
        }
    }

    pub fn forward(&self, x: &[f64], rows: usize) -> (Vec<f64>, LnCache) {
        let d = self.gamma.cols;
        let mut y = vec![0.0; rows * d];
        let mut xhat = vec![0.0; rows * d];
        let mut rstd = vec![0.0; rows];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + LN_EPS).sqrt();
            rstd[r] = s;
            for i in 0..d {
                let h = (row[i] - mean) * s;
                xhat[r * d + i] = h;
                y[r * d + i] = h * self.gamma.data[i] + self.beta.data[i];
            }
        }
        (y, LnCache { xhat, rstd })
    }

    pub fn backward(&mut self, cache: &LnCache, dy: &[f64]) -> Vec<f64> {
        let d = self.gamma.cols;
        let rows = cache.rstd.len();
        let mut dx = vec![0.0; rows * d];
        let mut dxhat = vec![0.0; d];
        for r in 0..rows {
            let xh = &cache.xhat[r * d..(r + 1) * d];
            let g = &dy[r * d..(r + 1) * d];
            let (mut m1, mut m2) = (0.0, 0.0);
            for i in 0..d {
                self.gamma.grad[i] += g[i] * xh[i];
                self.beta.grad[i] += g[i];
                dxhat[i] = g[i] * self.gamma.data[i];
                m1 += dxhat[i];
                m2 += dxhat[i] * xh[i];
            }
            m1 /= d as f64;
            m2 /= d as f64;
            for i in 0..d {
                dx[r * d + i] = cache.rstd[r] * (dxhat[i] - m1 - xh[i] * m2);
            }
        }
        dx
    }
}

impl Params for LayerNorm {
    fn visit(&self, p: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&format!("{p}gamma"), &self.gamma);
        f(&format!("{p}beta"), &self.beta);
    }
    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{p}gamma"), &mut self.gamma);
        f(&format!("{p}beta"), &mut self.beta);
    }
}

/// Two-layer ReLU feed-forward block.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub l1: Linear,
    pub l2: Linear,
}

pub struct FfCache {
    x: Vec<f64>,
    h: Vec<f64>,
    rows: usize,
}

impl FeedForward {
    pub fn new(d: usize, d_ff: usize, rng: &mut impl Rng) -> Self {
        FeedForward {
            l1: Linear::new(d, d_ff, rng),
            l2: Linear::new(d_ff, d, rng),
        }
    }

    pub fn forward(&self, x: &[f64], rows: usize) -> (Vec<f64>, FfCache) {
        let mut h = self.l1.forward(x, rows);
        h.iter_mut().for_each(|v| *v = v.max(0.0));
        let y = self.l2.forward(&h, rows);
        (
            y,
            FfCache {
                x: x.to_vec(),
                h,
                rows,
            },
        )
    }

    pub fn backward(&mut self, c: &FfCache, dy: &[f64]) -> Vec<f64> {
        let mut dh = self.l2.backward(&c.h, dy, c.rows);
        for (g, h) in dh.iter_mut().zip(&c.h) {
            if *h <= 0.0 {
                *g = 0.0;
            }
        }
        self.l1.backward(&c.x, &dh, c.rows)
    }
}

impl Params for FeedForward {
    fn visit(&self, p: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.l1.visit(&format!("{p}l1."), f);
        self.l2.visit(&format!("{p}l2."), f);
    }
    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.l1.visit_mut(&format!("{p}l1."), f);
        self.l2.visit_mut(&format!("{p}l2."), f);
    }
}

/// Multi-head scaled dot-product attention over `groups` independent
/// sequences: `sq` queries attend to `sk` keys within the same group.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
}

pub struct AttnCache {
    xq: Vec<f64>,
    xkv: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Softmax weights, `[groups, heads, sq, sk]`.
    p: Vec<f64>,
    ctx: Vec<f64>,
    groups: usize,
    sq: usize,
    sk: usize,
}

impl MultiHeadAttention {
    pub fn new(d: usize, heads: usize, rng: &mut impl Rng) -> Self {
        MultiHeadAttention {
            heads,
            wq: Linear::new(d, d, rng),
            wk: Linear::new(d, d, rng),
            wv: Linear::new(d, d, rng),
            wo: Linear::new(d, d, rng),
        }
    }

    fn d(&self) -> usize {
        self.wq.inp()
    }

    /// With `causal`, query `i` sees keys `0..=i` (requires `sq == sk`).
    pub fn forward(
        &self,
        xq: &[f64],
        xkv: &[f64],
        groups: usize,
        sq: usize,
        sk: usize,
        causal: bool,
    ) -> (Vec<f64>, AttnCache) {
        let q = self.wq.forward(xq, groups * sq);
        let (k, v) = self.project_kv(xkv, groups * sk);
        let (p, ctx) = self.attend(&q, &k, &v, groups, sq, sk, causal);
        let y = self.wo.forward(&ctx, groups * sq);
        (
            y,
            AttnCache {
                xq: xq.to_vec(),
                xkv: xkv.to_vec(),
                q,
                k,
                v,
                p,
                ctx,
                groups,
                sq,
                sk,
            },
        )
    }

    pub fn project_kv(&self, xkv: &[f64], rows: usize) -> (Vec<f64>, Vec<f64>) {
        (self.wk.forward(xkv, rows), self.wv.forward(xkv, rows))
    }

    /// Inference with keys and values already projected.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_kv(
        &self,
        xq: &[f64],
        k: &[f64],
        v: &[f64],
        groups: usize,
        sq: usize,
        sk: usize,
        causal: bool,
    ) -> Vec<f64> {
        let q = self.wq.forward(xq, groups * sq);
        let (_, ctx) = self.attend(&q, k, v, groups, sq, sk, causal);
        self.wo.forward(&ctx, groups * sq)
    }

    #[allow(clippy::too_many_arguments)]
    fn attend(
        &self,
        q: &[f64],
        k: &[f64],
        v: &[f64],
        groups: usize,
        sq: usize,
        sk: usize,
        causal: bool,
    ) -> (Vec<f64>, Vec<f64>) {
        debug_assert!(!causal || sq == sk);
        let d = self.d();
        let h = self.heads;
        let dh = d / h;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut p = vec![0.0; groups * h * sq * sk];
        let mut ctx = vec![0.0; groups * sq * d];
        for g in 0..groups {
            for hh in 0..h {
                let pb = &mut p[(g * h + hh) * sq * sk..(g * h + hh + 1) * sq * sk];
                gemm_strided(
                    sq,
                    sk,
                    dh,
                    scale,
                    &q[g * sq * d + hh * dh..],
                    (d, 1),
                    &k[g * sk * d + hh * dh..],
                    (1, d),
                    0.0,
                    pb,
                    (sk, 1),
                );
                for i in 0..sq {
                    let row = &mut pb[i * sk..(i + 1) * sk];
                    let visible = if causal { i + 1 } else { sk };
                    let max = row[..visible].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for x in row[..visible].iter_mut() {
                        *x = (*x - max).exp();
                        sum += *x;
                    }
                    row[..visible].iter_mut().for_each(|x| *x /= sum);
                    row[visible..].fill(0.0);
                }
                gemm_strided(
                    sq,
                    dh,
                    sk,
                    1.0,
                    pb,
                    (sk, 1),
                    &v[g * sk * d + hh * dh..],
                    (d, 1),
                    0.0,
                    &mut ctx[g * sq * d + hh * dh..],
                    (d, 1),
                );
            }
        }
        (p, ctx)
    }

    /// Returns `(dxq, dxkv)`.
    pub fn backward(&mut self, c: &AttnCache, dy: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d = self.d();
        let h = self.heads;
        let dh = d / h;
        let scale = 1.0 / (dh as f64).sqrt();
        let (groups, sq, sk) = (c.groups, c.sq, c.sk);
        let dctx = self.wo.backward(&c.ctx, dy, groups * sq);
        let mut dq = vec![0.0; groups * sq * d];
        let mut dk = vec![0.0; groups * sk * d];
        let mut dv = vec![0.0; groups * sk * d];
        let mut dp = vec![0.0; sq * sk];
        for g in 0..groups {
            for hh in 0..h {
                let pb = &c.p[(g * h + hh) * sq * sk..(g * h + hh + 1) * sq * sk];
                let qo = g * sq * d + hh * dh;
                let ko = g * sk * d + hh * dh;
                // dV = P^T dctx
                gemm_strided(sk, dh, sq, 1.0, pb, (1, sk), &dctx[qo..], (d, 1), 1.0, &mut dv[ko..], (d, 1));
                // dP = dctx V^T
                gemm_strided(sq, sk, dh, 1.0, &dctx[qo..], (d, 1), &c.v[ko..], (1, d), 0.0, &mut dp, (sk, 1));
                // softmax backward, folded with the score scale
                for i in 0..sq {
                    let pr = &pb[i * sk..(i + 1) * sk];
                    let dr = &mut dp[i * sk..(i + 1) * sk];
                    let dot: f64 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
                    for (x, pv) in dr.iter_mut().zip(pr) {
                        *x = pv * (*x - dot) * scale;
                    }
                }
                // dQ = dS K, dK = dS^T Q
                gemm_strided(sq, dh, sk, 1.0, &dp, (sk, 1), &c.k[ko..], (d, 1), 1.0, &mut dq[qo..], (d, 1));
                gemm_strided(sk, dh, sq, 1.0, &dp, (1, sk), &c.q[qo..], (d, 1), 1.0, &mut dk[ko..], (d, 1));
            }
        }
        let dxq = self.wq.backward(&c.xq, &dq, groups * sq);
        let mut dxkv = self.wk.backward(&c.xkv, &dk, groups * sk);
        let dxv = self.wv.backward(&c.xkv, &dv, groups * sk);
        dxkv.iter_mut().zip(&dxv).for_each(|(a, b)| *a += b);
        (dxq, dxkv)
    }
}

impl Params for MultiHeadAttention {
    fn visit(&self, p: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.wq.visit(&format!("{p}q."), f);
        self.wk.visit(&format!("{p}k."), f);
        self.wv.visit(&format!("{p}v."), f);
        self.wo.visit(&format!("{p}o."), f);
    }
    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.wq.visit_mut(&format!("{p}q."), f);
        self.wk.visit_mut(&format!("{p}k."), f);
        self.wv.visit_mut(&format!("{p}v."), f);
        self.wo.visit_mut(&format!("{p}o."), f);
    }
}

/// Sinusoidal position table, `[len, d]`.
pub fn sinusoidal(len: usize, d: usize) -> Vec<f64> {
    let mut pe = vec![0.0; len * d];
    for pos in 0..len {
        for i in 0..d {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let a = pos as f64 * freq;
            pe[pos * d + i] = if i % 2 == 0 { a.sin() } else { a.cos() };
        }
    }
    pe
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive(ta: bool, tb: bool, m: usize, n: usize, k: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for l in 0..k {
                    let av = if ta { a[l * m + i] } else { a[i * k + l] };
                    let bv = if tb { b[j * k + l] } else { b[l * n + j] };
                    c[i * n + j] += av * bv;
                }
            }
        }
        c
    }

    #[test]
    fn gemm_matches_naive_for_all_transposes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (m, n, k) = (5, 7, 3);
        let a = Tensor::normal(1, m * k, 1.0, &mut rng).data;
        let b = Tensor::normal(1, k * n, 1.0, &mut rng).data;
        for ta in [false, true] {
            for tb in [false, true] {
                let mut c = vec![0.0; m * n];
                gemm(ta, tb, m, n, k, &a, &b, 0.0, &mut c);
                for (x, y) in c.iter().zip(naive(ta, tb, m, n, k, &a, &b)) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn layer_norm_normalises_rows() {
        let ln = LayerNorm::new(4);
        let (y, _) = ln.forward(&[1.0, 2.0, 3.0, 4.0, -1.0, -1.0, 5.0, 5.0], 2);
        for r in 0..2 {
            let row = &y[r * 4..(r + 1) * 4];
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|v| v * v).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn causal_attention_ignores_future_keys() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let attn = MultiHeadAttention::new(8, 2, &mut rng);
        let x = Tensor::normal(4, 8, 1.0, &mut rng).data;
        let (full, _) = attn.forward(&x, &x, 1, 4, 4, true);
        let (prefix, _) = attn.forward(&x[..16], &x[..16], 1, 2, 2, true);
        for (a, b) in full[..16].iter().zip(&prefix) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }
}
