//! Bit-wise GRU predictor in the style of DeepZip.
//!
//! The network reads the concatenated bits of the previous `memory`
//! messages followed by the current message, one bit per step, and predicts
//! each next bit. Step inputs are the previous bit, a padding flag (sequence
//! start or missing history), and a one-hot of the target bit's position
//! inside its message.

use rand::Rng;

use super::loss::{bce_with_logits, clamped_nll};
use super::nn::{gemm, sigmoid, Linear, Params, Tensor};
use crate::error::{Error, Result};
use crate::schema::DciMessage;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RnnConfig {
    /// Previous messages fed before the current one.
    pub memory: usize,
    pub hidden: usize,
    /// N, bits per message.
    pub bits: usize,
    /// Fields per message (batch sizing only).
    pub num_fields: usize,
}

impl RnnConfig {
    pub fn new(bits: usize, num_fields: usize, memory: usize) -> Self {
        RnnConfig {
            memory,
            hidden: 32,
            bits,
            num_fields,
        }
    }

    fn input_rows(&self) -> usize {
        2 + self.bits
    }

    pub fn seq_len(&self) -> usize {
        (self.memory + 1) * self.bits
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.bits == 0 {
            return Err(Error::Config("RNN sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Target bits of one training sequence; `pad[s]` marks missing history.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RnnSample {
    pub bits: Vec<bool>,
    pub pad: Vec<bool>,
}

fn sequence(history: &[DciMessage], memory: usize, n: usize) -> (Vec<bool>, Vec<bool>) {
    let mut bits = Vec::with_capacity((memory + 1) * n);
    let mut pad = Vec::with_capacity((memory + 1) * n);
    let missing = memory.saturating_sub(history.len());
    for _ in 0..missing {
        bits.extend(std::iter::repeat_n(false, n));
        pad.extend(std::iter::repeat_n(true, n));
    }
    for m in &history[history.len() - (memory - missing)..] {
        bits.extend_from_slice(&m.bits);
        pad.extend(std::iter::repeat_n(false, n));
    }
    (bits, pad)
}

/// Samples for `messages[range]` with history from `messages`.
pub fn rnn_samples(config: &RnnConfig, messages: &[DciMessage], range: std::ops::Range<usize>) -> Vec<RnnSample> {
    range
        .map(|t| {
            let lo = t.saturating_sub(config.memory);
            let (mut bits, mut pad) = sequence(&messages[lo..t], config.memory, config.bits);
            bits.extend_from_slice(&messages[t].bits);
            pad.extend(std::iter::repeat_n(false, config.bits));
            RnnSample { bits, pad }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruModel {
    config: RnnConfig,
    /// Input weights `[2 + N, 3H]`: rows are prev bit, pad flag, positions.
    wx: Tensor,
    bx: Tensor,
    u: Tensor,
    bh: Tensor,
    head: Linear,
}

struct StepCache {
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    ghn: Vec<f64>,
}

impl GruModel {
    pub fn new(config: RnnConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let h = config.hidden;
        Ok(GruModel {
            wx: Tensor::glorot(config.input_rows(), 3 * h, rng),
            bx: Tensor::zeros(1, 3 * h),
            u: Tensor::glorot(h, 3 * h, rng),
            bh: Tensor::zeros(1, 3 * h),
            head: Linear::new(h, 1, rng),
            config,
        })
    }

    pub fn config(&self) -> &RnnConfig {
        &self.config
    }

    /// Zeroes every weight, so the prediction is always 1/2.
    pub fn zero_weights(&mut self) {
        self.visit_mut("", &mut |_, t| t.data.fill(0.0));
    }

    /// Input-side pre-activations for one step.
    fn input_gates(&self, prev: bool, pad: bool, pos: usize, out: &mut [f64]) {
        let w = 3 * self.config.hidden;
        out.copy_from_slice(&self.bx.data);
        let row = |r: usize| &self.wx.data[r * w..(r + 1) * w];
        if prev {
            out.iter_mut().zip(row(0)).for_each(|(o, x)| *o += x);
        }
        if pad {
            out.iter_mut().zip(row(1)).for_each(|(o, x)| *o += x);
        }
        out.iter_mut().zip(row(2 + pos)).for_each(|(o, x)| *o += x);
    }

    /// One GRU step over `rows` sequences; returns the new hidden state.
    fn step(&self, h_prev: &[f64], gx: &[f64], rows: usize) -> (Vec<f64>, StepCache) {
        let hd = self.config.hidden;
        let mut gh = Vec::with_capacity(rows * 3 * hd);
        for _ in 0..rows {
            gh.extend_from_slice(&self.bh.data);
        }
        gemm(false, false, rows, 3 * hd, hd, h_prev, &self.u.data, 1.0, &mut gh);
        let mut z = vec![0.0; rows * hd];
        let mut r = vec![0.0; rows * hd];
        let mut n = vec![0.0; rows * hd];
        let mut ghn = vec![0.0; rows * hd];
        let mut h = vec![0.0; rows * hd];
        for b in 0..rows {
            let (x, g) = (&gx[b * 3 * hd..], &gh[b * 3 * hd..]);
            for j in 0..hd {
                let i = b * hd + j;
                z[i] = sigmoid(x[j] + g[j]);
                r[i] = sigmoid(x[hd + j] + g[hd + j]);
                ghn[i] = g[2 * hd + j];
                n[i] = (x[2 * hd + j] + r[i] * ghn[i]).tanh();
                h[i] = (1.0 - z[i]) * n[i] + z[i] * h_prev[i];
            }
        }
        (
            h,
            StepCache {
                h_prev: h_prev.to_vec(),
                z,
                r,
                n,
                ghn,
            },
        )
    }

    fn logit(&self, h: &[f64]) -> f64 {
        self.head.b.data[0] + h.iter().zip(&self.head.w.data).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Probability that bit `prefix.len()` of the current message is one,
    /// given up to `memory` previous messages (most recent last).
    pub fn predict_window(&self, history: &[DciMessage], prefix: &[bool]) -> Result<f64> {
        if prefix.len() >= self.config.bits {
            return Err(Error::Shape(format!(
                "prefix of {} bits leaves nothing to predict in a {}-bit message",
                prefix.len(),
                self.config.bits
            )));
        }
        if history.iter().any(|m| m.len() != self.config.bits) {
            return Err(Error::Shape("history message width differs from the model".into()));
        }
        let mut state = self.start(history);
        for &b in prefix {
            state.predict(self);
            state.push(b);
        }
        Ok(state.predict(self))
    }

    /// Inference state primed with `history` (most recent last).
    pub fn start(&self, history: &[DciMessage]) -> RnnState {
        let lo = history.len().saturating_sub(self.config.memory);
        let (bits, pad) = sequence(&history[lo..], self.config.memory, self.config.bits);
        let mut state = RnnState {
            h: vec![0.0; self.config.hidden],
            pending: None,
            prev: false,
            prev_pad: true,
            step: 0,
        };
        for (b, p) in bits.into_iter().zip(pad) {
            state.advance(self);
            state.push(b);
            state.prev_pad = p;
        }
        state
    }

    fn batch_forward(&self, batch: &[&RnnSample]) -> (Vec<Vec<f64>>, Vec<StepCache>, Vec<Vec<f64>>) {
        let rows = batch.len();
        let hd = self.config.hidden;
        let n = self.config.bits;
        let len = self.config.seq_len();
        let mut h = vec![0.0; rows * hd];
        let mut caches = Vec::with_capacity(len);
        let mut gxs = Vec::with_capacity(len);
        let mut hs = Vec::with_capacity(n);
        for s in 0..len {
            let mut gx = vec![0.0; rows * 3 * hd];
            for (b, smp) in batch.iter().enumerate() {
                let (prev, pad) = if s == 0 {
                    (false, true)
                } else {
                    (smp.bits[s - 1], smp.pad[s - 1])
                };
                self.input_gates(prev, pad, s % n, &mut gx[b * 3 * hd..(b + 1) * 3 * hd]);
            }
            let (hn, c) = self.step(&h, &gx, rows);
            caches.push(c);
            gxs.push(gx);
            h = hn;
            if s >= len - n {
                hs.push(h.clone());
            }
        }
        (hs, caches, gxs)
    }

    fn accumulate_gradients(&mut self, batch: &[&RnnSample]) -> f64 {
        let rows = batch.len();
        let hd = self.config.hidden;
        let n = self.config.bits;
        let len = self.config.seq_len();
        let (hs, caches, _) = self.batch_forward(batch);
        let inv = 1.0 / (rows * n) as f64;
        let mut loss = 0.0;
        // Output-layer gradients per scored step.
        let mut dh_out = vec![vec![0.0; rows * hd]; n];
        for (i, h) in hs.iter().enumerate() {
            let s = len - n + i;
            let mut dz = vec![0.0; rows];
            for (b, smp) in batch.iter().enumerate() {
                let (l, g) = bce_with_logits(smp.bits[s], self.logit(&h[b * hd..(b + 1) * hd]));
                loss += l;
                dz[b] = g * inv;
            }
            dh_out[i] = self.head.backward(h, &dz, rows);
        }
        let mut dh = vec![0.0; rows * hd];
        for s in (0..len).rev() {
            if s >= len - n {
                dh.iter_mut().zip(&dh_out[s - (len - n)]).for_each(|(a, b)| *a += b);
            }
            let c = &caches[s];
            let mut dgx = vec![0.0; rows * 3 * hd];
            let mut dgh = vec![0.0; rows * 3 * hd];
            let mut dh_prev = vec![0.0; rows * hd];
            for b in 0..rows {
                for j in 0..hd {
                    let i = b * hd + j;
                    let (z, r, nn) = (c.z[i], c.r[i], c.n[i]);
                    let d = dh[i];
                    let dz = d * (c.h_prev[i] - nn);
                    let dn = d * (1.0 - z);
                    dh_prev[i] = d * z;
                    let dan = dn * (1.0 - nn * nn);
                    let dr = dan * c.ghn[i];
                    let daz = dz * z * (1.0 - z);
                    let dar = dr * r * (1.0 - r);
                    let o = b * 3 * hd;
                    dgx[o + j] = daz;
                    dgx[o + hd + j] = dar;
                    dgx[o + 2 * hd + j] = dan;
                    dgh[o + j] = daz;
                    dgh[o + hd + j] = dar;
                    dgh[o + 2 * hd + j] = dan * r;
                }
            }
            gemm(true, false, hd, 3 * hd, rows, &c.h_prev, &dgh, 1.0, &mut self.u.grad);
            gemm(false, true, rows, hd, 3 * hd, &dgh, &self.u.data, 1.0, &mut dh_prev);
            let w = 3 * hd;
            for (b, smp) in batch.iter().enumerate() {
                let g = &dgx[b * w..(b + 1) * w];
                let gb = &dgh[b * w..(b + 1) * w];
                let (prev, pad) = if s == 0 {
                    (false, true)
                } else {
                    (smp.bits[s - 1], smp.pad[s - 1])
                };
                let mut add = |row: usize| {
                    self.wx.grad[row * w..(row + 1) * w]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(a, b)| *a += b)
                };
                if prev {
                    add(0);
                }
                if pad {
                    add(1);
                }
                add(2 + s % n);
                self.bx.grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                self.bh.grad.iter_mut().zip(gb).for_each(|(a, b)| *a += b);
            }
            dh = dh_prev;
        }
        loss * inv
    }

    fn evaluate(&self, samples: &[RnnSample]) -> (f64, usize) {
        let hd = self.config.hidden;
        let n = self.config.bits;
        let len = self.config.seq_len();
        let mut total = 0.0;
        let mut bits = 0;
        for chunk in samples.chunks(64) {
            let refs: Vec<&RnnSample> = chunk.iter().collect();
            let (hs, _, _) = self.batch_forward(&refs);
            for (i, h) in hs.iter().enumerate() {
                for (b, smp) in chunk.iter().enumerate() {
                    let p = sigmoid(self.logit(&h[b * hd..(b + 1) * hd]));
                    total += clamped_nll(smp.bits[len - n + i], p);
                    bits += 1;
                }
            }
        }
        (total, bits)
    }
}

/// Incremental inference state; the encoder and decoder drive identical
/// sequences of `predict`/`push` calls.
#[derive(Debug, Clone)]
pub struct RnnState {
    h: Vec<f64>,
    pending: Option<Vec<f64>>,
    prev: bool,
    prev_pad: bool,
    step: usize,
}

impl RnnState {
    fn advance(&mut self, model: &GruModel) -> &[f64] {
        if self.pending.is_none() {
            let hd = model.config.hidden;
            let mut gx = vec![0.0; 3 * hd];
            model.input_gates(self.prev, self.prev_pad, self.step % model.config.bits, &mut gx);
            let (h, _) = model.step(&self.h, &gx, 1);
            self.pending = Some(h);
        }
        self.pending.as_deref().expect("just computed")
    }

    /// Probability that the next bit is one.
    pub fn predict(&mut self, model: &GruModel) -> f64 {
        let h = self.advance(model).to_vec();
        sigmoid(model.logit(&h))
    }

    /// Commits the next bit. `predict` must have been called for it.
    pub fn push(&mut self, bit: bool) {
        self.h = self.pending.take().expect("predict before push");
        self.prev = bit;
        self.prev_pad = false;
        self.step += 1;
    }
}

impl Params for GruModel {
    fn visit(&self, _: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f("wx", &self.wx);
        f("bx", &self.bx);
        f("u", &self.u);
        f("bh", &self.bh);
        self.head.visit("head.", f);
    }
    fn visit_mut(&mut self, _: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f("wx", &mut self.wx);
        f("bx", &mut self.bx);
        f("u", &mut self.u);
        f("bh", &mut self.bh);
        self.head.visit_mut("head.", f);
    }
}

impl super::train::Trainable for GruModel {
    type Sample = RnnSample;

    fn fields_per_sample(&self) -> usize {
        self.config.num_fields
    }

    fn accumulate(&mut self, batch: &[&RnnSample]) -> f64 {
        self.accumulate_gradients(batch)
    }

    fn validation(&self, samples: &[RnnSample]) -> (f64, usize) {
        self.evaluate(samples)
    }
}
