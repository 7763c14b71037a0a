//! Encoder-decoder transformer estimating per-bit probabilities of a field.
//!
//! The decoder reads the message's integer form shifted right by one
//! (a padding token in front) under a causal mask. Its output at the first
//! segment slot of field `k` has seen exactly the fields before `k`, so one
//! pass over a message trains every field, and inference for field `k` only
//! runs the prefix up to that slot.

use rand::Rng;

use super::features::{decoder_tokens, encoder_tokens, FeaturePair, FieldLabel};
use super::loss::{bce_with_logits, clamped_nll};
use super::nn::{
    sigmoid, sinusoidal, AttnCache, FeedForward, FfCache, LayerNorm, Linear, LnCache,
    MultiHeadAttention, Params, Tensor,
};
use crate::error::{Error, Result};
use crate::schema::{DciMessage, DciSchema, SegmentPlan};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// L, previous messages seen by the encoder.
    pub memory: usize,
    /// R, integers per message.
    pub num_segments: usize,
    /// Data tokens plus the padding token.
    pub vocab: usize,
    pub d_model: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub d_ff: usize,
    /// Largest field width.
    pub s_output: usize,
    /// Adds sinusoidal position codes to the embeddings.
    pub positional: bool,
}

impl ModelConfig {
    pub fn new(schema: &DciSchema, memory: usize) -> Result<Self> {
        let plan = SegmentPlan::new(schema)?;
        Ok(ModelConfig {
            memory,
            num_segments: plan.num_segments(),
            vocab: plan.dictionary_size() + 1,
            d_model: 64,
            heads: 4,
            encoder_layers: 2,
            decoder_layers: 2,
            d_ff: 128,
            s_output: schema.max_width(),
            positional: true,
        })
    }

    pub fn s_encoder(&self) -> usize {
        self.memory * self.num_segments
    }

    pub fn s_decoder(&self) -> usize {
        self.num_segments
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.memory == 0 {
            return bad("memory length must be at least 1".into());
        }
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad(format!("{} heads do not divide d_model {}", self.heads, self.d_model));
        }
        if self.d_ff == 0 || self.s_output == 0 || self.num_segments == 0 || self.vocab < 2 {
            return bad("zero-sized model dimension".into());
        }
        Ok(())
    }

    /// Checks that the config matches a schema.
    pub fn check_schema(&self, schema: &DciSchema) -> Result<()> {
        let plan = SegmentPlan::new(schema)?;
        if plan.num_segments() != self.num_segments
            || plan.dictionary_size() + 1 != self.vocab
            || schema.max_width() != self.s_output
        {
            return Err(Error::Shape(format!(
                "model expects R={}, vocab={}, S_output={}; schema gives {}, {}, {}",
                self.num_segments,
                self.vocab,
                self.s_output,
                plan.num_segments(),
                plan.dictionary_size() + 1,
                schema.max_width()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct EncoderLayer {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    ln2: LayerNorm,
    ff: FeedForward,
}

struct EncCache {
    ln1: LnCache,
    attn: AttnCache,
    ln2: LnCache,
    ff: FfCache,
}

impl EncoderLayer {
    fn new(c: &ModelConfig, rng: &mut impl Rng) -> Self {
        EncoderLayer {
            ln1: LayerNorm::new(c.d_model),
            attn: MultiHeadAttention::new(c.d_model, c.heads, rng),
            ln2: LayerNorm::new(c.d_model),
            ff: FeedForward::new(c.d_model, c.d_ff, rng),
        }
    }

    fn forward(&self, x: &[f64], groups: usize, s: usize) -> (Vec<f64>, EncCache) {
        let rows = groups * s;
        let (a, ln1) = self.ln1.forward(x, rows);
        let (a, attn) = self.attn.forward(&a, &a, groups, s, s, false);
        let h: Vec<f64> = x.iter().zip(&a).map(|(x, a)| x + a).collect();
        let (b, ln2) = self.ln2.forward(&h, rows);
        let (b, ff) = self.ff.forward(&b, rows);
        let y = h.iter().zip(&b).map(|(h, b)| h + b).collect();
        (y, EncCache { ln1, attn, ln2, ff })
    }

    fn backward(&mut self, c: &EncCache, dy: &[f64]) -> Vec<f64> {
        let db = self.ff.backward(&c.ff, dy);
        let db = self.ln2.backward(&c.ln2, &db);
        let dh: Vec<f64> = dy.iter().zip(&db).map(|(a, b)| a + b).collect();
        let (dq, dkv) = self.attn.backward(&c.attn, &dh);
        let da: Vec<f64> = dq.iter().zip(&dkv).map(|(a, b)| a + b).collect();
        let da = self.ln1.backward(&c.ln1, &da);
        dh.iter().zip(&da).map(|(a, b)| a + b).collect()
    }
}

impl Params for EncoderLayer {
    fn visit(&self, p: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.ln1.visit(&format!("{p}ln1."), f);
        self.attn.visit(&format!("{p}attn."), f);
        self.ln2.visit(&format!("{p}ln2."), f);
        self.ff.visit(&format!("{p}ff."), f);
    }
    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.ln1.visit_mut(&format!("{p}ln1."), f);
        self.attn.visit_mut(&format!("{p}attn."), f);
        self.ln2.visit_mut(&format!("{p}ln2."), f);
        self.ff.visit_mut(&format!("{p}ff."), f);
    }
}

#[derive(Debug, Clone, PartialEq)]
struct DecoderLayer {
    ln1: LayerNorm,
    self_attn: MultiHeadAttention,
    ln2: LayerNorm,
    cross: MultiHeadAttention,
    ln3: LayerNorm,
    ff: FeedForward,
}

struct DecCache {
    ln1: LnCache,
    self_attn: AttnCache,
    ln2: LnCache,
    cross: AttnCache,
    ln3: LnCache,
    ff: FfCache,
}

impl DecoderLayer {
    fn new(c: &ModelConfig, rng: &mut impl Rng) -> Self {
        DecoderLayer {
            ln1: LayerNorm::new(c.d_model),
            self_attn: MultiHeadAttention::new(c.d_model, c.heads, rng),
            ln2: LayerNorm::new(c.d_model),
            cross: MultiHeadAttention::new(c.d_model, c.heads, rng),
            ln3: LayerNorm::new(c.d_model),
            ff: FeedForward::new(c.d_model, c.d_ff, rng),
        }
    }

    fn forward(&self, x: &[f64], enc: &[f64], groups: usize, sq: usize, se: usize) -> (Vec<f64>, DecCache) {
        let rows = groups * sq;
        let (a, ln1) = self.ln1.forward(x, rows);
        let (a, self_attn) = self.self_attn.forward(&a, &a, groups, sq, sq, true);
        let h1: Vec<f64> = x.iter().zip(&a).map(|(x, a)| x + a).collect();
        let (b, ln2) = self.ln2.forward(&h1, rows);
        let (b, cross) = self.cross.forward(&b, enc, groups, sq, se, false);
        let h2: Vec<f64> = h1.iter().zip(&b).map(|(x, b)| x + b).collect();
        let (c, ln3) = self.ln3.forward(&h2, rows);
        let (c, ff) = self.ff.forward(&c, rows);
        let y = h2.iter().zip(&c).map(|(x, c)| x + c).collect();
        (
            y,
            DecCache {
                ln1,
                self_attn,
                ln2,
                cross,
                ln3,
                ff,
            },
        )
    }

    /// Inference step with the cross-attention keys/values precomputed.
    fn infer(&self, x: &[f64], kv: &(Vec<f64>, Vec<f64>), sq: usize, se: usize) -> Vec<f64> {
        let (a, _) = self.ln1.forward(x, sq);
        let (a, _) = self.self_attn.forward(&a, &a, 1, sq, sq, true);
        let h1: Vec<f64> = x.iter().zip(&a).map(|(x, a)| x + a).collect();
        let (b, _) = self.ln2.forward(&h1, sq);
        let b = self.cross.forward_kv(&b, &kv.0, &kv.1, 1, sq, se, false);
        let h2: Vec<f64> = h1.iter().zip(&b).map(|(x, b)| x + b).collect();
        let (c, _) = self.ln3.forward(&h2, sq);
        let (c, _) = self.ff.forward(&c, sq);
        h2.iter().zip(&c).map(|(x, c)| x + c).collect()
    }

    /// Returns `(dx, denc)`.
    fn backward(&mut self, c: &DecCache, dy: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let dc = self.ff.backward(&c.ff, dy);
        let dc = self.ln3.backward(&c.ln3, &dc);
        let dh2: Vec<f64> = dy.iter().zip(&dc).map(|(a, b)| a + b).collect();
        let (dq, denc) = self.cross.backward(&c.cross, &dh2);
        let db = self.ln2.backward(&c.ln2, &dq);
        let dh1: Vec<f64> = dh2.iter().zip(&db).map(|(a, b)| a + b).collect();
        let (dq, dkv) = self.self_attn.backward(&c.self_attn, &dh1);
        let da: Vec<f64> = dq.iter().zip(&dkv).map(|(a, b)| a + b).collect();
        let da = self.ln1.backward(&c.ln1, &da);
        (dh1.iter().zip(&da).map(|(a, b)| a + b).collect(), denc)
    }
}

impl Params for DecoderLayer {
    fn visit(&self, p: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.ln1.visit(&format!("{p}ln1."), f);
        self.self_attn.visit(&format!("{p}self."), f);
        self.ln2.visit(&format!("{p}ln2."), f);
        self.cross.visit(&format!("{p}cross."), f);
        self.ln3.visit(&format!("{p}ln3."), f);
        self.ff.visit(&format!("{p}ff."), f);
    }
    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.ln1.visit_mut(&format!("{p}ln1."), f);
        self.self_attn.visit_mut(&format!("{p}self."), f);
        self.ln2.visit_mut(&format!("{p}ln2."), f);
        self.cross.visit_mut(&format!("{p}cross."), f);
        self.ln3.visit_mut(&format!("{p}ln3."), f);
        self.ff.visit_mut(&format!("{p}ff."), f);
    }
}

/// One training message: encoder tokens, the message's integers, and the
/// labels of every field.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageSample {
    pub encoder: Vec<usize>,
    pub integers: Vec<usize>,
    pub labels: Vec<FieldLabel>,
}

impl MessageSample {
    pub fn num_bits(&self) -> usize {
        self.labels.iter().map(|l| l.width).sum()
    }
}

/// Samples for `messages[range]`, each with its own history from `messages`.
pub fn message_samples(
    schema: &DciSchema,
    config: &ModelConfig,
    messages: &[DciMessage],
    range: std::ops::Range<usize>,
) -> Result<Vec<MessageSample>> {
    config.check_schema(schema)?;
    let plan = SegmentPlan::new(schema)?;
    range
        .map(|t| {
            let lo = t.saturating_sub(config.memory);
            Ok(MessageSample {
                encoder: encoder_tokens(&plan, &messages[lo..t], config.memory)?,
                integers: plan.message_to_integers(&messages[t])?,
                labels: (0..schema.num_fields())
                    .map(|k| FieldLabel::new(schema, &messages[t], k, config.s_output))
                    .collect(),
            })
        })
        .collect()
}

/// Encoder output for one message, with every decoder layer's
/// cross-attention keys and values.
pub struct EncodedContext {
    kv: Vec<(Vec<f64>, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transformer {
    config: ModelConfig,
    /// Segment index where each field's prediction is read.
    query_slots: Vec<usize>,
    field_widths: Vec<usize>,
    embedding: Tensor,
    encoder: Vec<EncoderLayer>,
    enc_norm: LayerNorm,
    decoder: Vec<DecoderLayer>,
    dec_norm: LayerNorm,
    head: Linear,
    pe_enc: Vec<f64>,
    pe_dec: Vec<f64>,
}

struct ForwardCache {
    enc_tokens: Vec<usize>,
    dec_tokens: Vec<usize>,
    enc_layers: Vec<EncCache>,
    enc_norm: LnCache,
    dec_layers: Vec<DecCache>,
    dec_norm: LnCache,
    groups: usize,
    sq: usize,
}

impl Transformer {
    pub fn new(schema: &DciSchema, config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        config.check_schema(schema)?;
        let plan = SegmentPlan::new(schema)?;
        let d = config.d_model;
        let embedding = Tensor::normal(config.vocab, d, 1.0 / (d as f64).sqrt(), rng);
        let encoder = (0..config.encoder_layers)
            .map(|_| EncoderLayer::new(&config, rng))
            .collect();
        let decoder = (0..config.decoder_layers)
            .map(|_| DecoderLayer::new(&config, rng))
            .collect();
        let head = Linear::new(d, config.s_output, rng);
        Ok(Transformer {
            query_slots: (0..schema.num_fields()).map(|k| plan.first_segment(k)).collect(),
            field_widths: schema.fields().iter().map(|f| f.width).collect(),
            pe_enc: sinusoidal(config.s_encoder(), d),
            pe_dec: sinusoidal(config.s_decoder(), d),
            embedding,
            encoder,
            enc_norm: LayerNorm::new(d),
            decoder,
            dec_norm: LayerNorm::new(d),
            head,
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_fields(&self) -> usize {
        self.query_slots.len()
    }

    /// Sets the output head to zero, so every prediction is 1/2.
    pub fn zero_head(&mut self) {
        self.head.w.data.fill(0.0);
        self.head.b.data.fill(0.0);
    }

    /// Checks that the model was built for `schema`.
    pub fn check_schema(&self, schema: &DciSchema) -> Result<()> {
        self.config.check_schema(schema)?;
        let widths: Vec<usize> = schema.fields().iter().map(|f| f.width).collect();
        if widths != self.field_widths {
            return Err(Error::Shape(format!(
                "model field widths {:?} differ from schema {:?}",
                self.field_widths, widths
            )));
        }
        Ok(())
    }

    fn embed(&self, tokens: &[usize], pe: &[f64], seq: usize) -> Vec<f64> {
        let d = self.config.d_model;
        let scale = (d as f64).sqrt();
        let mut x = vec![0.0; tokens.len() * d];
        for (i, &t) in tokens.iter().enumerate() {
            let row = &mut x[i * d..(i + 1) * d];
            let e = &self.embedding.data[t * d..(t + 1) * d];
            let p = &pe[(i % seq) * d..(i % seq + 1) * d];
            for j in 0..d {
                row[j] = e[j] * scale + if self.config.positional { p[j] } else { 0.0 };
            }
        }
        x
    }

    fn embed_backward(&mut self, tokens: &[usize], dx: &[f64]) {
        let d = self.config.d_model;
        let scale = (d as f64).sqrt();
        for (i, &t) in tokens.iter().enumerate() {
            let g = &mut self.embedding.grad[t * d..(t + 1) * d];
            for j in 0..d {
                g[j] += dx[i * d + j] * scale;
            }
        }
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        match tokens.iter().find(|&&t| t >= self.config.vocab) {
            Some(t) => Err(Error::Shape(format!("token {t} outside vocabulary {}", self.config.vocab))),
            None => Ok(()),
        }
    }

    fn run_encoder(&self, tokens: &[usize], groups: usize) -> (Vec<f64>, Vec<EncCache>, LnCache) {
        let se = self.config.s_encoder();
        let mut x = self.embed(tokens, &self.pe_enc, se);
        let mut caches = Vec::with_capacity(self.encoder.len());
        for layer in &self.encoder {
            let (y, c) = layer.forward(&x, groups, se);
            caches.push(c);
            x = y;
        }
        let (out, norm) = self.enc_norm.forward(&x, groups * se);
        (out, caches, norm)
    }

    /// Runs the encoder on one message's `L * R` history tokens.
    pub fn encode_context(&self, encoder_tokens: &[usize]) -> Result<EncodedContext> {
        if encoder_tokens.len() != self.config.s_encoder() {
            return Err(Error::Shape(format!(
                "encoder feature has {} tokens, model expects {}",
                encoder_tokens.len(),
                self.config.s_encoder()
            )));
        }
        self.check_tokens(encoder_tokens)?;
        let (enc, _, _) = self.run_encoder(encoder_tokens, 1);
        let se = self.config.s_encoder();
        let kv = self.decoder.iter().map(|l| l.cross.project_kv(&enc, se)).collect();
        Ok(EncodedContext { kv })
    }

    /// Bit probabilities (length `S_output`) for field `k`, given the
    /// decoder tokens of fields `0..k`.
    pub fn predict_field(&self, ctx: &EncodedContext, decoder: &[usize], k: usize) -> Result<Vec<f64>> {
        let slot = *self
            .query_slots
            .get(k)
            .ok_or_else(|| Error::Shape(format!("field {k} outside model's {} fields", self.num_fields())))?;
        if decoder.len() < slot {
            return Err(Error::Shape(format!(
                "field {k} needs {slot} known decoder tokens, got {}",
                decoder.len()
            )));
        }
        self.check_tokens(&decoder[..slot])?;
        let sq = slot + 1;
        let mut input = Vec::with_capacity(sq);
        input.push(self.config.vocab - 1);
        input.extend_from_slice(&decoder[..slot]);
        let mut x = self.embed(&input, &self.pe_dec, self.config.s_decoder());
        let se = self.config.s_encoder();
        for (layer, kv) in self.decoder.iter().zip(&ctx.kv) {
            x = layer.infer(&x, kv, sq, se);
        }
        let (x, _) = self.dec_norm.forward(&x, sq);
        let d = self.config.d_model;
        let logits = self.head.forward(&x[slot * d..], 1);
        Ok(logits.into_iter().map(sigmoid).collect())
    }

    /// `ŷ` for a feature pair; `k` is inferred from the decoder padding.
    pub fn forward(&self, features: &FeaturePair) -> Result<Vec<f64>> {
        if features.decoder.len() != self.config.s_decoder() {
            return Err(Error::Shape(format!(
                "decoder feature has {} tokens, model expects {}",
                features.decoder.len(),
                self.config.s_decoder()
            )));
        }
        let pad = self.config.vocab - 1;
        let known = features.decoder.iter().take_while(|&&t| t != pad).count();
        let k = self
            .query_slots
            .iter()
            .position(|&s| s == known)
            .ok_or_else(|| Error::Shape(format!("{known} known tokens is not a field boundary")))?;
        let ctx = self.encode_context(&features.encoder)?;
        self.predict_field(&ctx, &features.decoder, k)
    }

    /// Convenience wrapper: probabilities for field `k` of a message given
    /// its history (most recent last). Only fields `0..k` of `msg` are read.
    pub fn predict_message_field(
        &self,
        plan: &SegmentPlan,
        history: &[DciMessage],
        msg: &DciMessage,
        k: usize,
    ) -> Result<Vec<f64>> {
        let ctx = self.encode_context(&encoder_tokens(plan, history, self.config.memory)?)?;
        self.predict_field(&ctx, &decoder_tokens(plan, &msg.bits, k), k)
    }

    fn forward_batch(&self, batch: &[&MessageSample]) -> (Vec<f64>, ForwardCache) {
        let groups = batch.len();
        let sq = self.config.s_decoder();
        let se = self.config.s_encoder();
        let pad = self.config.vocab - 1;
        let enc_tokens: Vec<usize> = batch.iter().flat_map(|s| s.encoder.iter().copied()).collect();
        let mut dec_tokens = Vec::with_capacity(groups * sq);
        for s in batch {
            dec_tokens.push(pad);
            dec_tokens.extend_from_slice(&s.integers[..sq - 1]);
        }
        let (enc, enc_layers, enc_norm) = self.run_encoder(&enc_tokens, groups);
        let mut x = self.embed(&dec_tokens, &self.pe_dec, sq);
        let mut dec_layers = Vec::with_capacity(self.decoder.len());
        for layer in &self.decoder {
            let (y, c) = layer.forward(&x, &enc, groups, sq, se);
            dec_layers.push(c);
            x = y;
        }
        let (out, dec_norm) = self.dec_norm.forward(&x, groups * sq);
        (
            out,
            ForwardCache {
                enc_tokens,
                dec_tokens,
                enc_layers,
                enc_norm,
                dec_layers,
                dec_norm,
                groups,
                sq,
            },
        )
    }

    /// Logits `[groups * fields, S_output]` gathered at the query slots.
    fn head_logits(&self, hidden: &[f64], groups: usize) -> (Vec<f64>, Vec<f64>) {
        let d = self.config.d_model;
        let sq = self.config.s_decoder();
        let mut rows = Vec::with_capacity(groups * self.num_fields() * d);
        for g in 0..groups {
            for &s in &self.query_slots {
                let r = g * sq + s;
                rows.extend_from_slice(&hidden[r * d..(r + 1) * d]);
            }
        }
        let logits = self.head.forward(&rows, groups * self.num_fields());
        (rows, logits)
    }

    /// Accumulates gradients of the mean per-bit BCE (with logits) over the
    /// batch and returns that mean in nats.
    pub fn accumulate_gradients(&mut self, batch: &[&MessageSample]) -> f64 {
        let bits: usize = batch.iter().map(|s| s.num_bits()).sum();
        if bits == 0 {
            return 0.0;
        }
        let (hidden, cache) = self.forward_batch(batch);
        let (rows, logits) = self.head_logits(&hidden, cache.groups);
        let so = self.config.s_output;
        let nf = self.num_fields();
        let inv = 1.0 / bits as f64;
        let mut loss = 0.0;
        let mut dlogits = vec![0.0; logits.len()];
        for (g, s) in batch.iter().enumerate() {
            for (k, label) in s.labels.iter().enumerate() {
                let base = (g * nf + k) * so;
                for j in 0..label.width {
                    let (l, dz) = bce_with_logits(label.bits[j], logits[base + j]);
                    loss += l;
                    dlogits[base + j] = dz * inv;
                }
            }
        }
        let drows = self.head.backward(&rows, &dlogits, cache.groups * nf);
        self.backward(&cache, &drows);
        loss * inv
    }

    fn backward(&mut self, cache: &ForwardCache, drows: &[f64]) {
        let d = self.config.d_model;
        let (groups, sq) = (cache.groups, cache.sq);
        let se = self.config.s_encoder();
        let mut dx = vec![0.0; groups * sq * d];
        for g in 0..groups {
            for (k, &s) in self.query_slots.iter().enumerate() {
                let r = g * sq + s;
                let src = (g * self.query_slots.len() + k) * d;
                for j in 0..d {
                    dx[r * d + j] += drows[src + j];
                }
            }
        }
        let mut dx = self.dec_norm.backward(&cache.dec_norm, &dx);
        let mut denc = vec![0.0; groups * se * d];
        for (layer, c) in self.decoder.iter_mut().zip(&cache.dec_layers).rev() {
            let (dxi, de) = layer.backward(c, &dx);
            dx = dxi;
            denc.iter_mut().zip(&de).for_each(|(a, b)| *a += b);
        }
        let dec_tokens = cache.dec_tokens.clone();
        self.embed_backward(&dec_tokens, &dx);
        let mut de = self.enc_norm.backward(&cache.enc_norm, &denc);
        for (layer, c) in self.encoder.iter_mut().zip(&cache.enc_layers).rev() {
            de = layer.backward(c, &de);
        }
        let enc_tokens = cache.enc_tokens.clone();
        self.embed_backward(&enc_tokens, &de);
    }

    /// Unclamped training objective: summed BCE-with-logits and bit count.
    pub fn evaluate_logit_loss(&self, batch: &[&MessageSample]) -> (f64, usize) {
        let so = self.config.s_output;
        let nf = self.num_fields();
        let (hidden, _) = self.forward_batch(batch);
        let (_, logits) = self.head_logits(&hidden, batch.len());
        let mut total = 0.0;
        let mut bits = 0;
        for (g, s) in batch.iter().enumerate() {
            for (k, label) in s.labels.iter().enumerate() {
                let base = (g * nf + k) * so;
                for j in 0..label.width {
                    total += bce_with_logits(label.bits[j], logits[base + j]).0;
                }
                bits += label.width;
            }
        }
        (total, bits)
    }

    /// Sum of clamped BCE (nats) and number of valid bits over `samples`,
    /// evaluated in one causal pass per message.
    pub fn evaluate(&self, samples: &[MessageSample]) -> (f64, usize) {
        let so = self.config.s_output;
        let nf = self.num_fields();
        let mut total = 0.0;
        let mut bits = 0;
        for chunk in samples.chunks(16) {
            let refs: Vec<&MessageSample> = chunk.iter().collect();
            let (hidden, _) = self.forward_batch(&refs);
            let (_, logits) = self.head_logits(&hidden, refs.len());
            for (g, s) in chunk.iter().enumerate() {
                for (k, label) in s.labels.iter().enumerate() {
                    let base = (g * nf + k) * so;
                    for j in 0..label.width {
                        total += clamped_nll(label.bits[j], sigmoid(logits[base + j]));
                    }
                    bits += label.width;
                }
            }
        }
        (total, bits)
    }
}

impl super::train::Trainable for Transformer {
    type Sample = MessageSample;

    fn fields_per_sample(&self) -> usize {
        self.num_fields()
    }

    fn accumulate(&mut self, batch: &[&MessageSample]) -> f64 {
        self.accumulate_gradients(batch)
    }

    fn validation(&self, samples: &[MessageSample]) -> (f64, usize) {
        self.evaluate(samples)
    }
}

impl Params for Transformer {
    fn visit(&self, _: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f("embedding", &self.embedding);
        for (i, l) in self.encoder.iter().enumerate() {
            l.visit(&format!("enc{i}."), f);
        }
        self.enc_norm.visit("enc_norm.", f);
        for (i, l) in self.decoder.iter().enumerate() {
            l.visit(&format!("dec{i}."), f);
        }
        self.dec_norm.visit("dec_norm.", f);
        self.head.visit("head.", f);
    }
    fn visit_mut(&mut self, _: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f("embedding", &mut self.embedding);
        for (i, l) in self.encoder.iter_mut().enumerate() {
            l.visit_mut(&format!("enc{i}."), f);
        }
        self.enc_norm.visit_mut("enc_norm.", f);
        for (i, l) in self.decoder.iter_mut().enumerate() {
            l.visit_mut(&format!("dec{i}."), f);
        }
        self.dec_norm.visit_mut("dec_norm.", f);
        self.head.visit_mut("head.", f);
    }
}
