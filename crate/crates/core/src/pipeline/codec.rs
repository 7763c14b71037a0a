//! Per-method message codecs and the stateful per-UE stream wrapper.
//!
//! Learned models work on messages with fields rearranged into their
//! training order; the codec permutes on the way in and back on the way out,
//! so callers only ever see original-layout messages.

use std::collections::VecDeque;

use super::bitmodel::{ac_decode, ac_decode_prefix, ac_encode, RnnBits, TransformerBits};
use crate::coders::{CompressedFrame, HuffmanCodebooks, Method};
use crate::error::{Error, Result};
use crate::models::{AdaptiveModel, GruModel, StoredModel, StoredNetwork, Transformer};
use crate::schema::{DciMessage, DciSchema};

enum Engine {
    Identity,
    Huffman(HuffmanCodebooks),
    Adaptive(AdaptiveModel),
    Rnn(RnnBits),
    Transformer(TransformerBits),
    Joint(TransformerBits, HuffmanCodebooks),
}

/// Compresses and decompresses single messages with one method.
pub struct MethodCodec {
    method: Method,
    schema: DciSchema,
    order: Vec<usize>,
    engine: Engine,
    memory: usize,
}

impl MethodCodec {
    fn build(method: Method, schema: &DciSchema, order: Vec<usize>, engine: Engine, memory: usize) -> Result<Self> {
        schema.permuted(&order)?;
        Ok(MethodCodec {
            method,
            schema: schema.clone(),
            order,
            engine,
            memory,
        })
    }

    fn identity_order(schema: &DciSchema) -> Vec<usize> {
        (0..schema.num_fields()).collect()
    }

    /// Raw bits.
    pub fn identity(schema: &DciSchema) -> Result<Self> {
        MethodCodec::build(Method::Identity, schema, Self::identity_order(schema), Engine::Identity, 0)
    }

    pub fn huffman(schema: &DciSchema, books: HuffmanCodebooks) -> Result<Self> {
        books.check_schema(schema)?;
        MethodCodec::build(Method::Huffman, schema, Self::identity_order(schema), Engine::Huffman(books), 0)
    }

    /// Counting model; it keeps learning from every message it codes.
    pub fn adaptive(schema: &DciSchema, model: AdaptiveModel) -> Result<Self> {
        if model.bits() != schema.total_bits() {
            return Err(Error::Shape(format!(
                "adaptive model has {} positions, schema has {} bits",
                model.bits(),
                schema.total_bits()
            )));
        }
        MethodCodec::build(Method::Adaptive, schema, Self::identity_order(schema), Engine::Adaptive(model), 0)
    }

    pub fn rnn(schema: &DciSchema, order: Vec<usize>, model: GruModel) -> Result<Self> {
        let c = model.config();
        if c.bits != schema.total_bits() {
            return Err(Error::Shape(format!(
                "GRU expects {}-bit messages, schema has {} bits",
                c.bits,
                schema.total_bits()
            )));
        }
        let memory = c.memory;
        MethodCodec::build(Method::Rnn, schema, order, Engine::Rnn(RnnBits::new(model)), memory)
    }

    pub fn transformer(schema: &DciSchema, order: Vec<usize>, model: Transformer) -> Result<Self> {
        let memory = model.config().memory;
        let bits = TransformerBits::new(model, &schema.permuted(&order)?)?;
        MethodCodec::build(Method::Transformer, schema, order, Engine::Transformer(bits), memory)
    }

    /// Selector bit (0 transformer, 1 Huffman) followed by the shorter
    /// payload; equal lengths go to the transformer.
    pub fn joint(schema: &DciSchema, order: Vec<usize>, model: Transformer, books: HuffmanCodebooks) -> Result<Self> {
        books.check_schema(schema)?;
        let memory = model.config().memory;
        let bits = TransformerBits::new(model, &schema.permuted(&order)?)?;
        MethodCodec::build(Method::Joint, schema, order, Engine::Joint(bits, books), memory)
    }

    /// Codec for a stored network, after checking its schema hash.
    pub fn from_stored(schema: &DciSchema, stored: StoredModel) -> Result<Self> {
        if stored.schema_hash != schema.hash() {
            return Err(Error::Config(format!(
                "model schema hash {:016x} differs from {:016x}",
                stored.schema_hash,
                schema.hash()
            )));
        }
        match stored.network {
            StoredNetwork::Transformer(t) => MethodCodec::transformer(schema, stored.field_order, t),
            StoredNetwork::Rnn(r) => MethodCodec::rnn(schema, stored.field_order, r),
        }
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn schema(&self) -> &DciSchema {
        &self.schema
    }

    pub fn field_order(&self) -> &[usize] {
        &self.order
    }

    /// Previous messages the method conditions on.
    pub fn memory(&self) -> usize {
        self.memory
    }

    fn permuted_history(&self, history: &[DciMessage]) -> Vec<DciMessage> {
        let lo = history.len().saturating_sub(self.memory);
        history[lo..]
            .iter()
            .map(|m| self.schema.permute_message(m, &self.order))
            .collect()
    }

    /// Compresses `msg` given the previous original messages (most recent last).
    pub fn compress_message(&mut self, history: &[DciMessage], msg: &DciMessage) -> Result<CompressedFrame> {
        self.schema.validate(msg)?;
        let hist = self.permuted_history(history);
        let pm = self.schema.permute_message(msg, &self.order);
        let payload = match &mut self.engine {
            Engine::Identity => msg.bits.clone(),
            Engine::Huffman(b) => b.encode_message(&self.schema, msg)?.payload,
            Engine::Adaptive(m) => ac_encode(m, &hist, &pm)?,
            Engine::Rnn(m) => ac_encode(m, &hist, &pm)?,
            Engine::Transformer(m) => ac_encode(m, &hist, &pm)?,
            Engine::Joint(m, b) => {
                let t = ac_encode(m, &hist, &pm)?;
                let h = b.encode_message(&self.schema, msg)?.payload;
                let (sel, inner) = if t.len() <= h.len() { (false, t) } else { (true, h) };
                let mut p = Vec::with_capacity(inner.len() + 1);
                p.push(sel);
                p.extend(inner);
                p
            }
        };
        Ok(CompressedFrame::new(self.method, payload))
    }

    /// Inverse of [`compress_message`](Self::compress_message) under the same history.
    pub fn decompress_message(&mut self, history: &[DciMessage], frame: &CompressedFrame) -> Result<DciMessage> {
        if frame.method != self.method {
            return Err(Error::InvalidArgument(format!(
                "{} frame handed to the {} codec",
                frame.method, self.method
            )));
        }
        let hist = self.permuted_history(history);
        let payload = &frame.payload;
        let permuted = match &mut self.engine {
            Engine::Identity => {
                let msg = DciMessage::new(payload.clone());
                self.schema.validate(&msg).map_err(|_| {
                    Error::CorruptInput(format!("identity frame has {} bits", payload.len()))
                })?;
                return Ok(msg);
            }
            Engine::Huffman(b) => return b.decode_message(&self.schema, frame),
            Engine::Adaptive(m) => ac_decode(m, &hist, payload)?,
            Engine::Rnn(m) => ac_decode(m, &hist, payload)?,
            Engine::Transformer(m) => ac_decode(m, &hist, payload)?,
            Engine::Joint(m, b) => {
                let (&sel, inner) = payload
                    .split_first()
                    .ok_or_else(|| Error::CorruptInput("joint frame without selector bit".into()))?;
                if sel {
                    return b.decode_payload(&self.schema, inner);
                }
                ac_decode(m, &hist, inner)?
            }
        };
        Ok(self.schema.unpermute_message(&permuted, &self.order))
    }

    /// Decodes a payload followed by zero padding, as delivered by blind
    /// length decoding. Returns the message and the frame length K_t.
    pub fn decompress_padded(&mut self, history: &[DciMessage], padded: &[bool]) -> Result<(DciMessage, usize)> {
        let hist = self.permuted_history(history);
        let (permuted, used) = match &mut self.engine {
            Engine::Identity => {
                let n = self.schema.total_bits();
                if padded.len() < n {
                    return Err(Error::TruncatedStream {
                        needed: n,
                        available: padded.len(),
                    });
                }
                (DciMessage::new(padded[..n].to_vec()), n)
            }
            Engine::Huffman(b) => {
                let (msg, used) = b.decode_prefix(&self.schema, padded)?;
                (self.schema.permute_message(&msg, &self.order), used)
            }
            Engine::Adaptive(m) => ac_decode_prefix(m, &hist, padded)?,
            Engine::Rnn(m) => ac_decode_prefix(m, &hist, padded)?,
            Engine::Transformer(m) => ac_decode_prefix(m, &hist, padded)?,
            Engine::Joint(m, b) => {
                let (&sel, inner) = padded
                    .split_first()
                    .ok_or_else(|| Error::CorruptInput("joint frame without selector bit".into()))?;
                let (msg, used) = if sel {
                    let (msg, used) = b.decode_prefix(&self.schema, inner)?;
                    (self.schema.permute_message(&msg, &self.order), used)
                } else {
                    ac_decode_prefix(m, &hist, inner)?
                };
                (msg, used + 1)
            }
        };
        if padded[used..].iter().any(|&b| b) {
            return Err(Error::CorruptInput("non-zero bits in the padding".into()));
        }
        Ok((self.schema.unpermute_message(&permuted, &self.order), used))
    }

    /// Updates adaptive state with a message both sides now know.
    pub fn observe(&mut self, msg: &DciMessage) {
        if let Engine::Adaptive(m) = &mut self.engine {
            m.observe(msg);
        }
    }
}

/// A codec plus the history buffer of decoded original messages.
pub struct StreamCodec {
    codec: MethodCodec,
    history: VecDeque<DciMessage>,
}

impl StreamCodec {
    pub fn new(codec: MethodCodec) -> Self {
        StreamCodec {
            codec,
            history: VecDeque::new(),
        }
    }

    /// Fills the history with the tail of `messages` without coding them.
    pub fn prime<'a>(&mut self, messages: impl IntoIterator<Item = &'a DciMessage>) {
        for m in messages {
            self.push(m.clone());
        }
    }

    fn push(&mut self, msg: DciMessage) {
        let cap = self.codec.memory();
        if cap == 0 {
            return;
        }
        if self.history.len() == cap {
            self.history.pop_front();
        }
        self.history.push_back(msg);
    }

    fn history(&mut self) -> Vec<DciMessage> {
        self.history.iter().cloned().collect()
    }

    pub fn method(&self) -> Method {
        self.codec.method()
    }

    pub fn memory(&self) -> usize {
        self.codec.memory()
    }

    pub fn compress(&mut self, msg: &DciMessage) -> Result<CompressedFrame> {
        let hist = self.history();
        let frame = self.codec.compress_message(&hist, msg)?;
        self.codec.observe(msg);
        self.push(msg.clone());
        Ok(frame)
    }

    pub fn decompress(&mut self, frame: &CompressedFrame) -> Result<DciMessage> {
        let hist = self.history();
        let msg = self.codec.decompress_message(&hist, frame)?;
        self.codec.observe(&msg);
        self.push(msg.clone());
        Ok(msg)
    }
}
