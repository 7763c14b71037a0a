//! Model files.
//!
//! ```text
//! magic "DCIM" | version u16 | kind u8 | schema hash u64
//! field order: count u16, indices u16...
//! config: count u16, values u32...
//! best validation BCE f64 | best epoch u32
//! blocks: count u32, then per block
//!     name len u16, name | rows u32 | cols u32 | data f32... | crc32 u32
//! ```
//!
//! Integers in the header are big-endian; parameter data is little-endian
//! `f32`, and each block's checksum covers its data bytes.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::nn::Params;
use super::rnn::{GruModel, RnnConfig};
use super::transformer::{ModelConfig, Transformer};
use crate::error::{Error, Result};
use crate::schema::DciSchema;

pub const MODEL_MAGIC: [u8; 4] = *b"DCIM";
pub const MODEL_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Transformer,
    Rnn,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingMeta {
    pub best_val_bce: f64,
    pub best_epoch: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StoredNetwork {
    Transformer(Transformer),
    Rnn(GruModel),
}

/// A trained network with what is needed to use it: the original schema's
/// hash and the field order it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredModel {
    pub network: StoredNetwork,
    pub schema_hash: u64,
    pub field_order: Vec<usize>,
    pub meta: TrainingMeta,
}

impl StoredModel {
    pub fn kind(&self) -> ModelKind {
        match self.network {
            StoredNetwork::Transformer(_) => ModelKind::Transformer,
            StoredNetwork::Rnn(_) => ModelKind::Rnn,
        }
    }
}

fn be_u16(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u16::try_from(v).map_err(|_| Error::InvalidArgument(format!("{v} does not fit in u16")))?;
    Ok(w.write_all(&v.to_be_bytes())?)
}

fn be_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{v} does not fit in u32")))?;
    Ok(w.write_all(&v.to_be_bytes())?)
}

fn transformer_config(c: &ModelConfig) -> Vec<usize> {
    vec![
        c.memory,
        c.num_segments,
        c.vocab,
        c.d_model,
        c.heads,
        c.encoder_layers,
        c.decoder_layers,
        c.d_ff,
        c.s_output,
        c.positional as usize,
    ]
}

fn rnn_config(c: &RnnConfig) -> Vec<usize> {
    vec![c.memory, c.hidden, c.bits, c.num_fields]
}

pub fn write_model(model: &StoredModel, w: &mut impl Write) -> Result<()> {
    w.write_all(&MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_be_bytes())?;
    let (kind, config) = match &model.network {
        StoredNetwork::Transformer(t) => (0u8, transformer_config(t.config())),
        StoredNetwork::Rnn(r) => (1u8, rnn_config(r.config())),
    };
    w.write_all(&[kind])?;
    w.write_all(&model.schema_hash.to_be_bytes())?;
    be_u16(w, model.field_order.len())?;
    for &i in &model.field_order {
        be_u16(w, i)?;
    }
    be_u16(w, config.len())?;
    for v in config {
        be_u32(w, v)?;
    }
    w.write_all(&model.meta.best_val_bce.to_be_bytes())?;
    w.write_all(&model.meta.best_epoch.to_be_bytes())?;

    let mut blocks = Vec::new();
    let collect = &mut |name: &str, t: &super::nn::Tensor| {
        blocks.push((name.to_string(), t.rows, t.cols, t.data.clone()))
    };
    match &model.network {
        StoredNetwork::Transformer(t) => t.visit("", collect),
        StoredNetwork::Rnn(r) => r.visit("", collect),
    }
    be_u32(w, blocks.len())?;
    for (name, rows, cols, data) in blocks {
        be_u16(w, name.len())?;
        w.write_all(name.as_bytes())?;
        be_u32(w, rows)?;
        be_u32(w, cols)?;
        let mut bytes = Vec::with_capacity(data.len() * 4);
        for x in data {
            bytes.extend_from_slice(&(x as f32).to_le_bytes());
        }
        w.write_all(&bytes)?;
        w.write_all(&crc32fast::hash(&bytes).to_be_bytes())?;
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::CorruptInput("model file ends early".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<usize> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().expect("2 bytes")) as usize)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Reads a model trained for `schema` (in its original field order).
pub fn read_model(r: &mut impl Read, schema: &DciSchema) -> Result<StoredModel> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(4)? != MODEL_MAGIC {
        return Err(Error::CorruptInput("not a model file".into()));
    }
    let version = c.u16()?;
    if version != MODEL_VERSION as usize {
        return Err(Error::CorruptInput(format!("unsupported model version {version}")));
    }
    let kind = c.u8()?;
    let schema_hash = c.u64()?;
    if schema_hash != schema.hash() {
        return Err(Error::Config(format!(
            "model was trained for schema {schema_hash:016x}, got {:016x}",
            schema.hash()
        )));
    }
    let n_order = c.u16()?;
    let field_order = (0..n_order).map(|_| c.u16()).collect::<Result<Vec<_>>>()?;
    let permuted = schema.permuted(&field_order)?;
    let n_cfg = c.u16()?;
    let cfg = (0..n_cfg)
        .map(|_| c.u32().map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let best_val_bce = f64::from_be_bytes(c.take(8)?.try_into().expect("8 bytes"));
    let best_epoch = c.u32()?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut network = match (kind, cfg.as_slice()) {
        (0, &[memory, num_segments, vocab, d_model, heads, encoder_layers, decoder_layers, d_ff, s_output, positional]) => {
            let config = ModelConfig {
                memory,
                num_segments,
                vocab,
                d_model,
                heads,
                encoder_layers,
                decoder_layers,
                d_ff,
                s_output,
                positional: positional != 0,
            };
            StoredNetwork::Transformer(Transformer::new(&permuted, config, &mut rng)?)
        }
        (1, &[memory, hidden, bits, num_fields]) => {
            if bits != schema.total_bits() {
                return Err(Error::Shape(format!("RNN model has {bits} bits, schema {}", schema.total_bits())));
            }
            let config = RnnConfig {
                memory,
                hidden,
                bits,
                num_fields,
            };
            StoredNetwork::Rnn(GruModel::new(config, &mut rng)?)
        }
        _ => return Err(Error::CorruptInput(format!("unknown model kind {kind} with {n_cfg} config values"))),
    };

    let n_blocks = c.u32()? as usize;
    let mut blocks = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        let len = c.u16()?;
        let name = String::from_utf8(c.take(len)?.to_vec())
            .map_err(|_| Error::CorruptInput("block name is not UTF-8".into()))?;
        let rows = c.u32()? as usize;
        let cols = c.u32()? as usize;
        let bytes = c.take(rows * cols * 4)?;
        let crc = c.u32()?;
        if crc32fast::hash(bytes) != crc {
            return Err(Error::CorruptInput(format!("checksum mismatch in block {name}")));
        }
        let data: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect();
        blocks.push((name, rows, cols, data));
    }
    if c.pos != buf.len() {
        return Err(Error::CorruptInput("trailing bytes after model".into()));
    }
    let mut idx = 0;
    let mut err = None;
    let fill = &mut |name: &str, t: &mut super::nn::Tensor| {
        match blocks.get_mut(idx) {
            Some((n, r, c, d)) if n == name && *r == t.rows && *c == t.cols => {
                t.data = std::mem::take(d);
            }
            _ => {
                err.get_or_insert_with(|| Error::Shape(format!("block {idx} does not match parameter {name}")));
            }
        }
        idx += 1;
    };
    match &mut network {
        StoredNetwork::Transformer(t) => t.visit_mut("", fill),
        StoredNetwork::Rnn(r) => r.visit_mut("", fill),
    }
    if let Some(e) = err {
        return Err(e);
    }
    if idx != blocks.len() {
        return Err(Error::Shape(format!("file has {} blocks, model {idx}", blocks.len())));
    }
    Ok(StoredModel {
        network,
        schema_hash,
        field_order,
        meta: TrainingMeta {
            best_val_bce,
            best_epoch,
        },
    })
}

pub fn save_model(model: &StoredModel, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_model(model, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>, schema: &DciSchema) -> Result<StoredModel> {
    let mut f = std::fs::File::open(path)?;
    read_model(&mut f, schema)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{DciMessage, SegmentPlan};
    use rand::Rng;

    fn trained_like() -> (DciSchema, StoredModel) {
        let schema = DciSchema::default_dci();
        let order: Vec<usize> = (0..schema.num_fields()).rev().collect();
        let permuted = schema.permuted(&order).unwrap();
        let mut cfg = ModelConfig::new(&permuted, 2).unwrap();
        cfg.d_model = 16;
        cfg.heads = 2;
        cfg.d_ff = 16;
        let mut t = Transformer::new(&permuted, cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        t.round_to_f32();
        let model = StoredModel {
            network: StoredNetwork::Transformer(t),
            schema_hash: schema.hash(),
            field_order: order,
            meta: TrainingMeta {
                best_val_bce: 0.123,
                best_epoch: 7,
            },
        };
        (schema, model)
    }

    #[test]
    fn transformer_round_trip_is_bit_exact() {
        let (schema, model) = trained_like();
        let mut buf = Vec::new();
        write_model(&model, &mut buf).unwrap();
        let back = read_model(&mut buf.as_slice(), &schema).unwrap();
        assert_eq!(back, model);

        let StoredNetwork::Transformer(t) = &back.network else { panic!() };
        let permuted = schema.permuted(&back.field_order).unwrap();
        let plan = SegmentPlan::new(&permuted).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let msgs: Vec<DciMessage> = (0..3)
            .map(|_| DciMessage::new((0..39).map(|_| rng.random()).collect()))
            .collect();
        let StoredNetwork::Transformer(orig) = &model.network else { panic!() };
        for k in 0..permuted.num_fields() {
            assert_eq!(
                t.predict_message_field(&plan, &msgs[..2], &msgs[2], k).unwrap(),
                orig.predict_message_field(&plan, &msgs[..2], &msgs[2], k).unwrap()
            );
        }
    }

    #[test]
    fn rnn_round_trip_is_bit_exact() {
        let schema = DciSchema::default_dci();
        let mut g = GruModel::new(RnnConfig::new(39, 10, 1), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        g.round_to_f32();
        let model = StoredModel {
            network: StoredNetwork::Rnn(g),
            schema_hash: schema.hash(),
            field_order: (0..10).collect(),
            meta: TrainingMeta {
                best_val_bce: 0.5,
                best_epoch: 1,
            },
        };
        let mut buf = Vec::new();
        write_model(&model, &mut buf).unwrap();
        assert_eq!(read_model(&mut buf.as_slice(), &schema).unwrap(), model);
    }

    #[test]
    fn corruption_and_mismatch_are_detected() {
        let (schema, model) = trained_like();
        let mut buf = Vec::new();
        write_model(&model, &mut buf).unwrap();

        let mut flipped = buf.clone();
        let last = flipped.len() - 10;
        flipped[last] ^= 0x40;
        assert!(matches!(read_model(&mut flipped.as_slice(), &schema), Err(Error::CorruptInput(_))));

        let other = schema.with_eta(4).unwrap();
        assert!(matches!(read_model(&mut buf.as_slice(), &other), Err(Error::Config(_))));

        buf.truncate(buf.len() - 1);
        assert!(read_model(&mut buf.as_slice(), &schema).is_err());
    }
}
