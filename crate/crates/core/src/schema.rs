//! Bitfield layout of a DCI message.
//!
//! A [`DciSchema`] is an ordered list of fixed-width fields. For embedding, each
//! field is cut into segments of at most `eta` bits; every segment value maps
//! into one flat token dictionary through a [`SegmentPlan`].

use std::fmt;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Widest field a schema accepts.
pub const MAX_FIELD_WIDTH: usize = 32;
/// Widest segment width accepted for `eta`.
pub const MAX_ETA: usize = 16;
/// Segment width used when a schema file does not set one.
pub const DEFAULT_ETA: usize = 8;

const DEFAULT_SCHEMA_TEXT: &str = include_str!("../../../configs/dci_39.schema");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldSpec {
    pub name: String,
    pub width: usize,
}

impl FieldSpec {
    pub fn new(name: impl Into<String>, width: usize) -> Self {
        FieldSpec {
            name: name.into(),
            width,
        }
    }
}

/// Ordered field layout plus the segment width used for tokenization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DciSchema {
    fields: Vec<FieldSpec>,
    eta: usize,
    offsets: Vec<usize>,
    total_bits: usize,
}

impl DciSchema {
    pub fn new(fields: Vec<FieldSpec>, eta: usize) -> Result<Self> {
        if fields.is_empty() {
            return Err(Error::InvalidArgument("schema needs at least one field".into()));
        }
        if eta == 0 || eta > MAX_ETA {
            return Err(Error::InvalidArgument(format!(
                "eta must be in 1..={MAX_ETA}, got {eta}"
            )));
        }
        let mut offsets = Vec::with_capacity(fields.len());
        let mut total = 0;
        for (i, f) in fields.iter().enumerate() {
            if f.width == 0 || f.width > MAX_FIELD_WIDTH {
                return Err(Error::InvalidArgument(format!(
                    "field `{}` width must be in 1..={MAX_FIELD_WIDTH}, got {}",
                    f.name, f.width
                )));
            }
            if f.name.is_empty() || f.name.chars().any(char::is_whitespace) {
                return Err(Error::InvalidArgument(format!("bad field name `{}`", f.name)));
            }
            if fields[..i].iter().any(|g| g.name == f.name) {
                return Err(Error::InvalidArgument(format!("duplicate field `{}`", f.name)));
            }
            offsets.push(total);
            total += f.width;
        }
        Ok(DciSchema {
            fields,
            eta,
            offsets,
            total_bits: total,
        })
    }

    /// The 39-bit layout shipped with the crate.
    pub fn default_dci() -> Self {
        Self::parse(DEFAULT_SCHEMA_TEXT).expect("bundled schema is valid")
    }

    /// Parses the text format: an optional `eta <value>` line followed by one
    /// `name width` line per field. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut eta = None;
        let mut fields = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let name = parts.next().unwrap_or_default();
            let value = parts.next().ok_or_else(|| Error::Parse {
                line: line_no,
                msg: format!("expected `name width`, got `{line}`"),
            })?;
            if parts.next().is_some() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("trailing tokens in `{line}`"),
                });
            }
            let value: usize = value.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("`{value}` is not a non-negative integer"),
            })?;
            if name == "eta" {
                if eta.is_some() {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: "eta given twice".into(),
                    });
                }
                eta = Some(value);
            } else {
                fields.push((line_no, FieldSpec::new(name, value)));
            }
        }
        // Re-run validation per field so errors carry the offending line.
        let mut accepted: Vec<FieldSpec> = Vec::with_capacity(fields.len());
        for (line_no, f) in fields {
            if f.width == 0 || f.width > MAX_FIELD_WIDTH {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("field `{}` width must be in 1..={MAX_FIELD_WIDTH}", f.name),
                });
            }
            if accepted.iter().any(|g| g.name == f.name) {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("duplicate field `{}`", f.name),
                });
            }
            accepted.push(f);
        }
        DciSchema::new(accepted, eta.unwrap_or(DEFAULT_ETA))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Canonical text form; `parse(to_text())` reproduces the schema.
    pub fn to_text(&self) -> String {
        let mut out = format!("eta {}\n", self.eta);
        for f in &self.fields {
            out.push_str(&format!("{} {}\n", f.name, f.width));
        }
        out
    }

    /// First 64 bits of the SHA-256 of the canonical text.
    pub fn hash(&self) -> u64 {
        let digest = Sha256::digest(self.to_text().as_bytes());
        u64::from_be_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
    }

    pub fn fields(&self) -> &[FieldSpec] {
        &self.fields
    }

    pub fn num_fields(&self) -> usize {
        self.fields.len()
    }

    pub fn eta(&self) -> usize {
        self.eta
    }

    /// N, the message length in bits.
    pub fn total_bits(&self) -> usize {
        self.total_bits
    }

    pub fn width(&self, k: usize) -> usize {
        self.fields[k].width
    }

    pub fn max_width(&self) -> usize {
        self.fields.iter().map(|f| f.width).max().unwrap_or(0)
    }

    /// Bit offset of field `k` inside a message.
    pub fn field_offset(&self, k: usize) -> usize {
        self.offsets[k]
    }

    pub fn field_range(&self, k: usize) -> std::ops::Range<usize> {
        self.offsets[k]..self.offsets[k] + self.fields[k].width
    }

    pub fn field_index(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == name)
    }

    /// Schema with fields rearranged so that new field `i` is old field `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        check_permutation(order, self.num_fields())?;
        let fields = order.iter().map(|&k| self.fields[k].clone()).collect();
        DciSchema::new(fields, self.eta)
    }

    /// Same fields, different segment width.
    pub fn with_eta(&self, eta: usize) -> Result<Self> {
        DciSchema::new(self.fields.clone(), eta)
    }

    /// Builds a message from per-field integer values (big-endian bits).
    pub fn pack(&self, values: &[u64]) -> Result<DciMessage> {
        if values.len() != self.num_fields() {
            return Err(Error::InvalidArgument(format!(
                "expected {} field values, got {}",
                self.num_fields(),
                values.len()
            )));
        }
        let mut bits = Vec::with_capacity(self.total_bits);
        for (f, &v) in self.fields.iter().zip(values) {
            if f.width < 64 && v >> f.width != 0 {
                return Err(Error::InvalidArgument(format!(
                    "value {v} does not fit field `{}` ({} bits)",
                    f.name, f.width
                )));
            }
            push_uint(&mut bits, v, f.width);
        }
        Ok(DciMessage { bits })
    }

    /// Per-field integer values of a message.
    pub fn unpack(&self, msg: &DciMessage) -> Vec<u64> {
        (0..self.num_fields())
            .map(|k| read_uint(&msg.bits[self.field_range(k)]))
            .collect()
    }

    pub fn field_value(&self, msg: &DciMessage, k: usize) -> u64 {
        read_uint(&msg.bits[self.field_range(k)])
    }

    pub fn validate(&self, msg: &DciMessage) -> Result<()> {
        if msg.len() != self.total_bits {
            return Err(Error::InvalidArgument(format!(
                "message has {} bits, schema expects {}",
                msg.len(),
                self.total_bits
            )));
        }
        Ok(())
    }

    /// The D per-field bit vectors of a message.
    pub fn split_fields(&self, msg: &DciMessage) -> Vec<Vec<bool>> {
        (0..self.num_fields())
            .map(|k| msg.bits[self.field_range(k)].to_vec())
            .collect()
    }

    /// Reorders the fields of a message laid out by `self` into the layout of
    /// `self.permuted(order)`.
    pub fn permute_message(&self, msg: &DciMessage, order: &[usize]) -> DciMessage {
        let mut bits = Vec::with_capacity(self.total_bits);
        for &k in order {
            bits.extend_from_slice(&msg.bits[self.field_range(k)]);
        }
        DciMessage { bits }
    }

    /// Inverse of [`permute_message`](Self::permute_message).
    pub fn unpermute_message(&self, permuted: &DciMessage, order: &[usize]) -> DciMessage {
        let mut bits = vec![false; self.total_bits];
        let mut pos = 0;
        for &k in order {
            let r = self.field_range(k);
            let w = r.len();
            bits[r].copy_from_slice(&permuted.bits[pos..pos + w]);
            pos += w;
        }
        DciMessage { bits }
    }
}

impl fmt::Display for DciSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} fields, {} bits, eta {}", self.num_fields(), self.total_bits, self.eta)
    }
}

pub(crate) fn check_permutation(order: &[usize], n: usize) -> Result<()> {
    if order.len() != n {
        return Err(Error::InvalidArgument(format!(
            "permutation has {} entries, expected {n}",
            order.len()
        )));
    }
    let mut seen = vec![false; n];
    for &k in order {
        if k >= n || seen[k] {
            return Err(Error::InvalidArgument(format!("{order:?} is not a permutation")));
        }
        seen[k] = true;
    }
    Ok(())
}

/// One N-bit message, field-major in schema order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DciMessage {
    pub bits: Vec<bool>,
}

impl DciMessage {
    pub fn new(bits: Vec<bool>) -> Self {
        DciMessage { bits }
    }

    pub fn zeros(n: usize) -> Self {
        DciMessage {
            bits: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Big-endian packing, zero padded to whole bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        pack_bits(&self.bits)
    }

    pub fn from_bytes(bytes: &[u8], n: usize) -> Result<Self> {
        if bytes.len() != n.div_ceil(8) {
            return Err(Error::CorruptInput(format!(
                "{} payload bytes for a {n}-bit message",
                bytes.len()
            )));
        }
        let bits = unpack_bits(bytes, n);
        if pack_bits(&bits) != bytes {
            return Err(Error::CorruptInput("non-zero padding bits".into()));
        }
        Ok(DciMessage { bits })
    }

    pub fn to_hex(&self) -> String {
        self.to_bytes().iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Display for DciMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

pub(crate) fn push_uint(bits: &mut Vec<bool>, value: u64, width: usize) {
    for i in (0..width).rev() {
        bits.push((value >> i) & 1 == 1);
    }
}

pub(crate) fn read_uint(bits: &[bool]) -> u64 {
    bits.iter().fold(0, |acc, &b| (acc << 1) | b as u64)
}

pub fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 0x80 >> (i % 8);
        }
    }
    out
}

pub fn unpack_bits(bytes: &[u8], n: usize) -> Vec<bool> {
    (0..n).map(|i| bytes[i / 8] & (0x80 >> (i % 8)) != 0).collect()
}

/// Eq. (1)-style segmentation of one field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldSegmentation {
    /// Number of full `eta`-bit segments.
    pub quotient: usize,
    /// Width of the trailing partial segment (0 when there is none).
    pub remainder: usize,
    /// Alphabet size the field occupies in the flat dictionary.
    pub alphabet: usize,
}

impl FieldSegmentation {
    pub fn segment_count(&self) -> usize {
        self.quotient + usize::from(self.remainder > 0)
    }
}

/// Segmentation of a `width`-bit field into integers of at most `eta` bits.
///
/// A field no wider than `eta` is a single segment with `2^width` symbols.
/// Otherwise it has `q = width / eta` full segments plus, when `width mod eta`
/// is non-zero, one trailing segment of that width.
pub fn segment_field(width: usize, eta: usize) -> Result<FieldSegmentation> {
    if width == 0 || eta == 0 {
        return Err(Error::InvalidArgument(format!(
            "segment_field needs width, eta >= 1 (got {width}, {eta})"
        )));
    }
    if width > MAX_FIELD_WIDTH || eta > MAX_ETA {
        return Err(Error::InvalidArgument(format!(
            "width {width} / eta {eta} out of range"
        )));
    }
    if width <= eta {
        return Ok(FieldSegmentation {
            quotient: 0,
            remainder: width,
            alphabet: 1 << width,
        });
    }
    let quotient = width / eta;
    let remainder = width % eta;
    let tail = if remainder > 0 { 1 << remainder } else { 0 };
    Ok(FieldSegmentation {
        quotient,
        remainder,
        alphabet: quotient * (1 << eta) + tail,
    })
}

/// One integer token of the message's integer form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub field: usize,
    /// Bit offset inside the message.
    pub bit_offset: usize,
    pub width: usize,
    /// First dictionary index owned by this segment.
    pub token_offset: usize,
}

impl Segment {
    pub fn alphabet(&self) -> usize {
        1 << self.width
    }
}

/// Mapping between messages and their integer (token) form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentPlan {
    fields: Vec<FieldSegmentation>,
    segments: Vec<Segment>,
    field_first_segment: Vec<usize>,
    field_token_offset: Vec<usize>,
    dictionary_size: usize,
    total_bits: usize,
}

impl SegmentPlan {
    pub fn new(schema: &DciSchema) -> Result<Self> {
        let eta = schema.eta();
        let mut fields = Vec::with_capacity(schema.num_fields());
        let mut segments = Vec::new();
        let mut field_first_segment = Vec::with_capacity(schema.num_fields());
        let mut field_token_offset = Vec::with_capacity(schema.num_fields());
        let mut token = 0;
        for k in 0..schema.num_fields() {
            let width = schema.width(k);
            let seg = segment_field(width, eta)?;
            field_first_segment.push(segments.len());
            field_token_offset.push(token);
            let mut bit = schema.field_offset(k);
            let mut widths = vec![eta; seg.quotient];
            if seg.remainder > 0 {
                widths.push(seg.remainder);
            }
            for w in widths {
                segments.push(Segment {
                    field: k,
                    bit_offset: bit,
                    width: w,
                    token_offset: token,
                });
                bit += w;
                token += 1 << w;
            }
            debug_assert_eq!(token - field_token_offset[k], seg.alphabet);
            fields.push(seg);
        }
        Ok(SegmentPlan {
            fields,
            segments,
            field_first_segment,
            field_token_offset,
            dictionary_size: token,
            total_bits: schema.total_bits(),
        })
    }

    /// R, the number of integers per message.
    pub fn num_segments(&self) -> usize {
        self.segments.len()
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn field(&self, k: usize) -> &FieldSegmentation {
        &self.fields[k]
    }

    pub fn num_fields(&self) -> usize {
        self.fields.len()
    }

    /// Index of the first segment belonging to field `k`.
    pub fn first_segment(&self, k: usize) -> usize {
        self.field_first_segment[k]
    }

    pub fn field_segments(&self, k: usize) -> &[Segment] {
        let start = self.field_first_segment[k];
        let end = self
            .field_first_segment
            .get(k + 1)
            .copied()
            .unwrap_or(self.segments.len());
        &self.segments[start..end]
    }

    pub fn field_token_offset(&self, k: usize) -> usize {
        self.field_token_offset[k]
    }

    /// Σ s_k, the number of data tokens.
    pub fn dictionary_size(&self) -> usize {
        self.dictionary_size
    }

    /// Token reserved for padding and warm-up pseudo-messages.
    pub fn padding_token(&self) -> usize {
        self.dictionary_size
    }

    pub fn message_to_integers(&self, msg: &DciMessage) -> Result<Vec<usize>> {
        if msg.len() != self.total_bits {
            return Err(Error::InvalidArgument(format!(
                "message has {} bits, plan expects {}",
                msg.len(),
                self.total_bits
            )));
        }
        Ok(self
            .segments
            .iter()
            .map(|s| {
                s.token_offset + read_uint(&msg.bits[s.bit_offset..s.bit_offset + s.width]) as usize
            })
            .collect())
    }

    pub fn integers_to_message(&self, tokens: &[usize]) -> Result<DciMessage> {
        if tokens.len() != self.segments.len() {
            return Err(Error::CorruptInput(format!(
                "{} integers, plan has {} segments",
                tokens.len(),
                self.segments.len()
            )));
        }
        let mut bits = Vec::with_capacity(self.total_bits);
        for (i, (s, &t)) in self.segments.iter().zip(tokens).enumerate() {
            if t < s.token_offset || t >= s.token_offset + s.alphabet() {
                return Err(Error::CorruptInput(format!(
                    "integer {t} at position {i} outside [{}, {})",
                    s.token_offset,
                    s.token_offset + s.alphabet()
                )));
            }
            push_uint(&mut bits, (t - s.token_offset) as u64, s.width);
        }
        Ok(DciMessage { bits })
    }
}
