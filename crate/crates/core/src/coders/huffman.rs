//! Per-field canonical Huffman baseline.
//!
//! Each field gets its own code over the values seen in training plus an
//! escape symbol; an unseen value is sent as the escape codeword followed by
//! the raw field bits.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::fmt::Write as _;

use crate::coders::frame::{CompressedFrame, Method};
use crate::error::{Error, Result};
use crate::schema::{push_uint, read_uint, DciMessage, DciSchema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Symbol {
    Value(u64),
    Escape,
}

/// Optimal prefix-code lengths for `(symbol, weight)` pairs.
///
/// Ties in the merge queue are broken by `(weight, symbol)` for leaves, and
/// internal nodes sort after all leaves of equal weight in creation order.
pub fn code_lengths(weights: &[(Symbol, u64)]) -> Vec<(Symbol, u32)> {
    let mut leaves: Vec<(Symbol, u64)> = weights.to_vec();
    leaves.sort_by_key(|&(s, w)| (w, s));
    if leaves.len() == 1 {
        return vec![(leaves[0].0, 1)];
    }
    let n = leaves.len();
    // parent[i] for leaves 0..n and internal nodes n..2n-1
    let mut parent = vec![usize::MAX; 2 * n - 1];
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> = leaves
        .iter()
        .enumerate()
        .map(|(i, &(_, w))| Reverse((w, i)))
        .collect();
    let mut next = n;
    while heap.len() > 1 {
        let Reverse((wa, a)) = heap.pop().expect("len > 1");
        let Reverse((wb, b)) = heap.pop().expect("len > 1");
        parent[a] = next;
        parent[b] = next;
        heap.push(Reverse((wa + wb, next)));
        next += 1;
    }
    let root = next - 1;
    let mut depth = vec![0u32; 2 * n - 1];
    for i in (0..root).rev() {
        depth[i] = depth[parent[i]] + 1;
    }
    leaves
        .iter()
        .enumerate()
        .map(|(i, &(s, _))| (s, depth[i]))
        .collect()
}

/// Canonical code for one field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldCodebook {
    width: usize,
    /// Symbols sorted by (length, symbol); canonical codes follow this order.
    sorted: Vec<(Symbol, u32)>,
    codes: HashMap<Symbol, (u64, u32)>,
    /// Per length: (first code, first index into `sorted`, count).
    by_length: Vec<(u64, usize, usize)>,
}

impl FieldCodebook {
    /// Builds the code from observed value counts; the escape symbol is added
    /// with weight zero.
    pub fn build(histogram: &BTreeMap<u64, u64>, width: usize) -> Result<Self> {
        if histogram.is_empty() {
            return Err(Error::InvalidArgument("empty histogram".into()));
        }
        let mut weights: Vec<(Symbol, u64)> =
            histogram.iter().map(|(&v, &c)| (Symbol::Value(v), c)).collect();
        weights.push((Symbol::Escape, 0));
        Self::from_lengths(code_lengths(&weights), width)
    }

    /// Rebuilds the canonical code from symbol lengths.
    pub fn from_lengths(mut lengths: Vec<(Symbol, u32)>, width: usize) -> Result<Self> {
        lengths.sort_by_key(|&(s, l)| (l, s));
        let max_len = lengths.last().map(|&(_, l)| l).unwrap_or(0);
        if max_len == 0 || max_len > 63 {
            return Err(Error::InvalidArgument(format!("unsupported code length {max_len}")));
        }
        if !lengths.iter().any(|&(s, _)| s == Symbol::Escape) {
            return Err(Error::InvalidArgument("codebook lacks an escape symbol".into()));
        }
        let kraft: f64 = lengths.iter().map(|&(_, l)| (-(l as f64)).exp2()).sum();
        if kraft > 1.0 + 1e-12 {
            return Err(Error::CorruptInput(format!("Kraft sum {kraft} exceeds 1")));
        }
        let mut codes = HashMap::with_capacity(lengths.len());
        let mut by_length = vec![(0u64, 0usize, 0usize); max_len as usize + 1];
        let mut code = 0u64;
        let mut prev_len = lengths[0].1;
        for (i, &(s, l)) in lengths.iter().enumerate() {
            if l == 0 {
                return Err(Error::CorruptInput("zero-length codeword".into()));
            }
            if i > 0 {
                code = (code + 1) << (l - prev_len);
            }
            if codes.insert(s, (code, l)).is_some() {
                return Err(Error::CorruptInput(format!("duplicate symbol {s:?}")));
            }
            let slot = &mut by_length[l as usize];
            if slot.2 == 0 {
                *slot = (code, i, 0);
            }
            slot.2 += 1;
            prev_len = l;
        }
        Ok(FieldCodebook {
            width,
            sorted: lengths,
            codes,
            by_length,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len_of(&self, symbol: Symbol) -> Option<u32> {
        self.codes.get(&symbol).map(|&(_, l)| l)
    }

    /// (value, length) pairs sorted by value, then the escape length.
    pub fn value_lengths(&self) -> (Vec<(u64, u32)>, u32) {
        let mut values: Vec<(u64, u32)> = self
            .sorted
            .iter()
            .filter_map(|&(s, l)| match s {
                Symbol::Value(v) => Some((v, l)),
                Symbol::Escape => None,
            })
            .collect();
        values.sort_unstable();
        (values, self.len_of(Symbol::Escape).expect("escape always present"))
    }

    pub fn kraft_sum(&self) -> f64 {
        self.sorted.iter().map(|&(_, l)| (-(l as f64)).exp2()).sum()
    }

    /// Bits needed to send `value`.
    pub fn encoded_len(&self, value: u64) -> usize {
        match self.codes.get(&Symbol::Value(value)) {
            Some(&(_, l)) => l as usize,
            None => self.codes[&Symbol::Escape].1 as usize + self.width,
        }
    }

    pub fn encode(&self, value: u64, out: &mut Vec<bool>) {
        match self.codes.get(&Symbol::Value(value)) {
            Some(&(code, len)) => push_uint(out, code, len as usize),
            None => {
                let (code, len) = self.codes[&Symbol::Escape];
                push_uint(out, code, len as usize);
                push_uint(out, value, self.width);
            }
        }
    }

    /// Decodes one value starting at `*pos`.
    pub fn decode(&self, bits: &[bool], pos: &mut usize) -> Result<u64> {
        let mut code = 0u64;
        for len in 1..self.by_length.len() {
            let bit = *bits
                .get(*pos)
                .ok_or_else(|| Error::CorruptInput("Huffman frame ends mid-codeword".into()))?;
            *pos += 1;
            code = (code << 1) | bit as u64;
            let (first, index, count) = self.by_length[len];
            if count > 0 && code >= first && code - first < count as u64 {
                return match self.sorted[index + (code - first) as usize].0 {
                    Symbol::Value(v) => Ok(v),
                    Symbol::Escape => {
                        let end = *pos + self.width;
                        if end > bits.len() {
                            return Err(Error::CorruptInput("Huffman frame ends mid-escape".into()));
                        }
                        let v = read_uint(&bits[*pos..end]);
                        *pos = end;
                        Ok(v)
                    }
                };
            }
        }
        Err(Error::CorruptInput("invalid Huffman codeword".into()))
    }
}

/// One codebook per schema field, tied to a schema hash.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HuffmanCodebooks {
    schema_hash: u64,
    fields: Vec<FieldCodebook>,
}

impl HuffmanCodebooks {
    pub fn build<'a>(
        schema: &DciSchema,
        messages: impl IntoIterator<Item = &'a DciMessage>,
    ) -> Result<Self> {
        let mut hists = vec![BTreeMap::<u64, u64>::new(); schema.num_fields()];
        for msg in messages {
            schema.validate(msg)?;
            for (k, v) in schema.unpack(msg).into_iter().enumerate() {
                *hists[k].entry(v).or_default() += 1;
            }
        }
        let fields = hists
            .iter()
            .enumerate()
            .map(|(k, h)| FieldCodebook::build(h, schema.width(k)))
            .collect::<Result<_>>()?;
        Ok(HuffmanCodebooks {
            schema_hash: schema.hash(),
            fields,
        })
    }

    pub fn schema_hash(&self) -> u64 {
        self.schema_hash
    }

    pub fn field(&self, k: usize) -> &FieldCodebook {
        &self.fields[k]
    }

    pub fn check_schema(&self, schema: &DciSchema) -> Result<()> {
        if schema.hash() != self.schema_hash || schema.num_fields() != self.fields.len() {
            return Err(Error::Config(format!(
                "codebooks were built for schema {:016x}, got {:016x}",
                self.schema_hash,
                schema.hash()
            )));
        }
        Ok(())
    }

    pub fn encoded_len(&self, schema: &DciSchema, msg: &DciMessage) -> usize {
        schema
            .unpack(msg)
            .iter()
            .zip(&self.fields)
            .map(|(&v, cb)| cb.encoded_len(v))
            .sum()
    }

    pub fn encode_message(&self, schema: &DciSchema, msg: &DciMessage) -> Result<CompressedFrame> {
        self.check_schema(schema)?;
        schema.validate(msg)?;
        let mut payload = Vec::new();
        for (v, cb) in schema.unpack(msg).into_iter().zip(&self.fields) {
            cb.encode(v, &mut payload);
        }
        Ok(CompressedFrame::new(Method::Huffman, payload))
    }

    pub fn decode_message(&self, schema: &DciSchema, frame: &CompressedFrame) -> Result<DciMessage> {
        self.check_schema(schema)?;
        self.decode_payload(schema, &frame.payload)
    }

    /// Decodes one message from the front of `bits`; returns it with the
    /// number of bits read.
    pub fn decode_prefix(&self, schema: &DciSchema, bits: &[bool]) -> Result<(DciMessage, usize)> {
        self.check_schema(schema)?;
        let mut pos = 0;
        let values = self
            .fields
            .iter()
            .map(|cb| cb.decode(bits, &mut pos))
            .collect::<Result<Vec<_>>>()?;
        Ok((schema.pack(&values)?, pos))
    }

    pub(crate) fn decode_payload(&self, schema: &DciSchema, payload: &[bool]) -> Result<DciMessage> {
        let (msg, pos) = self.decode_prefix(schema, payload)?;
        if pos != payload.len() {
            return Err(Error::CorruptInput(format!(
                "{} trailing bits after Huffman payload",
                payload.len() - pos
            )));
        }
        Ok(msg)
    }

    pub fn to_text(&self, schema: &DciSchema) -> String {
        let mut out = String::from("# canonical Huffman codebooks: value length\n");
        let _ = writeln!(out, "schema {:016x}", self.schema_hash);
        for (f, cb) in schema.fields().iter().zip(&self.fields) {
            let (values, esc) = cb.value_lengths();
            let _ = writeln!(out, "field {} {} {}", f.name, cb.width, values.len());
            for (v, l) in values {
                let _ = writeln!(out, "{v} {l}");
            }
            let _ = writeln!(out, "escape {esc}");
        }
        out
    }

    pub fn parse(text: &str, schema: &DciSchema) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let perr = |line: usize, msg: &str| Error::Parse {
            line,
            msg: msg.to_string(),
        };
        let (ln, header) = lines.next().ok_or_else(|| perr(0, "empty codebook file"))?;
        let hash = header
            .strip_prefix("schema ")
            .and_then(|h| u64::from_str_radix(h.trim(), 16).ok())
            .ok_or_else(|| perr(ln, "expected `schema <hex hash>`"))?;
        if hash != schema.hash() {
            return Err(Error::Config(format!(
                "codebook schema hash {hash:016x} does not match {:016x}",
                schema.hash()
            )));
        }
        let mut fields = Vec::with_capacity(schema.num_fields());
        for spec in schema.fields() {
            let (ln, head) = lines.next().ok_or_else(|| perr(0, "missing field block"))?;
            let parts: Vec<&str> = head.split_whitespace().collect();
            if parts.len() != 4 || parts[0] != "field" || parts[1] != spec.name {
                return Err(perr(ln, &format!("expected `field {} ...`", spec.name)));
            }
            let width: usize = parts[2].parse().map_err(|_| perr(ln, "bad width"))?;
            let count: usize = parts[3].parse().map_err(|_| perr(ln, "bad count"))?;
            if width != spec.width {
                return Err(perr(ln, "width differs from schema"));
            }
            let mut lengths = Vec::with_capacity(count + 1);
            for _ in 0..count {
                let (ln, l) = lines.next().ok_or_else(|| perr(0, "truncated field block"))?;
                let mut it = l.split_whitespace();
                let v: u64 = it
                    .next()
                    .and_then(|x| x.parse().ok())
                    .ok_or_else(|| perr(ln, "bad value"))?;
                let len: u32 = it
                    .next()
                    .and_then(|x| x.parse().ok())
                    .ok_or_else(|| perr(ln, "bad length"))?;
                lengths.push((Symbol::Value(v), len));
            }
            let (ln, l) = lines.next().ok_or_else(|| perr(0, "missing escape line"))?;
            let esc: u32 = l
                .strip_prefix("escape ")
                .and_then(|x| x.trim().parse().ok())
                .ok_or_else(|| perr(ln, "expected `escape <length>`"))?;
            lengths.push((Symbol::Escape, esc));
            fields.push(FieldCodebook::from_lengths(lengths, width).map_err(|e| perr(ln, &e.to_string()))?);
        }
        Ok(HuffmanCodebooks {
            schema_hash: hash,
            fields,
        })
    }
}
