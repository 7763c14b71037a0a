use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::schema::{pack_bits, unpack_bits};

/// Compression method that produced a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// Raw message bits.
    Identity,
    Huffman,
    /// Arithmetic coding with per-position bit counts.
    Adaptive,
    /// Arithmetic coding with the bit-wise GRU.
    Rnn,
    /// Arithmetic coding with the field-wise transformer.
    Transformer,
    /// Selector bit plus the shorter of the transformer and Huffman frames.
    Joint,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Identity,
        Method::Huffman,
        Method::Adaptive,
        Method::Rnn,
        Method::Transformer,
        Method::Joint,
    ];

    pub fn tag(self) -> u8 {
        match self {
            Method::Identity => 0,
            Method::Huffman => 1,
            Method::Adaptive => 2,
            Method::Rnn => 3,
            Method::Transformer => 4,
            Method::Joint => 5,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.tag() == tag)
            .ok_or_else(|| Error::CorruptInput(format!("unknown method tag {tag}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Identity => "identity",
            Method::Huffman => "huffman",
            Method::Adaptive => "adaptive",
            Method::Rnn => "rnn",
            Method::Transformer => "transformer",
            Method::Joint => "joint",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method `{s}`")))
    }
}

/// A compressed message; `len()` is K_t.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompressedFrame {
    pub method: Method,
    pub payload: Vec<bool>,
}

impl CompressedFrame {
    pub fn new(method: Method, payload: Vec<bool>) -> Self {
        CompressedFrame { method, payload }
    }

    pub fn len(&self) -> usize {
        self.payload.len()
    }

    pub fn is_empty(&self) -> bool {
        self.payload.is_empty()
    }

    /// Tag byte, 16-bit big-endian bit length, then the payload packed
    /// big-endian into whole bytes.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let len = u16::try_from(self.payload.len())
            .map_err(|_| Error::InvalidArgument("frame longer than 65535 bits".into()))?;
        w.write_all(&[self.method.tag()])?;
        w.write_all(&len.to_be_bytes())?;
        w.write_all(&pack_bits(&self.payload))?;
        Ok(())
    }

    /// Reads one frame; `Ok(None)` at a clean end of stream.
    pub fn read_from(r: &mut impl Read) -> Result<Option<Self>> {
        let mut tag = [0u8; 1];
        match r.read_exact(&mut tag) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(e.into()),
        }
        let method = Method::from_tag(tag[0])?;
        let mut len = [0u8; 2];
        r.read_exact(&mut len)?;
        let n = u16::from_be_bytes(len) as usize;
        let mut bytes = vec![0u8; n.div_ceil(8)];
        r.read_exact(&mut bytes)?;
        Ok(Some(CompressedFrame::new(method, unpack_bits(&bytes, n))))
    }
}
