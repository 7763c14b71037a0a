//! Entropy-coding primitives: a binary arithmetic coder fed by external
//! probabilities and a per-field canonical Huffman baseline.

pub mod arith;
pub mod frame;
pub mod huffman;

pub use arith::{quantize, ArithmeticDecoder, ArithmeticEncoder, QuantizedProb, P_MIN};
pub use frame::{CompressedFrame, Method};
pub use huffman::{FieldCodebook, HuffmanCodebooks, Symbol};
