//! Binary arithmetic coder driven by externally supplied probabilities.
//!
//! 32-bit low/high registers with pending-bit (underflow) handling. All range
//! arithmetic is integer; the only floating-point step is [`quantize`], which
//! both sides apply to the model output before touching the coder.

use crate::error::{Error, Result};

/// Probabilities are carried as multiples of `1 / PROB_ONE`.
pub const PROB_BITS: u32 = 16;
pub const PROB_ONE: u32 = 1 << PROB_BITS;
/// Smallest probability either symbol may receive.
pub const P_MIN: f64 = 1.0 / 4096.0;
const Q_MIN: u32 = PROB_ONE / 4096;

const TOP: u64 = 1 << 32;
const HALF: u64 = TOP / 2;
const QUARTER: u64 = TOP / 4;
const THREE_QUARTERS: u64 = 3 * QUARTER;

/// Bits the encoder appends when finishing a stream.
pub const FLUSH_BITS: usize = 2;

/// Probability of a one, quantized to 16 bits and clamped to `[P_MIN, 1 - P_MIN]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QuantizedProb(u32);

impl QuantizedProb {
    pub const HALF: QuantizedProb = QuantizedProb(PROB_ONE / 2);

    pub fn raw(self) -> u32 {
        self.0
    }

    pub fn from_raw(raw: u32) -> Self {
        QuantizedProb(raw.clamp(Q_MIN, PROB_ONE - Q_MIN))
    }

    pub fn p1(self) -> f64 {
        self.0 as f64 / PROB_ONE as f64
    }

    /// Ideal code length in bits for `bit` under this probability.
    pub fn cost(self, bit: bool) -> f64 {
        let p = if bit { self.p1() } else { 1.0 - self.p1() };
        -p.log2()
    }
}

/// Maps a model probability of a one onto the coder's grid. NaN maps to 1/2.
pub fn quantize(p1: f64) -> QuantizedProb {
    if p1.is_nan() {
        return QuantizedProb::HALF;
    }
    let p = p1.clamp(P_MIN, 1.0 - P_MIN);
    QuantizedProb::from_raw((p * PROB_ONE as f64).round() as u32)
}

/// Upper end of the zero sub-interval for the current range.
#[inline]
fn split(low: u64, high: u64, p: QuantizedProb) -> u64 {
    let range = high - low + 1;
    let p0 = (PROB_ONE - p.0) as u64;
    low + ((range * p0) >> PROB_BITS) - 1
}

#[derive(Debug, Clone)]
pub struct ArithmeticEncoder {
    low: u64,
    high: u64,
    pending: usize,
    out: Vec<bool>,
}

impl Default for ArithmeticEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl ArithmeticEncoder {
    pub fn new() -> Self {
        ArithmeticEncoder {
            low: 0,
            high: TOP - 1,
            pending: 0,
            out: Vec::new(),
        }
    }

    fn emit(&mut self, bit: bool) {
        self.out.push(bit);
        for _ in 0..self.pending {
            self.out.push(!bit);
        }
        self.pending = 0;
    }

    pub fn encode(&mut self, bit: bool, p: QuantizedProb) {
        let mid = split(self.low, self.high, p);
        if bit {
            self.low = mid + 1;
        } else {
            self.high = mid;
        }
        debug_assert!(self.low <= self.high);
        loop {
            if self.high < HALF {
                self.emit(false);
            } else if self.low >= HALF {
                self.emit(true);
                self.low -= HALF;
                self.high -= HALF;
            } else if self.low >= QUARTER && self.high < THREE_QUARTERS {
                self.pending += 1;
                self.low -= QUARTER;
                self.high -= QUARTER;
            } else {
                break;
            }
            self.low <<= 1;
            self.high = (self.high << 1) | 1;
        }
    }

    /// Convenience wrapper that quantizes first.
    pub fn encode_p(&mut self, bit: bool, p1: f64) {
        self.encode(bit, quantize(p1));
    }

    /// Bits emitted so far, not counting unresolved pending bits.
    pub fn bits_written(&self) -> usize {
        self.out.len()
    }

    /// Terminates the stream with two disambiguation bits.
    pub fn finish(mut self) -> Vec<bool> {
        self.pending += 1;
        if self.low < QUARTER {
            self.emit(false);
        } else {
            self.emit(true);
        }
        self.out
    }
}

/// Decoder over a bit slice. Positions past the end read as zero, but a stream
/// whose renormalizations demand more than `len - FLUSH_BITS` shifts is
/// reported as truncated.
#[derive(Debug, Clone)]
pub struct ArithmeticDecoder<'a> {
    input: &'a [bool],
    low: u64,
    high: u64,
    value: u64,
    cursor: usize,
    shifts: usize,
}

impl<'a> ArithmeticDecoder<'a> {
    pub fn new(input: &'a [bool]) -> Self {
        let mut value = 0u64;
        for i in 0..32 {
            value = (value << 1) | input.get(i).copied().unwrap_or(false) as u64;
        }
        ArithmeticDecoder {
            input,
            low: 0,
            high: TOP - 1,
            value,
            cursor: 32,
            shifts: 0,
        }
    }

    fn next_input(&mut self) -> u64 {
        let b = self.input.get(self.cursor).copied().unwrap_or(false);
        self.cursor += 1;
        b as u64
    }

    pub fn decode(&mut self, p: QuantizedProb) -> Result<bool> {
        let mid = split(self.low, self.high, p);
        let bit = self.value > mid;
        if bit {
            self.low = mid + 1;
        } else {
            self.high = mid;
        }
        loop {
            if self.high < HALF {
                // nothing to subtract
            } else if self.low >= HALF {
                self.low -= HALF;
                self.high -= HALF;
                self.value -= HALF;
            } else if self.low >= QUARTER && self.high < THREE_QUARTERS {
                self.low -= QUARTER;
                self.high -= QUARTER;
                self.value -= QUARTER;
            } else {
                break;
            }
            self.low <<= 1;
            self.high = (self.high << 1) | 1;
            self.value = (self.value << 1) | self.next_input();
            self.shifts += 1;
            if self.shifts + FLUSH_BITS > self.input.len() {
                return Err(Error::TruncatedStream {
                    needed: self.shifts + FLUSH_BITS,
                    available: self.input.len(),
                });
            }
        }
        Ok(bit)
    }

    pub fn decode_p(&mut self, p1: f64) -> Result<bool> {
        self.decode(quantize(p1))
    }

    /// Length of the encoder output for the symbols decoded so far,
    /// assuming the stream ends after them.
    pub fn consumed(&self) -> usize {
        self.shifts + FLUSH_BITS
    }

    /// Checks that the stream length matches what the encoder would have
    /// produced for the decoded symbols.
    pub fn finish(self) -> Result<()> {
        let expected = self.shifts + FLUSH_BITS;
        match expected.cmp(&self.input.len()) {
            std::cmp::Ordering::Equal => Ok(()),
            std::cmp::Ordering::Greater => Err(Error::TruncatedStream {
                needed: expected,
                available: self.input.len(),
            }),
            std::cmp::Ordering::Less => Err(Error::CorruptInput(format!(
                "{} trailing bits after arithmetic-coded payload",
                self.input.len() - expected
            ))),
        }
    }
}

/// Encodes `bits` with per-bit probabilities of a one.
pub fn encode_bits(bits: &[bool], probs: &[f64]) -> Vec<bool> {
    assert_eq!(bits.len(), probs.len());
    let mut enc = ArithmeticEncoder::new();
    for (&b, &p) in bits.iter().zip(probs) {
        enc.encode_p(b, p);
    }
    enc.finish()
}

pub fn decode_bits(stream: &[bool], probs: &[f64]) -> Result<Vec<bool>> {
    let mut dec = ArithmeticDecoder::new(stream);
    let out = probs
        .iter()
        .map(|&p| dec.decode_p(p))
        .collect::<Result<Vec<_>>>()?;
    dec.finish()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Self-information of the sequence under the quantized probabilities.
    fn info_bits(bits: &[bool], probs: &[f64]) -> f64 {
        bits.iter().zip(probs).map(|(&b, &p)| quantize(p).cost(b)).sum()
    }

    #[test]
    fn fair_bits_cost_at_most_two_extra() {
        let bits = [true, false, false, true, true, true, false, true];
        let probs = [0.5; 8];
        let out = encode_bits(&bits, &probs);
        assert!(out.len() <= 8 + 2, "{}", out.len());
        assert_eq!(decode_bits(&out, &probs).unwrap(), bits);
    }

    #[test]
    fn confident_ones_cost_few_bits() {
        let bits = [true; 100];
        let probs = [0.99; 100];
        let bound = info_bits(&bits, &probs).ceil() as usize + 2;
        assert!(bound <= 4);
        let out = encode_bits(&bits, &probs);
        assert!(out.len() <= bound, "{} > {bound}", out.len());
        assert_eq!(decode_bits(&out, &probs).unwrap(), bits);
    }

    #[test]
    fn empty_stream_is_just_the_flush() {
        let out = encode_bits(&[], &[]);
        assert_eq!(out.len(), FLUSH_BITS);
        assert!(decode_bits(&out, &[]).unwrap().is_empty());
    }

    #[test]
    fn truncated_stream_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bits: Vec<bool> = (0..200).map(|_| rng.random()).collect();
        let probs = vec![0.5; 200];
        let out = encode_bits(&bits, &probs);
        for cut in [1, 2, 10, out.len() / 2] {
            let err = decode_bits(&out[..out.len() - cut], &probs).unwrap_err();
            assert!(matches!(err, Error::TruncatedStream { .. }), "cut {cut}: {err}");
        }
    }

    #[test]
    fn trailing_garbage_is_reported() {
        let probs = vec![0.7; 20];
        let bits = vec![true; 20];
        let mut out = encode_bits(&bits, &probs);
        out.push(false);
        assert!(matches!(decode_bits(&out, &probs), Err(Error::CorruptInput(_))));
    }

    #[test]
    fn mismatched_probabilities_break_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let bits: Vec<bool> = (0..256).map(|_| rng.random_bool(0.3)).collect();
        let enc_p: Vec<f64> = (0..256).map(|_| rng.random_range(0.05..0.95)).collect();
        let dec_p: Vec<f64> = enc_p.iter().map(|p| 1.0 - p).collect();
        let out = encode_bits(&bits, &enc_p);
        if let Ok(decoded) = decode_bits(&out, &dec_p) {
            assert_ne!(decoded, bits);
        }
    }

    #[test]
    fn quantization_clamps() {
        assert_eq!(quantize(0.0).raw(), 16);
        assert_eq!(quantize(1.0).raw(), PROB_ONE - 16);
        assert_eq!(quantize(f64::NAN), QuantizedProb::HALF);
        assert_eq!(quantize(0.5).raw(), PROB_ONE / 2);
    }

    #[test]
    fn extreme_probabilities_stay_decodable() {
        // Every bit contradicts a maximally confident model.
        let bits = vec![true; 64];
        let probs = vec![0.0; 64];
        let out = encode_bits(&bits, &probs);
        assert_eq!(decode_bits(&out, &probs).unwrap(), bits);
        assert!(out.len() as f64 <= 64.0 * 12.0 + 3.0);
    }

    #[test]
    fn iid_stream_tracks_entropy() {
        for &p in &[0.5f64, 0.9, 0.99] {
            let mut rng = ChaCha8Rng::seed_from_u64(p.to_bits());
            let n = 100_000;
            let bits: Vec<bool> = (0..n).map(|_| rng.random_bool(p)).collect();
            let probs = vec![p; n];
            let out = encode_bits(&bits, &probs);
            let ideal = info_bits(&bits, &probs);
            assert!(
                (out.len() as f64 - ideal).abs() <= 0.01 * ideal + 2.0,
                "p={p}: {} vs {ideal}",
                out.len()
            );
        }
    }

    proptest! {
        #[test]
        fn round_trip_random(seed in any::<u64>(), n in 0usize..600) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let bits: Vec<bool> = (0..n).map(|_| rng.random()).collect();
            let probs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let out = encode_bits(&bits, &probs);
            prop_assert!(out.len() as f64 <= info_bits(&bits, &probs).ceil() + 2.0);
            prop_assert_eq!(decode_bits(&out, &probs).unwrap(), bits);
        }
    }
}
