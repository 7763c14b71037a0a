//! Payload-length histograms and blind decoding over candidate lengths.
//!
//! A compressed payload of `K_t` bits is zero-padded up to the next
//! multiple of the bin width before the CRC is attached. The receiver tries
//! each candidate padded length, most probable first, and accepts the first
//! hypothesis whose CRC checks.

use rand::Rng;
use serde::Deserialize;

use super::crc::CRC_BITS;
use super::polar::PolarCode;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct LengthBin {
    /// Payload length in bits, padding included, CRC excluded.
    pub length: usize,
    pub probability: f64,
}

/// Candidate payload lengths, most probable first.
#[derive(Debug, Clone, PartialEq)]
pub struct LengthHistogram {
    bins: Vec<LengthBin>,
}

impl LengthHistogram {
    /// Sorts bins by descending probability (ties: shorter first) and checks
    /// that probabilities are non-negative and sum to one.
    pub fn new(mut bins: Vec<LengthBin>) -> Result<Self> {
        if bins.is_empty() {
            return Err(Error::Config("length histogram is empty".into()));
        }
        if bins.iter().any(|b| !(b.probability >= 0.0)) {
            return Err(Error::Config("length probabilities must be non-negative".into()));
        }
        let total: f64 = bins.iter().map(|b| b.probability).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("length probabilities sum to {total}, not 1")));
        }
        let mut lengths: Vec<usize> = bins.iter().map(|b| b.length).collect();
        lengths.sort_unstable();
        if lengths.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("duplicate lengths in histogram".into()));
        }
        bins.sort_by(|a, b| b.probability.total_cmp(&a.probability).then(a.length.cmp(&b.length)));
        Ok(LengthHistogram { bins })
    }

    /// A single certain length.
    pub fn fixed(length: usize) -> Self {
        LengthHistogram {
            bins: vec![LengthBin {
                length,
                probability: 1.0,
            }],
        }
    }

    /// Pads every compressed length up to a multiple of `bin_bits`, keeps
    /// the `max_candidates` most probable padded lengths, and renormalizes.
    pub fn from_lengths(lengths: &[usize], bin_bits: usize, max_candidates: usize) -> Result<Self> {
        if bin_bits == 0 || max_candidates == 0 {
            return Err(Error::Config("bin width and candidate cap must be positive".into()));
        }
        if lengths.is_empty() {
            return Err(Error::Config("no compressed lengths to bin".into()));
        }
        let mut counts = std::collections::BTreeMap::<usize, usize>::new();
        for &k in lengths {
            *counts.entry(k.div_ceil(bin_bits) * bin_bits).or_default() += 1;
        }
        let mut bins: Vec<(usize, usize)> = counts.into_iter().collect();
        bins.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        bins.truncate(max_candidates);
        let kept: usize = bins.iter().map(|b| b.1).sum();
        LengthHistogram::new(
            bins.into_iter()
                .map(|(length, c)| LengthBin {
                    length,
                    probability: c as f64 / kept as f64,
                })
                .collect(),
        )
    }

    pub fn bins(&self) -> &[LengthBin] {
        &self.bins
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.bins.iter().map(|b| b.length).collect()
    }

    pub fn max_length(&self) -> usize {
        self.bins.iter().map(|b| b.length).max().unwrap_or(0)
    }

    /// Probability-weighted mean length.
    pub fn mean_length(&self) -> f64 {
        self.bins.iter().map(|b| b.length as f64 * b.probability).sum()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for b in &self.bins {
            acc += b.probability;
            if u < acc {
                return b.length;
            }
        }
        self.bins.last().expect("non-empty").length
    }
}

/// One polar code per candidate length, tried in order.
#[derive(Debug, Clone)]
pub struct BlindDecoder {
    codes: Vec<(usize, PolarCode)>,
    list_size: usize,
}

impl BlindDecoder {
    pub fn new(code_length: usize, candidates: &[usize], list_size: usize) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::Config("no candidate payload lengths".into()));
        }
        let codes = candidates
            .iter()
            .map(|&p| Ok((p, PolarCode::new(code_length, p + CRC_BITS)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(BlindDecoder { codes, list_size })
    }

    pub fn code(&self, length: usize) -> Option<&PolarCode> {
        self.codes.iter().find(|(p, _)| *p == length).map(|(_, c)| c)
    }

    /// First candidate whose CRC checks, with its padded payload.
    pub fn decode(&self, llr: &[f64]) -> Result<Option<(usize, Vec<bool>)>> {
        for (p, code) in &self.codes {
            if let Some(payload) = code.decode_with_crc(llr, self.list_size)? {
                return Ok(Some((*p, payload)));
            }
        }
        Ok(None)
    }
}

/// Blind decoding over the candidate lengths of `histogram`.
pub fn blind_length_decode(
    llr: &[f64],
    histogram: &LengthHistogram,
    code_length: usize,
    list_size: usize,
) -> Result<Option<(usize, Vec<bool>)>> {
    BlindDecoder::new(code_length, &histogram.lengths(), list_size)?.decode(llr)
}
