//! Sequential compression of per-UE test streams with lossless verification.

use rayon::prelude::*;

use super::codec::{MethodCodec, StreamCodec};
use crate::coders::{CompressedFrame, Method};
use crate::error::{Error, Result};
use crate::tracegen::DciTrace;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageRecord {
    pub ue: usize,
    pub tti: u32,
    pub method: Method,
    pub original_bits: usize,
    pub compressed_bits: usize,
    pub lossless_ok: bool,
}

/// Per-message lengths and frames for every evaluated method.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompressionReport {
    /// Grouped by method, then UE, then TTI.
    pub records: Vec<MessageRecord>,
    /// `frames[i]` belongs to `records[i]`.
    pub frames: Vec<CompressedFrame>,
}

impl CompressionReport {
    pub fn methods(&self) -> Vec<Method> {
        let mut out: Vec<Method> = Vec::new();
        for r in &self.records {
            if !out.contains(&r.method) {
                out.push(r.method);
            }
        }
        out
    }

    /// K_t of every message coded with `method`.
    pub fn lengths(&self, method: Method) -> Vec<usize> {
        self.records
            .iter()
            .filter(|r| r.method == method)
            .map(|r| r.compressed_bits)
            .collect()
    }

    /// N / mean(K_t) over all UEs.
    pub fn mean_ratio(&self, method: Method) -> Option<f64> {
        let rs: Vec<&MessageRecord> = self.records.iter().filter(|r| r.method == method).collect();
        if rs.is_empty() {
            return None;
        }
        let n = rs.iter().map(|r| r.original_bits).sum::<usize>() as f64 / rs.len() as f64;
        let k = rs.iter().map(|r| r.compressed_bits).sum::<usize>() as f64 / rs.len() as f64;
        Some(if k == 0.0 { f64::INFINITY } else { n / k })
    }

    /// Mean K_t for `method`.
    pub fn mean_length(&self, method: Method) -> Option<f64> {
        let l = self.lengths(method);
        (!l.is_empty()).then(|| l.iter().sum::<usize>() as f64 / l.len() as f64)
    }

    pub fn summary(&self) -> Vec<(Method, f64)> {
        self.methods()
            .into_iter()
            .filter_map(|m| self.mean_ratio(m).map(|r| (m, r)))
            .collect()
    }

    pub fn all_lossless(&self) -> bool {
        self.records.iter().all(|r| r.lossless_ok)
    }
}

/// Compresses each UE's test stream with every method, decoding each frame
/// with an independent decoder-side codec. Both sides start from the tail of
/// that UE's training stream. `make` builds a fresh codec for a (UE, method)
/// pair and is called twice per pair. Any lossy round trip is an error.
pub fn evaluate<F>(train: &DciTrace, test: &DciTrace, methods: &[Method], make: F) -> Result<CompressionReport>
where
    F: Fn(usize, Method) -> Result<MethodCodec> + Sync,
{
    if train.num_ues() != test.num_ues() {
        return Err(Error::InvalidArgument(format!(
            "train split has {} UEs, test split {}",
            train.num_ues(),
            test.num_ues()
        )));
    }
    let n = test.schema().total_bits();
    let jobs: Vec<(Method, usize)> = methods
        .iter()
        .flat_map(|&m| (0..test.num_ues()).map(move |ue| (m, ue)))
        .collect();
    let parts = jobs
        .par_iter()
        .map(|&(method, ue)| {
            let mut enc = StreamCodec::new(make(ue, method)?);
            let mut dec = StreamCodec::new(make(ue, method)?);
            let hist: Vec<_> = train.stream(ue).messages().collect();
            let lo = hist.len().saturating_sub(enc.memory());
            enc.prime(hist[lo..].iter().copied());
            dec.prime(hist[lo..].iter().copied());
            let mut out = Vec::with_capacity(test.stream(ue).len());
            for (tti, msg) in &test.stream(ue).entries {
                let frame = enc.compress(msg)?;
                let mut bytes = Vec::new();
                frame.write_to(&mut bytes)?;
                let wire = CompressedFrame::read_from(&mut bytes.as_slice())?
                    .ok_or_else(|| Error::CorruptInput("frame vanished in serialization".into()))?;
                let back = dec.decompress(&wire).map_err(|e| {
                    Error::Verification(format!("{method} UE {ue} TTI {tti}: decoder failed: {e}"))
                })?;
                if &back != msg {
                    return Err(Error::Verification(format!(
                        "{method} UE {ue} TTI {tti}: decoded message differs from the original"
                    )));
                }
                out.push((
                    MessageRecord {
                        ue,
                        tti: *tti,
                        method,
                        original_bits: n,
                        compressed_bits: frame.len(),
                        lossless_ok: true,
                    },
                    frame,
                ));
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let (records, frames) = parts.into_iter().flatten().unzip();
    Ok(CompressionReport { records, frames })
}
