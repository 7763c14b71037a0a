//! Correlated DCI traces: generation, temporal splitting, correlation
//! diagnostics, and the binary/hex trace file formats.

mod io;
mod sim;

pub use io::{read_trace, trace_to_hex, write_trace, TRACE_MAGIC, TRACE_VERSION};
pub use sim::{
    rbg_capacity, simulate, spectral_efficiency, SimConfig, TrafficProfile, HARQ_PROCESSES,
    REQUIRED_FIELDS, RV_SEQUENCE,
};

use crate::error::{Error, Result};
use crate::schema::{DciMessage, DciSchema};

/// Time-ordered messages of one UE.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UeStream {
    pub ue: usize,
    /// (TTI index, message), strictly increasing in TTI.
    pub entries: Vec<(u32, DciMessage)>,
}

impl UeStream {
    pub fn messages(&self) -> impl Iterator<Item = &DciMessage> {
        self.entries.iter().map(|(_, m)| m)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DciTrace {
    schema: DciSchema,
    tti_count: usize,
    streams: Vec<UeStream>,
}

impl DciTrace {
    pub fn new(schema: DciSchema, tti_count: usize, streams: Vec<UeStream>) -> Self {
        DciTrace {
            schema,
            tti_count,
            streams,
        }
    }

    /// Builds a single-UE trace from consecutive messages (TTIs 0, 1, ...).
    pub fn from_messages(schema: DciSchema, messages: Vec<DciMessage>) -> Self {
        let tti_count = messages.len();
        let entries = messages
            .into_iter()
            .enumerate()
            .map(|(t, m)| (t as u32, m))
            .collect();
        DciTrace::new(schema, tti_count, vec![UeStream { ue: 0, entries }])
    }

    pub fn schema(&self) -> &DciSchema {
        &self.schema
    }

    pub fn tti_count(&self) -> usize {
        self.tti_count
    }

    pub fn streams(&self) -> &[UeStream] {
        &self.streams
    }

    pub fn stream(&self, ue: usize) -> &UeStream {
        &self.streams[ue]
    }

    pub fn num_ues(&self) -> usize {
        self.streams.len()
    }

    pub fn num_messages(&self) -> usize {
        self.streams.iter().map(UeStream::len).sum()
    }

    pub fn messages(&self) -> impl Iterator<Item = &DciMessage> {
        self.streams.iter().flat_map(UeStream::messages)
    }

    /// Checks ordering and message widths.
    pub fn validate(&self) -> Result<()> {
        for s in &self.streams {
            for w in s.entries.windows(2) {
                if w[1].0 <= w[0].0 {
                    return Err(Error::CorruptInput(format!(
                        "UE {} TTIs not strictly increasing ({} then {})",
                        s.ue, w[0].0, w[1].0
                    )));
                }
            }
            for (_, m) in &s.entries {
                self.schema.validate(m)?;
            }
        }
        Ok(())
    }
}

/// Temporal split per UE: the last `ceil(fraction * len)` messages of each UE
/// go to the test part.
pub fn split_train_test(trace: &DciTrace, test_fraction: f64) -> Result<(DciTrace, DciTrace)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    if trace.num_messages() == 0 {
        return Err(Error::InvalidArgument("cannot split an empty trace".into()));
    }
    let mut train = Vec::with_capacity(trace.num_ues());
    let mut test = Vec::with_capacity(trace.num_ues());
    for s in trace.streams() {
        let n_test = test_count(s.len(), test_fraction);
        let cut = s.len() - n_test;
        train.push(UeStream {
            ue: s.ue,
            entries: s.entries[..cut].to_vec(),
        });
        test.push(UeStream {
            ue: s.ue,
            entries: s.entries[cut..].to_vec(),
        });
    }
    let schema = trace.schema().clone();
    Ok((
        DciTrace::new(schema.clone(), trace.tti_count(), train),
        DciTrace::new(schema, trace.tti_count(), test),
    ))
}

/// `ceil(fraction * len)` with the product rounded to 1e-9 first so that
/// e.g. 0.03 * 100 gives 3, not 4.
pub(crate) fn test_count(len: usize, fraction: f64) -> usize {
    let x = fraction * len as f64;
    let rounded = (x * 1e9).round() / 1e9;
    (rounded.ceil() as usize).min(len)
}

/// Absolute Pearson correlations between bit `i` at time `t` and bit `j` at
/// time `t - lag`, pooled over all UE streams. `None` marks pairs where either
/// bit is constant over the sample.
#[derive(Debug, Clone)]
pub struct CorrelationMatrix {
    pub n: usize,
    pub lag: usize,
    pub samples: usize,
    values: Vec<Option<f64>>,
}

impl CorrelationMatrix {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[i * self.n + j]
    }

    /// Largest defined entry off the diagonal.
    pub fn max_off_diagonal(&self) -> Option<f64> {
        let mut best: Option<f64> = None;
        for i in 0..self.n {
            for j in 0..self.n {
                if i == j {
                    continue;
                }
                if let Some(v) = self.get(i, j) {
                    best = Some(best.map_or(v, |b| b.max(v)));
                }
            }
        }
        best
    }

    pub fn defined_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }
}

pub fn correlation_report(trace: &DciTrace, lag: usize) -> Result<CorrelationMatrix> {
    let streams: Vec<Vec<&DciMessage>> = trace
        .streams()
        .iter()
        .map(|s| s.messages().collect())
        .collect();
    correlation_matrix(&streams, trace.schema().total_bits(), lag)
}

pub fn correlation_matrix(
    streams: &[Vec<&DciMessage>],
    n: usize,
    lag: usize,
) -> Result<CorrelationMatrix> {
    let longest = streams.iter().map(Vec::len).max().unwrap_or(0);
    if longest <= lag + 1 {
        return Err(Error::InvalidArgument(format!(
            "need a stream longer than lag + 1 = {}, longest has {longest}",
            lag + 1
        )));
    }
    // Sums over pairs (a = x_t, b = x_{t-lag}).
    let mut sa = vec![0u64; n];
    let mut sb = vec![0u64; n];
    let mut sab = vec![0u64; n * n];
    let mut count = 0u64;
    let mut ones_b: Vec<usize> = Vec::with_capacity(n);
    for s in streams {
        for t in lag..s.len() {
            let a = &s[t].bits;
            let b = &s[t - lag].bits;
            ones_b.clear();
            ones_b.extend((0..n).filter(|&j| b[j]));
            for &j in &ones_b {
                sb[j] += 1;
            }
            for i in (0..n).filter(|&i| a[i]) {
                sa[i] += 1;
                let row = &mut sab[i * n..(i + 1) * n];
                for &j in &ones_b {
                    row[j] += 1;
                }
            }
            count += 1;
        }
    }
    let c = count as f64;
    let mut values = vec![None; n * n];
    for i in 0..n {
        let pa = sa[i] as f64 / c;
        let va = pa * (1.0 - pa);
        for j in 0..n {
            let pb = sb[j] as f64 / c;
            let vb = pb * (1.0 - pb);
            if va <= 0.0 || vb <= 0.0 {
                continue;
            }
            let cov = sab[i * n + j] as f64 / c - pa * pb;
            values[i * n + j] = Some((cov / (va * vb).sqrt()).abs().min(1.0));
        }
    }
    Ok(CorrelationMatrix {
        n,
        lag,
        samples: count as usize,
        values,
    })
}
