//! Polar codes: the `u F^{⊗n}` transform (natural order, no bit reversal),
//! reliability-based frozen sets, and successive-cancellation list decoding
//! with path metrics in the LLR domain.

use super::crc::{check_crc, CRC_BITS};
use super::reliability::reliability_order;
use crate::error::{Error, Result};

/// A length-`n` polar code carrying `k` information bits on the `k` most
/// reliable channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolarCode {
    n: usize,
    /// Information channel indices, ascending.
    info: Vec<usize>,
    frozen: Vec<bool>,
}

impl PolarCode {
    pub fn new(n: usize, k: usize) -> Result<Self> {
        if !n.is_power_of_two() || !(2..=128).contains(&n) {
            return Err(Error::Config(format!("polar length {n} must be a power of two in 2..=128")));
        }
        if k == 0 || k > n {
            return Err(Error::Config(format!("{k} information bits do not fit a length-{n} code")));
        }
        let order = reliability_order(n);
        let mut info: Vec<usize> = order[n - k..].to_vec();
        info.sort_unstable();
        let mut frozen = vec![true; n];
        for &i in &info {
            frozen[i] = false;
        }
        Ok(PolarCode { n, info, frozen })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.info.len()
    }

    pub fn info_positions(&self) -> &[usize] {
        &self.info
    }

    pub fn is_frozen(&self, i: usize) -> bool {
        self.frozen[i]
    }

    /// Places `bits` on the information channels, zeros elsewhere.
    pub fn place(&self, bits: &[bool]) -> Result<Vec<bool>> {
        if bits.len() != self.k() {
            return Err(Error::InvalidArgument(format!(
                "{} bits given to a code with {} information bits",
                bits.len(),
                self.k()
            )));
        }
        let mut u = vec![false; self.n];
        for (&i, &b) in self.info.iter().zip(bits) {
            u[i] = b;
        }
        Ok(u)
    }

    pub fn encode(&self, bits: &[bool]) -> Result<Vec<bool>> {
        let mut x = self.place(bits)?;
        transform(&mut x);
        Ok(x)
    }

    /// List decoding; surviving paths' information bits, best metric first.
    pub fn scl_decode(&self, llr: &[f64], list_size: usize) -> Result<Vec<Vec<bool>>> {
        if llr.len() != self.n {
            return Err(Error::InvalidArgument(format!(
                "{} LLRs for a length-{} code",
                llr.len(),
                self.n
            )));
        }
        if list_size == 0 {
            return Err(Error::Config("list size must be at least 1".into()));
        }
        let mut dec = ListDecoder {
            code: self,
            channel: llr,
            list_size,
            paths: vec![Path::new(self.n)],
        };
        dec.node(self.n, 0);
        let mut paths = dec.paths;
        paths.sort_by(|a, b| a.metric.total_cmp(&b.metric));
        Ok(paths
            .into_iter()
            .map(|p| self.info.iter().map(|&i| p.u[i] == 1).collect())
            .collect())
    }

    /// CRC-aided list decoding: the best path whose last 24 information
    /// bits check, with the checksum removed.
    pub fn decode_with_crc(&self, llr: &[f64], list_size: usize) -> Result<Option<Vec<bool>>> {
        if self.k() < CRC_BITS {
            return Err(Error::Config(format!("{} information bits cannot hold a CRC", self.k())));
        }
        Ok(self
            .scl_decode(llr, list_size)?
            .into_iter()
            .find(|bits| check_crc(bits))
            .map(|mut bits| {
                bits.truncate(bits.len() - CRC_BITS);
                bits
            }))
    }
}

/// In-place `x <- x F^{⊗n}` with `F = [[1, 0], [1, 1]]`.
pub fn transform(x: &mut [bool]) {
    let n = x.len();
    assert!(n.is_power_of_two());
    let mut h = 1;
    while h < n {
        for block in (0..n).step_by(2 * h) {
            for j in block..block + h {
                x[j] ^= x[j + h];
            }
        }
        h *= 2;
    }
}

#[derive(Clone)]
struct Path {
    /// LLRs of a node of size `m` live at `[m, 2m)`.
    alpha: Vec<f64>,
    /// Re-encoded bits of a node of size `m` at `[m, 2m)`.
    beta: Vec<u8>,
    /// Left-child results saved while the right child is decoded.
    left: Vec<u8>,
    u: Vec<u8>,
    metric: f64,
}

impl Path {
    fn new(n: usize) -> Self {
        Path {
            alpha: vec![0.0; 2 * n],
            beta: vec![0; 2 * n],
            left: vec![0; 2 * n],
            u: vec![0; n],
            metric: 0.0,
        }
    }
}

fn f_min_sum(a: f64, b: f64) -> f64 {
    let m = a.abs().min(b.abs());
    if (a < 0.0) != (b < 0.0) {
        -m
    } else {
        m
    }
}

fn g(a: f64, b: f64, left: u8) -> f64 {
    if left == 1 {
        b - a
    } else {
        b + a
    }
}

/// Metric increase for deciding `bit` on an LLR (positive favours 0).
fn penalty(llr: f64, bit: u8) -> f64 {
    if (llr < 0.0) != (bit == 1) {
        llr.abs()
    } else {
        0.0
    }
}

struct ListDecoder<'a> {
    code: &'a PolarCode,
    channel: &'a [f64],
    list_size: usize,
    paths: Vec<Path>,
}

impl ListDecoder<'_> {
    fn node(&mut self, m: usize, offset: usize) {
        if m == 1 {
            self.leaf(offset);
            return;
        }
        let h = m / 2;
        let top = m == self.code.n;
        for p in &mut self.paths {
            for j in 0..h {
                let (a, b) = if top {
                    (self.channel[j], self.channel[j + h])
                } else {
                    (p.alpha[m + j], p.alpha[m + j + h])
                };
                p.alpha[h + j] = f_min_sum(a, b);
            }
        }
        self.node(h, offset);
        for p in &mut self.paths {
            for j in 0..h {
                let (a, b) = if top {
                    (self.channel[j], self.channel[j + h])
                } else {
                    (p.alpha[m + j], p.alpha[m + j + h])
                };
                p.left[h + j] = p.beta[h + j];
                p.alpha[h + j] = g(a, b, p.left[h + j]);
            }
        }
        self.node(h, offset + h);
        for p in &mut self.paths {
            for j in 0..h {
                let r = p.beta[h + j];
                p.beta[m + j] = p.left[h + j] ^ r;
                p.beta[m + h + j] = r;
            }
        }
    }

    fn leaf_llr(&self, p: &Path) -> f64 {
        if self.code.n == 1 {
            self.channel[0]
        } else {
            p.alpha[1]
        }
    }

    fn leaf(&mut self, i: usize) {
        if self.code.frozen[i] {
            for idx in 0..self.paths.len() {
                let l = self.leaf_llr(&self.paths[idx]);
                let p = &mut self.paths[idx];
                p.metric += penalty(l, 0);
                p.beta[1] = 0;
                p.u[i] = 0;
            }
            return;
        }
        let mut cands: Vec<(f64, usize, u8)> = Vec::with_capacity(2 * self.paths.len());
        for (idx, p) in self.paths.iter().enumerate() {
            let l = self.leaf_llr(p);
            for bit in 0..2u8 {
                cands.push((p.metric + penalty(l, bit), idx, bit));
            }
        }
        cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        cands.truncate(self.list_size);
        let mut uses = vec![0usize; self.paths.len()];
        for c in &cands {
            uses[c.1] += 1;
        }
        let mut old: Vec<Option<Path>> = std::mem::take(&mut self.paths).into_iter().map(Some).collect();
        let mut next = Vec::with_capacity(cands.len());
        for (metric, idx, bit) in cands {
            uses[idx] -= 1;
            let mut p = if uses[idx] == 0 {
                old[idx].take().expect("parent used once more")
            } else {
                old[idx].as_ref().expect("parent alive").clone()
            };
            p.metric = metric;
            p.beta[1] = bit;
            p.u[i] = bit;
            next.push(p);
        }
        self.paths = next;
    }
}
