//! Single-cell downlink scheduler that emits one DCI per scheduled UE per TTI.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DciTrace, UeStream};
use crate::error::{Error, Result};
use crate::schema::DciSchema;

pub const HARQ_PROCESSES: usize = 16;
/// Redundancy versions in transmission order.
pub const RV_SEQUENCE: [u64; 4] = [0, 2, 3, 1];
const MAX_MCS: f64 = 27.0;
/// Resource elements per RBG per TTI available for data.
const RE_PER_RBG: f64 = 8.0 * 12.0 * 11.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficProfile {
    /// Mean sojourn in the ON state, in TTIs. Zero disables traffic.
    pub mean_on_ttis: f64,
    pub mean_off_ttis: f64,
}

impl Default for TrafficProfile {
    fn default() -> Self {
        TrafficProfile {
            mean_on_ttis: 50.0,
            mean_off_ttis: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub num_ues: usize,
    pub num_rbgs: usize,
    pub tti_count: usize,
    pub seed: u64,
    /// Application rate of each UE is drawn uniformly from this range (Mbps).
    pub rate_mbps: (f64, f64),
    pub traffic: TrafficProfile,
    /// Per-UE overrides of `traffic`, indexed by UE id.
    pub ue_traffic: Vec<Option<TrafficProfile>>,
    /// Exponential averaging window of the proportional-fair metric, in TTIs.
    pub pf_window: f64,
    /// Block error probability of every transmission attempt.
    pub bler: f64,
    /// TTIs between a failed attempt and its retransmission.
    pub harq_rtt: usize,
    /// Channel quality is reported to the scheduler every this many TTIs.
    pub cqi_period: usize,
    /// AR(1) coefficient of the per-UE channel quality walk.
    pub channel_memory: f64,
    /// Stationary standard deviation of channel quality, in MCS steps.
    pub channel_spread: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            num_ues: 3,
            num_rbgs: 13,
            tti_count: 10_000,
            seed: 1,
            rate_mbps: (10.0, 30.0),
            traffic: TrafficProfile::default(),
            ue_traffic: Vec::new(),
            pf_window: 100.0,
            bler: 0.1,
            harq_rtt: 8,
            cqi_period: 5,
            channel_memory: 0.98,
            channel_spread: 4.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_ues == 0 || self.num_ues > u16::MAX as usize {
            return bad("num_ues must be in 1..=65535");
        }
        if self.num_rbgs == 0 || self.num_rbgs > 32 {
            return bad("num_rbgs must be in 1..=32");
        }
        if self.tti_count == 0 || self.tti_count > u32::MAX as usize {
            return bad("tti_count must be >= 1");
        }
        let (lo, hi) = self.rate_mbps;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return bad("rate_mbps must be an increasing positive range");
        }
        if !(self.pf_window >= 1.0) {
            return bad("pf_window must be >= 1");
        }
        if !(0.0..1.0).contains(&self.bler) {
            return bad("bler must be in [0, 1)");
        }
        if self.cqi_period == 0 {
            return bad("cqi_period must be >= 1");
        }
        if !(0.0..1.0).contains(&self.channel_memory) || !(self.channel_spread >= 0.0) {
            return bad("channel_memory must be in [0, 1) and channel_spread >= 0");
        }
        for p in std::iter::once(&self.traffic).chain(self.ue_traffic.iter().flatten()) {
            if p.mean_on_ttis < 0.0 || (p.mean_on_ttis > 0.0 && (p.mean_on_ttis < 1.0 || p.mean_off_ttis < 1.0)) {
                return bad("traffic sojourn means must be >= 1 TTI (or mean_on_ttis = 0)");
            }
        }
        Ok(())
    }

    fn profile(&self, ue: usize) -> TrafficProfile {
        self.ue_traffic.get(ue).copied().flatten().unwrap_or(self.traffic)
    }
}

/// Field positions in the schema the simulator writes to.
#[derive(Debug, Clone, Copy)]
struct FieldMap {
    fdra: usize,
    tdra: usize,
    mcs: usize,
    ndi: usize,
    rv: usize,
    harq: usize,
    dai: usize,
    tpc: usize,
    pucch: usize,
    k1: usize,
}

/// (name, minimum width) of every field the scheduler fills in.
pub const REQUIRED_FIELDS: [(&str, usize); 10] = [
    ("fdra", 1),
    ("tdra", 4),
    ("mcs", 5),
    ("ndi", 1),
    ("rv", 2),
    ("harq", 4),
    ("dai", 2),
    ("tpc", 2),
    ("pucch", 3),
    ("k1", 3),
];

impl FieldMap {
    fn resolve(schema: &DciSchema, num_rbgs: usize) -> Result<Self> {
        let mut idx = [0usize; 10];
        for (slot, (name, min_width)) in idx.iter_mut().zip(REQUIRED_FIELDS) {
            let k = schema
                .field_index(name)
                .ok_or_else(|| Error::Config(format!("schema lacks field `{name}`")))?;
            if schema.width(k) < min_width {
                return Err(Error::Config(format!(
                    "field `{name}` needs at least {min_width} bits"
                )));
            }
            *slot = k;
        }
        if schema.width(idx[0]) != num_rbgs {
            return Err(Error::Config(format!(
                "fdra is {} bits but the cell has {num_rbgs} RBGs",
                schema.width(idx[0])
            )));
        }
        Ok(FieldMap {
            fdra: idx[0],
            tdra: idx[1],
            mcs: idx[2],
            ndi: idx[3],
            rv: idx[4],
            harq: idx[5],
            dai: idx[6],
            tpc: idx[7],
            pucch: idx[8],
            k1: idx[9],
        })
    }
}

/// Data bits per RE for an MCS index.
pub fn spectral_efficiency(mcs: usize) -> f64 {
    0.15 + 0.2 * mcs as f64
}

/// Transport capacity of `rbgs` groups at `mcs`, in bits.
pub fn rbg_capacity(mcs: usize, rbgs: usize) -> f64 {
    rbgs as f64 * RE_PER_RBG * spectral_efficiency(mcs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum HarqState {
    Idle,
    /// Waiting for retransmission number `attempt` (1-based) from `ready_at`.
    Pending {
        ready_at: usize,
        attempt: usize,
        rbgs: usize,
        mcs: usize,
    },
}

struct Ue {
    rate_bits_per_tti: f64,
    profile: TrafficProfile,
    on: bool,
    buffer: f64,
    channel: f64,
    channel_mean: f64,
    reported_mcs: usize,
    avg_throughput: f64,
    harq: [HarqState; HARQ_PROCESSES],
    ndi: [bool; HARQ_PROCESSES],
    last_harq: usize,
    dai: u64,
    power_error: f64,
}

struct Grant {
    ue: usize,
    harq: usize,
    first_rbg: usize,
    rbgs: usize,
    mcs_index: u64,
    new_tb: bool,
    rv: u64,
    tb_bits: f64,
}

/// Runs the scheduler for `config.tti_count` TTIs.
pub fn simulate(config: &SimConfig, schema: &DciSchema) -> Result<DciTrace> {
    config.validate()?;
    let fields = FieldMap::resolve(schema, config.num_rbgs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    let mut ues: Vec<Ue> = (0..config.num_ues)
        .map(|u| {
            let (lo, hi) = config.rate_mbps;
            let rate = if hi > lo { rng.random_range(lo..hi) } else { lo };
            let profile = config.profile(u);
            let channel_mean = rng.random_range(8.0..20.0);
            let on = profile.mean_on_ttis > 0.0 && rng.random_bool(0.5);
            Ue {
                rate_bits_per_tti: rate * 1000.0,
                profile,
                on,
                buffer: 0.0,
                channel: channel_mean,
                channel_mean,
                reported_mcs: channel_mean.round() as usize,
                avg_throughput: 1.0,
                harq: [HarqState::Idle; HARQ_PROCESSES],
                ndi: [false; HARQ_PROCESSES],
                last_harq: HARQ_PROCESSES - 1,
                dai: 0,
                power_error: 0.0,
            }
        })
        .collect();

    let mut streams: Vec<UeStream> = (0..config.num_ues)
        .map(|ue| UeStream {
            ue,
            entries: Vec::new(),
        })
        .collect();
    let innovation = config.channel_spread * (1.0 - config.channel_memory.powi(2)).sqrt();
    let alpha = 1.0 / config.pf_window;

    for t in 0..config.tti_count {
        // Traffic, channel and power-control evolution.
        for ue in ues.iter_mut() {
            let p = ue.profile;
            if p.mean_on_ttis > 0.0 {
                let leave = if ue.on { 1.0 / p.mean_on_ttis } else { 1.0 / p.mean_off_ttis };
                if rng.random_bool(leave.min(1.0)) {
                    ue.on = !ue.on;
                }
            }
            if ue.on {
                ue.buffer += ue.rate_bits_per_tti;
            }
            ue.channel = ue.channel_mean
                + config.channel_memory * (ue.channel - ue.channel_mean)
                + innovation * unit.sample(&mut rng);
            if t % config.cqi_period == 0 {
                ue.reported_mcs = ue.channel.round().clamp(0.0, MAX_MCS) as usize;
            }
            ue.power_error += 0.25 * unit.sample(&mut rng);
        }

        let grants = schedule_tti(&mut ues, t, config);

        for (rank, g) in grants.iter().enumerate() {
            let ue = &mut ues[g.ue];
            let tpc = if ue.power_error > 1.0 {
                ue.power_error -= 1.0;
                0
            } else if ue.power_error < -1.0 {
                ue.power_error += 1.0;
                2
            } else {
                1
            };
            let tdra = if !g.new_tb {
                2
            } else if g.tb_bits < rbg_capacity(g.mcs_index as usize, 1) {
                1
            } else {
                0
            };
            let fdra = ((1u64 << g.rbgs) - 1) << (config.num_rbgs - g.first_rbg - g.rbgs);
            let mut values = vec![0u64; schema.num_fields()];
            values[fields.fdra] = fdra;
            values[fields.tdra] = tdra;
            values[fields.mcs] = g.mcs_index;
            values[fields.ndi] = ue.ndi[g.harq] as u64;
            values[fields.rv] = g.rv;
            values[fields.harq] = g.harq as u64;
            values[fields.dai] = ue.dai;
            values[fields.tpc] = tpc;
            values[fields.pucch] = rank.min(7) as u64;
            values[fields.k1] = ((4 - t % 5) % 5) as u64;
            ue.dai = (ue.dai + 1) % 4;
            let msg = schema.pack(&values)?;
            streams[g.ue].entries.push((t as u32, msg));
        }

        // Feedback for this TTI's transmissions.
        for g in &grants {
            let ue = &mut ues[g.ue];
            let attempt = RV_SEQUENCE.iter().position(|&rv| rv == g.rv).unwrap_or(0) + 1;
            let failed = rng.random_bool(config.bler);
            ue.harq[g.harq] = if failed && attempt < RV_SEQUENCE.len() {
                HarqState::Pending {
                    ready_at: t + config.harq_rtt,
                    attempt,
                    rbgs: g.rbgs,
                    mcs: g.mcs_index as usize,
                }
            } else {
                HarqState::Idle
            };
        }
        for ue in ues.iter_mut() {
            ue.avg_throughput *= 1.0 - alpha;
        }
        for g in &grants {
            ues[g.ue].avg_throughput += alpha * g.tb_bits;
        }
    }

    Ok(DciTrace::new(schema.clone(), config.tti_count, streams))
}

/// Proportional-fair allocation of contiguous RBGs for one TTI.
fn schedule_tti(ues: &mut [Ue], t: usize, config: &SimConfig) -> Vec<Grant> {
    let mut order: Vec<(f64, usize)> = ues
        .iter()
        .enumerate()
        .filter(|(_, ue)| ue.buffer >= 1.0 || ready_retx(ue, t).is_some())
        .map(|(i, ue)| (spectral_efficiency(ue.reported_mcs) / ue.avg_throughput.max(1.0), i))
        .collect();
    // Highest metric first, ties to the lowest UE id.
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut next_rbg = 0;
    let mut grants = Vec::new();
    for (_, u) in order {
        let free = config.num_rbgs - next_rbg;
        if free == 0 {
            break;
        }
        let ue = &mut ues[u];
        if let Some(h) = ready_retx(ue, t) {
            let HarqState::Pending {
                attempt, rbgs, mcs, ..
            } = ue.harq[h]
            else {
                unreachable!()
            };
            if rbgs > free {
                continue;
            }
            grants.push(Grant {
                ue: u,
                harq: h,
                first_rbg: next_rbg,
                rbgs,
                mcs_index: retx_mcs_index(mcs),
                new_tb: false,
                rv: RV_SEQUENCE[attempt],
                tb_bits: 0.0,
            });
            next_rbg += rbgs;
            continue;
        }
        let Some(h) = next_idle(ue) else { continue };
        let mcs = ue.reported_mcs;
        let per_rbg = rbg_capacity(mcs, 1);
        let rbgs = ((ue.buffer / per_rbg).ceil() as usize).clamp(1, free);
        let tb_bits = ue.buffer.min(rbg_capacity(mcs, rbgs));
        ue.buffer -= tb_bits;
        ue.ndi[h] = !ue.ndi[h];
        ue.last_harq = h;
        grants.push(Grant {
            ue: u,
            harq: h,
            first_rbg: next_rbg,
            rbgs,
            mcs_index: mcs as u64,
            new_tb: true,
            rv: RV_SEQUENCE[0],
            tb_bits,
        });
        next_rbg += rbgs;
    }
    grants
}

fn ready_retx(ue: &Ue, t: usize) -> Option<usize> {
    ue.harq.iter().position(|s| matches!(s, HarqState::Pending { ready_at, .. } if *ready_at <= t))
}

fn next_idle(ue: &Ue) -> Option<usize> {
    (1..=HARQ_PROCESSES)
        .map(|d| (ue.last_harq + d) % HARQ_PROCESSES)
        .find(|&h| ue.harq[h] == HarqState::Idle)
}

/// Retransmissions signal "same transport block size" through the reserved
/// indices 28..=31, chosen by the original modulation order.
fn retx_mcs_index(mcs: usize) -> u64 {
    match mcs {
        0..=9 => 28,
        10..=16 => 29,
        17..=24 => 30,
        _ => 31,
    }
}
