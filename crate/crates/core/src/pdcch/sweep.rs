//! Monte-Carlo frame error rate over an SNR grid.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;

use super::blind::{BlindDecoder, LengthBin, LengthHistogram};
use super::channel::bpsk_awgn_llr;
use super::crc::{attach_crc, CRC_BITS};
use crate::error::{Error, Result};

/// Link simulation settings, readable from a TOML file whose keys match
/// the field names. Missing keys take the defaults.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdcchConfig {
    pub code_length: usize,
    pub crc_bits: usize,
    pub list_size: usize,
    pub snr_db: Vec<f64>,
    pub max_frames: usize,
    /// A point stops once this many frame errors are seen.
    pub min_errors: usize,
    /// Frames simulated between stopping checks.
    pub batch_frames: usize,
    pub seed: u64,
    /// Padding granularity of compressed payloads.
    pub bin_bits: usize,
    /// Blind-decoding candidates kept from a length histogram.
    pub max_candidates: usize,
    /// Optional extra payload-length histogram.
    pub histogram: Option<Vec<LengthBin>>,
}

impl Default for PdcchConfig {
    fn default() -> Self {
        PdcchConfig {
            code_length: 128,
            crc_bits: CRC_BITS,
            list_size: 8,
            snr_db: (0..=12).map(|i| -5.0 + 0.5 * i as f64).collect(),
            max_frames: 20_000,
            min_errors: 100,
            batch_frames: 250,
            seed: 1,
            bin_bits: 8,
            max_candidates: 8,
            histogram: None,
        }
    }
}

impl PdcchConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: PdcchConfig = toml::from_str(text).map_err(|e| Error::Config(format!("PDCCH config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        PdcchConfig::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.crc_bits != CRC_BITS {
            return Err(Error::Config(format!("only the {CRC_BITS}-bit CRC is supported")));
        }
        if self.list_size == 0 {
            return Err(Error::Config("list size must be at least 1".into()));
        }
        if !self.code_length.is_power_of_two() || !(32..=128).contains(&self.code_length) {
            return Err(Error::Config(format!("code length {} unsupported", self.code_length)));
        }
        if self.max_frames == 0 || self.batch_frames == 0 || self.min_errors == 0 {
            return Err(Error::Config("frame limits must be positive".into()));
        }
        if self.bin_bits == 0 || self.max_candidates == 0 {
            return Err(Error::Config("bin width and candidate cap must be positive".into()));
        }
        if self.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config("SNR values must be finite".into()));
        }
        if let Some(h) = &self.histogram {
            self.check_source(&LengthHistogram::new(h.clone())?)?;
        }
        Ok(())
    }

    /// Checks that every candidate payload plus CRC fits the code.
    pub fn check_source(&self, source: &LengthHistogram) -> Result<()> {
        let k = source.max_length() + self.crc_bits;
        if k > self.code_length {
            return Err(Error::Config(format!(
                "payload of {} bits plus CRC exceeds code length {}",
                source.max_length(),
                self.code_length
            )));
        }
        Ok(())
    }

    pub fn config_histogram(&self) -> Result<Option<LengthHistogram>> {
        self.histogram.clone().map(LengthHistogram::new).transpose()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FerPoint {
    pub snr_db: f64,
    pub frames: usize,
    pub errors: usize,
    pub fer: f64,
    /// Half-width of the 95% Wilson score interval.
    pub ci_halfwidth: f64,
}

/// Half-width of the 95% Wilson interval for `errors` out of `frames`.
pub fn wilson_halfwidth(errors: usize, frames: usize) -> f64 {
    if frames == 0 {
        return 0.5;
    }
    let z = 1.959_963_984_540_054;
    let n = frames as f64;
    let p = errors as f64 / n;
    let z2 = z * z;
    z / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt()
}

/// Seeds one frame's generator; independent of thread scheduling.
fn frame_rng(seed: u64, point: usize, frame: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((point as u64) << 40) | frame as u64);
    rng
}

/// Whether one frame is lost: a payload length is drawn from `source`,
/// filled with random bits, protected by the CRC, polar-encoded, sent over
/// AWGN, and blind-decoded over the source's candidate lengths.
fn frame_error(
    source: &LengthHistogram,
    decoder: &BlindDecoder,
    snr_db: f64,
    rng: &mut ChaCha8Rng,
) -> Result<bool> {
    let p = source.sample(rng);
    let payload: Vec<bool> = (0..p).map(|_| rng.random_bool(0.5)).collect();
    let code = decoder.code(p).expect("every source length is a candidate");
    let x = code.encode(&attach_crc(&payload))?;
    let llr = bpsk_awgn_llr(&x, snr_db, rng);
    Ok(decoder.decode(&llr)? != Some((p, payload)))
}

/// FER at every SNR of the grid for payload lengths drawn from `source`.
/// Frames are simulated in fixed-size batches until `min_errors` errors or
/// `max_frames` frames; results depend only on the seed.
pub fn fer_sweep(config: &PdcchConfig, source: &LengthHistogram) -> Result<Vec<FerPoint>> {
    config.validate()?;
    config.check_source(source)?;
    if config.snr_db.is_empty() {
        return Err(Error::Config("SNR grid is empty".into()));
    }
    let decoder = BlindDecoder::new(config.code_length, &source.lengths(), config.list_size)?;
    config
        .snr_db
        .iter()
        .enumerate()
        .map(|(point, &snr_db)| {
            let mut frames = 0;
            let mut errors = 0;
            while errors < config.min_errors && frames < config.max_frames {
                let batch = config.batch_frames.min(config.max_frames - frames);
                let lost = (frames..frames + batch)
                    .into_par_iter()
                    .map(|f| frame_error(source, &decoder, snr_db, &mut frame_rng(config.seed, point, f)))
                    .collect::<Result<Vec<bool>>>()?;
                errors += lost.iter().filter(|&&e| e).count();
                frames += batch;
            }
            let fer = errors as f64 / frames as f64;
            Ok(FerPoint {
                snr_db,
                frames,
                errors,
                fer,
                ci_halfwidth: wilson_halfwidth(errors, frames),
            })
        })
        .collect()
}

/// SNR where the curve first falls to `target`, by linear interpolation of
/// log10(FER) between neighbouring grid points. Zero-error points count as
/// half an error.
pub fn snr_at_fer(points: &[FerPoint], target: f64) -> Option<f64> {
    let log_fer = |p: &FerPoint| {
        let errors = if p.errors == 0 { 0.5 } else { p.errors as f64 };
        (errors / p.frames as f64).log10()
    };
    let t = target.log10();
    points.windows(2).find_map(|w| {
        let (a, b) = (log_fer(&w[0]), log_fer(&w[1]));
        if a >= t && b <= t && a != b {
            Some(w[0].snr_db + (a - t) / (a - b) * (w[1].snr_db - w[0].snr_db))
        } else if a == t {
            Some(w[0].snr_db)
        } else {
            None
        }
    })
}

/// One labelled curve.
#[derive(Debug, Clone, PartialEq)]
pub struct FerCurve {
    pub label: String,
    pub points: Vec<FerPoint>,
}

pub fn write_fer_csv(curves: &[FerCurve], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["snr_db", "frames", "errors", "fer", "ci_halfwidth", "curve_label"])?;
    for c in curves {
        for p in &c.points {
            out.write_record([
                format!("{}", p.snr_db),
                p.frames.to_string(),
                p.errors.to_string(),
                format!("{:.6e}", p.fer),
                format!("{:.6e}", p.ci_halfwidth),
                c.label.clone(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}
