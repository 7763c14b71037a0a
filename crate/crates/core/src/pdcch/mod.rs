//! Polar-coded downlink control channel over AWGN: CRC attachment, polar
//! encoding, CRC-aided list decoding, blind decoding over zero-padded
//! payload lengths, and frame-error-rate sweeps.

mod blind;
mod channel;
mod crc;
mod polar;
mod reliability;
mod sweep;

pub use blind::{blind_length_decode, BlindDecoder, LengthBin, LengthHistogram};
pub use channel::{bpsk_awgn_llr, noise_variance};
pub use crc::{attach_crc, check_crc, crc24c, CRC24C_POLY, CRC_BITS};
pub use polar::{transform, PolarCode};
pub use reliability::{reliability_order, RELIABILITY_128};
pub use sweep::{fer_sweep, snr_at_fer, wilson_halfwidth, write_fer_csv, FerCurve, FerPoint, PdcchConfig};
