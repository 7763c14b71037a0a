//! BPSK over real AWGN.

use rand::Rng;
use rand_distr::StandardNormal;

/// Noise variance per real dimension at symbol SNR `snr_db` (unit-energy
/// symbols): `1 / (2 * 10^(snr/10))`.
pub fn noise_variance(snr_db: f64) -> f64 {
    1.0 / (2.0 * 10f64.powf(snr_db / 10.0))
}

/// Maps 0 to +1 and 1 to -1, adds noise, and returns the channel LLRs
/// `2y / sigma^2` (positive favours 0).
pub fn bpsk_awgn_llr(codeword: &[bool], snr_db: f64, rng: &mut impl Rng) -> Vec<f64> {
    let var = noise_variance(snr_db);
    let sigma = var.sqrt();
    codeword
        .iter()
        .map(|&c| {
            let x = if c { -1.0 } else { 1.0 };
            let n: f64 = rng.sample(StandardNormal);
            2.0 * (x + sigma * n) / var
        })
        .collect()
}
