//! 24-bit CRC of the downlink control channel (generator `gCRC24C`).
//!
//! The register computation runs over the payload with 24 leading ones
//! prepended, so an all-zero payload does not produce an all-zero checksum.

/// x^24 + x^23 + x^21 + x^20 + x^17 + x^15 + x^13 + x^12 + x^8 + x^4 + x^2 + x + 1
pub const CRC24C_POLY: u32 = 0x1B2_B117;
pub const CRC_BITS: usize = 24;

const MASK: u32 = (1 << CRC_BITS) - 1;

fn shift(reg: u32, bit: bool) -> u32 {
    let top = (reg >> (CRC_BITS - 1)) & 1 == 1;
    let reg = (reg << 1) & MASK;
    if top ^ bit {
        reg ^ (CRC24C_POLY & MASK)
    } else {
        reg
    }
}

/// Checksum bits, most significant first.
pub fn crc24c(payload: &[bool]) -> Vec<bool> {
    let mut reg = 0u32;
    for _ in 0..CRC_BITS {
        reg = shift(reg, true);
    }
    for &b in payload {
        reg = shift(reg, b);
    }
    (0..CRC_BITS).rev().map(|i| (reg >> i) & 1 == 1).collect()
}

/// Payload followed by its checksum.
pub fn attach_crc(payload: &[bool]) -> Vec<bool> {
    let mut out = payload.to_vec();
    out.extend(crc24c(payload));
    out
}

/// True when the last 24 bits are the checksum of the rest.
pub fn check_crc(block: &[bool]) -> bool {
    if block.len() < CRC_BITS {
        return false;
    }
    let (payload, crc) = block.split_at(block.len() - CRC_BITS);
    crc24c(payload) == crc
}
