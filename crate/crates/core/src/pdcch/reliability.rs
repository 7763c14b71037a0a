//! Bit-channel reliability order for polar codes of length up to 128.
//!
//! The order is the polarization-weight ranking: channel `i` with binary
//! digits `b_j` has weight `sum_j b_j * 2^(j/4)`, and channels are listed
//! from least to most reliable.

/// Channel indices of the length-128 code in ascending reliability.
pub const RELIABILITY_128: [u16; 128] = [
    0, 1, 2, 4, 8, 16, 3, 32, 5, 6, 9, 64, 10, 17, 12, 18, //
    33, 20, 34, 7, 24, 36, 65, 11, 66, 40, 13, 19, 68, 14, 48, 21, //
    72, 35, 22, 25, 37, 80, 26, 38, 67, 41, 28, 96, 69, 42, 15, 49, //
    70, 44, 73, 50, 23, 74, 52, 81, 27, 76, 39, 82, 56, 29, 97, 84, //
    43, 30, 98, 71, 45, 88, 51, 100, 46, 75, 53, 104, 77, 54, 83, 57, //
    78, 112, 85, 58, 31, 99, 86, 60, 89, 101, 47, 90, 102, 105, 92, 55, //
    106, 79, 113, 59, 108, 114, 87, 61, 116, 62, 91, 103, 120, 93, 107, 94, //
    109, 115, 110, 117, 63, 118, 121, 122, 95, 124, 111, 119, 123, 125, 126, 127,
];

/// Ascending reliability order for length `n` (a power of two, at most
/// 128): the length-128 order restricted to indices below `n`. The
/// weight of an index does not depend on the code length, so this is the
/// nested sub-sequence.
pub fn reliability_order(n: usize) -> Vec<usize> {
    assert!(n.is_power_of_two() && n <= RELIABILITY_128.len(), "unsupported polar length {n}");
    RELIABILITY_128
        .iter()
        .map(|&i| i as usize)
        .filter(|&i| i < n)
        .collect()
}
