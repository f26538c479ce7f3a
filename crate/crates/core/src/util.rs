//! Small shared utilities.

/// FNV-1a 64-bit hash over the concatenation of the given byte chunks.
/// Used for checkpoint integrity checks and stable run-directory names.
pub fn fnv1a64(chunks: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for chunk in chunks {
        for &b in *chunk {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}
