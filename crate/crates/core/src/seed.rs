//! Stable seed derivation so parallel schedules reproduce sequential results.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with a key path into a child seed.
pub fn derive(master: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix(master), |acc, &p| splitmix(acc ^ splitmix(p)))
}

/// FNV-1a over the bytes of `s`, for folding string keys into [`derive`].
pub fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
