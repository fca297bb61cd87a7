//! Deterministic seed derivation.

/// SplitMix64 finalizer.
pub fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combines a base seed with a stream id (`seed ^ id`, then scrambled).
pub fn mix(seed: u64, id: u64) -> u64 {
    splitmix(seed ^ splitmix(id))
}

/// Seed for a labelled stream, e.g. `derive(seed, "batch", iteration)`.
pub fn derive(seed: u64, label: &str, index: u64) -> u64 {
    let tag = label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
    mix(mix(seed, tag), index)
}
