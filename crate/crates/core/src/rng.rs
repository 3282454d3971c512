//! Seed derivation for independent substreams.
//!
//! Stage and per-window RNGs are seeded by mixing a master seed with a stream
//! index through SplitMix64, so substreams stay decorrelated and reproducible
//! without sharing one sequential stream.

/// One SplitMix64 scramble step.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the seed for substream `stream` of a master seed.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    splitmix64(master ^ splitmix64(stream))
}
