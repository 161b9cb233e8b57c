//! Seed derivation shared by the randomized components.

/// Element `index` of the SplitMix64 output stream started at `base`.
/// Distinct indices give statistically independent seeds, so parallel
/// consumers can be handed their own without coordination.
pub(crate) fn splitmix64_at(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add((index.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
