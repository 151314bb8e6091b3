//! Deterministic seed derivation. Campaign randomness is always derived
//! functionally from the master seed plus a purpose tag and counters, never
//! threaded through mutable RNG state, so a resumed campaign replays the
//! exact random stream of an uninterrupted one.

/// SplitMix64-style mixer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a master seed, a purpose tag, and a counter.
pub fn derive(master: u64, tag: &str, counter: u64) -> u64 {
    let mut h = mix(master ^ 0x6a09_e667_f3bc_c909);
    for b in tag.as_bytes() {
        h = mix(h ^ u64::from(*b));
    }
    mix(h ^ counter)
}

/// FNV-1a 64-bit digest, hex encoded. Used for journal payload digests.
pub fn fnv1a_hex(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}
