use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The one RNG used everywhere: ChaCha8 has a stable, platform-independent
/// output stream for a given seed.
pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream from a base seed and a label, so that
/// e.g. the chain order and the weight init never share draws.
pub fn derived(seed: u64, label: &str) -> Rng {
    seeded(seed ^ fnv1a(label.as_bytes()).rotate_left(17))
}

/// 64-bit FNV-1a hash.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
