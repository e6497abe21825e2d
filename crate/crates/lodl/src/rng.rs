use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derives an independent RNG from a master seed and a path of indices.
///
/// Every randomized stage draws from its own stream keyed by (seed, purpose,
/// indices), so results never depend on scheduling or evaluation order.
pub fn stream(seed: u64, purpose: &str, parts: &[u64]) -> ChaCha8Rng {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    let mut mix = |x: u64| {
        h ^= x;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
        h ^= h >> 33;
        h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
        h ^= h >> 33;
    };
    mix(seed);
    for &b in purpose.as_bytes() {
        mix(b as u64);
    }
    for &p in parts {
        mix(p);
    }
    ChaCha8Rng::seed_from_u64(h)
}
