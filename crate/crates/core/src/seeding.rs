//! Deterministic seed derivation.
//!
//! Every random decision in the toolkit draws from a named sub-stream derived
//! from one global seed. Streams are independent of each other and of
//! iteration order, so stages can be re-run (or conceptually parallelised)
//! without perturbing results elsewhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a 64-bit hash. Used for seed derivation and artifact fingerprints;
/// the algorithm is fixed by definition, so hashes are stable across builds
/// and platforms.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// SplitMix64 finalizer; decorrelates related seed inputs.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the seed of the named sub-stream from the global seed.
pub fn derive_seed(global_seed: u64, stream: &str) -> u64 {
    splitmix64(global_seed ^ fnv1a64(stream.as_bytes()))
}

/// RNG for a named sub-stream (e.g. `"split"`, `"train"`, `"vae/1"`).
pub fn stream_rng(global_seed: u64, stream: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(global_seed, stream))
}

/// RNG for attacking one prefix: derived from the attack-stream seed, the
/// attack method name, the case id and the prefix length, so each prefix owns
/// an independent stream and generation order never changes results.
pub fn prefix_rng(attack_seed: u64, method: &str, case_id: &str, prefix_length: usize) -> ChaCha8Rng {
    let mut key = attack_seed ^ fnv1a64(method.as_bytes()).rotate_left(17);
    key ^= fnv1a64(case_id.as_bytes()).rotate_left(31);
    key ^= (prefix_length as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    ChaCha8Rng::seed_from_u64(splitmix64(key))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn fnv1a64_matches_reference_vectors() {
        // Reference values for the canonical FNV-1a 64-bit parameters.
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a1 = stream_rng(7, "split");
        let mut a2 = stream_rng(7, "split");
        let mut b = stream_rng(7, "train");
        let xs: Vec<u64> = (0..4).map(|_| a1.next_u64()).collect();
        let ys: Vec<u64> = (0..4).map(|_| a2.next_u64()).collect();
        let zs: Vec<u64> = (0..4).map(|_| b.next_u64()).collect();
        assert_eq!(xs, ys);
        assert_ne!(xs, zs);
    }

    #[test]
    fn prefix_streams_depend_on_all_inputs() {
        let base: Vec<u64> = {
            let mut r = prefix_rng(1, "last_event_regular", "case-9", 4);
            (0..4).map(|_| r.next_u64()).collect()
        };
        let mut by_method = prefix_rng(1, "all_event_regular", "case-9", 4);
        let mut by_case = prefix_rng(1, "last_event_regular", "case-8", 4);
        let mut by_len = prefix_rng(1, "last_event_regular", "case-9", 5);
        for variant in [&mut by_method, &mut by_case, &mut by_len] {
            let other: Vec<u64> = (0..4).map(|_| variant.next_u64()).collect();
            assert_ne!(base, other);
        }
    }
}
