//! Deterministic random-stream derivation.
//!
//! Every draw in a run descends from one master seed. Components obtain
//! substreams keyed by a domain tag plus integer indices, so no two
//! components ever share draws and any substream can be re-derived in
//! isolation (the auction replay relies on this).

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn mix(h: u64, v: u64) -> u64 {
    let mut s = h ^ v.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    s = (s ^ (s >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    s = (s ^ (s >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    s ^ (s >> 31)
}

/// Derive an independent ChaCha stream from the master seed, a domain tag,
/// and any number of integer indices. Pure: same inputs, same stream.
pub fn derive_rng(master_seed: u64, tag: &str, indices: &[u64]) -> ChaCha8Rng {
    let mut h = mix(master_seed, fnv1a(tag.as_bytes()));
    for &ix in indices {
        h = mix(h, ix);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut h).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Stream that draws bids for one item; advances over the whole run and its
/// word position is recorded in snapshots.
pub fn sampling_stream(master_seed: u64, item: usize) -> ChaCha8Rng {
    derive_rng(master_seed, "bid-sampling", &[item as u64])
}

/// Stream behind one reward contest. Keyed by (item, round) so a contest can
/// be replayed bit-for-bit under any candidate bid.
pub fn contest_stream(master_seed: u64, item: usize, round: u64) -> ChaCha8Rng {
    derive_rng(master_seed, "contest", &[item as u64, round])
}
