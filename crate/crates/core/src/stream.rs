//! Deterministic random streams.
//!
//! Every Monte Carlo unit (one trial of one sweep point of one experiment)
//! owns a [`RandomStream`] derived from the master seed and its index tuple.
//! The key is expanded from the master seed with SplitMix64 and the index
//! tuple is packed into the 64-bit ChaCha stream id, so distinct tuples map
//! to distinct, non-overlapping keystreams.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// The random number generator handed to every simulation routine.
pub type RandomStream = ChaCha12Rng;

const EXPERIMENT_BITS: u32 = 16;
const SWEEP_BITS: u32 = 16;
const TRIAL_BITS: u32 = 32;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Packs the index tuple into a ChaCha stream id.
///
/// Panics if an index exceeds its field width (65535 experiments, 65535
/// sweep points, 2^32 trials).
pub fn stream_id(experiment_id: u32, sweep_index: u32, trial_index: u64) -> u64 {
    assert!(experiment_id < (1 << EXPERIMENT_BITS), "experiment id out of range");
    assert!(sweep_index < (1 << SWEEP_BITS), "sweep index out of range");
    assert!(trial_index < (1u64 << TRIAL_BITS), "trial index out of range");
    (u64::from(experiment_id) << (SWEEP_BITS + TRIAL_BITS))
        | (u64::from(sweep_index) << TRIAL_BITS)
        | trial_index
}

/// Derives the stream for `(master_seed, experiment_id, sweep_index, trial_index)`.
pub fn derive_stream(
    master_seed: u64,
    experiment_id: u32,
    sweep_index: u32,
    trial_index: u64,
) -> RandomStream {
    let mut state = master_seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = RandomStream::from_seed(key);
    rng.set_stream(stream_id(experiment_id, sweep_index, trial_index));
    rng
}

/// Convenience for tests and one-off runs.
pub fn seeded(seed: u64) -> RandomStream {
    derive_stream(seed, 0, 0, 0)
}
