//! Deterministic random substreams.
//!
//! Every randomized operation takes an explicit generator. Work that may run
//! in parallel derives its generator from `(seed, ids...)` so the result does
//! not depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator seeded from `seed` only.
pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent generator for the stream identified by `ids` under `seed`.
pub fn substream(seed: u64, ids: &[u64]) -> Rng {
    let stream = ids
        .iter()
        .fold(0x5DEE_CE66_D1CE_4E5Bu64, |acc, &id| splitmix(acc ^ splitmix(id)));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
