//! Seedable, splittable random streams.
//!
//! Every trace draws from its own ChaCha8 stream selected by `(seed, stream)`.
//! ChaCha is a counter-based generator, so a stream's output depends only on
//! that pair and never on how work was scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type TraceRng = ChaCha8Rng;

pub fn stream_rng(seed: u64, stream: u64) -> TraceRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
