//! Named sub-seeds derived from a single run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent random streams split off one configuration seed, so that
/// changing e.g. the shuffle order never perturbs initialization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Data = 1,
    Init = 2,
    Shuffle = 3,
    Split = 4,
    Calibrate = 5,
    Mask = 6,
}

pub fn rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    rng_indexed(seed, stream, 0)
}

/// A stream further split by an index (e.g. one RNG per annotator).
pub fn rng_indexed(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(((stream as u64) << 32) | (index & 0xffff_ffff));
    r
}
