//! Per-component random streams derived from one seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream identifiers; each gets an independent ChaCha stream of the seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Augment = 3,
    DropPath = 4,
    Corrupt = 5,
    Data = 6,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    sub_stream(seed, which, 0)
}

/// Further split a stream by an index, e.g. an epoch or a corruption family.
pub fn sub_stream(seed: u64, which: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((which as u64) << 32) | (index & 0xffff_ffff));
    rng
}
