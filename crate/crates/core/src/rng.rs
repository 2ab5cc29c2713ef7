//! Seeded pseudorandom streams split by purpose.
//!
//! Every consumer draws from a ChaCha8 stream keyed by `(seed, purpose,
//! index)`. ChaCha is counter-based, so streams are independent and adding
//! draws to one purpose never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u32)]
pub enum Purpose {
    Catalog = 1,
    CatalogItem = 2,
    UserInteractions = 3,
    KMeansLevel = 4,
    Corpus = 5,
    ProbeSplit = 6,
    Baseline = 7,
}

pub fn stream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 40) ^ index);
    rng
}
