//! Desk-scale experiment drivers behind the CLI.

pub mod bench;
pub mod flow;
pub mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The one RNG used by every experiment, so runs are reproducible across
/// platforms for a fixed seed.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
