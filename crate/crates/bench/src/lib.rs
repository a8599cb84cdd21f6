//! Fixtures shared by the benchmarks.

use gtomo_core::numerics::random_density;
use gtomo_core::simulate::shard_rng;
use gtomo_core::DensityMatrix;

/// Full-rank random state, fixed by `seed`.
pub fn state(dim: usize, seed: u64) -> DensityMatrix {
    random_density(&mut shard_rng(seed, 0), dim)
}
