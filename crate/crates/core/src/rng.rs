//! Counter-based per-replication random streams.
//!
//! Replication `r` under master seed `s` always draws from ChaCha8 stream `r`
//! keyed by `s`, so results never depend on scheduling or worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Independent generator for replication `index` under `seed`.
pub fn replication_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Fills `buf` with i.i.d. standard normals.
pub fn fill_normals<R: Rng + ?Sized>(rng: &mut R, buf: &mut [f64]) {
    for x in buf.iter_mut() {
        *x = rng.sample(StandardNormal);
    }
}

/// Paths handled by one parallel work unit. Fixed so that partial sums are
/// formed in the same order whatever the thread count.
pub const CHUNK: usize = 4096;
