//! Node batches for mini-batch distillation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{GkdError, Result};

/// Batch `step` of a schedule that walks seeded permutations of `0..n`,
/// `batch` nodes at a time, reshuffling once every node has been visited.
///
/// Each batch is a uniform draw without replacement. When `batch` does not
/// divide `n`, the last batch of a cycle wraps around to the start of the
/// same permutation, so batch sizes stay constant and every node appears in
/// at least one batch per cycle. Returned indices are sorted.
pub fn sample_distill_batch(n: usize, batch: usize, seed: u64, step: usize) -> Result<Vec<usize>> {
    if batch == 0 || batch > n {
        return Err(GkdError::invalid(
            "batch_size",
            format!("{batch} must lie in 1..={n}"),
        ));
    }
    let per_cycle = n.div_ceil(batch);
    let cycle = (step / per_cycle) as u64;
    let chunk = step % per_cycle;
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ cycle.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    perm.shuffle(&mut rng);
    let mut out: Vec<usize> = (0..batch).map(|k| perm[(chunk * batch + k) % n]).collect();
    out.sort_unstable();
    Ok(out)
}

/// Number of batches in one pass over `n` nodes.
pub fn batches_per_cycle(n: usize, batch: usize) -> usize {
    n.div_ceil(batch.max(1))
}
