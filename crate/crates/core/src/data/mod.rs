//! Dataset ingestion and batching.

pub mod mnist;
pub mod pianoroll;
pub mod synthetic;
pub mod text;

use crate::rng::Rng;

/// Splits `0..n` into consecutive batches of at most `batch_size` indices,
/// shuffled first when `rng` is given. Every index appears exactly once.
pub fn batch_indices(n: usize, batch_size: usize, rng: Option<&mut Rng>) -> Vec<Vec<usize>> {
    let order = match rng {
        Some(rng) => rng.permutation(n),
        None => (0..n).collect(),
    };
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}
