//! Shuffled (product, review) sample batches, deterministic per (seed, epoch).

use super::{Dataset, DatasetError, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Index of one (product, review) sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleRef {
    pub product: usize,
    pub review: usize,
}

/// One epoch's batches: all samples shuffled by a PRNG stream keyed on
/// (seed, epoch), split into chunks of `batch_size` with the final short
/// batch kept.
pub fn epoch_batches(
    dataset: &Dataset,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Vec<SampleRef>>> {
    if batch_size < 2 {
        return Err(DatasetError::Config(
            "batch size must be at least 2; the contrastive loss needs cross-sample negatives"
                .into(),
        ));
    }
    let mut samples: Vec<SampleRef> = Vec::with_capacity(dataset.total_reviews());
    for (pi, product) in dataset.products.iter().enumerate() {
        for ri in 0..product.reviews.len() {
            samples.push(SampleRef {
                product: pi,
                review: ri,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    samples.shuffle(&mut rng);
    Ok(samples.chunks(batch_size).map(<[SampleRef]>::to_vec).collect())
}
