//! Ranking pair construction: sampled (r⁺, r⁻) pairs with a strictly higher
//! helpfulness label on the left.

use super::ProductRecord;
use rand::Rng;

/// Sample up to `max_pairs` review index pairs `(plus, minus)` with
/// `label[plus] > label[minus]`, uniformly without replacement from all
/// valid ordered pairs. Products whose labels are all equal yield an empty
/// list and are skipped (logged at debug level).
pub fn make_ranking_pairs<R: Rng>(
    product: &ProductRecord,
    rng: &mut R,
    max_pairs: usize,
) -> Vec<(usize, usize)> {
    let mut valid: Vec<(usize, usize)> = Vec::new();
    for (i, a) in product.reviews.iter().enumerate() {
        for (j, b) in product.reviews.iter().enumerate() {
            if a.label > b.label {
                valid.push((i, j));
            }
        }
    }
    if valid.is_empty() {
        log::debug!(
            "product {}: all labels equal, no ranking pairs",
            product.product_id
        );
        return valid;
    }
    // partial Fisher-Yates: first `take` slots become the sample
    let take = max_pairs.min(valid.len());
    for i in 0..take {
        let j = rng.gen_range(i..valid.len());
        valid.swap(i, j);
    }
    valid.truncate(take);
    valid
}
