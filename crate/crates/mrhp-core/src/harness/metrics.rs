//! Ranking evaluation metrics and the paired bootstrap significance test.

use super::HarnessError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Gain function for NDCG. Exponential (2^label − 1) is the default graded
/// choice; linear uses the label directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NdcgGain {
    #[default]
    Exponential,
    Linear,
}

impl NdcgGain {
    fn apply(self, label: u8) -> f64 {
        match self {
            NdcgGain::Exponential => 2f64.powi(label as i32) - 1.0,
            NdcgGain::Linear => label as f64,
        }
    }
}

/// Average precision of one ranked list, with relevance = (label ≥ tau).
/// `None` when the list has no relevant review (the product is skipped).
pub fn average_precision(labels_in_rank_order: &[u8], tau: u8) -> Option<f64> {
    let total_relevant = labels_in_rank_order.iter().filter(|&&l| l >= tau).count();
    if total_relevant == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &label) in labels_in_rank_order.iter().enumerate() {
        if label >= tau {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Some(sum / total_relevant as f64)
}

/// Mean average precision over products. Products without a relevant review
/// are skipped; if none has one, that is an error.
pub fn map_metric(rankings: &[Vec<u8>], tau: u8) -> Result<f64, HarnessError> {
    let aps: Vec<f64> = rankings
        .iter()
        .filter_map(|labels| average_precision(labels, tau))
        .collect();
    if aps.is_empty() {
        return Err(HarnessError::NoRelevantReviews { tau });
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// NDCG@N with discount 1/log₂(rank+1) and the ideal ordering from the same
/// labels sorted descending. Defined as 0 when the ideal gain is 0.
pub fn ndcg_at_n(labels_in_rank_order: &[u8], n: usize, gain: NdcgGain) -> f64 {
    let dcg = |labels: &[u8]| -> f64 {
        labels
            .iter()
            .take(n)
            .enumerate()
            .map(|(i, &l)| gain.apply(l) / ((i + 2) as f64).log2())
            .sum()
    };
    let actual = dcg(labels_in_rank_order);
    let mut ideal_labels = labels_in_rank_order.to_vec();
    ideal_labels.sort_unstable_by(|a, b| b.cmp(a));
    let ideal = dcg(&ideal_labels);
    if ideal == 0.0 {
        0.0
    } else {
        actual / ideal
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SigTestReport {
    pub metric: String,
    pub mean_a: f64,
    pub mean_b: f64,
    pub mean_diff: f64,
    pub p_value: f64,
    pub n_resamples: usize,
    pub seed: u64,
    /// The resampling scheme, recorded because the choice is ours.
    pub method: String,
}

/// Paired bootstrap over products: resample the paired per-product metric
/// values with replacement and report the fraction of resamples where
/// system a fails to beat system b (mean difference ≤ 0).
pub fn significance_test(
    scores_a: &[f64],
    scores_b: &[f64],
    metric: &str,
    n_resamples: usize,
    seed: u64,
) -> Result<SigTestReport, HarnessError> {
    if scores_a.len() != scores_b.len() {
        return Err(HarnessError::PairedLengthMismatch {
            a: scores_a.len(),
            b: scores_b.len(),
        });
    }
    let n = scores_a.len();
    if n < 2 {
        return Err(HarnessError::TooFewProducts { got: n });
    }
    let diffs: Vec<f64> = scores_a.iter().zip(scores_b).map(|(a, b)| a - b).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut not_better = 0usize;
    for _ in 0..n_resamples {
        let mut sum = 0.0;
        for _ in 0..n {
            sum += diffs[rng.gen_range(0..n)];
        }
        if sum <= 0.0 {
            not_better += 1;
        }
    }
    Ok(SigTestReport {
        metric: metric.to_string(),
        mean_a: scores_a.iter().sum::<f64>() / n as f64,
        mean_b: scores_b.iter().sum::<f64>() / n as f64,
        mean_diff: diffs.iter().sum::<f64>() / n as f64,
        p_value: not_better as f64 / n_resamples as f64,
        n_resamples,
        seed,
        method: "paired bootstrap over products".to_string(),
    })
}
