//! Machine-readable report types written by the harness and the CLI.

use super::metrics::NdcgGain;
use serde::{Deserialize, Serialize};

/// Per-batch loss decomposition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossReport {
    pub epoch: usize,
    pub batch: usize,
    pub pairs: usize,
    pub ranking: f64,
    pub contrastive: f64,
    pub contrastive_active: bool,
    pub total: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankedReview {
    pub review_id: String,
    pub score: f64,
    pub label: u8,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProductEval {
    pub product_id: String,
    /// None when the product has no relevant review at the MAP threshold.
    pub average_precision: Option<f64>,
    #[serde(rename = "NDCG@3")]
    pub ndcg3: f64,
    #[serde(rename = "NDCG@5")]
    pub ndcg5: f64,
    pub ranking: Vec<RankedReview>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalCounts {
    pub products: usize,
    pub reviews: usize,
    /// Products skipped by MAP for lack of a relevant review.
    pub skipped_no_relevant: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(rename = "MAP")]
    pub map: f64,
    #[serde(rename = "NDCG@3")]
    pub ndcg3: f64,
    #[serde(rename = "NDCG@5")]
    pub ndcg5: f64,
    /// Relevance threshold used for MAP.
    pub tau: u8,
    pub gain: NdcgGain,
    pub counts: EvalCounts,
    pub per_product: Vec<ProductEval>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DistanceStat {
    pub cs_mean: f64,
    pub cs_std: f64,
    pub l2_mean: f64,
    pub l2_std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupDistances {
    pub label: u8,
    pub samples: usize,
    pub intra_modal: DistanceStat,
    pub inter_modal: DistanceStat,
    pub intra_review: DistanceStat,
}

/// Mean ± std of cosine similarity (CS) and Euclidean distance (L2) between
/// cross-matrix token pairs, per relation path and label group.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistanceReport {
    pub groups: Vec<GroupDistances>,
}
