//! Training configuration with defaults matching the reference setup:
//! 1-layer LSTM with hidden size 128, D = 5 cross-modal attention layers,
//! Adam with batch size 32, ranking margin 1, o_p = 2, o_n = 0.

use serde::{Deserialize, Serialize};

/// Which contrastive term joins the ranking objective. `Plain` drops the
/// adaptive weights; `Off` trains on the ranking hinge alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ContrastiveMode {
    #[default]
    Adaptive,
    Plain,
    Off,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TrainConfig {
    /// Shared hidden width d for all encoders and attention blocks.
    pub hidden_dim: usize,
    /// Word embedding width fed to the LSTMs.
    pub embed_dim: usize,
    /// Number of cross-modal attention layers per stream (D).
    pub cm_layers: usize,
    /// Ranking pairs per training batch (B).
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Margin β of the pairwise ranking hinge.
    pub margin: f64,
    /// Positive-pair optimum offset o_p of the adaptive contrastive loss.
    pub o_p: f64,
    /// Negative-pair optimum offset o_n.
    pub o_n: f64,
    /// Reviews with label ≥ τ count as helpful (contrastive selection and
    /// MAP relevance).
    pub helpful_threshold: u8,
    /// Kernel width of the intra-modal fusion CNN.
    pub conv_width: usize,
    /// Self-attention head count.
    pub heads: usize,
    pub seed: u64,
    /// Ranking pairs sampled per product per epoch.
    pub pairs_per_product: usize,
    /// Apply residual + layer norm inside self-attention blocks.
    pub residual_ln: bool,
    pub contrastive: ContrastiveMode,
    /// Cap on concatenated ROI rows per record.
    pub max_roi_rows: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden_dim: 128,
            embed_dim: 300,
            cm_layers: 5,
            batch_size: 32,
            learning_rate: 1e-3,
            epochs: 10,
            margin: 1.0,
            o_p: 2.0,
            o_n: 0.0,
            helpful_threshold: 3,
            conv_width: 3,
            heads: 4,
            seed: 42,
            pairs_per_product: 5,
            residual_ln: true,
            contrastive: ContrastiveMode::Adaptive,
            max_roi_rows: 32,
        }
    }
}

impl TrainConfig {
    /// Small-dimension variant for tests and gradient checks.
    pub fn tiny() -> Self {
        TrainConfig {
            hidden_dim: 8,
            embed_dim: 8,
            cm_layers: 2,
            batch_size: 3,
            heads: 2,
            ..TrainConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_setup() {
        let c = TrainConfig::default();
        assert_eq!(c.hidden_dim, 128);
        assert_eq!(c.embed_dim, 300);
        assert_eq!(c.cm_layers, 5);
        assert_eq!(c.batch_size, 32);
        assert_eq!(c.margin, 1.0);
        assert_eq!(c.o_p, 2.0);
        assert_eq!(c.o_n, 0.0);
        assert_eq!(c.helpful_threshold, 3);
        assert_eq!(c.pairs_per_product, 5);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: TrainConfig = serde_json::from_str(r#"{"epochs": 3, "seed": 7}"#).unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.seed, 7);
        assert_eq!(c.hidden_dim, 128);
    }
}
