//! Full scoring model: shared embedding, per-side LSTMs, per-side image
//! encoders, four cross-modal stacks, and the fusion/scoring head, all
//! registered in one flat parameter set in a fixed order.

use crate::config::TrainConfig;
use crate::dataset::{combine_roi, ProductRecord, ReviewRecord};
use crate::encoders::{EmbeddingTable, ImageEncoderParams, LstmParams};
use crate::fusion::{self, BundleIds, FusionParams, InteractionParams};
use crate::objectives::{pool_features, PooledIds};
use crate::params::{ParamBinding, ParamSet};
use crate::tensor::{Tape, TensorError, TensorId};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Dataset-dependent dimensions baked into a model instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab_size: usize,
    pub feature_dim: usize,
}

/// Tape handles produced by one sample forward pass.
pub struct SampleForward {
    pub score: TensorId,
    pub pooled: PooledIds,
    pub bundle: BundleIds,
}

pub struct MrhpModel {
    pub config: TrainConfig,
    pub dims: ModelDims,
    pub params: ParamSet,
    embedding: EmbeddingTable,
    lstm_product: LstmParams,
    lstm_review: LstmParams,
    image_product: ImageEncoderParams,
    image_review: ImageEncoderParams,
    interaction: InteractionParams,
    fusion: FusionParams,
}

impl MrhpModel {
    /// Build a freshly initialized model. Deterministic in `config.seed`.
    pub fn init(config: TrainConfig, dims: ModelDims) -> Result<Self, ModelError> {
        validate(&config, &dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut ps = ParamSet::new();
        let d = config.hidden_dim;
        let embedding = EmbeddingTable::init(&mut ps, "embedding", dims.vocab_size, config.embed_dim, &mut rng);
        let lstm_product = LstmParams::init(&mut ps, "lstm_product", config.embed_dim, d, &mut rng);
        let lstm_review = LstmParams::init(&mut ps, "lstm_review", config.embed_dim, d, &mut rng);
        let image_product = ImageEncoderParams::init(
            &mut ps,
            "image_product",
            dims.feature_dim,
            d,
            config.heads,
            config.residual_ln,
            &mut rng,
        );
        let image_review = ImageEncoderParams::init(
            &mut ps,
            "image_review",
            dims.feature_dim,
            d,
            config.heads,
            config.residual_ln,
            &mut rng,
        );
        let interaction = InteractionParams::init(&mut ps, "interaction", d, config.cm_layers, &mut rng);
        let fusion = FusionParams::init(
            &mut ps,
            "fusion",
            d,
            config.heads,
            config.conv_width,
            config.residual_ln,
            &mut rng,
        );
        Ok(MrhpModel {
            config,
            dims,
            params: ps,
            embedding,
            lstm_product,
            lstm_review,
            image_product,
            image_review,
            interaction,
            fusion,
        })
    }

    pub fn bind(&self, tape: &mut Tape) -> ParamBinding {
        self.params.bind(tape)
    }

    /// Encode one (product, review) sample through interaction and fusion.
    pub fn forward_sample(
        &self,
        tape: &mut Tape,
        bind: &ParamBinding,
        product: &ProductRecord,
        review: &ReviewRecord,
    ) -> Result<SampleForward, TensorError> {
        let bundle = self.forward_bundle(tape, bind, product, review)?;
        let pooled = pool_features(tape, &bundle)?;
        let score = fusion::score(tape, bind, &self.fusion, &bundle)?;
        Ok(SampleForward {
            score,
            pooled,
            bundle,
        })
    }

    /// Encoders plus cross-modal interaction only (used by the distance
    /// analysis, which never needs scores).
    pub fn forward_bundle(
        &self,
        tape: &mut Tape,
        bind: &ParamBinding,
        product: &ProductRecord,
        review: &ReviewRecord,
    ) -> Result<BundleIds, TensorError> {
        let emb_p = self.embedding.embed(tape, bind, &product.tokens)?;
        let k_p = self.lstm_product.encode(tape, bind, emb_p)?;
        let emb_r = self.embedding.embed(tape, bind, &review.tokens)?;
        let k_r = self.lstm_review.encode(tape, bind, emb_r)?;

        let rows_p = combine_roi(&product.image_features, self.dims.feature_dim, self.config.max_roi_rows);
        let a_p = self.image_product.encode(tape, bind, &rows_p)?;
        let rows_r = combine_roi(&review.image_features, self.dims.feature_dim, self.config.max_roi_rows);
        let a_r = self.image_review.encode(tape, bind, &rows_r)?;

        fusion::interact_all(tape, bind, &self.interaction, k_p, k_r, a_p, a_r)
    }
}

fn validate(config: &TrainConfig, dims: &ModelDims) -> Result<(), ModelError> {
    if config.hidden_dim == 0 || config.embed_dim == 0 {
        return Err(ModelError::Config("hidden_dim and embed_dim must be positive".into()));
    }
    if config.heads == 0 || config.hidden_dim % config.heads != 0 {
        return Err(ModelError::Config(format!(
            "hidden_dim {} must be divisible by heads {}",
            config.hidden_dim, config.heads
        )));
    }
    if config.conv_width == 0 {
        return Err(ModelError::Config("conv_width must be positive".into()));
    }
    if config.max_roi_rows == 0 {
        return Err(ModelError::Config("max_roi_rows must be positive".into()));
    }
    if dims.vocab_size == 0 || dims.feature_dim == 0 {
        return Err(ModelError::Config("vocab_size and feature_dim must be positive".into()));
    }
    Ok(())
}
