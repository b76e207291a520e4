//! Training loop, inference, evaluation, and the distance analysis.

mod checkpoint;
mod metrics;
mod report;

pub use checkpoint::{load_checkpoint, save_checkpoint, CKPT_MAGIC, CKPT_VERSION};
pub use metrics::{
    average_precision, map_metric, ndcg_at_n, significance_test, NdcgGain, SigTestReport,
};
pub use report::{
    DistanceReport, DistanceStat, EvalCounts, EvalReport, GroupDistances, LossReport, ProductEval,
    RankedReview,
};

use crate::config::{ContrastiveMode, TrainConfig};
use crate::dataset::{make_ranking_pairs, Dataset, DatasetError, ProductRecord};
use crate::model::{ModelDims, ModelError, MrhpModel, SampleForward};
use crate::objectives::{
    adaptive_contrastive, contrastive_ce, ranking_loss, total_loss, ContrastiveConfig, PooledIds,
    RankingConfig,
};
use crate::tensor::{AdamState, Tape, TensorError};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: String, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("vocabulary mismatch: model built for vocab_size {model}, dataset declares {dataset}")]
    VocabMismatch { model: usize, dataset: usize },
    #[error("feature width mismatch: model built for {model}, dataset declares {dataset}")]
    FeatureDimMismatch { model: usize, dataset: usize },
    #[error("no product has a relevant review at threshold {tau}")]
    NoRelevantReviews { tau: u8 },
    #[error("paired scores disagree in length: {a} vs {b}")]
    PairedLengthMismatch { a: usize, b: usize },
    #[error("need at least 2 products, got {got}")]
    TooFewProducts { got: usize },
}

/// A trained model plus its per-batch loss history.
pub struct TrainOutcome {
    pub model: MrhpModel,
    pub step: u64,
    pub losses: Vec<LossReport>,
}

// Distinct PRNG streams per epoch: even streams sample ranking pairs, odd
// streams shuffle the pair pool. Stream 0 is the parameter init inside
// MrhpModel, so epoch streams start at 1.
fn epoch_rngs(seed: u64, epoch: usize) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut pair_rng = ChaCha8Rng::seed_from_u64(seed);
    pair_rng.set_stream(1 + 2 * epoch as u64);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed);
    shuffle_rng.set_stream(2 + 2 * epoch as u64);
    (pair_rng, shuffle_rng)
}

#[derive(Clone, Copy, PartialEq, Eq)]
struct PairSample {
    product: usize,
    plus: usize,
    minus: usize,
}

/// Train a fresh model on the dataset.
///
/// Each epoch samples up to `pairs_per_product` ranking pairs per product,
/// shuffles the pool, and steps Adam once per batch of pairs: the ranking
/// hinge runs over the batch's (s⁺, s⁻) scores and the configured
/// contrastive term runs over the distinct helpful samples appearing in the
/// batch. Deterministic in `config.seed`.
pub fn train(config: &TrainConfig, dataset: &Dataset) -> Result<TrainOutcome, HarnessError> {
    if config.batch_size < 2 {
        return Err(DatasetError::Config(
            "batch size must be at least 2; the contrastive loss needs cross-sample negatives"
                .into(),
        )
        .into());
    }
    dataset.validate()?;
    let dims = ModelDims {
        vocab_size: dataset.vocab_size,
        feature_dim: dataset.feature_dim,
    };
    let mut model = MrhpModel::init(config.clone(), dims)?;
    let mut adam = AdamState::new(config.learning_rate, &model.params.lens());
    let ranking_cfg = RankingConfig {
        margin: config.margin,
    };
    let contrastive_cfg = ContrastiveConfig::from(config);
    let mut losses = Vec::new();

    for epoch in 0..config.epochs {
        let (mut pair_rng, mut shuffle_rng) = epoch_rngs(config.seed, epoch);
        let mut pool = Vec::new();
        for (pi, product) in dataset.products.iter().enumerate() {
            for (plus, minus) in make_ranking_pairs(product, &mut pair_rng, config.pairs_per_product)
            {
                pool.push(PairSample {
                    product: pi,
                    plus,
                    minus,
                });
            }
        }
        pool.shuffle(&mut shuffle_rng);

        for (batch_idx, chunk) in pool.chunks(config.batch_size).enumerate() {
            let report = train_batch(
                &mut model,
                &mut adam,
                dataset,
                chunk,
                &ranking_cfg,
                &contrastive_cfg,
                config.contrastive,
                epoch,
                batch_idx,
            )?;
            losses.push(report);
        }
    }

    Ok(TrainOutcome {
        step: adam.step_count(),
        model,
        losses,
    })
}

#[allow(clippy::too_many_arguments)]
fn train_batch(
    model: &mut MrhpModel,
    adam: &mut AdamState,
    dataset: &Dataset,
    chunk: &[PairSample],
    ranking_cfg: &RankingConfig,
    contrastive_cfg: &ContrastiveConfig,
    mode: ContrastiveMode,
    epoch: usize,
    batch_idx: usize,
) -> Result<LossReport, HarnessError> {
    let diverged = |e: TensorError| match e {
        TensorError::NonFinite { .. } => HarnessError::Diverged {
            epoch,
            batch: batch_idx,
        },
        other => HarnessError::Tensor(other),
    };

    let mut tape = Tape::new();
    let bind = model.bind(&mut tape);

    // forward each distinct (product, review) sample once, in first
    // appearance order
    let mut keys: Vec<(usize, usize)> = Vec::new();
    let mut forwards: Vec<SampleForward> = Vec::new();
    let mut pair_indices = Vec::with_capacity(chunk.len());
    for pair in chunk {
        let mut index_of = |review: usize| -> Result<usize, HarnessError> {
            if let Some(pos) = keys.iter().position(|&k| k == (pair.product, review)) {
                return Ok(pos);
            }
            let fwd = model
                .forward_sample(
                    &mut tape,
                    &bind,
                    &dataset.products[pair.product],
                    &dataset.products[pair.product].reviews[review],
                )
                .map_err(diverged)?;
            keys.push((pair.product, review));
            forwards.push(fwd);
            Ok(keys.len() - 1)
        };
        let plus = index_of(pair.plus)?;
        let minus = index_of(pair.minus)?;
        pair_indices.push((plus, minus));
    }
    let score_pairs: Vec<_> = pair_indices
        .iter()
        .map(|&(p, m)| (forwards[p].score, forwards[m].score))
        .collect();

    let ranking = ranking_loss(&mut tape, &score_pairs, ranking_cfg).map_err(diverged)?;

    let labeled: Vec<(PooledIds, u8)> = keys
        .iter()
        .zip(&forwards)
        .map(|(&(pi, ri), fwd)| (fwd.pooled, dataset.products[pi].reviews[ri].label))
        .collect();
    let contrastive = match mode {
        ContrastiveMode::Off => None,
        ContrastiveMode::Plain => {
            contrastive_ce(&mut tape, &labeled, contrastive_cfg).map_err(diverged)?
        }
        ContrastiveMode::Adaptive => {
            adaptive_contrastive(&mut tape, &labeled, contrastive_cfg).map_err(diverged)?
        }
    };

    let total = total_loss(&mut tape, ranking, contrastive).map_err(diverged)?;
    tape.backward(total).map_err(diverged)?;

    let grads = bind.collect_grads(&tape);
    let grad_slices: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
    let mut values = model.params.values_mut();
    adam.step(&mut values, &grad_slices)?;

    Ok(LossReport {
        epoch,
        batch: batch_idx,
        pairs: chunk.len(),
        ranking: ranking.map_or(0.0, |id| tape.scalar(id)),
        contrastive: contrastive.map_or(0.0, |id| tape.scalar(id)),
        contrastive_active: contrastive.is_some(),
        total: tape.scalar(total),
    })
}

fn check_dims(model: &MrhpModel, dataset: &Dataset) -> Result<(), HarnessError> {
    if model.dims.vocab_size != dataset.vocab_size {
        return Err(HarnessError::VocabMismatch {
            model: model.dims.vocab_size,
            dataset: dataset.vocab_size,
        });
    }
    if model.dims.feature_dim != dataset.feature_dim {
        return Err(HarnessError::FeatureDimMismatch {
            model: model.dims.feature_dim,
            dataset: dataset.feature_dim,
        });
    }
    Ok(())
}

/// Score every review of a product, sorted descending; ties break on
/// review_id so the order is deterministic.
pub fn predict_scores(
    model: &MrhpModel,
    product: &ProductRecord,
) -> Result<Vec<(String, f64)>, HarnessError> {
    let mut tape = Tape::new();
    let bind = model.bind(&mut tape);
    let mut scored = Vec::with_capacity(product.reviews.len());
    for review in &product.reviews {
        let fwd = model.forward_sample(&mut tape, &bind, product, review)?;
        scored.push((review.review_id.clone(), tape.scalar(fwd.score)));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(scored)
}

/// Options for [`evaluate`].
#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub tau: u8,
    pub gain: NdcgGain,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            tau: 3,
            gain: NdcgGain::Exponential,
        }
    }
}

/// Rank every product's reviews and aggregate MAP and NDCG@{3,5}.
pub fn evaluate(
    model: &MrhpModel,
    dataset: &Dataset,
    opts: &EvalOptions,
) -> Result<EvalReport, HarnessError> {
    check_dims(model, dataset)?;
    let mut per_product = Vec::with_capacity(dataset.products.len());
    let mut label_lists = Vec::with_capacity(dataset.products.len());
    for product in &dataset.products {
        let ranking = predict_scores(model, product)?;
        let labels: Vec<u8> = ranking
            .iter()
            .map(|(id, _)| {
                product
                    .reviews
                    .iter()
                    .find(|r| &r.review_id == id)
                    .expect("ranked id comes from this product")
                    .label
            })
            .collect();
        let detail = ProductEval {
            product_id: product.product_id.clone(),
            average_precision: average_precision(&labels, opts.tau),
            ndcg3: ndcg_at_n(&labels, 3, opts.gain),
            ndcg5: ndcg_at_n(&labels, 5, opts.gain),
            ranking: ranking
                .iter()
                .zip(&labels)
                .map(|((id, score), &label)| RankedReview {
                    review_id: id.clone(),
                    score: *score,
                    label,
                })
                .collect(),
        };
        per_product.push(detail);
        label_lists.push(labels);
    }

    let map = map_metric(&label_lists, opts.tau)?;
    let n = per_product.len() as f64;
    let ndcg3 = per_product.iter().map(|p| p.ndcg3).sum::<f64>() / n;
    let ndcg5 = per_product.iter().map(|p| p.ndcg5).sum::<f64>() / n;
    let skipped = per_product
        .iter()
        .filter(|p| p.average_precision.is_none())
        .count();
    Ok(EvalReport {
        map,
        ndcg3,
        ndcg5,
        tau: opts.tau,
        gain: opts.gain,
        counts: EvalCounts {
            products: dataset.products.len(),
            reviews: dataset.total_reviews(),
            skipped_no_relevant: skipped,
        },
        per_product,
    })
}

struct Accum {
    cs: Vec<f64>,
    l2: Vec<f64>,
}

impl Accum {
    fn new() -> Self {
        Accum {
            cs: Vec::new(),
            l2: Vec::new(),
        }
    }

    fn stat(&self) -> DistanceStat {
        DistanceStat {
            cs_mean: mean(&self.cs),
            cs_std: std_dev(&self.cs),
            l2_mean: mean(&self.l2),
            l2_std: std_dev(&self.l2),
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Mean cosine similarity and L2 distance over all cross-matrix token pairs.
fn cross_pair_stats(a: &[f64], b: &[f64], d: usize) -> (f64, f64) {
    let rows_a = a.len() / d;
    let rows_b = b.len() / d;
    let mut cs_sum = 0.0;
    let mut l2_sum = 0.0;
    for i in 0..rows_a {
        let ra = &a[i * d..(i + 1) * d];
        let na = ra.iter().map(|x| x * x).sum::<f64>().sqrt();
        for j in 0..rows_b {
            let rb = &b[j * d..(j + 1) * d];
            let nb = rb.iter().map(|x| x * x).sum::<f64>().sqrt();
            let dot: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
            let denom = (na * nb).max(f64::MIN_POSITIVE);
            cs_sum += dot / denom;
            l2_sum += ra
                .iter()
                .zip(rb)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
        }
    }
    let count = (rows_a * rows_b) as f64;
    (cs_sum / count, l2_sum / count)
}

/// Per label group, the mean ± std over samples of the cross-token cosine
/// similarity and L2 distance along the three relation paths. Groups with no
/// samples are omitted with a warning.
pub fn distance_analysis(
    model: &MrhpModel,
    dataset: &Dataset,
    label_groups: &[u8],
) -> Result<DistanceReport, HarnessError> {
    check_dims(model, dataset)?;
    let d = model.config.hidden_dim;
    let mut groups = Vec::new();
    for &label in label_groups {
        let mut intra = Accum::new();
        let mut inter = Accum::new();
        let mut review = Accum::new();
        let mut samples = 0usize;
        for product in &dataset.products {
            for rev in &product.reviews {
                if rev.label != label {
                    continue;
                }
                samples += 1;
                let mut tape = Tape::new();
                let bind = model.bind(&mut tape);
                let bundle = model.forward_bundle(&mut tape, &bind, product, rev)?;
                let h_p = tape.value(bundle.h_p).data();
                let h_r = tape.value(bundle.h_r).data();
                let v_p = tape.value(bundle.v_p).data();
                let v_r = tape.value(bundle.v_r).data();

                // each relation averages its two pairings
                let pairs_of = |acc: &mut Accum, x: (&[f64], &[f64]), y: (&[f64], &[f64])| {
                    let (cs1, l21) = cross_pair_stats(x.0, x.1, d);
                    let (cs2, l22) = cross_pair_stats(y.0, y.1, d);
                    acc.cs.push((cs1 + cs2) / 2.0);
                    acc.l2.push((l21 + l22) / 2.0);
                };
                pairs_of(&mut intra, (h_p, h_r), (v_p, v_r));
                pairs_of(&mut inter, (h_p, v_r), (v_p, h_r));
                pairs_of(&mut review, (h_p, v_p), (h_r, v_r));
            }
        }
        if samples == 0 {
            log::warn!("distance analysis: no samples with label {label}, group omitted");
            continue;
        }
        groups.push(GroupDistances {
            label,
            samples,
            intra_modal: intra.stat(),
            inter_modal: inter.stat(),
            intra_review: review.stat(),
        });
    }
    Ok(DistanceReport { groups })
}
