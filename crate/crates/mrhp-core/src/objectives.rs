//! Training objectives: pooled cross-modal features, the contrastive loss
//! family (plain, adaptively weighted, and its hyperspherical rewriting),
//! the pairwise ranking hinge, and their sum.
//!
//! Contrastive pairs are built from the four max-pooled modality vectors of
//! each helpful sample: the 6 unordered modality combinations of one sample
//! are positives, the same combinations across distinct samples (ordered
//! j ≠ k) are negatives. Similarity is cosine, so the positive optimum
//! o_p/2 = 1 sits exactly at the cosine maximum.

use crate::config::TrainConfig;
use crate::fusion::BundleIds;
use crate::tensor::{PoolMode, Result, Tape, Tensor, TensorId};

#[derive(Debug, Clone, Copy)]
pub struct ContrastiveConfig {
    /// Positive-pair offset; the loss optimum sits at sim = o_p/2.
    pub o_p: f64,
    /// Negative-pair offset; optimum at sim = o_n/2.
    pub o_n: f64,
    /// Samples with label ≥ τ participate.
    pub helpful_threshold: u8,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
            o_p: 2.0,
            o_n: 0.0,
            helpful_threshold: 3,
        }
    }
}

impl From<&TrainConfig> for ContrastiveConfig {
    fn from(c: &TrainConfig) -> Self {
        ContrastiveConfig {
            o_p: c.o_p,
            o_n: c.o_n,
            helpful_threshold: c.helpful_threshold,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RankingConfig {
    pub margin: f64,
}

impl Default for RankingConfig {
    fn default() -> Self {
        RankingConfig { margin: 1.0 }
    }
}

/// Max-pooled modality vectors of one sample, on the tape.
#[derive(Debug, Clone, Copy)]
pub struct PooledIds {
    pub h_p: TensorId,
    pub h_r: TensorId,
    pub v_p: TensorId,
    pub v_r: TensorId,
}

impl PooledIds {
    fn by_index(&self, i: usize) -> TensorId {
        [self.h_p, self.h_r, self.v_p, self.v_r][i]
    }
}

/// Plain-value counterpart of [`PooledIds`] for offline analysis.
#[derive(Debug, Clone)]
pub struct PooledFeatures {
    pub h_p: Vec<f64>,
    pub h_r: Vec<f64>,
    pub v_p: Vec<f64>,
    pub v_r: Vec<f64>,
}

/// The 6 unordered modality combinations over (h_p, h_r, v_p, v_r).
pub const MODALITY_PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

/// Componentwise max over rows of each bundle matrix.
pub fn pool_features(tape: &mut Tape, bundle: &BundleIds) -> Result<PooledIds> {
    Ok(PooledIds {
        h_p: tape.pool(bundle.h_p, PoolMode::Max, 0)?,
        h_r: tape.pool(bundle.h_r, PoolMode::Max, 0)?,
        v_p: tape.pool(bundle.v_p, PoolMode::Max, 0)?,
        v_r: tape.pool(bundle.v_r, PoolMode::Max, 0)?,
    })
}

/// Cosine similarities of a helpful batch: per-sample positives and ordered
/// cross-sample negatives, each over the 6 modality pairs.
pub struct SimSet {
    pub pos: Vec<TensorId>,
    pub neg: Vec<TensorId>,
}

pub fn collect_sims(tape: &mut Tape, helpful: &[PooledIds]) -> Result<SimSet> {
    let mut pos = Vec::with_capacity(helpful.len() * MODALITY_PAIRS.len());
    for sample in helpful {
        for &(a, b) in &MODALITY_PAIRS {
            pos.push(tape.cosine_sim(sample.by_index(a), sample.by_index(b))?);
        }
    }
    let mut neg = Vec::new();
    for (j, sample_j) in helpful.iter().enumerate() {
        for (k, sample_k) in helpful.iter().enumerate() {
            if j == k {
                continue;
            }
            for &(a, b) in &MODALITY_PAIRS {
                neg.push(tape.cosine_sim(sample_j.by_index(a), sample_k.by_index(b))?);
            }
        }
    }
    Ok(SimSet { pos, neg })
}

/// −Σ sim_pos + Σ sim_neg.
pub fn plain_from_sims(tape: &mut Tape, sims: &SimSet) -> Result<TensorId> {
    let mut terms = Vec::with_capacity(sims.pos.len() + sims.neg.len());
    for &p in &sims.pos {
        terms.push(tape.neg(p)?);
    }
    terms.extend_from_slice(&sims.neg);
    sum_terms(tape, &terms)
}

/// −Σ [o_p − s]₊ · s + Σ [s − o_n]₊ · s, the hinge weights differentiated
/// through (subgradient 0 where clamped).
pub fn adaptive_from_sims(tape: &mut Tape, sims: &SimSet, cfg: &ContrastiveConfig) -> Result<TensorId> {
    let mut terms = Vec::with_capacity(sims.pos.len() + sims.neg.len());
    let o_p = tape.constant(cfg.o_p);
    let o_n = tape.constant(cfg.o_n);
    for &s in &sims.pos {
        let gap = tape.sub(o_p, s)?;
        let weight = tape.relu(gap)?;
        let weighted = tape.mul(weight, s)?;
        terms.push(tape.neg(weighted)?);
    }
    for &s in &sims.neg {
        let gap = tape.sub(s, o_n)?;
        let weight = tape.relu(gap)?;
        terms.push(tape.mul(weight, s)?);
    }
    sum_terms(tape, &terms)
}

/// Σ (s − o_p/2)² + Σ (s − o_n/2)² − C with one constant (o_p/2)² or
/// (o_n/2)² per summand, so the rewriting of the adaptive loss is exact
/// whenever every hinge argument is strictly positive.
pub fn hyperspherical_from_sims(
    tape: &mut Tape,
    sims: &SimSet,
    cfg: &ContrastiveConfig,
) -> Result<TensorId> {
    let half_p = cfg.o_p / 2.0;
    let half_n = cfg.o_n / 2.0;
    let mut terms = Vec::with_capacity(sims.pos.len() + sims.neg.len());
    let c_p = tape.constant(half_p);
    let c_n = tape.constant(half_n);
    for &s in &sims.pos {
        let d = tape.sub(s, c_p)?;
        terms.push(tape.mul(d, d)?);
    }
    for &s in &sims.neg {
        let d = tape.sub(s, c_n)?;
        terms.push(tape.mul(d, d)?);
    }
    let squares = sum_terms(tape, &terms)?;
    let constant = sims.pos.len() as f64 * half_p * half_p + sims.neg.len() as f64 * half_n * half_n;
    let c = tape.constant(constant);
    tape.sub(squares, c)
}

fn sum_terms(tape: &mut Tape, terms: &[TensorId]) -> Result<TensorId> {
    if terms.is_empty() {
        return Ok(tape.constant(0.0));
    }
    let all = tape.concat_vec(terms)?;
    tape.sum(all)
}

fn helpful_subset(samples: &[(PooledIds, u8)], cfg: &ContrastiveConfig) -> Vec<PooledIds> {
    samples
        .iter()
        .filter(|(_, label)| *label >= cfg.helpful_threshold)
        .map(|(ids, _)| *ids)
        .collect()
}

/// Plain cross-modal contrastive loss over the helpful subset of a batch.
/// `None` when no sample clears the threshold (contrastive inactive).
pub fn contrastive_ce(
    tape: &mut Tape,
    samples: &[(PooledIds, u8)],
    cfg: &ContrastiveConfig,
) -> Result<Option<TensorId>> {
    let helpful = helpful_subset(samples, cfg);
    if helpful.is_empty() {
        return Ok(None);
    }
    let sims = collect_sims(tape, &helpful)?;
    plain_from_sims(tape, &sims).map(Some)
}

/// Adaptively weighted contrastive loss over the helpful subset.
pub fn adaptive_contrastive(
    tape: &mut Tape,
    samples: &[(PooledIds, u8)],
    cfg: &ContrastiveConfig,
) -> Result<Option<TensorId>> {
    let helpful = helpful_subset(samples, cfg);
    if helpful.is_empty() {
        return Ok(None);
    }
    let sims = collect_sims(tape, &helpful)?;
    adaptive_from_sims(tape, &sims, cfg).map(Some)
}

/// Hyperspherical form of the adaptive loss over the helpful subset.
pub fn hyperspherical_form(
    tape: &mut Tape,
    samples: &[(PooledIds, u8)],
    cfg: &ContrastiveConfig,
) -> Result<Option<TensorId>> {
    let helpful = helpful_subset(samples, cfg);
    if helpful.is_empty() {
        return Ok(None);
    }
    let sims = collect_sims(tape, &helpful)?;
    hyperspherical_from_sims(tape, &sims, cfg).map(Some)
}

/// Σ max(0, β − s⁺ + s⁻) over score pairs. `None` for an empty list.
pub fn ranking_loss(
    tape: &mut Tape,
    score_pairs: &[(TensorId, TensorId)],
    cfg: &RankingConfig,
) -> Result<Option<TensorId>> {
    if score_pairs.is_empty() {
        return Ok(None);
    }
    let margin = tape.constant(cfg.margin);
    let mut hinges = Vec::with_capacity(score_pairs.len());
    for &(s_plus, s_minus) in score_pairs {
        let diff = tape.sub(s_plus, s_minus)?;
        let gap = tape.sub(margin, diff)?;
        hinges.push(tape.relu(gap)?);
    }
    sum_terms(tape, &hinges).map(Some)
}

/// Joint objective: plain sum of the ranking and contrastive terms, inactive
/// sides contributing zero.
pub fn total_loss(
    tape: &mut Tape,
    ranking: Option<TensorId>,
    contrastive: Option<TensorId>,
) -> Result<TensorId> {
    match (ranking, contrastive) {
        (Some(r), Some(c)) => tape.add(r, c),
        (Some(r), None) => Ok(r),
        (None, Some(c)) => Ok(c),
        (None, None) => Ok(tape.constant(0.0)),
    }
}

// ── value-level wrappers ────────────────────────────────────────────

fn push_features(tape: &mut Tape, features: &PooledFeatures) -> Result<PooledIds> {
    Ok(PooledIds {
        h_p: tape.input(Tensor::vector(features.h_p.clone())?),
        h_r: tape.input(Tensor::vector(features.h_r.clone())?),
        v_p: tape.input(Tensor::vector(features.v_p.clone())?),
        v_r: tape.input(Tensor::vector(features.v_r.clone())?),
    })
}

fn value_of(
    batch: &[(PooledFeatures, u8)],
    cfg: &ContrastiveConfig,
    f: impl Fn(&mut Tape, &[(PooledIds, u8)], &ContrastiveConfig) -> Result<Option<TensorId>>,
) -> Result<(f64, bool)> {
    let mut tape = Tape::new();
    let mut samples = Vec::with_capacity(batch.len());
    for (features, label) in batch {
        samples.push((push_features(&mut tape, features)?, *label));
    }
    Ok(match f(&mut tape, &samples, cfg)? {
        Some(id) => (tape.scalar(id), true),
        None => (0.0, false),
    })
}

/// Value of the plain contrastive loss; the flag is false when the batch had
/// no helpful samples.
pub fn contrastive_ce_value(batch: &[(PooledFeatures, u8)], cfg: &ContrastiveConfig) -> Result<(f64, bool)> {
    value_of(batch, cfg, contrastive_ce)
}

pub fn adaptive_contrastive_value(
    batch: &[(PooledFeatures, u8)],
    cfg: &ContrastiveConfig,
) -> Result<(f64, bool)> {
    value_of(batch, cfg, adaptive_contrastive)
}

pub fn hyperspherical_form_value(
    batch: &[(PooledFeatures, u8)],
    cfg: &ContrastiveConfig,
) -> Result<(f64, bool)> {
    value_of(batch, cfg, hyperspherical_form)
}

/// Value of the ranking hinge over (s⁺, s⁻) score pairs; the flag is false
/// for an empty list.
pub fn ranking_loss_value(pairs: &[(f64, f64)], cfg: &RankingConfig) -> (f64, bool) {
    if pairs.is_empty() {
        return (0.0, false);
    }
    let sum = pairs
        .iter()
        .map(|&(p, m)| (cfg.margin - p + m).max(0.0))
        .sum();
    (sum, true)
}
