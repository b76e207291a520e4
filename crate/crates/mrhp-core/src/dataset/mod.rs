//! Data model, file formats, synthetic data, and batch/pair construction.
//!
//! A dataset is a list of products, each with description tokens, optional
//! precomputed ROI feature matrices for its images, and at least two labeled
//! reviews. Object detection itself is out of scope: the contract starts at
//! ROI features produced by a frozen extractor.

mod batch;
mod io;
mod pairs;
mod synthetic;
mod vocab;

pub use batch::{epoch_batches, SampleRef};
pub use io::{load_dataset, load_roi_features, save_dataset, write_roi_features};
pub use pairs::make_ranking_pairs;
pub use synthetic::{generate_synthetic, SyntheticSpec};
pub use vocab::Vocabulary;

use thiserror::Error;

pub const MAX_LABEL: u8 = 4;
/// Minimum token count for product descriptions and reviews; keeps every
/// sequence long enough for the fusion CNN.
pub const MIN_TOKENS: usize = 3;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed manifest line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("review {review_id}: label {label} outside 0..={MAX_LABEL}")]
    LabelOutOfRange { review_id: String, label: i64 },
    #[error("{record_id}: token id {token} is not below the vocabulary size {vocab_size}")]
    TokenOutOfRange {
        record_id: String,
        token: u32,
        vocab_size: usize,
    },
    #[error("{record_id}: needs at least {MIN_TOKENS} tokens, got {got}")]
    TooFewTokens { record_id: String, got: usize },
    #[error("product {product_id}: needs at least 2 reviews, got {got}")]
    TooFewReviews { product_id: String, got: usize },
    #[error("duplicate id {id}")]
    DuplicateId { id: String },
    #[error("{path}: bad magic bytes (not a ROI feature file)")]
    BadMagic { path: String },
    #[error("{path}: unsupported ROI feature file version {version}")]
    BadVersion { path: String, version: u32 },
    #[error("{path}: truncated ROI feature file")]
    Truncated { path: String },
    #[error("{path}: ROI feature file declares zero objects")]
    ZeroObjects { path: String },
    #[error("{path}: non-finite feature value")]
    NonFiniteFeature { path: String },
    #[error("{path}: feature dim {found} disagrees with dataset feature_dim {expected}")]
    DimMismatch {
        path: String,
        expected: usize,
        found: usize,
    },
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

/// Precomputed ROI features for one image: one row per detected object.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiFeatureMatrix {
    m: usize,
    dim: usize,
    values: Vec<f64>,
}

impl RoiFeatureMatrix {
    pub fn new(m: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if m == 0 {
            return Err(DatasetError::ZeroObjects {
                path: "<memory>".into(),
            });
        }
        if values.len() != m * dim || !values.iter().all(|v| v.is_finite()) {
            return Err(DatasetError::NonFiniteFeature {
                path: "<memory>".into(),
            });
        }
        Ok(RoiFeatureMatrix { m, dim, values })
    }

    pub fn objects(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone)]
pub struct ReviewRecord {
    pub review_id: String,
    pub tokens: Vec<u32>,
    pub image_features: Vec<RoiFeatureMatrix>,
    pub label: u8,
}

#[derive(Debug, Clone)]
pub struct ProductRecord {
    pub product_id: String,
    pub tokens: Vec<u32>,
    pub image_features: Vec<RoiFeatureMatrix>,
    pub reviews: Vec<ReviewRecord>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab_size: usize,
    pub feature_dim: usize,
    pub products: Vec<ProductRecord>,
}

impl Dataset {
    /// Validate every record invariant. Failures name the offending record
    /// and field.
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for product in &self.products {
            if !seen.insert(product.product_id.clone()) {
                return Err(DatasetError::DuplicateId {
                    id: product.product_id.clone(),
                });
            }
            check_tokens(&product.product_id, &product.tokens, self.vocab_size)?;
            for feat in &product.image_features {
                check_dim(&product.product_id, feat, self.feature_dim)?;
            }
            if product.reviews.len() < 2 {
                return Err(DatasetError::TooFewReviews {
                    product_id: product.product_id.clone(),
                    got: product.reviews.len(),
                });
            }
            for review in &product.reviews {
                if !seen.insert(review.review_id.clone()) {
                    return Err(DatasetError::DuplicateId {
                        id: review.review_id.clone(),
                    });
                }
                if review.label > MAX_LABEL {
                    return Err(DatasetError::LabelOutOfRange {
                        review_id: review.review_id.clone(),
                        label: review.label as i64,
                    });
                }
                check_tokens(&review.review_id, &review.tokens, self.vocab_size)?;
                for feat in &review.image_features {
                    check_dim(&review.review_id, feat, self.feature_dim)?;
                }
            }
        }
        Ok(())
    }

    pub fn total_reviews(&self) -> usize {
        self.products.iter().map(|p| p.reviews.len()).sum()
    }
}

fn check_tokens(record_id: &str, tokens: &[u32], vocab_size: usize) -> Result<()> {
    if tokens.len() < MIN_TOKENS {
        return Err(DatasetError::TooFewTokens {
            record_id: record_id.to_string(),
            got: tokens.len(),
        });
    }
    for &t in tokens {
        if t as usize >= vocab_size {
            return Err(DatasetError::TokenOutOfRange {
                record_id: record_id.to_string(),
                token: t,
                vocab_size,
            });
        }
    }
    Ok(())
}

fn check_dim(record_id: &str, feat: &RoiFeatureMatrix, expected: usize) -> Result<()> {
    if feat.dim() != expected {
        return Err(DatasetError::DimMismatch {
            path: record_id.to_string(),
            expected,
            found: feat.dim(),
        });
    }
    Ok(())
}

/// Concatenate a record's ROI matrices along the object axis, capped at
/// `max_rows`. Records with no images get a single all-zero row so every
/// sample carries all four modalities.
pub fn combine_roi(mats: &[RoiFeatureMatrix], dim: usize, max_rows: usize) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for mat in mats {
        for i in 0..mat.objects() {
            if rows.len() >= max_rows {
                return rows;
            }
            rows.push(mat.row(i).to_vec());
        }
    }
    if rows.is_empty() {
        rows.push(vec![0.0; dim]);
    }
    rows
}
