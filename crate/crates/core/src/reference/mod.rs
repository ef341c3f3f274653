//! Image-modal reference construction: foreground mining, mask average
//! pooling and subcategory clustering.

mod attention;
mod kmeans;
mod pooling;

pub use attention::{
    aggregate_attention, binarize_attention, mine_foreground, sample_prompt_points, MinedForeground,
    PromptPoints, DEFAULT_ATTENTION_THRESHOLD, DEFAULT_PROMPT_POINTS,
};
pub use kmeans::{cluster_subcategories, kmeans, squared_distance, KMeans, Subcategories, MAX_ITERATIONS};
pub use pooling::{mask_average_pool, resize_bilinear};

use thiserror::Error;

use crate::model::CategoryReference;
use crate::tensor::{FeatureMap, ModelError, SoftMask};

pub const DEFAULT_SUBCATEGORIES: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReferenceError {
    #[error("threshold {0} must lie strictly between 0 and 1")]
    InvalidThreshold(f32),
    #[error("aggregated attention value {value} at pixel {index} is outside [0, 1]")]
    AttentionRange { index: usize, value: f32 },
    #[error("no pixel reaches threshold {threshold}")]
    EmptyForeground { threshold: f32 },
    #[error("mask has no weight after resizing to the feature grid")]
    EmptyPooledMask,
    #[error("cluster count must be at least 1")]
    NoClusters,
    #[error("cannot form {clusters} clusters from {points} points")]
    TooFewPoints { points: usize, clusters: usize },
    #[error("feature dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("prototype {index} has zero norm")]
    ZeroNorm { index: usize },
    #[error("no images supplied")]
    NoImages,
    #[error("{images} images but {masks} masks")]
    MaskCount { images: usize, masks: usize },
    #[error("every image is fully foreground; no background to pool")]
    NoBackground,
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn check_inputs(images: &[FeatureMap], masks: &[SoftMask]) -> Result<usize, ReferenceError> {
    if images.is_empty() {
        return Err(ReferenceError::NoImages);
    }
    if images.len() != masks.len() {
        return Err(ReferenceError::MaskCount {
            images: images.len(),
            masks: masks.len(),
        });
    }
    let dim = images[0].dim();
    if let Some(img) = images.iter().find(|i| i.dim() != dim) {
        return Err(ReferenceError::DimensionMismatch {
            expected: dim,
            actual: img.dim(),
        });
    }
    Ok(dim)
}

fn mean(vectors: &[Vec<f64>]) -> Vec<f64> {
    let mut acc = vec![0.0; vectors[0].len()];
    for v in vectors {
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    acc.iter().map(|a| a / vectors.len() as f64).collect()
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// Pooled foreground prototype of each image.
pub fn pool_prototypes(images: &[FeatureMap], masks: &[SoftMask]) -> Result<Vec<Vec<f64>>, ReferenceError> {
    check_inputs(images, masks)?;
    images
        .iter()
        .zip(masks)
        .map(|(img, mask)| mask_average_pool(img, mask))
        .collect()
}

/// Holistic feature (mean of per-image pooled foregrounds) and
/// `subcategories` k-means centroids over the same prototypes.
pub fn build_category_reference(
    category_id: usize,
    images: &[FeatureMap],
    masks: &[SoftMask],
    subcategories: usize,
    seed: u64,
) -> Result<CategoryReference, ReferenceError> {
    let prototypes = pool_prototypes(images, masks)?;
    if subcategories > prototypes.len() {
        return Err(ReferenceError::TooFewPoints {
            points: prototypes.len(),
            clusters: subcategories,
        });
    }
    let holistic = to_f32(&mean(&prototypes));
    let subs = cluster_subcategories(&prototypes, subcategories, seed)?;
    Ok(CategoryReference::new(
        category_id,
        holistic,
        subs.centroids,
        prototypes.len(),
    )?)
}

/// Mean over images of the feature pooled under the complement of the
/// foreground. Images with no background weight on the feature grid are
/// skipped.
pub fn build_background_reference(
    images: &[FeatureMap],
    foregrounds: &[SoftMask],
) -> Result<Vec<f32>, ReferenceError> {
    check_inputs(images, foregrounds)?;
    let mut pooled = Vec::new();
    for (img, fg) in images.iter().zip(foregrounds) {
        match mask_average_pool(img, &fg.complement()) {
            Ok(v) => pooled.push(v),
            Err(ReferenceError::EmptyPooledMask) => continue,
            Err(e) => return Err(e),
        }
    }
    if pooled.is_empty() {
        return Err(ReferenceError::NoBackground);
    }
    Ok(to_f32(&mean(&pooled)))
}
