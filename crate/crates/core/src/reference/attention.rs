//! Foreground mining from category-token cross-attention maps.

use super::kmeans::kmeans;
use super::ReferenceError;
use crate::tensor::{AttentionStack, SoftMask, Tensor};

pub const DEFAULT_ATTENTION_THRESHOLD: f32 = 0.7;
pub const DEFAULT_PROMPT_POINTS: usize = 5;

/// Averages every map after dividing it by its own maximum. Output is `[h, w]`
/// with values in `[0, 1]`.
pub fn aggregate_attention(stack: &AttentionStack) -> Tensor {
    let size = stack.height() * stack.width();
    let mut acc = vec![0.0f64; size];
    let mut count = 0usize;
    for map in stack.maps() {
        let max = map.iter().copied().fold(0.0f32, f32::max);
        let max = f64::from(max);
        for (a, &v) in acc.iter_mut().zip(map) {
            *a += f64::from(v) / max;
        }
        count += 1;
    }
    let data = acc.into_iter().map(|a| (a / count as f64) as f32).collect();
    Tensor::new(vec![stack.height(), stack.width()], data).expect("shape matches stack")
}

/// 1 where `s_bar >= threshold`, else 0. An empty result is an error.
pub fn binarize_attention(s_bar: &Tensor, threshold: f32) -> Result<SoftMask, ReferenceError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(ReferenceError::InvalidThreshold(threshold));
    }
    if s_bar.ndim() != 2 {
        return Err(ReferenceError::Model(crate::tensor::ModelError::Rank {
            expected: 2,
            shape: s_bar.shape().to_vec(),
        }));
    }
    if let Some(index) = s_bar.data().iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(ReferenceError::AttentionRange {
            index,
            value: s_bar.data()[index],
        });
    }
    let bits: Vec<bool> = s_bar.data().iter().map(|&v| v >= threshold).collect();
    if !bits.iter().any(|&b| b) {
        return Err(ReferenceError::EmptyForeground { threshold });
    }
    Ok(SoftMask::from_bools(s_bar.shape()[0], s_bar.shape()[1], &bits)?)
}

/// Binary foreground mined from attention.
#[derive(Debug, Clone, PartialEq)]
pub struct MinedForeground {
    pub mask: SoftMask,
    /// Set when thresholding left nothing and the argmax pixel was used.
    pub fell_back_to_argmax: bool,
}

/// Aggregates, binarizes and, if the threshold removes every pixel, falls
/// back to the single argmax pixel of the aggregated map.
pub fn mine_foreground(stack: &AttentionStack, threshold: f32) -> Result<MinedForeground, ReferenceError> {
    let s_bar = aggregate_attention(stack);
    match binarize_attention(&s_bar, threshold) {
        Ok(mask) => Ok(MinedForeground {
            mask,
            fell_back_to_argmax: false,
        }),
        Err(ReferenceError::EmptyForeground { .. }) => {
            let mut best = 0;
            for (i, &v) in s_bar.data().iter().enumerate() {
                if v > s_bar.data()[best] {
                    best = i;
                }
            }
            let mut bits = vec![false; s_bar.len()];
            bits[best] = true;
            Ok(MinedForeground {
                mask: SoftMask::from_bools(stack.height(), stack.width(), &bits)?,
                fell_back_to_argmax: true,
            })
        }
        Err(e) => Err(e),
    }
}

/// `(row, col)` pixel coordinates inside a binary foreground.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PromptPoints {
    pub points: Vec<(usize, usize)>,
}

/// Picks `count` spatially spread points inside the foreground: k-means
/// centers over foreground pixel coordinates, each snapped to the nearest
/// foreground pixel. With fewer foreground pixels than `count`, the pixels
/// are cycled in raster order.
pub fn sample_prompt_points(binary: &SoftMask, count: usize, seed: u64) -> Result<PromptPoints, ReferenceError> {
    if count == 0 {
        return Err(ReferenceError::NoClusters);
    }
    let width = binary.width();
    let foreground: Vec<(usize, usize)> = binary
        .weights()
        .iter()
        .enumerate()
        .filter(|(_, &w)| w >= 0.5)
        .map(|(i, _)| (i / width, i % width))
        .collect();
    if foreground.is_empty() {
        return Err(ReferenceError::EmptyForeground { threshold: 0.5 });
    }
    if foreground.len() < count {
        let points = (0..count).map(|i| foreground[i % foreground.len()]).collect();
        return Ok(PromptPoints { points });
    }
    let coords: Vec<Vec<f64>> = foreground
        .iter()
        .map(|&(r, c)| vec![r as f64, c as f64])
        .collect();
    let clusters = kmeans(&coords, count, seed)?;
    let points = clusters
        .centroids
        .iter()
        .map(|center| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (i, p) in coords.iter().enumerate() {
                let d = super::kmeans::squared_distance(p, center);
                if d < best_d {
                    best = i;
                    best_d = d;
                }
            }
            foreground[best]
        })
        .collect();
    Ok(PromptPoints { points })
}
