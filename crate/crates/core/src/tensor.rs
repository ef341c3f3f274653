//! Dense float tensors and the pixel-grid types built on top of them.
//!
//! Every constructor validates its invariants and rejects bad input with a
//! [`ModelError`]; nothing is clamped or repaired on the way in.

use thiserror::Error;

/// Label used for pixels excluded from evaluation.
pub const IGNORE_LABEL: u32 = 255;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("shape {shape:?} holds {expected} values but {actual} were supplied")]
    ShapeMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("shape {0:?} has no dimensions or a zero-sized dimension")]
    EmptyShape(Vec<usize>),
    #[error("non-finite value {value} at flat index {index}")]
    NonFinite { index: usize, value: f32 },
    #[error("expected a {expected}-d tensor, got shape {shape:?}")]
    Rank { expected: usize, shape: Vec<usize> },
    #[error("mask weight {value} at pixel {index} is outside [0, 1]")]
    MaskWeight { index: usize, value: f32 },
    #[error("attention stack has no maps")]
    EmptyStack,
    #[error("attention map (layer {layer}, step {step}) has a negative value")]
    NegativeAttention { layer: usize, step: usize },
    #[error("attention map (layer {layer}, step {step}) has no positive value")]
    DeadAttentionMap { layer: usize, step: usize },
    #[error("label {value} at pixel {index} is not an integer")]
    NonIntegralLabel { index: usize, value: f32 },
    #[error("label {label} at pixel {index} is outside 0..{num_classes} (and not the ignore label)")]
    LabelOutOfRange {
        index: usize,
        label: u32,
        num_classes: usize,
    },
    #[error("feature dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },
    #[error("zero-norm feature vector: {0}")]
    ZeroNorm(String),
    #[error("category {category_id}: {subcategories} subcategories from {samples} samples")]
    SubcategoryCount {
        category_id: usize,
        subcategories: usize,
        samples: usize,
    },
    #[error("category ids must be exactly 0..{count}; offending id {id}")]
    CategoryIds { count: usize, id: usize },
    #[error("expected {expected} category names, got {actual}")]
    NameCount { expected: usize, actual: usize },
    #[error("reference set has no categories")]
    NoCategories,
    #[error("region {index} has a mask with no positive weight")]
    EmptyRegion { index: usize },
}

fn check_finite(data: &[f32]) -> Result<(), ModelError> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(ModelError::NonFinite {
            index,
            value: data[index],
        }),
        None => Ok(()),
    }
}

/// Row-major `f32` tensor with positive dimensions and finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, ModelError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(ModelError::EmptyShape(shape));
        }
        let expected = shape.iter().product::<usize>();
        if expected != data.len() {
            return Err(ModelError::ShapeMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        check_finite(&data)?;
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self, ModelError> {
        let len = shape.iter().product();
        Self::new(shape, vec![0.0; len])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Equality on the raw bit patterns (distinguishes `0.0` from `-0.0`).
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub(crate) fn expect_rank(&self, rank: usize) -> Result<(), ModelError> {
        if self.ndim() != rank {
            return Err(ModelError::Rank {
                expected: rank,
                shape: self.shape.clone(),
            });
        }
        Ok(())
    }
}

/// A `height × width` feature map with `dim` channels per pixel, stored
/// pixel-major (`[h, w, D]`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    dim: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn from_tensor(tensor: Tensor) -> Result<Self, ModelError> {
        tensor.expect_rank(3)?;
        let (height, width, dim) = (tensor.shape[0], tensor.shape[1], tensor.shape[2]);
        Ok(Self {
            height,
            width,
            dim,
            data: tensor.data,
        })
    }

    pub fn new(height: usize, width: usize, dim: usize, data: Vec<f32>) -> Result<Self, ModelError> {
        Self::from_tensor(Tensor::new(vec![height, width, dim], data)?)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            shape: vec![self.height, self.width, self.dim],
            data: self.data.clone(),
        }
    }
}

/// Per-pixel weights in `[0, 1]`. A mask whose weights are all 0 or 1 is a
/// binary mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    height: usize,
    width: usize,
    weights: Vec<f32>,
}

impl SoftMask {
    pub fn new(height: usize, width: usize, weights: Vec<f32>) -> Result<Self, ModelError> {
        let tensor = Tensor::new(vec![height, width], weights)?;
        Self::from_tensor(tensor)
    }

    pub fn from_tensor(tensor: Tensor) -> Result<Self, ModelError> {
        tensor.expect_rank(2)?;
        if let Some(index) = tensor.data.iter().position(|w| !(0.0..=1.0).contains(w)) {
            return Err(ModelError::MaskWeight {
                index,
                value: tensor.data[index],
            });
        }
        Ok(Self {
            height: tensor.shape[0],
            width: tensor.shape[1],
            weights: tensor.data,
        })
    }

    pub fn from_bools(height: usize, width: usize, bits: &[bool]) -> Result<Self, ModelError> {
        let weights = bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Self::new(height, width, weights)
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self, ModelError> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn weight(&self, row: usize, col: usize) -> f32 {
        self.weights[row * self.width + col]
    }

    pub fn is_binary(&self) -> bool {
        self.weights.iter().all(|&w| w == 0.0 || w == 1.0)
    }

    pub fn has_support(&self) -> bool {
        self.weights.iter().any(|&w| w > 0.0)
    }

    /// `1 - w` at every pixel.
    pub fn complement(&self) -> SoftMask {
        SoftMask {
            height: self.height,
            width: self.width,
            weights: self.weights.iter().map(|w| 1.0 - w).collect(),
        }
    }

    /// Pixels with weight `>= threshold`.
    pub fn threshold(&self, threshold: f32) -> Vec<bool> {
        self.weights.iter().map(|&w| w >= threshold).collect()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            shape: vec![self.height, self.width],
            data: self.weights.clone(),
        }
    }
}

/// Cross-attention maps for one text token, indexed by (layer, step).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionStack {
    layers: usize,
    steps: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl AttentionStack {
    /// Accepts a `[layers, steps, h, w]` tensor.
    pub fn from_tensor(tensor: Tensor) -> Result<Self, ModelError> {
        tensor.expect_rank(4)?;
        let s = &tensor.shape;
        let stack = Self {
            layers: s[0],
            steps: s[1],
            height: s[2],
            width: s[3],
            data: tensor.data,
        };
        for layer in 0..stack.layers {
            for step in 0..stack.steps {
                let map = stack.map(layer, step);
                if map.iter().any(|&v| v < 0.0) {
                    return Err(ModelError::NegativeAttention { layer, step });
                }
                if !map.iter().any(|&v| v > 0.0) {
                    return Err(ModelError::DeadAttentionMap { layer, step });
                }
            }
        }
        Ok(stack)
    }

    /// Builds a stack from individual `h × w` maps laid out layer-major.
    pub fn from_maps(
        layers: usize,
        steps: usize,
        height: usize,
        width: usize,
        maps: Vec<Vec<f32>>,
    ) -> Result<Self, ModelError> {
        if maps.is_empty() {
            return Err(ModelError::EmptyStack);
        }
        let data: Vec<f32> = maps.into_iter().flatten().collect();
        Self::from_tensor(Tensor::new(vec![layers, steps, height, width], data)?)
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn map(&self, layer: usize, step: usize) -> &[f32] {
        let size = self.height * self.width;
        let start = (layer * self.steps + step) * size;
        &self.data[start..start + size]
    }

    pub fn maps(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.height * self.width)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            shape: vec![self.layers, self.steps, self.height, self.width],
            data: self.data.clone(),
        }
    }
}

/// Per-pixel class labels: 0 is background, `1..num_classes` are categories
/// and [`IGNORE_LABEL`] marks pixels excluded from scoring.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(
        height: usize,
        width: usize,
        labels: Vec<u32>,
        num_classes: usize,
    ) -> Result<Self, ModelError> {
        if height == 0 || width == 0 {
            return Err(ModelError::EmptyShape(vec![height, width]));
        }
        if labels.len() != height * width {
            return Err(ModelError::ShapeMismatch {
                shape: vec![height, width],
                expected: height * width,
                actual: labels.len(),
            });
        }
        if let Some(index) = labels
            .iter()
            .position(|&l| l != IGNORE_LABEL && l as usize >= num_classes)
        {
            return Err(ModelError::LabelOutOfRange {
                index,
                label: labels[index],
                num_classes,
            });
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    /// Reads labels stored as integral float values.
    pub fn from_tensor(tensor: &Tensor, num_classes: usize) -> Result<Self, ModelError> {
        tensor.expect_rank(2)?;
        let mut labels = Vec::with_capacity(tensor.len());
        for (index, &value) in tensor.data().iter().enumerate() {
            if value < 0.0 || value.fract() != 0.0 || value > u32::MAX as f32 {
                return Err(ModelError::NonIntegralLabel { index, value });
            }
            labels.push(value as u32);
        }
        Self::new(tensor.shape[0], tensor.shape[1], labels, num_classes)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            shape: vec![self.height, self.width],
            data: self.labels.iter().map(|&l| l as f32).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_rejects_bad_shapes() {
        assert!(matches!(
            Tensor::new(vec![2, 2], vec![1.0; 3]),
            Err(ModelError::ShapeMismatch { expected: 4, actual: 3, .. })
        ));
        assert!(matches!(Tensor::new(vec![], vec![]), Err(ModelError::EmptyShape(_))));
        assert!(matches!(Tensor::new(vec![2, 0], vec![]), Err(ModelError::EmptyShape(_))));
    }

    #[test]
    fn tensor_rejects_non_finite() {
        let err = Tensor::new(vec![3], vec![0.0, f32::NAN, 1.0]).unwrap_err();
        assert!(matches!(err, ModelError::NonFinite { index: 1, .. }));
        assert!(Tensor::new(vec![1], vec![f32::INFINITY]).is_err());
    }

    #[test]
    fn soft_mask_range() {
        assert!(SoftMask::new(1, 2, vec![0.0, 1.0]).unwrap().is_binary());
        assert!(!SoftMask::new(1, 2, vec![0.5, 1.0]).unwrap().is_binary());
        assert!(matches!(
            SoftMask::new(1, 2, vec![0.5, 1.5]),
            Err(ModelError::MaskWeight { index: 1, .. })
        ));
        assert!(SoftMask::new(1, 1, vec![-0.1]).is_err());
    }

    #[test]
    fn attention_stack_needs_positive_maps() {
        let t = Tensor::new(vec![1, 2, 1, 2], vec![0.1, 0.2, 0.0, 0.0]).unwrap();
        assert_eq!(
            AttentionStack::from_tensor(t).unwrap_err(),
            ModelError::DeadAttentionMap { layer: 0, step: 1 }
        );
        let t = Tensor::new(vec![1, 1, 1, 2], vec![0.1, -0.2]).unwrap();
        assert!(matches!(
            AttentionStack::from_tensor(t),
            Err(ModelError::NegativeAttention { .. })
        ));
        let t = Tensor::new(vec![2, 1, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let stack = AttentionStack::from_tensor(t).unwrap();
        assert_eq!(stack.map(1, 0), &[3.0, 4.0]);
        assert_eq!(stack.maps().count(), 2);
    }

    #[test]
    fn label_map_checks() {
        let t = Tensor::new(vec![1, 3], vec![0.0, 2.0, 255.0]).unwrap();
        let map = LabelMap::from_tensor(&t, 3).unwrap();
        assert_eq!(map.labels(), &[0, 2, IGNORE_LABEL]);
        assert!(matches!(
            LabelMap::from_tensor(&t, 2),
            Err(ModelError::LabelOutOfRange { index: 1, .. })
        ));
        let t = Tensor::new(vec![1, 2], vec![0.0, 1.5]).unwrap();
        assert!(matches!(
            LabelMap::from_tensor(&t, 3),
            Err(ModelError::NonIntegralLabel { index: 1, .. })
        ));
        assert_eq!(map.to_tensor(), Tensor::new(vec![1, 3], vec![0.0, 2.0, 255.0]).unwrap());
    }

    #[test]
    fn feature_map_pixel_access() {
        let fm = FeatureMap::new(2, 2, 2, (0..8).map(|v| v as f32).collect()).unwrap();
        assert_eq!(fm.pixel(1, 0), &[4.0, 5.0]);
        assert!(FeatureMap::from_tensor(Tensor::zeros(vec![2, 2]).unwrap()).is_err());
    }
}
