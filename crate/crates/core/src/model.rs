//! Reference and region containers shared by the builder, matcher and
//! evaluator.
//!
//! Classification works in *label space*: label 0 is background and the
//! category with id `c` carries label `c + 1`. Ties anywhere in the pipeline
//! resolve to the lower label.

use crate::tensor::{ModelError, SoftMask};

pub const BACKGROUND_LABEL: u32 = 0;

pub fn category_label(category_id: usize) -> u32 {
    category_id as u32 + 1
}

/// Inverse of [`category_label`]; `None` for background.
pub fn label_category(label: u32) -> Option<usize> {
    label.checked_sub(1).map(|c| c as usize)
}

pub fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

/// Element-wise mean of equally sized vectors, accumulated in `f64`.
pub fn mean_feature(vectors: &[Vec<f32>]) -> Vec<f32> {
    let dim = vectors.first().map_or(0, Vec::len);
    let mut acc = vec![0.0f64; dim];
    for v in vectors {
        for (a, &x) in acc.iter_mut().zip(v) {
            *a += f64::from(x);
        }
    }
    let n = vectors.len() as f64;
    acc.into_iter().map(|a| (a / n) as f32).collect()
}

fn check_feature(v: &[f32], dim: usize, context: impl Fn() -> String) -> Result<(), ModelError> {
    if v.len() != dim {
        return Err(ModelError::DimensionMismatch {
            context: context(),
            expected: dim,
            actual: v.len(),
        });
    }
    if let Some(index) = v.iter().position(|x| !x.is_finite()) {
        return Err(ModelError::NonFinite { index, value: v[index] });
    }
    if l2_norm(v) == 0.0 {
        return Err(ModelError::ZeroNorm(context()));
    }
    Ok(())
}

/// Holistic and subcategory features for one category.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryReference {
    category_id: usize,
    holistic: Vec<f32>,
    subcategories: Vec<Vec<f32>>,
    sample_count: usize,
}

impl CategoryReference {
    pub fn new(
        category_id: usize,
        holistic: Vec<f32>,
        subcategories: Vec<Vec<f32>>,
        sample_count: usize,
    ) -> Result<Self, ModelError> {
        let dim = holistic.len();
        if dim == 0 {
            return Err(ModelError::EmptyShape(vec![0]));
        }
        check_feature(&holistic, dim, || format!("category {category_id} holistic"))?;
        if subcategories.is_empty() || subcategories.len() > sample_count {
            return Err(ModelError::SubcategoryCount {
                category_id,
                subcategories: subcategories.len(),
                samples: sample_count,
            });
        }
        for (t, sub) in subcategories.iter().enumerate() {
            check_feature(sub, dim, || format!("category {category_id} subcategory {t}"))?;
        }
        Ok(Self {
            category_id,
            holistic,
            subcategories,
            sample_count,
        })
    }

    pub fn category_id(&self) -> usize {
        self.category_id
    }

    pub fn label(&self) -> u32 {
        category_label(self.category_id)
    }

    pub fn holistic(&self) -> &[f32] {
        &self.holistic
    }

    pub fn subcategories(&self) -> &[Vec<f32>] {
        &self.subcategories
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn dim(&self) -> usize {
        self.holistic.len()
    }
}

/// One classification candidate: a category or the background.
#[derive(Debug, Clone, Copy)]
pub struct Candidate<'a> {
    pub label: u32,
    pub holistic: &'a [f32],
    /// For background this is the holistic feature alone.
    pub subcategories: &'a [Vec<f32>],
}

/// All category references plus the background reference.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSet {
    categories: Vec<CategoryReference>,
    names: Vec<String>,
    background: Vec<Vec<f32>>,
    /// Indices into `categories`, sorted by category id.
    by_id: Vec<usize>,
}

impl ReferenceSet {
    /// `names[c]` is the name of the category with id `c`; `categories` may be
    /// stored in any order.
    pub fn new(
        categories: Vec<CategoryReference>,
        names: Vec<String>,
        background: Vec<f32>,
    ) -> Result<Self, ModelError> {
        let count = categories.len();
        if count == 0 {
            return Err(ModelError::NoCategories);
        }
        if names.len() != count {
            return Err(ModelError::NameCount {
                expected: count,
                actual: names.len(),
            });
        }
        let mut by_id = vec![usize::MAX; count];
        for (index, cat) in categories.iter().enumerate() {
            let id = cat.category_id;
            if id >= count || by_id[id] != usize::MAX {
                return Err(ModelError::CategoryIds { count, id });
            }
            by_id[id] = index;
        }
        let dim = categories[0].dim();
        for cat in &categories {
            if cat.dim() != dim {
                return Err(ModelError::DimensionMismatch {
                    context: format!("category {}", cat.category_id),
                    expected: dim,
                    actual: cat.dim(),
                });
            }
        }
        check_feature(&background, dim, || "background reference".to_string())?;
        Ok(Self {
            categories,
            names,
            background: vec![background],
            by_id,
        })
    }

    pub fn dim(&self) -> usize {
        self.background[0].len()
    }

    pub fn category_count(&self) -> usize {
        self.categories.len()
    }

    /// Number of classification candidates (categories plus background).
    pub fn candidate_count(&self) -> usize {
        self.categories.len() + 1
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn background(&self) -> &[f32] {
        &self.background[0]
    }

    /// Categories in storage order.
    pub fn categories(&self) -> &[CategoryReference] {
        &self.categories
    }

    pub fn category(&self, id: usize) -> Option<&CategoryReference> {
        self.by_id.get(id).map(|&i| &self.categories[i])
    }

    /// Background followed by categories in ascending label order,
    /// independent of storage order.
    pub fn candidates(&self) -> impl Iterator<Item = Candidate<'_>> {
        let background = Candidate {
            label: BACKGROUND_LABEL,
            holistic: &self.background[0],
            subcategories: &self.background,
        };
        std::iter::once(background).chain(self.by_id.iter().map(move |&i| {
            let cat = &self.categories[i];
            Candidate {
                label: cat.label(),
                holistic: &cat.holistic,
                subcategories: &cat.subcategories,
            }
        }))
    }

    /// Display name for a label.
    pub fn label_name(&self, label: u32) -> &str {
        match label_category(label) {
            None => "background",
            Some(c) => self.names.get(c).map_or("?", String::as_str),
        }
    }
}

/// A proposal mask with its pooled feature.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    /// Position of the proposal in the source image's proposal list.
    pub proposal_index: usize,
    pub mask: SoftMask,
    pub feature: Vec<f32>,
}

/// Pooled mask proposals of one test image.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSet {
    image_id: String,
    regions: Vec<Region>,
}

impl RegionSet {
    pub fn new(image_id: impl Into<String>, regions: Vec<Region>) -> Result<Self, ModelError> {
        let dim = regions.first().map_or(0, |r| r.feature.len());
        for (index, region) in regions.iter().enumerate() {
            if !region.mask.has_support() {
                return Err(ModelError::EmptyRegion { index });
            }
            if region.feature.len() != dim {
                return Err(ModelError::DimensionMismatch {
                    context: format!("region {index}"),
                    expected: dim,
                    actual: region.feature.len(),
                });
            }
        }
        Ok(Self {
            image_id: image_id.into(),
            regions,
        })
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }
}
