//! `manifest.json`: the index tying categories, reference images and test
//! images to their tensor files. Paths are relative to the manifest's
//! directory.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::format::{read_tensor, FormatError};
use crate::tensor::{AttentionStack, FeatureMap, LabelMap, ModelError, SoftMask};

pub const DEFAULT_PROMPT_TEMPLATE: &str = "a photo of [category name]";

/// Fills the category slot of [`DEFAULT_PROMPT_TEMPLATE`].
pub fn default_prompt(name: &str) -> String {
    DEFAULT_PROMPT_TEMPLATE.replace("[category name]", name)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryEntry {
    pub id: usize,
    pub name: String,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceImageEntry {
    /// `[h, w, D]` feature map.
    pub features: String,
    /// `[layers, steps, h, w]` category-token attention maps.
    pub attention: String,
    /// `[h, w]` foreground mask; derived from the attention maps when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub foreground_mask: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceEntry {
    pub category_id: usize,
    pub images: Vec<ReferenceImageEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestEntry {
    pub image_id: String,
    pub features: String,
    pub proposals: Vec<String>,
    pub ground_truth: String,
}

/// The manifest exactly as serialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    pub categories: Vec<CategoryEntry>,
    #[serde(default)]
    pub reference_entries: Vec<ReferenceEntry>,
    #[serde(default)]
    pub test_entries: Vec<TestEntry>,
    /// Free-form producer metadata (generator settings, model ids, ...).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
}

impl ManifestFile {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), ManifestError> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text).map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: malformed manifest: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("duplicate category id {0}")]
    DuplicateCategory(usize),
    #[error("category ids must be dense 0..{count}; id {id} is out of range")]
    SparseCategoryIds { count: usize, id: usize },
    #[error("reference entry names unknown category id {0}")]
    UnknownCategory(usize),
    #[error("duplicate test image id {0:?}")]
    DuplicateImage(String),
    #[error("test image {0:?} has no proposals")]
    NoProposals(String),
    #[error("referenced file does not exist: {0}")]
    MissingFile(PathBuf),
    #[error("{path}: {source}")]
    Tensor {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error("{path}: {source}")]
    Invalid {
        path: PathBuf,
        #[source]
        source: ModelError,
    },
    #[error("{path}: feature dimension {actual} differs from {expected} used elsewhere in the manifest")]
    DimensionMismatch {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("{path}: spatial size {actual:?} differs from {expected:?}")]
    SizeMismatch {
        path: PathBuf,
        expected: (usize, usize),
        actual: (usize, usize),
    },
}

#[derive(Debug, Clone)]
pub struct ReferenceImage {
    pub features: FeatureMap,
    pub attention: AttentionStack,
    pub foreground: Option<SoftMask>,
}

#[derive(Debug, Clone)]
pub struct TestImage {
    pub image_id: String,
    pub features: FeatureMap,
    pub proposals: Vec<SoftMask>,
    pub ground_truth: LabelMap,
}

/// A validated manifest with every referenced tensor loaded.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub root: PathBuf,
    pub file: ManifestFile,
    /// Category names indexed by id.
    pub names: Vec<String>,
    /// Reference images indexed by category id (empty when a category has none).
    pub references: Vec<Vec<ReferenceImage>>,
    pub tests: Vec<TestImage>,
    /// Feature dimension shared by every feature map; `None` if no maps.
    pub dim: Option<usize>,
}

impl Manifest {
    pub fn category_count(&self) -> usize {
        self.names.len()
    }

    pub fn has_references(&self) -> bool {
        self.references.iter().any(|r| !r.is_empty())
    }
}

struct Loader<'a> {
    root: &'a Path,
    dim: Option<usize>,
}

impl Loader<'_> {
    fn resolve(&self, rel: &str) -> Result<PathBuf, ManifestError> {
        let path = self.root.join(rel);
        if !path.is_file() {
            return Err(ManifestError::MissingFile(path));
        }
        Ok(path)
    }

    fn tensor<T>(
        &self,
        rel: &str,
        convert: impl FnOnce(crate::tensor::Tensor) -> Result<T, ModelError>,
    ) -> Result<(PathBuf, T), ManifestError> {
        let path = self.resolve(rel)?;
        let tensor = read_tensor(&path).map_err(|source| ManifestError::Tensor {
            path: path.clone(),
            source,
        })?;
        match convert(tensor) {
            Ok(v) => Ok((path, v)),
            Err(source) => Err(ManifestError::Invalid { path, source }),
        }
    }

    fn features(&mut self, rel: &str) -> Result<FeatureMap, ManifestError> {
        let (path, fm) = self.tensor(rel, FeatureMap::from_tensor)?;
        match self.dim {
            Some(expected) if expected != fm.dim() => Err(ManifestError::DimensionMismatch {
                path,
                expected,
                actual: fm.dim(),
            }),
            _ => {
                self.dim = Some(fm.dim());
                Ok(fm)
            }
        }
    }
}

/// Reads `manifest.json`, loads every tensor it names and checks the
/// cross-file invariants.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest, ManifestError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let file: ManifestFile = serde_json::from_str(&text).map_err(|source| ManifestError::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();

    let count = file.categories.len();
    let mut names = vec![None; count];
    for cat in &file.categories {
        if cat.id >= count {
            return Err(ManifestError::SparseCategoryIds { count, id: cat.id });
        }
        if names[cat.id].replace(cat.name.clone()).is_some() {
            return Err(ManifestError::DuplicateCategory(cat.id));
        }
    }
    let names: Vec<String> = names.into_iter().map(Option::unwrap).collect();

    let mut loader = Loader { root: &root, dim: None };
    let mut references = vec![Vec::new(); count];
    for entry in &file.reference_entries {
        if entry.category_id >= count {
            return Err(ManifestError::UnknownCategory(entry.category_id));
        }
        for image in &entry.images {
            let features = loader.features(&image.features)?;
            let (_, attention) = loader.tensor(&image.attention, AttentionStack::from_tensor)?;
            let foreground = match &image.foreground_mask {
                Some(rel) => Some(loader.tensor(rel, SoftMask::from_tensor)?.1),
                None => None,
            };
            references[entry.category_id].push(ReferenceImage {
                features,
                attention,
                foreground,
            });
        }
    }

    let mut seen = BTreeSet::new();
    let mut tests = Vec::with_capacity(file.test_entries.len());
    for entry in &file.test_entries {
        if !seen.insert(entry.image_id.clone()) {
            return Err(ManifestError::DuplicateImage(entry.image_id.clone()));
        }
        if entry.proposals.is_empty() {
            return Err(ManifestError::NoProposals(entry.image_id.clone()));
        }
        let features = loader.features(&entry.features)?;
        let (_, ground_truth) = loader.tensor(&entry.ground_truth, |t| LabelMap::from_tensor(&t, count + 1))?;
        let canvas = (ground_truth.height(), ground_truth.width());
        let mut proposals = Vec::with_capacity(entry.proposals.len());
        for rel in &entry.proposals {
            let (path, mask) = loader.tensor(rel, SoftMask::from_tensor)?;
            if (mask.height(), mask.width()) != canvas {
                return Err(ManifestError::SizeMismatch {
                    path,
                    expected: canvas,
                    actual: (mask.height(), mask.width()),
                });
            }
            if !mask.has_support() {
                return Err(ManifestError::Invalid {
                    path,
                    source: ModelError::EmptyRegion {
                        index: proposals.len(),
                    },
                });
            }
            proposals.push(mask);
        }
        tests.push(TestImage {
            image_id: entry.image_id.clone(),
            features,
            proposals,
            ground_truth,
        });
    }

    let dim = loader.dim;
    Ok(Manifest {
        root,
        dim,
        file,
        names,
        references,
        tests,
    })
}
