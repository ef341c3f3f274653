//! End-to-end steps over a loaded manifest: reference building, region
//! pooling and classification, prediction I/O and evaluation.
//!
//! Output directory layout:
//!
//! ```text
//! <out>/refs/index.json                      reference bundle index
//! <out>/refs/background.rimt                 [D]
//! <out>/refs/category_<id>_holistic.rimt     [D]
//! <out>/refs/category_<id>_subcategories.rimt [T, D]
//! <out>/refs/prompts.json                    prompt points per reference image
//! <out>/predictions/<image>.rimt             [h, w] label map
//! <out>/assignments.json                     per-region labels and scores
//! <out>/report.json, <out>/report.txt        evaluation
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{compute_miou, render_label_map, EvalReport, DEFAULT_MASK_THRESHOLD};
use crate::interchange::{read_tensor, write_tensor, Manifest, TestImage};
use crate::matching::{Classification, Matcher};
use crate::model::{CategoryReference, ReferenceSet, Region, RegionSet};
use crate::reference::{
    build_background_reference, build_category_reference, mask_average_pool, mine_foreground,
    sample_prompt_points, PromptPoints, ReferenceError, DEFAULT_ATTENTION_THRESHOLD, DEFAULT_PROMPT_POINTS,
    DEFAULT_SUBCATEGORIES,
};
use crate::tensor::{LabelMap, SoftMask, Tensor};

pub const REFS_DIR: &str = "refs";
pub const PREDICTIONS_DIR: &str = "predictions";
pub const ASSIGNMENTS_FILE: &str = "assignments.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildOptions {
    pub attention_threshold: f32,
    pub prompt_points: usize,
    pub subcategory_count: usize,
    pub seed: u64,
    /// When false, references pool whole images instead of foregrounds.
    pub use_foreground_mask: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            attention_threshold: DEFAULT_ATTENTION_THRESHOLD,
            prompt_points: DEFAULT_PROMPT_POINTS,
            subcategory_count: DEFAULT_SUBCATEGORIES,
            seed: 0,
            use_foreground_mask: true,
        }
    }
}

/// Per-category seed derived from the run seed.
pub fn category_seed(seed: u64, category_id: usize) -> u64 {
    seed ^ (category_id as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryPrompts {
    pub category_id: usize,
    pub images: Vec<PromptPoints>,
}

#[derive(Debug, Clone)]
pub struct BuiltReferences {
    pub refs: ReferenceSet,
    pub prompts: Vec<CategoryPrompts>,
    pub warnings: Vec<String>,
    pub options: BuildOptions,
}

struct CategoryBuild {
    reference: CategoryReference,
    foregrounds: Vec<SoftMask>,
    prompts: CategoryPrompts,
    warnings: Vec<String>,
}

fn build_one(manifest: &Manifest, category_id: usize, opts: &BuildOptions) -> Result<CategoryBuild> {
    let name = &manifest.names[category_id];
    let images = &manifest.references[category_id];
    let wrap = |source: ReferenceError| Error::Reference {
        category: name.clone(),
        source,
    };
    if images.is_empty() {
        return Err(Error::Input(format!("category {name:?} has no reference images")));
    }
    let seed = category_seed(opts.seed, category_id);
    let mut warnings = Vec::new();
    let mut foregrounds = Vec::with_capacity(images.len());
    let mut prompts = Vec::with_capacity(images.len());
    for (k, image) in images.iter().enumerate() {
        let mined = mine_foreground(&image.attention, opts.attention_threshold).map_err(wrap)?;
        if mined.fell_back_to_argmax {
            let msg = format!(
                "category {name:?} image {k}: no attention above {}; using the argmax pixel",
                opts.attention_threshold
            );
            warn!("{msg}");
            warnings.push(msg);
        }
        prompts.push(sample_prompt_points(&mined.mask, opts.prompt_points, seed.wrapping_add(k as u64)).map_err(wrap)?);
        foregrounds.push(image.foreground.clone().unwrap_or(mined.mask));
    }

    let mut subcategories = opts.subcategory_count;
    if subcategories > images.len() {
        let msg = format!(
            "category {name:?}: {} subcategories requested from {} images; using {}",
            subcategories,
            images.len(),
            images.len()
        );
        warn!("{msg}");
        warnings.push(msg);
        subcategories = images.len();
    }
    let features: Vec<_> = images.iter().map(|i| i.features.clone()).collect();
    let pool_masks: Vec<SoftMask> = if opts.use_foreground_mask {
        foregrounds.clone()
    } else {
        features
            .iter()
            .map(|f| SoftMask::filled(f.height(), f.width(), 1.0))
            .collect::<std::result::Result<_, _>>()?
    };
    let reference =
        build_category_reference(category_id, &features, &pool_masks, subcategories, seed).map_err(wrap)?;
    Ok(CategoryBuild {
        reference,
        foregrounds,
        prompts: CategoryPrompts {
            category_id,
            images: prompts,
        },
        warnings,
    })
}

/// Builds every category reference plus the background reference.
/// Categories are processed in parallel; results are assembled in id order.
pub fn build_references(manifest: &Manifest, opts: &BuildOptions) -> Result<BuiltReferences> {
    if opts.prompt_points == 0 || opts.subcategory_count == 0 {
        return Err(Error::Input("prompt point and subcategory counts must be positive".into()));
    }
    if !(opts.attention_threshold > 0.0 && opts.attention_threshold < 1.0) {
        return Err(Error::Input(format!(
            "attention threshold {} must lie in (0, 1)",
            opts.attention_threshold
        )));
    }
    if !manifest.has_references() {
        return Err(Error::Input("manifest has no reference entries".into()));
    }
    let builds: Vec<CategoryBuild> = (0..manifest.category_count())
        .into_par_iter()
        .map(|c| build_one(manifest, c, opts))
        .collect::<Result<_>>()?;

    let mut all_features = Vec::new();
    let mut all_foregrounds = Vec::new();
    for (c, build) in builds.iter().enumerate() {
        all_features.extend(manifest.references[c].iter().map(|i| i.features.clone()));
        all_foregrounds.extend(build.foregrounds.iter().cloned());
    }
    let background = build_background_reference(&all_features, &all_foregrounds).map_err(|source| Error::Reference {
        category: "background".into(),
        source,
    })?;

    let mut categories = Vec::with_capacity(builds.len());
    let mut prompts = Vec::with_capacity(builds.len());
    let mut warnings = Vec::new();
    for build in builds {
        categories.push(build.reference);
        prompts.push(build.prompts);
        warnings.extend(build.warnings);
    }
    let refs = ReferenceSet::new(categories, manifest.names.clone(), background)?;
    Ok(BuiltReferences {
        refs,
        prompts,
        warnings,
        options: opts.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IndexCategory {
    id: usize,
    name: String,
    sample_count: usize,
    holistic: String,
    subcategories: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RefsIndex {
    dim: usize,
    background: String,
    categories: Vec<IndexCategory>,
    options: Option<BuildOptions>,
    #[serde(default)]
    warnings: Vec<String>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::json(path))?;
    text.push('\n');
    fs::write(path, text).map_err(Error::io(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    serde_json::from_str(&text).map_err(Error::json(path))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(Error::io(path))
}

fn feature_tensor(rows: &[Vec<f32>]) -> Result<Tensor> {
    let shape = if rows.len() == 1 {
        vec![rows[0].len()]
    } else {
        vec![rows.len(), rows[0].len()]
    };
    Ok(Tensor::new(shape, rows.iter().flatten().copied().collect())?)
}

/// Writes the reference bundle into `dir` (usually `<out>/refs`).
pub fn save_references(built: &BuiltReferences, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    create_dir(dir)?;
    let refs = &built.refs;
    write_tensor(&feature_tensor(&[refs.background().to_vec()])?, dir.join("background.rimt"))?;
    let mut categories = Vec::with_capacity(refs.category_count());
    for id in 0..refs.category_count() {
        let cat = refs.category(id).expect("dense ids");
        let holistic = format!("category_{id:03}_holistic.rimt");
        let subcategories = format!("category_{id:03}_subcategories.rimt");
        write_tensor(&feature_tensor(&[cat.holistic().to_vec()])?, dir.join(&holistic))?;
        let subs = cat.subcategories();
        let t = Tensor::new(vec![subs.len(), cat.dim()], subs.iter().flatten().copied().collect())?;
        write_tensor(&t, dir.join(&subcategories))?;
        categories.push(IndexCategory {
            id,
            name: refs.names()[id].clone(),
            sample_count: cat.sample_count(),
            holistic,
            subcategories,
        });
    }
    let index = RefsIndex {
        dim: refs.dim(),
        background: "background.rimt".into(),
        categories,
        options: Some(built.options.clone()),
        warnings: built.warnings.clone(),
    };
    write_json(&dir.join("index.json"), &index)?;
    write_json(&dir.join("prompts.json"), &built.prompts)
}

/// Reads a bundle written by [`save_references`].
pub fn load_references(dir: impl AsRef<Path>) -> Result<ReferenceSet> {
    let dir = dir.as_ref();
    let index: RefsIndex = read_json(&dir.join("index.json"))?;
    let vector = |rel: &str| -> Result<Vec<f32>> {
        let t = read_tensor(dir.join(rel))?;
        if t.shape() != [index.dim] {
            return Err(Error::Input(format!(
                "{}: expected shape [{}], got {:?}",
                dir.join(rel).display(),
                index.dim,
                t.shape()
            )));
        }
        Ok(t.into_data())
    };
    let background = vector(&index.background)?;
    let mut categories = Vec::with_capacity(index.categories.len());
    let mut names = vec![String::new(); index.categories.len()];
    for entry in &index.categories {
        let holistic = vector(&entry.holistic)?;
        let path = dir.join(&entry.subcategories);
        let subs = read_tensor(&path)?;
        let subs: Vec<Vec<f32>> = match subs.shape() {
            [d] if *d == index.dim => vec![subs.into_data()],
            [_, d] if *d == index.dim => subs.data().chunks(index.dim).map(<[f32]>::to_vec).collect(),
            other => {
                return Err(Error::Input(format!(
                    "{}: unexpected subcategory shape {other:?}",
                    path.display()
                )))
            }
        };
        if let Some(slot) = names.get_mut(entry.id) {
            *slot = entry.name.clone();
        }
        categories.push(CategoryReference::new(entry.id, holistic, subs, entry.sample_count)?);
    }
    Ok(ReferenceSet::new(categories, names, background)?)
}

/// Pools every proposal of a test image. Proposals whose mask vanishes on the
/// feature grid are returned separately and left unclassified.
pub fn pool_regions(image: &TestImage) -> Result<(RegionSet, Vec<usize>)> {
    let mut regions = Vec::with_capacity(image.proposals.len());
    let mut skipped = Vec::new();
    for (index, mask) in image.proposals.iter().enumerate() {
        match mask_average_pool(&image.features, mask) {
            Ok(feature) => regions.push(Region {
                proposal_index: index,
                mask: mask.clone(),
                feature: feature.into_iter().map(|x| x as f32).collect(),
            }),
            Err(ReferenceError::EmptyPooledMask) => {
                warn!(
                    "image {:?}: proposal {index} vanishes on the {}x{} feature grid; skipped",
                    image.image_id,
                    image.features.height(),
                    image.features.width()
                );
                skipped.push(index);
            }
            Err(source) => {
                return Err(Error::Reference {
                    category: format!("test image {}", image.image_id),
                    source,
                })
            }
        }
    }
    Ok((RegionSet::new(image.image_id.clone(), regions)?, skipped))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionAssignment {
    pub proposal: usize,
    pub label: u32,
    pub class_name: String,
    pub scores: Vec<f64>,
    pub agents: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImagePrediction {
    pub image_id: String,
    pub label_map: LabelMap,
    pub regions: Vec<RegionAssignment>,
    pub skipped: Vec<usize>,
}

pub fn classify_image(
    image: &TestImage,
    refs: &ReferenceSet,
    matcher: &Matcher,
    mask_threshold: f32,
) -> Result<ImagePrediction> {
    let (regions, skipped) = pool_regions(image)?;
    let classified: Vec<(usize, Classification)> = regions
        .regions()
        .par_iter()
        .map(|r| {
            matcher
                .classify(&r.feature, refs)
                .map(|c| (r.proposal_index, c))
                .map_err(|source| Error::Match {
                    image: image.image_id.clone(),
                    proposal: r.proposal_index,
                    source,
                })
        })
        .collect::<Result<_>>()?;
    let painted: Vec<(&SoftMask, u32)> = classified
        .iter()
        .map(|(p, c)| (&image.proposals[*p], c.label))
        .collect();
    let gt = &image.ground_truth;
    let label_map = render_label_map(&painted, gt.height(), gt.width(), refs.candidate_count(), mask_threshold)?;
    let regions = classified
        .into_iter()
        .map(|(proposal, c)| RegionAssignment {
            proposal,
            class_name: refs.label_name(c.label).to_string(),
            label: c.label,
            scores: c.scores,
            agents: c.agents,
        })
        .collect();
    Ok(ImagePrediction {
        image_id: image.image_id.clone(),
        label_map,
        regions,
        skipped,
    })
}

/// Classifies every test image. Work is spread over the current rayon pool;
/// output order follows the manifest.
pub fn classify_images(
    manifest: &Manifest,
    refs: &ReferenceSet,
    matcher: &Matcher,
    mask_threshold: f32,
) -> Result<Vec<ImagePrediction>> {
    if let Matcher::RelationAware(cfg) = matcher {
        cfg.validate()?;
    }
    if let Some(dim) = manifest.dim {
        if dim != refs.dim() && !manifest.tests.is_empty() {
            return Err(Error::Match {
                image: manifest.tests[0].image_id.clone(),
                proposal: 0,
                source: crate::matching::MatchError::DimensionMismatch {
                    expected: refs.dim(),
                    actual: dim,
                },
            });
        }
    }
    if refs.category_count() != manifest.category_count() {
        return Err(Error::Input(format!(
            "reference bundle has {} categories but the manifest has {}",
            refs.category_count(),
            manifest.category_count()
        )));
    }
    manifest
        .tests
        .par_iter()
        .map(|image| classify_image(image, refs, matcher, mask_threshold))
        .collect()
}

/// Runs `f` on a dedicated pool of `threads` workers (`0` = rayon default).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Input(format!("cannot start {threads} worker threads: {e}")))?;
    Ok(pool.install(f))
}

/// File-system-safe form of an image id.
pub fn prediction_file_name(image_id: &str) -> String {
    let stem: String = image_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect();
    format!("{stem}.rimt")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageAssignments {
    pub image_id: String,
    pub prediction: String,
    pub regions: Vec<RegionAssignment>,
    pub skipped: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentsFile {
    pub matcher: Matcher,
    pub mask_threshold: f32,
    pub images: Vec<ImageAssignments>,
}

/// Writes label maps under `<out>/predictions/` and `<out>/assignments.json`.
pub fn save_predictions(
    out: impl AsRef<Path>,
    predictions: &[ImagePrediction],
    matcher: &Matcher,
    mask_threshold: f32,
) -> Result<()> {
    let out = out.as_ref();
    let pred_dir = out.join(PREDICTIONS_DIR);
    create_dir(&pred_dir)?;
    let mut images = Vec::with_capacity(predictions.len());
    for p in predictions {
        let name = prediction_file_name(&p.image_id);
        write_tensor(&p.label_map.to_tensor(), pred_dir.join(&name))?;
        images.push(ImageAssignments {
            image_id: p.image_id.clone(),
            prediction: format!("{PREDICTIONS_DIR}/{name}"),
            regions: p.regions.clone(),
            skipped: p.skipped.clone(),
        });
    }
    let file = AssignmentsFile {
        matcher: matcher.clone(),
        mask_threshold,
        images,
    };
    write_json(&out.join(ASSIGNMENTS_FILE), &file)
}

pub fn read_assignments(out: impl AsRef<Path>) -> Result<AssignmentsFile> {
    read_json(&out.as_ref().join(ASSIGNMENTS_FILE))
}

/// Loads the predicted label map of every manifest test image from `out`.
pub fn load_predictions(manifest: &Manifest, out: impl AsRef<Path>) -> Result<Vec<LabelMap>> {
    let pred_dir = out.as_ref().join(PREDICTIONS_DIR);
    let classes = manifest.category_count() + 1;
    manifest
        .tests
        .iter()
        .map(|image| {
            let path = pred_dir.join(prediction_file_name(&image.image_id));
            if !path.is_file() {
                return Err(Error::Input(format!("missing prediction {}", path.display())));
            }
            Ok(LabelMap::from_tensor(&read_tensor(&path)?, classes)?)
        })
        .collect()
}

/// Class names in label order, background first.
pub fn class_names(names: &[String]) -> Vec<String> {
    std::iter::once("background".to_string()).chain(names.iter().cloned()).collect()
}

pub fn evaluate(manifest: &Manifest, predictions: &[LabelMap], config: serde_json::Value) -> Result<EvalReport> {
    let gts: Vec<LabelMap> = manifest.tests.iter().map(|t| t.ground_truth.clone()).collect();
    Ok(compute_miou(predictions, &gts, class_names(&manifest.names), config)?)
}

pub fn refs_dir(out: &Path) -> PathBuf {
    out.join(REFS_DIR)
}

/// Default proposal binarization threshold for rendering.
pub const MASK_THRESHOLD: f32 = DEFAULT_MASK_THRESHOLD;
