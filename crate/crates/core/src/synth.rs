//! Synthetic feature-space worlds that exercise the whole pipeline without
//! foundation models.
//!
//! Each class has a unit-norm mean; classes (plus the background) are placed
//! at configured pairwise cosines. Sub-cluster means scatter around the class
//! mean, secondary ones optionally drifted toward a confusable partner.
//! Reference images draw one sub-cluster each, and foreground feature
//! pixels are that sub-cluster's instance feature plus pixel noise. Attention
//! maps equal a per-map scale inside the foreground rectangle and stay below
//! 0.6 of it outside, so binarizing at 0.7 recovers the rectangle.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interchange::{
    default_prompt, write_tensor, CategoryEntry, FormatError, ManifestError, ManifestFile, ReferenceEntry,
    ReferenceImageEntry, TestEntry,
};
use crate::model::{category_label, BACKGROUND_LABEL};
use crate::tensor::{ModelError, Tensor, IGNORE_LABEL};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRUTH_FILE: &str = "truth.json";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid world spec: {0}")]
    InvalidSpec(String),
    #[error("infeasible class geometry: {0}")]
    Infeasible(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Target cosine between the means of two categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfusablePair {
    pub a: usize,
    pub b: usize,
    pub cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldSpec {
    pub class_count: usize,
    pub feature_dim: usize,
    pub images_per_class: usize,
    pub subcluster_count: usize,
    /// Category pairs whose means sit at the given cosine; all other pairs,
    /// and every category against the background, are orthogonal unless
    /// `background_cosine` says otherwise.
    pub confusability: Vec<ConfusablePair>,
    pub background_cosine: f64,
    /// Norm scale of each sub-cluster's offset from its class mean.
    pub subcluster_spread: f64,
    /// Fraction of the way every sub-cluster after the first moves from its
    /// class mean toward the mean of the class's first confusable partner.
    pub subcluster_drift: f64,
    /// Expected norm of the per-instance offset from the sub-cluster mean.
    pub noise_sigma: f64,
    /// Expected norm of the per-pixel offset from the instance feature.
    pub pixel_noise_sigma: f64,
    /// Side of the square pixel canvas.
    pub canvas: usize,
    /// Pixels per feature cell.
    pub feature_stride: usize,
    pub regions_per_image: usize,
    pub test_image_count: usize,
    /// Probability that a test region is background.
    pub background_fraction: f64,
    pub attention_layers: usize,
    pub attention_steps: usize,
    /// Writes the true foreground masks into the manifest instead of leaving
    /// them to be mined from attention.
    pub write_foreground_masks: bool,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            class_count: 4,
            feature_dim: 16,
            images_per_class: 4,
            subcluster_count: 1,
            confusability: Vec::new(),
            background_cosine: 0.0,
            subcluster_spread: 0.0,
            subcluster_drift: 0.0,
            noise_sigma: 0.0,
            pixel_noise_sigma: 0.0,
            canvas: 32,
            feature_stride: 2,
            regions_per_image: 4,
            test_image_count: 8,
            background_fraction: 0.2,
            attention_layers: 2,
            attention_steps: 2,
            write_foreground_masks: false,
            seed: 0,
        }
    }
}

impl WorldSpec {
    /// Orthogonal class means and no noise of any kind.
    pub fn orthogonal(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    /// Ten classes in five pairs at cosine 0.9. Each class has a primary
    /// mode at its mean and a secondary mode 60% of the way to its partner.
    pub fn confusable(seed: u64) -> Self {
        Self {
            class_count: 10,
            feature_dim: 64,
            images_per_class: 20,
            subcluster_count: 2,
            confusability: (0..5)
                .map(|p| ConfusablePair {
                    a: 2 * p,
                    b: 2 * p + 1,
                    cosine: 0.9,
                })
                .collect(),
            background_cosine: 0.0,
            subcluster_spread: 0.05,
            subcluster_drift: 0.6,
            noise_sigma: 0.05,
            pixel_noise_sigma: 0.3,
            canvas: 32,
            feature_stride: 2,
            regions_per_image: 4,
            test_image_count: 60,
            background_fraction: 0.1,
            attention_layers: 2,
            attention_steps: 2,
            write_foreground_masks: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.class_count < 2 {
            return bad(format!("class_count {} < 2", self.class_count));
        }
        if self.feature_dim < 8 {
            return bad(format!("feature_dim {} < 8", self.feature_dim));
        }
        if self.subcluster_count == 0 {
            return bad("subcluster_count must be positive".into());
        }
        if self.images_per_class < self.subcluster_count {
            return bad(format!(
                "images_per_class {} < subcluster_count {}",
                self.images_per_class, self.subcluster_count
            ));
        }
        if self.feature_stride == 0 || self.canvas == 0 || !self.canvas.is_multiple_of(self.feature_stride) {
            return bad(format!(
                "canvas {} must be a positive multiple of feature_stride {}",
                self.canvas, self.feature_stride
            ));
        }
        if self.canvas / self.feature_stride < 4 {
            return bad("canvas must span at least 4 feature cells".into());
        }
        if self.regions_per_image == 0 {
            return bad("regions_per_image must be positive".into());
        }
        let (rows, cols) = grid_shape(self.regions_per_image);
        if rows.max(cols) > self.canvas / self.feature_stride {
            return bad(format!(
                "{} regions do not fit on a {}-cell grid",
                self.regions_per_image,
                self.canvas / self.feature_stride
            ));
        }
        if self.attention_layers == 0 || self.attention_steps == 0 {
            return bad("attention stacks need at least one layer and step".into());
        }
        if !(0.0..=1.0).contains(&self.background_fraction) {
            return bad(format!("background_fraction {} outside [0, 1]", self.background_fraction));
        }
        if !(0.0..=1.0).contains(&self.subcluster_drift) {
            return bad(format!("subcluster_drift {} outside [0, 1]", self.subcluster_drift));
        }
        for (name, v) in [
            ("subcluster_spread", self.subcluster_spread),
            ("noise_sigma", self.noise_sigma),
            ("pixel_noise_sigma", self.pixel_noise_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative"));
            }
        }
        for p in &self.confusability {
            if p.a >= self.class_count || p.b >= self.class_count || p.a == p.b {
                return bad(format!("confusable pair ({}, {}) is not two distinct classes", p.a, p.b));
            }
            if !(p.cosine.abs() < 1.0) {
                return bad(format!("pair cosine {} must lie in (-1, 1)", p.cosine));
            }
        }
        if !(self.background_cosine.abs() < 1.0) {
            return bad(format!("background_cosine {} must lie in (-1, 1)", self.background_cosine));
        }
        Ok(())
    }

    /// Target Gram matrix over `[background, class 0, .., class C-1]`.
    pub fn target_gram(&self) -> DMatrix<f64> {
        let n = self.class_count + 1;
        let mut g = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                1.0
            } else if i == 0 || j == 0 {
                self.background_cosine
            } else {
                0.0
            }
        });
        for p in &self.confusability {
            g[(p.a + 1, p.b + 1)] = p.cosine;
            g[(p.b + 1, p.a + 1)] = p.cosine;
        }
        g
    }

    /// First category paired with `class` in the confusability list.
    pub fn partner(&self, class: usize) -> Option<usize> {
        self.confusability.iter().find_map(|p| {
            if p.a == class {
                Some(p.b)
            } else if p.b == class {
                Some(p.a)
            } else {
                None
            }
        })
    }
}

/// Rows and columns of the test-image region grid.
fn grid_shape(regions: usize) -> (usize, usize) {
    let cols = (regions as f64).sqrt().ceil() as usize;
    let rows = regions.div_ceil(cols);
    (rows, cols)
}

/// Pixel rectangle `[r0, r1) x [c0, c1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub r0: usize,
    pub r1: usize,
    pub c0: usize,
    pub c1: usize,
}

impl Rect {
    fn contains(&self, r: usize, c: usize) -> bool {
        (self.r0..self.r1).contains(&r) && (self.c0..self.c1).contains(&c)
    }

    /// Chebyshev distance in pixels from `(r, c)` to the rectangle.
    fn distance(&self, r: usize, c: usize) -> usize {
        let dr = if r < self.r0 { self.r0 - r } else { (r + 1).saturating_sub(self.r1) };
        let dc = if c < self.c0 { self.c0 - c } else { (c + 1).saturating_sub(self.c1) };
        dr.max(dc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthReference {
    pub category_id: usize,
    pub subcluster: usize,
    pub foreground: Rect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRegion {
    pub label: u32,
    /// Sub-cluster drawn for object regions; `None` for background.
    pub subcluster: Option<usize>,
    pub rect: Rect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthImage {
    pub image_id: String,
    pub regions: Vec<TruthRegion>,
}

/// Generator metadata written to `truth.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldTruth {
    pub spec: WorldSpec,
    pub background_mean: Vec<f64>,
    pub class_means: Vec<Vec<f64>>,
    /// `[class][subcluster]` means.
    pub subcluster_means: Vec<Vec<Vec<f64>>>,
    pub references: Vec<Vec<TruthReference>>,
    pub tests: Vec<TruthImage>,
}

fn gaussian_vector(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Unit vectors `[background, class 0, ..]` whose Gram matrix equals the
/// spec's target, rotated by a random orthogonal matrix.
pub fn class_geometry(spec: &WorldSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>, SynthError> {
    let n = spec.class_count + 1;
    let d = spec.feature_dim;
    if n > d {
        return Err(SynthError::Infeasible(format!(
            "{} classes plus background need feature_dim >= {n}, got {d}",
            spec.class_count
        )));
    }
    let gram = spec.target_gram();
    let chol = gram
        .cholesky()
        .ok_or_else(|| SynthError::Infeasible("target cosines are not positive definite".into()))?;
    let l = chol.l();
    let gauss = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = gauss.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok((0..n)
        .map(|i| {
            (0..d)
                .map(|row| (0..n).map(|k| q[(row, k)] * l[(i, k)]).sum())
                .collect()
        })
        .collect())
}

fn subcluster_means(spec: &WorldSpec, class: usize, means: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let d = spec.feature_dim;
    let mean = &means[class];
    let partner = spec.partner(class).filter(|_| spec.subcluster_drift > 0.0);
    (0..spec.subcluster_count)
        .map(|j| {
            let center: Vec<f64> = match partner {
                Some(p) if j > 0 => mean
                    .iter()
                    .zip(&means[p])
                    .map(|(m, q)| m + spec.subcluster_drift * (q - m))
                    .collect(),
                _ => mean.clone(),
            };
            if spec.subcluster_spread == 0.0 && center == *mean {
                return center;
            }
            let offset = gaussian_vector(rng, d, spec.subcluster_spread / (d as f64).sqrt());
            let mut v: Vec<f64> = center.iter().zip(&offset).map(|(m, o)| m + o).collect();
            normalize(&mut v);
            v
        })
        .collect()
}

fn perturb(base: &[f64], sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if sigma == 0.0 {
        return base.to_vec();
    }
    let scale = sigma / (base.len() as f64).sqrt();
    base.iter().map(|b| b + scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

struct Canvas<'a> {
    spec: &'a WorldSpec,
    grid: usize,
}

impl Canvas<'_> {
    /// Feature map `[g, g, D]` whose cells inside `fills[i].0` (pixel
    /// rectangles, stride aligned) take `fills[i].1` plus pixel noise; the
    /// remaining cells take `fallback` plus pixel noise.
    fn features(&self, fills: &[(Rect, &[f64])], fallback: &[f64], rng: &mut ChaCha8Rng) -> Result<Tensor, ModelError> {
        let (g, d, s) = (self.grid, self.spec.feature_dim, self.spec.feature_stride);
        let mut data = Vec::with_capacity(g * g * d);
        for r in 0..g {
            for c in 0..g {
                let base = fills
                    .iter()
                    .find(|(rect, _)| rect.contains(r * s, c * s))
                    .map_or(fallback, |(_, v)| *v);
                data.extend(perturb(base, self.spec.pixel_noise_sigma, rng).into_iter().map(|x| x as f32));
            }
        }
        Tensor::new(vec![g, g, d], data)
    }

    fn random_rect(&self, rng: &mut ChaCha8Rng) -> Rect {
        let (g, s) = (self.grid, self.spec.feature_stride);
        let lo = (g / 4).max(1);
        let hi = (3 * g / 4).max(lo);
        let h = rng.random_range(lo..=hi);
        let w = rng.random_range(lo..=hi);
        let r0 = rng.random_range(0..=g - h);
        let c0 = rng.random_range(0..=g - w);
        Rect {
            r0: r0 * s,
            r1: (r0 + h) * s,
            c0: c0 * s,
            c1: (c0 + w) * s,
        }
    }

    fn attention(&self, fg: Rect, rng: &mut ChaCha8Rng) -> Result<Tensor, ModelError> {
        let n = self.spec.canvas;
        let maps = self.spec.attention_layers * self.spec.attention_steps;
        let mut data = Vec::with_capacity(maps * n * n);
        for _ in 0..maps {
            let scale: f64 = rng.random_range(0.5..1.5);
            for r in 0..n {
                for c in 0..n {
                    let v = if fg.contains(r, c) {
                        scale
                    } else {
                        scale * 0.6 * (-(fg.distance(r, c) as f64) / 3.0).exp()
                    };
                    data.push(v as f32);
                }
            }
        }
        Tensor::new(vec![self.spec.attention_layers, self.spec.attention_steps, n, n], data)
    }

    fn mask(&self, rect: Rect) -> Result<Tensor, ModelError> {
        let n = self.spec.canvas;
        let data = (0..n * n)
            .map(|i| if rect.contains(i / n, i % n) { 1.0 } else { 0.0 })
            .collect();
        Tensor::new(vec![n, n], data)
    }

    /// Stride-aligned cells tiling the canvas; leftover pixels are ignored.
    fn cells(&self) -> Vec<Rect> {
        let (rows, cols) = grid_shape(self.spec.regions_per_image);
        let s = self.spec.feature_stride;
        let ch = (self.grid / rows) * s;
        let cw = (self.grid / cols) * s;
        (0..self.spec.regions_per_image)
            .map(|i| {
                let (r, c) = (i / cols, i % cols);
                Rect {
                    r0: r * ch,
                    r1: (r + 1) * ch,
                    c0: c * cw,
                    c1: (c + 1) * cw,
                }
            })
            .collect()
    }
}

fn category_name(id: usize) -> String {
    format!("class_{id:02}")
}

fn create_dir(path: &Path) -> Result<(), SynthError> {
    fs::create_dir_all(path).map_err(|source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes a world under `dir`: `manifest.json`, `truth.json` and tensors in
/// `refs/` and `tests/`. Identical specs produce identical bytes.
pub fn generate_world(spec: &WorldSpec, dir: impl AsRef<Path>) -> Result<WorldTruth, SynthError> {
    spec.validate()?;
    let dir = dir.as_ref();
    create_dir(&dir.join("refs"))?;
    create_dir(&dir.join("tests"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let geometry = class_geometry(spec, &mut rng)?;
    let background_mean = geometry[0].clone();
    let class_means: Vec<Vec<f64>> = geometry[1..].to_vec();
    let subs: Vec<Vec<Vec<f64>>> = (0..spec.class_count)
        .map(|c| subcluster_means(spec, c, &class_means, &mut rng))
        .collect();
    let canvas = Canvas {
        spec,
        grid: spec.canvas / spec.feature_stride,
    };

    let mut reference_entries = Vec::with_capacity(spec.class_count);
    let mut truth_refs = Vec::with_capacity(spec.class_count);
    for c in 0..spec.class_count {
        let mut images = Vec::with_capacity(spec.images_per_class);
        let mut truths = Vec::with_capacity(spec.images_per_class);
        for k in 0..spec.images_per_class {
            // every sub-cluster is represented at least once
            let subcluster = if k < spec.subcluster_count {
                k
            } else {
                rng.random_range(0..spec.subcluster_count)
            };
            let instance = perturb(&subs[c][subcluster], spec.noise_sigma, &mut rng);
            let backdrop = perturb(&background_mean, spec.noise_sigma, &mut rng);
            let fg = canvas.random_rect(&mut rng);
            let stem = format!("refs/c{c:02}_{k:03}");
            let features = format!("{stem}_features.rimt");
            let attention = format!("{stem}_attention.rimt");
            write_tensor(&canvas.features(&[(fg, &instance)], &backdrop, &mut rng)?, dir.join(&features))?;
            write_tensor(&canvas.attention(fg, &mut rng)?, dir.join(&attention))?;
            let foreground_mask = if spec.write_foreground_masks {
                let path = format!("{stem}_mask.rimt");
                write_tensor(&canvas.mask(fg)?, dir.join(&path))?;
                Some(path)
            } else {
                None
            };
            images.push(ReferenceImageEntry {
                features,
                attention,
                foreground_mask,
            });
            truths.push(TruthReference {
                category_id: c,
                subcluster,
                foreground: fg,
            });
        }
        reference_entries.push(ReferenceEntry { category_id: c, images });
        truth_refs.push(truths);
    }

    let cells = canvas.cells();
    let n = spec.canvas;
    let mut test_entries = Vec::with_capacity(spec.test_image_count);
    let mut truth_tests = Vec::with_capacity(spec.test_image_count);
    for t in 0..spec.test_image_count {
        let image_id = format!("test_{t:04}");
        let mut regions = Vec::with_capacity(cells.len());
        let mut instances = Vec::with_capacity(cells.len());
        for &rect in &cells {
            if rng.random_bool(spec.background_fraction) {
                instances.push(perturb(&background_mean, spec.noise_sigma, &mut rng));
                regions.push(TruthRegion {
                    label: BACKGROUND_LABEL,
                    subcluster: None,
                    rect,
                });
            } else {
                let c = rng.random_range(0..spec.class_count);
                let s = rng.random_range(0..spec.subcluster_count);
                instances.push(perturb(&subs[c][s], spec.noise_sigma, &mut rng));
                regions.push(TruthRegion {
                    label: category_label(c),
                    subcluster: Some(s),
                    rect,
                });
            }
        }
        let fills: Vec<(Rect, &[f64])> = cells.iter().copied().zip(instances.iter().map(Vec::as_slice)).collect();
        let features = format!("tests/{image_id}_features.rimt");
        write_tensor(&canvas.features(&fills, &background_mean, &mut rng)?, dir.join(&features))?;
        let mut proposals = Vec::with_capacity(cells.len());
        for (j, &rect) in cells.iter().enumerate() {
            let path = format!("tests/{image_id}_proposal_{j:02}.rimt");
            write_tensor(&canvas.mask(rect)?, dir.join(&path))?;
            proposals.push(path);
        }
        let gt: Vec<f32> = (0..n * n)
            .map(|i| {
                regions
                    .iter()
                    .find(|reg| reg.rect.contains(i / n, i % n))
                    .map_or(IGNORE_LABEL, |reg| reg.label) as f32
            })
            .collect();
        let ground_truth = format!("tests/{image_id}_gt.rimt");
        write_tensor(&Tensor::new(vec![n, n], gt)?, dir.join(&ground_truth))?;
        test_entries.push(TestEntry {
            image_id: image_id.clone(),
            features,
            proposals,
            ground_truth,
        });
        truth_tests.push(TruthImage { image_id, regions });
    }

    let manifest = ManifestFile {
        categories: (0..spec.class_count)
            .map(|id| CategoryEntry {
                id,
                name: category_name(id),
                prompt: default_prompt(&category_name(id)),
            })
            .collect(),
        reference_entries,
        test_entries,
        metadata: Some(serde_json::json!({
            "generator": "rim synth",
            "seed": spec.seed,
            "truth": TRUTH_FILE,
        })),
    };
    manifest.write(dir.join(MANIFEST_FILE))?;

    let truth = WorldTruth {
        spec: spec.clone(),
        background_mean,
        class_means,
        subcluster_means: subs,
        references: truth_refs,
        tests: truth_tests,
    };
    let path = dir.join(TRUTH_FILE);
    let mut text = serde_json::to_string_pretty(&truth).expect("truth serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|source| SynthError::Io { path, source })?;
    Ok(truth)
}

pub fn read_truth(dir: impl AsRef<Path>) -> Result<WorldTruth, SynthError> {
    let path = dir.as_ref().join(TRUTH_FILE);
    let text = fs::read_to_string(&path).map_err(|source| SynthError::Io {
        path: path.clone(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| SynthError::InvalidSpec(format!("{}: {e}", path.display())))
}
