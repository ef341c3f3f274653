//! Label-map rendering and dataset-level mIoU.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{LabelMap, ModelError, SoftMask, IGNORE_LABEL};

pub const DEFAULT_MASK_THRESHOLD: f32 = 0.5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("proposal {index} is {actual:?} but the canvas is {expected:?}")]
    CanvasMismatch {
        index: usize,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("image {index}: prediction is {pred:?} but ground truth is {gt:?}")]
    ShapeMismatch {
        index: usize,
        pred: (usize, usize),
        gt: (usize, usize),
    },
    #[error("{pred} predictions for {gt} ground-truth maps")]
    CountMismatch { pred: usize, gt: usize },
    #[error("image {image}: label {label} outside 0..{num_classes}")]
    LabelOutOfRange { image: usize, label: u32, num_classes: usize },
    #[error("expected {expected} class names, got {actual}")]
    NameCount { expected: usize, actual: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Paints proposals onto a background canvas. Each mask is binarized at
/// `threshold`; larger proposals are painted first so smaller ones win on
/// overlap, and equal areas paint in ascending label order.
pub fn render_label_map(
    proposals: &[(&SoftMask, u32)],
    height: usize,
    width: usize,
    num_classes: usize,
    threshold: f32,
) -> Result<LabelMap, EvalError> {
    let mut painted: Vec<(usize, u32, Vec<bool>)> = Vec::with_capacity(proposals.len());
    for (index, (mask, label)) in proposals.iter().enumerate() {
        if (mask.height(), mask.width()) != (height, width) {
            return Err(EvalError::CanvasMismatch {
                index,
                expected: (height, width),
                actual: (mask.height(), mask.width()),
            });
        }
        let bits = mask.threshold(threshold);
        let area = bits.iter().filter(|&&b| b).count();
        painted.push((area, *label, bits));
    }
    painted.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut labels = vec![0u32; height * width];
    for (_, label, bits) in &painted {
        for (l, &on) in labels.iter_mut().zip(bits) {
            if on {
                *l = *label;
            }
        }
    }
    Ok(LabelMap::new(height, width, labels, num_classes)?)
}

/// Pixel counts, rows indexed by ground truth and columns by prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    /// Adds one image. Pixels whose ground truth is the ignore label are skipped.
    pub fn accumulate(&mut self, image: usize, pred: &LabelMap, gt: &LabelMap) -> Result<(), EvalError> {
        if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
            return Err(EvalError::ShapeMismatch {
                index: image,
                pred: (pred.height(), pred.width()),
                gt: (gt.height(), gt.width()),
            });
        }
        let n = self.num_classes;
        for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
            if g == IGNORE_LABEL {
                continue;
            }
            for label in [p, g] {
                if label as usize >= n {
                    return Err(EvalError::LabelOutOfRange {
                        image,
                        label,
                        num_classes: n,
                    });
                }
            }
            self.counts[g as usize * n + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn gt_total(&self, class: usize) -> u64 {
        (0..self.num_classes).map(|p| self.get(class, p)).sum()
    }

    pub fn pred_total(&self, class: usize) -> u64 {
        (0..self.num_classes).map(|g| self.get(g, class)).sum()
    }

    /// `TP / (TP + FP + FN)`; `None` when the class appears in neither map.
    pub fn iou(&self, class: usize) -> Option<f64> {
        let tp = self.get(class, class);
        let union = self.gt_total(class) + self.pred_total(class) - tp;
        (union > 0).then(|| tp as f64 / union as f64)
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.num_classes).map(<[u64]>::to_vec).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    /// `None` for classes absent from both prediction and ground truth.
    pub per_class_iou: Vec<Option<f64>>,
    /// Mean over classes with a non-empty union.
    pub miou: f64,
    /// Ground-truth pixel count per class.
    pub pixel_counts: Vec<u64>,
    pub confusion: Vec<Vec<u64>>,
    pub image_count: usize,
    pub ignore_label: u32,
    /// Echo of the run configuration that produced the predictions.
    #[serde(default)]
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn from_confusion(
        confusion: &ConfusionMatrix,
        class_names: Vec<String>,
        image_count: usize,
        config: serde_json::Value,
    ) -> Result<Self, EvalError> {
        let n = confusion.num_classes();
        if class_names.len() != n {
            return Err(EvalError::NameCount {
                expected: n,
                actual: class_names.len(),
            });
        }
        let per_class_iou: Vec<Option<f64>> = (0..n).map(|c| confusion.iou(c)).collect();
        let present: Vec<f64> = per_class_iou.iter().flatten().copied().collect();
        let miou = if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        };
        Ok(Self {
            class_names,
            per_class_iou,
            miou,
            pixel_counts: (0..n).map(|c| confusion.gt_total(c)).collect(),
            confusion: confusion.rows(),
            image_count,
            ignore_label: IGNORE_LABEL,
            config,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Aligned table: class name, IoU %, ground-truth pixel count.
    pub fn to_text(&self) -> String {
        let width = self
            .class_names
            .iter()
            .map(String::len)
            .chain(["class".len(), "mIoU".len()])
            .max()
            .unwrap_or(5);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# {} images; pixels labelled {} are ignored",
            self.image_count, self.ignore_label
        );
        if !self.config.is_null() {
            let _ = writeln!(out, "# config: {}", self.config);
        }
        let _ = writeln!(out, "{:<width$}  {:>7}  {:>10}", "class", "IoU %", "pixels");
        for ((name, iou), pixels) in self.class_names.iter().zip(&self.per_class_iou).zip(&self.pixel_counts) {
            let iou = iou.map_or_else(|| "-".to_string(), |v| format!("{:.1}", 100.0 * v));
            let _ = writeln!(out, "{name:<width$}  {iou:>7}  {pixels:>10}");
        }
        let total: u64 = self.pixel_counts.iter().sum();
        let _ = writeln!(out, "{:<width$}  {:>7.1}  {:>10}", "mIoU", 100.0 * self.miou, total);
        out
    }
}

/// Accumulates confusion over the whole dataset and derives per-class IoU.
pub fn compute_miou(
    preds: &[LabelMap],
    gts: &[LabelMap],
    class_names: Vec<String>,
    config: serde_json::Value,
) -> Result<EvalReport, EvalError> {
    if preds.len() != gts.len() {
        return Err(EvalError::CountMismatch {
            pred: preds.len(),
            gt: gts.len(),
        });
    }
    let mut confusion = ConfusionMatrix::new(class_names.len());
    for (i, (p, g)) in preds.iter().zip(gts).enumerate() {
        confusion.accumulate(i, p, g)?;
    }
    EvalReport::from_confusion(&confusion, class_names, preds.len(), config)
}

fn write_file(path: &Path, contents: &str) -> Result<(), EvalError> {
    fs::write(path, contents).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `report.json` and `report.txt` into `dir`, creating it if needed.
pub fn emit_report(report: &EvalReport, dir: impl AsRef<Path>) -> Result<(), EvalError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| EvalError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    write_file(&dir.join("report.json"), &report.to_json())?;
    write_file(&dir.join("report.txt"), &report.to_text())
}

pub fn read_report(path: impl AsRef<Path>) -> Result<EvalReport, EvalError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    EvalReport::from_json(&text).map_err(|source| EvalError::Json {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lm(h: usize, w: usize, labels: Vec<u32>) -> LabelMap {
        LabelMap::new(h, w, labels, 4).unwrap()
    }

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("class{i}")).collect()
    }

    fn rect(h: usize, w: usize, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> SoftMask {
        let mut bits = vec![false; h * w];
        for r in rows {
            for c in cols.clone() {
                bits[r * w + c] = true;
            }
        }
        SoftMask::from_bools(h, w, &bits).unwrap()
    }

    #[test]
    fn full_canvas_proposal() {
        let m = SoftMask::filled(3, 3, 1.0).unwrap();
        let map = render_label_map(&[(&m, 3)], 3, 3, 4, 0.5).unwrap();
        assert!(map.labels().iter().all(|&l| l == 3));
    }

    #[test]
    fn smaller_proposal_wins_overlap() {
        let big = rect(4, 4, 0..4, 0..4);
        let small = rect(4, 4, 1..2, 1..3);
        for order in [[(&big, 1), (&small, 2)], [(&small, 2), (&big, 1)]] {
            let map = render_label_map(&order, 4, 4, 4, 0.5).unwrap();
            assert_eq!(map.get(1, 1), 2);
            assert_eq!(map.get(1, 2), 2);
            assert_eq!(map.get(0, 0), 1);
        }
    }

    #[test]
    fn soft_weights_binarize_at_half() {
        let m = SoftMask::new(1, 3, vec![0.49, 0.5, 1.0]).unwrap();
        let map = render_label_map(&[(&m, 1)], 1, 3, 4, 0.5).unwrap();
        assert_eq!(map.labels(), &[0, 1, 1]);
    }

    #[test]
    fn canvas_mismatch() {
        let m = SoftMask::filled(2, 3, 1.0).unwrap();
        assert!(matches!(
            render_label_map(&[(&m, 1)], 3, 3, 4, 0.5),
            Err(EvalError::CanvasMismatch { .. })
        ));
    }

    #[test]
    fn perfect_prediction() {
        let gt = lm(2, 2, vec![0, 1, 2, 1]);
        let r = compute_miou(std::slice::from_ref(&gt), std::slice::from_ref(&gt), names(4), serde_json::Value::Null).unwrap();
        assert_eq!(r.miou, 1.0);
        assert_eq!(r.per_class_iou, vec![Some(1.0), Some(1.0), Some(1.0), None]);
        let text = r.to_text();
        assert!(text.contains("100.0"));
        assert!(!text.contains(" 0.0 "));
    }

    #[test]
    fn disjoint_prediction() {
        let gt = lm(1, 2, vec![1, 1]);
        let pred = lm(1, 2, vec![2, 2]);
        let r = compute_miou(&[pred], &[gt], names(4), serde_json::Value::Null).unwrap();
        assert_eq!(r.per_class_iou[1], Some(0.0));
        assert_eq!(r.per_class_iou[2], Some(0.0));
        assert_eq!(r.miou, 0.0);
    }

    #[test]
    fn hand_counted_two_by_two() {
        let gt = lm(2, 2, vec![1, 1, 0, 0]);
        let pred = lm(2, 2, vec![1, 0, 0, 0]);
        let r = compute_miou(&[pred], &[gt], names(2), serde_json::Value::Null).unwrap();
        assert_eq!(r.per_class_iou[1], Some(0.5));
        assert_eq!(r.per_class_iou[0], Some(2.0 / 3.0));
        assert!((r.miou - 7.0 / 12.0).abs() < 1e-15);
        assert_eq!(r.confusion, vec![vec![2, 0], vec![1, 1]]);
        assert_eq!(r.pixel_counts, vec![2, 2]);
    }

    #[test]
    fn ignore_label_is_skipped() {
        let gt = lm(1, 3, vec![1, IGNORE_LABEL, 0]);
        let pred = lm(1, 3, vec![1, 2, 0]);
        let r = compute_miou(&[pred], &[gt], names(3), serde_json::Value::Null).unwrap();
        assert_eq!(r.miou, 1.0);
        assert_eq!(r.per_class_iou[2], None);
    }

    #[test]
    fn input_errors() {
        let a = lm(1, 2, vec![0, 1]);
        let b = lm(2, 1, vec![0, 1]);
        assert!(matches!(
            compute_miou(std::slice::from_ref(&a), &[b], names(4), serde_json::Value::Null),
            Err(EvalError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            compute_miou(std::slice::from_ref(&a), &[], names(4), serde_json::Value::Null),
            Err(EvalError::CountMismatch { .. })
        ));
        let high = lm(1, 2, vec![3, 1]);
        assert!(matches!(
            compute_miou(&[high], &[a], names(2), serde_json::Value::Null),
            Err(EvalError::LabelOutOfRange { label: 3, .. })
        ));
    }

    #[test]
    fn report_round_trips() {
        let gt = lm(2, 2, vec![0, 1, 2, 1]);
        let pred = lm(2, 2, vec![0, 2, 2, 1]);
        let cfg = serde_json::json!({"agents": 4, "naive": false});
        let r = compute_miou(&[pred], &[gt], names(4), cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        emit_report(&r, dir.path()).unwrap();
        assert_eq!(read_report(dir.path().join("report.json")).unwrap(), r);
        let text = fs::read_to_string(dir.path().join("report.txt")).unwrap();
        assert!(text.contains("\"agents\":4"));
        assert!(text.lines().any(|l| l.starts_with("mIoU")));
    }
}
