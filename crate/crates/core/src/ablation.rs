//! Side-by-side evaluation of matcher variants over one manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{emit_report, EvalReport};
use crate::interchange::Manifest;
use crate::matching::{MatchConfig, Matcher};
use crate::pipeline::{build_references, classify_images, evaluate, BuildOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub name: String,
    pub matcher: Matcher,
    /// Pool references under their foreground masks rather than whole images.
    pub use_foreground_mask: bool,
}

/// The standard ladder: naive matching on whole-image references, naive
/// matching on foreground references, relation-aware matching without and
/// with subcategories.
pub fn default_configs(base: &MatchConfig) -> Vec<AblationConfig> {
    vec![
        AblationConfig {
            name: "naive_whole_image".into(),
            matcher: Matcher::Naive,
            use_foreground_mask: false,
        },
        AblationConfig {
            name: "naive".into(),
            matcher: Matcher::Naive,
            use_foreground_mask: true,
        },
        AblationConfig {
            name: "relation_aware".into(),
            matcher: Matcher::RelationAware(MatchConfig {
                use_subcategories: false,
                ..base.clone()
            }),
            use_foreground_mask: true,
        },
        AblationConfig {
            name: "relation_aware_subcategories".into(),
            matcher: Matcher::RelationAware(MatchConfig {
                use_subcategories: true,
                ..base.clone()
            }),
            use_foreground_mask: true,
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub matcher: Matcher,
    pub use_foreground_mask: bool,
    pub miou: f64,
    /// mIoU minus the first row's mIoU.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationResult {
    pub rows: Vec<AblationRow>,
    pub reports: Vec<EvalReport>,
}

impl AblationResult {
    pub fn miou(&self, name: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.name == name).map(|r| r.miou)
    }

    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(6);
        let mut out = format!("{:<width$}  {:>7}  {:>7}\n", "config", "mIoU %", "delta");
        for r in &self.rows {
            let _ = writeln!(out, "{:<width$}  {:>7.2}  {:>+7.2}", r.name, 100.0 * r.miou, 100.0 * r.delta);
        }
        out
    }
}

/// Builds references once per pooling mode, then classifies and evaluates
/// every config. Configs run concurrently; output order follows `configs`.
pub fn run_ablation(
    manifest: &Manifest,
    build: &BuildOptions,
    configs: &[AblationConfig],
    mask_threshold: f32,
) -> Result<AblationResult> {
    if configs.is_empty() {
        return Err(Error::Input("no ablation configs".into()));
    }
    let needs = |fg: bool| configs.iter().any(|c| c.use_foreground_mask == fg);
    let build_for = |fg: bool| -> Result<Option<_>> {
        if !needs(fg) {
            return Ok(None);
        }
        let opts = BuildOptions {
            use_foreground_mask: fg,
            ..build.clone()
        };
        build_references(manifest, &opts).map(|b| Some(b.refs))
    };
    let with_fg = build_for(true)?;
    let without_fg = build_for(false)?;

    let reports: Vec<EvalReport> = configs
        .par_iter()
        .map(|cfg| {
            let refs = if cfg.use_foreground_mask { &with_fg } else { &without_fg };
            let refs = refs.as_ref().expect("built for every requested mode");
            let preds = classify_images(manifest, refs, &cfg.matcher, mask_threshold)?;
            let maps: Vec<_> = preds.into_iter().map(|p| p.label_map).collect();
            let config = serde_json::json!({
                "name": cfg.name,
                "matcher": cfg.matcher,
                "use_foreground_mask": cfg.use_foreground_mask,
                "build": build,
                "mask_threshold": mask_threshold,
            });
            evaluate(manifest, &maps, config)
        })
        .collect::<Result<_>>()?;

    let base = reports[0].miou;
    let rows = configs
        .iter()
        .zip(&reports)
        .map(|(cfg, report)| AblationRow {
            name: cfg.name.clone(),
            matcher: cfg.matcher.clone(),
            use_foreground_mask: cfg.use_foreground_mask,
            miou: report.miou,
            delta: report.miou - base,
        })
        .collect();
    Ok(AblationResult { rows, reports })
}

/// Writes `<dir>/<config>/report.{json,txt}` and `<dir>/ablation.{json,txt}`.
pub fn emit_ablation(result: &AblationResult, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    for (row, report) in result.rows.iter().zip(&result.reports) {
        emit_report(report, dir.join(&row.name))?;
    }
    let path = dir.join("ablation.json");
    let mut text = serde_json::to_string_pretty(&result.rows).map_err(Error::json(&path))?;
    text.push('\n');
    fs::write(&path, text).map_err(Error::io(&path))?;
    let path = dir.join("ablation.txt");
    fs::write(&path, result.to_text()).map_err(Error::io(&path))
}
