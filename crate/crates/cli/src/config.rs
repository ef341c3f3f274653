//! Run configuration: built-in defaults, overlaid by an optional JSON config
//! file, overlaid by command-line flags.

use std::fs;
use std::path::Path;

use rim_core::eval::DEFAULT_MASK_THRESHOLD;
use rim_core::matching::{MatchConfig, MAX_AGENTS};
use rim_core::pipeline::BuildOptions;
use rim_core::{Error, Matcher};
use serde::{Deserialize, Serialize};

/// Every tunable of a run. Fields left `None` in a layer inherit from the
/// layer below.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    pub agents: Option<usize>,
    pub subcats: Option<usize>,
    pub use_subcategories: Option<bool>,
    pub naive: Option<bool>,
    pub epsilon: Option<f64>,
    pub attn_threshold: Option<f32>,
    pub mask_threshold: Option<f32>,
    pub prompt_points: Option<usize>,
    pub use_foreground_mask: Option<bool>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

impl ConfigLayer {
    pub fn read(path: &Path) -> Result<Self, Error> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        serde_json::from_str(&text).map_err(Error::json(path))
    }

    /// `self` with every unset field taken from `below`.
    pub fn over(self, below: ConfigLayer) -> ConfigLayer {
        ConfigLayer {
            agents: self.agents.or(below.agents),
            subcats: self.subcats.or(below.subcats),
            use_subcategories: self.use_subcategories.or(below.use_subcategories),
            naive: self.naive.or(below.naive),
            epsilon: self.epsilon.or(below.epsilon),
            attn_threshold: self.attn_threshold.or(below.attn_threshold),
            mask_threshold: self.mask_threshold.or(below.mask_threshold),
            prompt_points: self.prompt_points.or(below.prompt_points),
            use_foreground_mask: self.use_foreground_mask.or(below.use_foreground_mask),
            seed: self.seed.or(below.seed),
            threads: self.threads.or(below.threads),
        }
    }
}

/// Fully resolved configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub agents: usize,
    pub subcats: usize,
    pub use_subcategories: bool,
    pub naive: bool,
    pub epsilon: f64,
    pub attn_threshold: f32,
    pub mask_threshold: f32,
    pub prompt_points: usize,
    pub use_foreground_mask: bool,
    pub seed: u64,
    /// Worker threads; 0 lets the runtime choose.
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = MatchConfig::default();
        let b = BuildOptions::default();
        Self {
            agents: m.agent_count,
            subcats: m.subcategory_count,
            use_subcategories: m.use_subcategories,
            naive: false,
            epsilon: m.epsilon,
            attn_threshold: b.attention_threshold,
            mask_threshold: DEFAULT_MASK_THRESHOLD,
            prompt_points: b.prompt_points,
            use_foreground_mask: b.use_foreground_mask,
            seed: b.seed,
            threads: 0,
        }
    }
}

impl RunConfig {
    /// Resolves `flags` over `file` over the defaults and validates ranges.
    pub fn resolve(file: Option<ConfigLayer>, flags: ConfigLayer) -> Result<Self, Error> {
        let d = RunConfig::default();
        let l = flags.over(file.unwrap_or_default());
        let cfg = RunConfig {
            agents: l.agents.unwrap_or(d.agents),
            subcats: l.subcats.unwrap_or(d.subcats),
            use_subcategories: l.use_subcategories.unwrap_or(d.use_subcategories),
            naive: l.naive.unwrap_or(d.naive),
            epsilon: l.epsilon.unwrap_or(d.epsilon),
            attn_threshold: l.attn_threshold.unwrap_or(d.attn_threshold),
            mask_threshold: l.mask_threshold.unwrap_or(d.mask_threshold),
            prompt_points: l.prompt_points.unwrap_or(d.prompt_points),
            use_foreground_mask: l.use_foreground_mask.unwrap_or(d.use_foreground_mask),
            seed: l.seed.unwrap_or(d.seed),
            threads: l.threads.unwrap_or(d.threads),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: String| Err(Error::Input(m));
        if !(1..=MAX_AGENTS).contains(&self.agents) {
            return bad(format!("agents must lie in 1..={MAX_AGENTS}, got {}", self.agents));
        }
        if self.subcats == 0 {
            return bad("subcats must be positive".into());
        }
        if self.prompt_points == 0 {
            return bad("prompt points must be positive".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 0.5) {
            return bad(format!("epsilon must lie in (0, 0.5], got {}", self.epsilon));
        }
        for (name, v) in [("attention threshold", self.attn_threshold), ("mask threshold", self.mask_threshold)] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {v}"));
            }
        }
        Ok(())
    }

    pub fn match_config(&self) -> MatchConfig {
        MatchConfig {
            agent_count: self.agents,
            subcategory_count: self.subcats,
            use_subcategories: self.use_subcategories,
            epsilon: self.epsilon,
        }
    }

    pub fn matcher(&self) -> Matcher {
        if self.naive {
            Matcher::Naive
        } else {
            Matcher::RelationAware(self.match_config())
        }
    }

    pub fn build_options(&self) -> BuildOptions {
        BuildOptions {
            attention_threshold: self.attn_threshold,
            prompt_points: self.prompt_points,
            subcategory_count: self.subcats,
            seed: self.seed,
            use_foreground_mask: self.use_foreground_mask,
        }
    }
}
