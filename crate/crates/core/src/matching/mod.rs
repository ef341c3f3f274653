//! Region classification against a [`ReferenceSet`].
//!
//! The naive matcher picks the candidate whose holistic feature has the
//! highest cosine similarity to the region. The relation-aware matcher
//! instead picks the top-`N` most similar holistic features as *agents*,
//! turns the region's similarities to those agents into a Plackett–Luce
//! distribution over agent orderings, does the same for every candidate
//! reference (or each of its subcategory features), and returns the candidate
//! whose distribution is closest in cosine similarity. With subcategories the
//! per-subcategory similarities are summed.

mod ranking;

pub use ranking::{
    distribution_similarity, factorial, permutation_probability, permutations, ranking_probabilities,
    RankingDistribution, RankingError, MASS_TOLERANCE, MAX_AGENTS,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{l2_norm, ReferenceSet};

pub const DEFAULT_AGENTS: usize = 4;
pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Candidate scores closer than this are treated as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("zero-norm vector ({0})")]
    ZeroNorm(String),
    #[error("feature dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid match configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Ranking(#[from] RankingError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub agent_count: usize,
    pub subcategory_count: usize,
    pub use_subcategories: bool,
    /// Floor applied after mapping cosine scores into `(0, 1]`.
    pub epsilon: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            agent_count: DEFAULT_AGENTS,
            subcategory_count: crate::reference::DEFAULT_SUBCATEGORIES,
            use_subcategories: true,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<(), MatchError> {
        if !(1..=MAX_AGENTS).contains(&self.agent_count) {
            return Err(MatchError::InvalidConfig(format!(
                "agent count {} outside 1..={MAX_AGENTS}",
                self.agent_count
            )));
        }
        if self.subcategory_count == 0 {
            return Err(MatchError::InvalidConfig("subcategory count must be at least 1".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(MatchError::InvalidConfig(format!(
                "epsilon {} outside (0, 1)",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64, MatchError> {
    if a.len() != b.len() {
        return Err(MatchError::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na == 0.0 {
        return Err(MatchError::ZeroNorm("query".into()));
    }
    if nb == 0.0 {
        return Err(MatchError::ZeroNorm("reference".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub fn cosine_scores(query: &[f32], refs: &[&[f32]]) -> Result<Vec<f64>, MatchError> {
    refs.iter().map(|r| cosine(query, r)).collect()
}

/// Maps cosine scores to positive weights: `max((s + 1) / 2, epsilon)`.
pub fn calibrate_scores(raw: &[f64], epsilon: f64) -> Vec<f64> {
    raw.iter().map(|s| ((s + 1.0) / 2.0).max(epsilon)).collect()
}

/// The reference features a region is ranked against, most similar first.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSet {
    pub agent_ids: Vec<u32>,
    pub agent_features: Vec<Vec<f32>>,
}

/// Top-`count` holistic references (background included) by cosine
/// similarity to the region; ties go to the lower label. `count` is capped at
/// the number of candidates.
pub fn select_agents(region: &[f32], refs: &ReferenceSet, count: usize) -> Result<AgentSet, MatchError> {
    if region.len() != refs.dim() {
        return Err(MatchError::DimensionMismatch {
            expected: refs.dim(),
            actual: region.len(),
        });
    }
    let mut scored = Vec::with_capacity(refs.candidate_count());
    for cand in refs.candidates() {
        scored.push((cosine(region, cand.holistic)?, cand.label, cand.holistic));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.truncate(count.min(refs.candidate_count()));
    Ok(AgentSet {
        agent_ids: scored.iter().map(|s| s.1).collect(),
        agent_features: scored.iter().map(|s| s.2.to_vec()).collect(),
    })
}

/// Outcome of classifying one region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub label: u32,
    /// Score of every candidate, indexed by label.
    pub scores: Vec<f64>,
    /// Agent labels, most similar first (empty for the naive matcher).
    pub agents: Vec<u32>,
}

fn argmax(scores: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] + TIE_TOLERANCE {
            best = i;
        }
    }
    best as u32
}

fn relation_distribution(
    feature: &[f32],
    agents: &AgentSet,
    epsilon: f64,
) -> Result<RankingDistribution, MatchError> {
    let refs: Vec<&[f32]> = agents.agent_features.iter().map(Vec::as_slice).collect();
    let scores = calibrate_scores(&cosine_scores(feature, &refs)?, epsilon);
    Ok(RankingDistribution::from_scores(agents.agent_ids.clone(), &scores)?)
}

/// Relation-aware classification.
///
/// Every candidate (all categories plus background) is scored by the cosine
/// similarity between its agent-ranking distribution and the region's. With
/// subcategories enabled a category's score is the sum over its subcategory
/// features; candidates with fewer features than the largest set (the
/// background always has one) are rescaled to that count so sums stay
/// comparable.
pub fn classify_region(region: &[f32], refs: &ReferenceSet, cfg: &MatchConfig) -> Result<Classification, MatchError> {
    cfg.validate()?;
    let agents = select_agents(region, refs, cfg.agent_count)?;
    let region_dist = relation_distribution(region, &agents, cfg.epsilon)?;

    let votes = refs
        .candidates()
        .map(|c| c.subcategories.len())
        .max()
        .unwrap_or(1);
    let mut scores = Vec::with_capacity(refs.candidate_count());
    for cand in refs.candidates() {
        let score = if cfg.use_subcategories {
            let mut sum = 0.0;
            for sub in cand.subcategories {
                let dist = relation_distribution(sub, &agents, cfg.epsilon)?;
                sum += distribution_similarity(&region_dist, &dist)?;
            }
            if cand.subcategories.len() == votes {
                sum
            } else {
                sum * votes as f64 / cand.subcategories.len() as f64
            }
        } else {
            let dist = relation_distribution(cand.holistic, &agents, cfg.epsilon)?;
            distribution_similarity(&region_dist, &dist)?
        };
        scores.push(score);
    }
    Ok(Classification {
        label: argmax(&scores),
        scores,
        agents: agents.agent_ids,
    })
}

/// Nearest holistic reference by cosine similarity.
pub fn classify_naive(region: &[f32], refs: &ReferenceSet) -> Result<Classification, MatchError> {
    if region.len() != refs.dim() {
        return Err(MatchError::DimensionMismatch {
            expected: refs.dim(),
            actual: region.len(),
        });
    }
    let scores = refs
        .candidates()
        .map(|c| cosine(region, c.holistic))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Classification {
        label: argmax(&scores),
        scores,
        agents: Vec::new(),
    })
}

/// Which matcher to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Matcher {
    Naive,
    RelationAware(MatchConfig),
}

impl Matcher {
    pub fn classify(&self, region: &[f32], refs: &ReferenceSet) -> Result<Classification, MatchError> {
        match self {
            Matcher::Naive => classify_naive(region, refs),
            Matcher::RelationAware(cfg) => classify_region(region, refs, cfg),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CategoryReference;

    fn refs_from(holistic: &[Vec<f32>], background: Vec<f32>) -> ReferenceSet {
        let cats = holistic
            .iter()
            .enumerate()
            .map(|(i, h)| CategoryReference::new(i, h.clone(), vec![h.clone()], 1).unwrap())
            .collect();
        let names = (0..holistic.len()).map(|i| format!("c{i}")).collect();
        ReferenceSet::new(cats, names, background).unwrap()
    }

    fn unit(d: usize, i: usize) -> Vec<f32> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    #[test]
    fn cosine_cases() {
        assert!((cosine(&[0.3, 0.4], &[0.3, 0.4]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 2.0]).unwrap(), 0.0);
        let s = cosine_scores(&[1.0, 0.0], &[&[1.0, 1.0], &[-1.0, 0.0]]).unwrap();
        assert!((s[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6);
        assert_eq!(s[1], -1.0);
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(MatchError::ZeroNorm(_))));
        assert!(matches!(cosine(&[1.0], &[1.0, 0.0]), Err(MatchError::DimensionMismatch { .. })));
    }

    #[test]
    fn calibration() {
        assert_eq!(calibrate_scores(&[1.0, -1.0], 1e-6), vec![1.0, 1e-6]);
        let c = calibrate_scores(&[0.6, 0.2], 1e-6);
        assert!((c[0] - 0.8).abs() < 1e-15 && (c[1] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(MatchConfig::default().validate().is_ok());
        for bad in [
            MatchConfig { agent_count: 0, ..Default::default() },
            MatchConfig { agent_count: 7, ..Default::default() },
            MatchConfig { subcategory_count: 0, ..Default::default() },
            MatchConfig { epsilon: 0.0, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(MatchError::InvalidConfig(_))));
        }
    }

    #[test]
    fn agents_cover_everything_when_n_is_large() {
        let refs = refs_from(&[unit(4, 0), unit(4, 1), unit(4, 2)], unit(4, 3));
        let region = vec![0.1, 0.9, 0.5, 0.0];
        let agents = select_agents(&region, &refs, 6).unwrap();
        assert_eq!(agents.agent_ids, vec![2, 3, 1, 0]);
        assert_eq!(agents.agent_features[0], unit(4, 1));
    }

    #[test]
    fn agent_ties_go_to_lower_label() {
        let refs = refs_from(&[unit(3, 0), unit(3, 1)], unit(3, 2));
        let agents = select_agents(&[1.0, 1.0, 1.0], &refs, 2).unwrap();
        assert_eq!(agents.agent_ids, vec![0, 1]);
    }

    #[test]
    fn exact_match_wins() {
        let hol: Vec<Vec<f32>> = (0..5).map(|i| unit(6, i)).collect();
        let refs = refs_from(&hol, unit(6, 5));
        for cfg in [
            MatchConfig::default(),
            MatchConfig { use_subcategories: false, ..Default::default() },
        ] {
            let c = classify_region(&unit(6, 3), &refs, &cfg).unwrap();
            assert_eq!(c.label, 4);
            assert_eq!(c.agents[0], 4);
            assert!((c.scores[4] - 1.0).abs() < 1e-12);
        }
        assert_eq!(classify_naive(&unit(6, 3), &refs).unwrap().label, 4);
    }

    #[test]
    fn symmetric_tie_goes_to_lower_label() {
        let refs = refs_from(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]], vec![0.0, 0.0, 1.0]);
        let region = [1.0, 1.0, 0.2];
        let c = classify_region(&region, &refs, &MatchConfig::default()).unwrap();
        assert_eq!(c.label, 1);
        assert!((c.scores[1] - c.scores[2]).abs() < TIE_TOLERANCE);
        assert_eq!(classify_naive(&region, &refs).unwrap().label, 1);
    }

    #[test]
    fn naive_sign_comparison() {
        let refs = refs_from(&[vec![1.0, 0.0]], vec![-1.0, 0.0]);
        assert_eq!(classify_naive(&[1.0, 0.0], &refs).unwrap().label, 1);
        assert_eq!(classify_naive(&[-1.0, 0.2], &refs).unwrap().label, 0);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let refs = refs_from(&[vec![1.0, 0.0]], vec![0.0, 1.0]);
        assert!(matches!(
            classify_region(&[1.0, 0.0, 0.0], &refs, &MatchConfig::default()),
            Err(MatchError::DimensionMismatch { expected: 2, actual: 3 })
        ));
        assert!(matches!(
            classify_naive(&[1.0], &refs),
            Err(MatchError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn storage_order_does_not_matter() {
        let a = CategoryReference::new(0, vec![1.0, 0.2, 0.0], vec![vec![1.0, 0.1, 0.0], vec![0.9, 0.3, 0.1]], 2).unwrap();
        let b = CategoryReference::new(1, vec![0.1, 1.0, 0.3], vec![vec![0.0, 1.0, 0.2], vec![0.2, 0.9, 0.4]], 2).unwrap();
        let names = vec!["a".to_string(), "b".to_string()];
        let bg = vec![0.2, 0.2, 1.0];
        let r1 = ReferenceSet::new(vec![a.clone(), b.clone()], names.clone(), bg.clone()).unwrap();
        let r2 = ReferenceSet::new(vec![b, a], names, bg).unwrap();
        let region = [0.6, 0.7, 0.2];
        let cfg = MatchConfig::default();
        assert_eq!(classify_region(&region, &r1, &cfg).unwrap(), classify_region(&region, &r2, &cfg).unwrap());
    }

    #[test]
    fn background_vote_is_rescaled() {
        let a = CategoryReference::new(0, vec![1.0, 0.0], vec![vec![1.0, 0.0]; 3], 3).unwrap();
        let refs = ReferenceSet::new(vec![a], vec!["a".into()], vec![0.0, 1.0]).unwrap();
        let c = classify_region(&[0.0, 1.0], &refs, &MatchConfig::default()).unwrap();
        assert_eq!(c.label, 0);
        assert!((c.scores[0] - 3.0).abs() < 1e-12);
    }
}
