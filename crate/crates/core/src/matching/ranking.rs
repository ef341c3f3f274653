//! Plackett–Luce distributions over every ordering of a small agent set.
//!
//! A ranking `π` of `N` agents with positive scores `s` has probability
//!
//! ```text
//! P(π | s) = Π_k  s[π(k)] / Σ_{k' >= k} s[π(k')]
//! ```
//!
//! i.e. agents are drawn one at a time without replacement, each with
//! probability proportional to its score among those still left. All `N!`
//! orderings are enumerated in lexicographic order of agent positions, so
//! index 0 is the identity `(0, 1, …, N-1)` and the last index is the
//! reversal.

use std::sync::OnceLock;

use thiserror::Error;

/// Largest supported agent count (720 orderings).
pub const MAX_AGENTS: usize = 6;

/// Tolerance on the total probability mass.
pub const MASS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RankingError {
    #[error("ranking needs at least one agent")]
    NoAgents,
    #[error("{count} agents exceed the supported maximum of {max}")]
    TooManyAgents { count: usize, max: usize },
    #[error("score {value} at position {index} is not strictly positive")]
    NonPositiveScore { index: usize, value: f64 },
    #[error("{0:?} is not a permutation of the agent positions")]
    InvalidPermutation(Vec<usize>),
    #[error("distribution has {actual} entries, expected {expected}")]
    Length { expected: usize, actual: usize },
    #[error("invalid probability mass: {0}")]
    Mass(String),
    #[error("distributions are over different agents: {left:?} vs {right:?}")]
    AgentMismatch { left: Vec<u32>, right: Vec<u32> },
}

pub fn factorial(n: usize) -> usize {
    (1..=n).product()
}

fn lex_permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(n: usize, prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        for i in 0..n {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                go(n, prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::with_capacity(factorial(n));
    go(n, &mut Vec::with_capacity(n), &mut vec![false; n], &mut out);
    out
}

/// All orderings of `0..n` in lexicographic order; shared, built once.
pub fn permutations(n: usize) -> Result<&'static [Vec<usize>], RankingError> {
    static TABLES: OnceLock<Vec<Vec<Vec<usize>>>> = OnceLock::new();
    if n == 0 {
        return Err(RankingError::NoAgents);
    }
    if n > MAX_AGENTS {
        return Err(RankingError::TooManyAgents {
            count: n,
            max: MAX_AGENTS,
        });
    }
    let tables = TABLES.get_or_init(|| (0..=MAX_AGENTS).map(lex_permutations).collect());
    Ok(&tables[n])
}

fn check_scores(scores: &[f64]) -> Result<(), RankingError> {
    if scores.is_empty() {
        return Err(RankingError::NoAgents);
    }
    if scores.len() > MAX_AGENTS {
        return Err(RankingError::TooManyAgents {
            count: scores.len(),
            max: MAX_AGENTS,
        });
    }
    match scores.iter().position(|&s| !(s > 0.0 && s.is_finite())) {
        Some(index) => Err(RankingError::NonPositiveScore {
            index,
            value: scores[index],
        }),
        None => Ok(()),
    }
}

/// Probability of one ordering of the agents.
pub fn permutation_probability(scores: &[f64], perm: &[usize]) -> Result<f64, RankingError> {
    check_scores(scores)?;
    let n = scores.len();
    let mut seen = vec![false; n];
    if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
        return Err(RankingError::InvalidPermutation(perm.to_vec()));
    }
    // suffix[k] = Σ_{k' >= k} s[π(k')], summed without subtraction
    let mut suffix = vec![0.0; n + 1];
    for k in (0..n).rev() {
        suffix[k] = suffix[k + 1] + scores[perm[k]];
    }
    Ok(perm
        .iter()
        .enumerate()
        .map(|(k, &p)| scores[p] / suffix[k])
        .product())
}

/// Probabilities of every ordering, in lexicographic order.
pub fn ranking_probabilities(scores: &[f64]) -> Result<Vec<f64>, RankingError> {
    fn go(scores: &[f64], used: &mut [bool], depth: usize, prob: f64, out: &mut Vec<f64>) {
        if depth == scores.len() {
            out.push(prob);
            return;
        }
        let remaining: f64 = scores
            .iter()
            .zip(used.iter())
            .filter(|(_, &u)| !u)
            .map(|(s, _)| s)
            .sum();
        for i in 0..scores.len() {
            if !used[i] {
                used[i] = true;
                go(scores, used, depth + 1, prob * (scores[i] / remaining), out);
                used[i] = false;
            }
        }
    }
    check_scores(scores)?;
    let mut out = Vec::with_capacity(factorial(scores.len()));
    go(scores, &mut vec![false; scores.len()], 0, 1.0, &mut out);
    Ok(out)
}

/// A probability vector over all orderings of a fixed agent list.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingDistribution {
    agent_ids: Vec<u32>,
    probs: Vec<f64>,
}

impl RankingDistribution {
    pub fn new(agent_ids: Vec<u32>, probs: Vec<f64>) -> Result<Self, RankingError> {
        let n = agent_ids.len();
        permutations(n)?;
        if probs.len() != factorial(n) {
            return Err(RankingError::Length {
                expected: factorial(n),
                actual: probs.len(),
            });
        }
        if let Some(p) = probs.iter().find(|p| !(**p >= 0.0 && p.is_finite())) {
            return Err(RankingError::Mass(format!("entry {p} is not a probability")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(RankingError::Mass(format!("total {total} differs from 1")));
        }
        Ok(Self { agent_ids, probs })
    }

    /// Plackett–Luce distribution of `scores[i]` for agent `agent_ids[i]`.
    pub fn from_scores(agent_ids: Vec<u32>, scores: &[f64]) -> Result<Self, RankingError> {
        if agent_ids.len() != scores.len() {
            return Err(RankingError::Length {
                expected: agent_ids.len(),
                actual: scores.len(),
            });
        }
        Self::new(agent_ids, ranking_probabilities(scores)?)
    }

    pub fn agent_ids(&self) -> &[u32] {
        &self.agent_ids
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Probability that each agent is ranked first.
    pub fn top1_marginals(&self) -> Vec<f64> {
        let n = self.agent_ids.len();
        let perms = permutations(n).expect("validated at construction");
        let mut out = vec![0.0; n];
        for (perm, p) in perms.iter().zip(&self.probs) {
            out[perm[0]] += p;
        }
        out
    }
}

/// Cosine similarity between two distributions over the same agents.
pub fn distribution_similarity(a: &RankingDistribution, b: &RankingDistribution) -> Result<f64, RankingError> {
    if a.agent_ids != b.agent_ids {
        return Err(RankingError::AgentMismatch {
            left: a.agent_ids.clone(),
            right: b.agent_ids.clone(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.probs.iter().zip(&b.probs) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}
