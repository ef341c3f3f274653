//! Seeded Lloyd's k-means.
//!
//! Initialization draws the first center from the seed and then repeatedly
//! takes the point farthest from all centers chosen so far. Empty clusters are
//! re-seeded with the point farthest from its own centroid. The loop stops at
//! an assignment fixpoint or after [`MAX_ITERATIONS`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ReferenceError;

pub const MAX_ITERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances recorded after every centroid update.
    pub objective_history: Vec<f64>,
    pub converged: bool,
}

impl KMeans {
    pub fn objective(&self) -> f64 {
        self.objective_history.last().copied().unwrap_or(0.0)
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

fn farthest_point_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let first = rng.random_range(0..n);
    let mut chosen = vec![false; n];
    chosen[first] = true;
    let mut centroids = vec![points[first].clone()];
    let mut min_dist: Vec<f64> = points.iter().map(|p| squared_distance(p, &points[first])).collect();
    while centroids.len() < k {
        let mut pick = None;
        for i in (0..n).filter(|&i| !chosen[i]) {
            if pick.is_none_or(|p: usize| min_dist[i] > min_dist[p]) {
                pick = Some(i);
            }
        }
        let pick = pick.expect("k <= n leaves an unchosen point");
        chosen[pick] = true;
        for (d, p) in min_dist.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, &points[pick]));
        }
        centroids.push(points[pick].clone());
    }
    centroids
}

fn objective(points: &[Vec<f64>], centroids: &[Vec<f64>], assignments: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| squared_distance(p, &centroids[a]))
        .sum()
}

/// Clusters `points` into `k` groups. Deterministic for a given `seed`.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeans, ReferenceError> {
    if k == 0 {
        return Err(ReferenceError::NoClusters);
    }
    if points.len() < k {
        return Err(ReferenceError::TooFewPoints {
            points: points.len(),
            clusters: k,
        });
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(ReferenceError::DimensionMismatch {
            expected: dim,
            actual: p.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = farthest_point_init(points, k, &mut rng);
    let mut previous: Option<Vec<usize>> = None;
    let mut history = Vec::new();
    let mut converged = false;

    for _ in 0..MAX_ITERATIONS {
        let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();

        let mut sizes = vec![0usize; k];
        for &a in &assignments {
            sizes[a] += 1;
        }
        for empty in 0..k {
            if sizes[empty] > 0 {
                continue;
            }
            let mut donor: Option<(usize, f64)> = None;
            for (i, p) in points.iter().enumerate() {
                let a = assignments[i];
                if sizes[a] < 2 {
                    continue;
                }
                let d = squared_distance(p, &centroids[a]);
                if donor.is_none_or(|(_, best)| d > best) {
                    donor = Some((i, d));
                }
            }
            let (i, _) = donor.expect("k <= n guarantees a cluster with two members");
            sizes[assignments[i]] -= 1;
            sizes[empty] = 1;
            assignments[i] = empty;
            centroids[empty] = points[i].clone();
        }

        if previous.as_ref() == Some(&assignments) {
            converged = true;
            break;
        }

        let mut sums = vec![vec![0.0; dim]; k];
        for (p, &a) in points.iter().zip(&assignments) {
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for (j, sum) in sums.into_iter().enumerate() {
            let n = sizes[j] as f64;
            centroids[j] = sum.into_iter().map(|s| s / n).collect();
        }
        history.push(objective(points, &centroids, &assignments));
        previous = Some(assignments);
    }

    Ok(KMeans {
        centroids,
        assignments: previous.unwrap_or_default(),
        objective_history: history,
        converged,
    })
}

/// Subcategory centroids for one category.
#[derive(Debug, Clone, PartialEq)]
pub struct Subcategories {
    pub centroids: Vec<Vec<f32>>,
    pub assignments: Vec<usize>,
    pub objective_history: Vec<f64>,
}

/// k-means over L2-normalized prototypes. On the unit sphere squared
/// Euclidean distance orders pairs exactly as cosine similarity does.
pub fn cluster_subcategories(
    prototypes: &[Vec<f64>],
    count: usize,
    seed: u64,
) -> Result<Subcategories, ReferenceError> {
    let mut normalized = Vec::with_capacity(prototypes.len());
    for (index, p) in prototypes.iter().enumerate() {
        let norm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(ReferenceError::ZeroNorm { index });
        }
        normalized.push(p.iter().map(|x| x / norm).collect::<Vec<_>>());
    }
    let result = kmeans(&normalized, count, seed)?;
    Ok(Subcategories {
        centroids: result
            .centroids
            .iter()
            .map(|c| c.iter().map(|&x| x as f32).collect())
            .collect(),
        assignments: result.assignments,
        objective_history: result.objective_history,
    })
}
