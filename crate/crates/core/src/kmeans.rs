//! Seeded k-means (k-means++ seeding, Lloyd iterations) over small point sets.

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 100;
/// Relative objective improvement below which iteration stops.
pub const TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    /// Index into `centroids` for each input point.
    pub assignments: Vec<usize>,
    /// Weighted sum of squared point-to-centroid distances.
    pub objective: f64,
    pub iterations: usize,
}

impl ClusterModel {
    /// Total weight assigned to each cluster.
    pub fn cluster_weights(&self, weights: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.k];
        for (&a, &w) in self.assignments.iter().zip(weights) {
            out[a] += w;
        }
        out
    }
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
pub fn nearest(centroids: &[Vec<f64>], p: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = squared_distance(c, p);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<ClusterModel> {
    let weights = vec![1.0; points.len()];
    kmeans_weighted(points, &weights, k, seed)
}

/// k-means where point `i` stands for `weights[i]` identical observations.
///
/// When `k` is at least the number of distinct points, each distinct point is
/// its own centroid and the surplus centroids repeat them (and stay empty under
/// the lowest-index tie rule).
pub fn kmeans_weighted(
    points: &[Vec<f64>],
    weights: &[f64],
    k: usize,
    seed: u64,
) -> Result<ClusterModel> {
    if points.is_empty() {
        return Err(Error::Empty("k-means needs at least one point".into()));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if weights.len() != points.len() {
        return Err(Error::DimensionMismatch {
            expected: points.len(),
            actual: weights.len(),
        });
    }
    if weights.iter().any(|&w| !w.is_finite() || w <= 0.0) {
        return Err(Error::InvalidArgument("weights must be positive and finite".into()));
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: p.len(),
        });
    }

    let mut distinct: Vec<&Vec<f64>> = Vec::new();
    for p in points {
        if !distinct.contains(&p) {
            distinct.push(p);
            if distinct.len() > k {
                break;
            }
        }
    }
    if distinct.len() <= k {
        let centroids: Vec<Vec<f64>> = (0..k).map(|i| distinct[i % distinct.len()].clone()).collect();
        let (assignments, objective) = assign(points, weights, &centroids);
        return Ok(ClusterModel {
            k,
            centroids,
            assignments,
            objective,
            iterations: 0,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(points, weights, k, &mut rng);
    let (mut assignments, mut objective) = assign(points, weights, &centroids);
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        centroids = update(points, weights, &assignments, &centroids);
        let (next, next_objective) = assign(points, weights, &centroids);
        debug_assert!(
            next_objective <= objective * (1.0 + 1e-12) + 1e-12,
            "k-means objective increased: {objective} -> {next_objective}"
        );
        let converged =
            next == assignments || objective - next_objective <= TOLERANCE * objective;
        assignments = next;
        objective = next_objective;
        if converged {
            break;
        }
    }
    Ok(ClusterModel {
        k,
        centroids,
        assignments,
        objective,
        iterations,
    })
}

fn plus_plus_init(
    points: &[Vec<f64>],
    weights: &[f64],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f64>> {
    let first = WeightedIndex::new(weights).expect("positive weights").sample(rng);
    let mut centroids = vec![points[first].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| squared_distance(p, &points[first])).collect();
    while centroids.len() < k {
        let scores: Vec<f64> = d2.iter().zip(weights).map(|(d, w)| d * w).collect();
        // more distinct points than k guarantees some positive score
        let pick = WeightedIndex::new(&scores).expect("positive score").sample(rng);
        centroids.push(points[pick].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, &points[pick]));
        }
    }
    centroids
}

fn assign(points: &[Vec<f64>], weights: &[f64], centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut objective = 0.0;
    let assignments = points
        .iter()
        .zip(weights)
        .map(|(p, w)| {
            let (i, d) = nearest(centroids, p);
            objective += w * d;
            i
        })
        .collect();
    (assignments, objective)
}

/// Weighted means; an empty cluster takes the point farthest from its
/// current centroid.
fn update(
    points: &[Vec<f64>],
    weights: &[f64],
    assignments: &[usize],
    old: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let k = old.len();
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut mass = vec![0.0; k];
    for ((p, &w), &a) in points.iter().zip(weights).zip(assignments) {
        mass[a] += w;
        for (s, x) in sums[a].iter_mut().zip(p) {
            *s += w * x;
        }
    }
    let mut taken = vec![false; points.len()];
    let mut centroids = Vec::with_capacity(k);
    for c in 0..k {
        if mass[c] > 0.0 {
            centroids.push(sums[c].iter().map(|s| s / mass[c]).collect());
            continue;
        }
        let far = points
            .iter()
            .zip(assignments)
            .enumerate()
            .filter(|(i, _)| !taken[*i])
            .map(|(i, (p, &a))| (i, squared_distance(p, &old[a])))
            .fold(None::<(usize, f64)>, |best, cur| match best {
                Some(b) if b.1 >= cur.1 => Some(b),
                _ => Some(cur),
            });
        match far {
            Some((i, _)) => {
                taken[i] = true;
                centroids.push(points[i].clone());
            }
            None => centroids.push(old[c].clone()),
        }
    }
    centroids
}
