//! k-means with k-means++ seeding, weighted purity and inertia curves.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const DEFAULT_MAX_ITER: usize = 300;
pub const DEFAULT_RESTARTS: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Inertia after every assignment step, first one included.
    pub trace: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid per point (lowest index on ties) and the total cost.
fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut total = 0.0;
    let a = points
        .iter()
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (j, c) in centroids.iter().enumerate() {
                let d = sq_dist(p, c);
                if d < best.1 {
                    best = (j, d);
                }
            }
            total += best.1;
            best.0
        })
        .collect();
    (a, total)
}

/// Sum of squared distances from each point to its assigned centroid.
pub fn inertia(points: &[Vec<f64>], assignments: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| sq_dist(p, &centroids[a]))
        .sum()
}

fn check(points: &[Vec<f64>], k: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if points.len() < k {
        return Err(Error::InvalidArgument(format!("k-means needs N >= k, got N={} k={k}", points.len())));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::InvalidArgument("points have different dimensions".into()));
    }
    Ok(dim)
}

fn plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = d2.iter().rposition(|&d| d > 0.0).unwrap_or(0);
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && u < d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            idx
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[pick].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Lloyd iterations from the given centroids.
fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, max_iter: usize, seed: u64) -> ClusterResult {
    let k = centroids.len();
    let dim = points[0].len();
    let (mut assignments, first) = assign(points, &centroids);
    let mut trace = vec![first];
    let mut iterations = 0;
    for it in 1..=max_iter {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                let far = points
                    .iter()
                    .zip(&assignments)
                    .map(|(p, &a)| sq_dist(p, &centroids[a]))
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, d)| if d > best.1 { (i, d) } else { best })
                    .0;
                centroids[j] = points[far].clone();
                assignments[far] = j;
            }
        }
        let (next, cost) = assign(points, &centroids);
        trace.push(cost);
        iterations = it;
        if next == assignments {
            break;
        }
        assignments = next;
    }
    let inertia = inertia(points, &assignments, &centroids);
    ClusterResult {
        assignments,
        centroids,
        inertia,
        iterations,
        seed,
        trace,
    }
}

pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iter: usize) -> Result<ClusterResult> {
    check(points, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = plus_plus(points, k, &mut rng);
    Ok(lloyd(points, init, max_iter, seed))
}

/// Seed of restart `r` for `k` clusters under `master`.
pub fn restart_seed(master: u64, k: usize, r: usize) -> u64 {
    master
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add((k as u64) << 32 | r as u64)
}

/// Lowest-inertia result over `restarts` seeded runs; earlier runs win ties.
pub fn kmeans_best(points: &[Vec<f64>], k: usize, seed: u64, restarts: usize) -> Result<ClusterResult> {
    let mut best: Option<ClusterResult> = None;
    for r in 0..restarts.max(1) {
        let res = kmeans(points, k, restart_seed(seed, k, r), DEFAULT_MAX_ITER)?;
        if best.as_ref().is_none_or(|b| res.inertia < b.inertia) {
            best = Some(res);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Best inertia for every `k` in `k_min..=k_max`.
///
/// Besides the seeded restarts, each `k` also tries the previous best
/// centroids plus the point farthest from them, so the curve cannot rise.
pub fn inertia_curve(points: &[Vec<f64>], k_min: usize, k_max: usize, seed: u64, restarts: usize) -> Result<Vec<(usize, f64)>> {
    if k_min == 0 || k_min > k_max {
        return Err(Error::InvalidArgument(format!("bad k range {k_min}..={k_max}")));
    }
    check(points, k_max)?;
    let mut out = Vec::new();
    let mut prev: Option<ClusterResult> = None;
    for k in k_min..=k_max {
        let mut best = kmeans_best(points, k, seed, restarts)?;
        if let Some(p) = &prev {
            let (far, _) = points
                .iter()
                .zip(&p.assignments)
                .map(|(x, &a)| sq_dist(x, &p.centroids[a]))
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |b, (i, d)| if d > b.1 { (i, d) } else { b });
            let mut init = p.centroids.clone();
            init.push(points[far].clone());
            let warm = lloyd(points, init, DEFAULT_MAX_ITER, p.seed);
            if warm.inertia < best.inertia {
                best = warm;
            }
            if best.inertia > p.inertia {
                return Err(Error::InvalidArgument(format!(
                    "inertia rose from {} at k={} to {} at k={k}",
                    p.inertia,
                    k - 1,
                    best.inertia
                )));
            }
        }
        out.push((k, best.inertia));
        prev = Some(best);
    }
    Ok(out)
}

/// `(1/N) Σ_clusters max_label count(cluster, label)`.
pub fn weighted_purity(assignments: &[usize], labels: &[u8]) -> Result<f64> {
    if assignments.len() != labels.len() {
        return Err(Error::Misaligned(assignments.len(), labels.len()));
    }
    if assignments.is_empty() {
        return Err(Error::InvalidArgument("purity of an empty clustering".into()));
    }
    let mut counts: BTreeMap<usize, BTreeMap<u8, usize>> = BTreeMap::new();
    for (&a, &l) in assignments.iter().zip(labels) {
        *counts.entry(a).or_default().entry(l).or_default() += 1;
    }
    let majority: usize = counts.values().map(|c| c.values().copied().max().unwrap_or(0)).sum();
    Ok(majority as f64 / assignments.len() as f64)
}
