//! Partitioning the distinct rows of a log.
//!
//! Both backends cluster distinct query vectors and weight each by its
//! multiplicity, so duplicated queries pull harder without enlarging the
//! problem.

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LogrError, Result};
use crate::log::Log;

pub const DEFAULT_MAX_ROWS: usize = 5_000;
pub const DEFAULT_KMEANS_ITERS: usize = 300;
pub const DEFAULT_KMEANS_RESTARTS: usize = 10;

/// Cluster id for each distinct row, dense in `0..k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    assignments: Vec<usize>,
    k: usize,
}

impl Partition {
    /// Relabels clusters densely in order of first appearance, which drops
    /// empty clusters.
    pub fn from_labels(labels: &[usize]) -> Self {
        let mut map = std::collections::HashMap::new();
        let assignments = labels
            .iter()
            .map(|l| {
                let next = map.len();
                *map.entry(*l).or_insert(next)
            })
            .collect();
        Partition {
            assignments,
            k: map.len(),
        }
    }

    pub fn single(rows: usize) -> Self {
        Self::from_labels(&vec![0; rows])
    }

    pub fn singletons(rows: usize) -> Self {
        Self::from_labels(&(0..rows).collect::<Vec<_>>())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    /// Row indices of each cluster, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (row, &c) in self.assignments.iter().enumerate() {
            out[c].push(row);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Kmeans,
    Hamming,
}

impl std::str::FromStr for Method {
    type Err = LogrError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kmeans" => Ok(Method::Kmeans),
            "hamming" => Ok(Method::Hamming),
            other => Err(LogrError::InvalidArgument(format!(
                "unknown clustering method `{other}` (expected kmeans or hamming)"
            ))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Kmeans => "kmeans",
            Method::Hamming => "hamming",
        })
    }
}

/// Dispatches to the chosen backend with default iteration and row caps.
pub fn cluster(log: &Log, k: usize, method: Method, seed: u64) -> Result<Partition> {
    match method {
        Method::Kmeans => kmeans(log, k, seed, DEFAULT_KMEANS_ITERS),
        Method::Hamming => hamming_agglomerative(log, k, DEFAULT_MAX_ROWS),
    }
}

fn check_k(log: &Log, k: usize) -> Result<()> {
    if k == 0 {
        return Err(LogrError::InvalidArgument("k must be at least 1".into()));
    }
    if k > log.distinct() {
        return Err(LogrError::KTooLarge {
            k,
            rows: log.distinct(),
        });
    }
    Ok(())
}

fn sq_dist(x: &[f64], c: &[f64]) -> f64 {
    x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Weighted Lloyd iterations from [`DEFAULT_KMEANS_RESTARTS`] k-means++
/// starts, keeping the run with the lowest weighted inertia.
pub fn kmeans(log: &Log, k: usize, seed: u64, max_iters: usize) -> Result<Partition> {
    kmeans_with_restarts(log, k, seed, max_iters, DEFAULT_KMEANS_RESTARTS)
}

pub fn kmeans_with_restarts(
    log: &Log,
    k: usize,
    seed: u64,
    max_iters: usize,
    restarts: usize,
) -> Result<Partition> {
    check_k(log, k)?;
    let n = log.width();
    let points: Vec<Vec<f64>> = log
        .rows()
        .iter()
        .map(|(q, _)| (0..n).map(|i| if q.get(i) { 1.0 } else { 0.0 }).collect())
        .collect();
    let weights: Vec<f64> = log.rows().iter().map(|(_, m)| *m as f64).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..restarts.max(1) {
        let run = lloyd(&points, &weights, k, &mut rng, max_iters);
        if best.as_ref().is_none_or(|(_, inertia)| run.1 < *inertia) {
            best = Some(run);
        }
    }
    let (labels, _) = best.expect("at least one restart");
    Ok(Partition::from_labels(&labels))
}

/// One k-means++ seeding and Lloyd run; returns labels and weighted inertia.
fn lloyd(
    points: &[Vec<f64>],
    weights: &[f64],
    k: usize,
    rng: &mut ChaCha8Rng,
    max_iters: usize,
) -> (Vec<usize>, f64) {
    let r = points.len();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    let first = WeightedIndex::new(weights)
        .expect("multiplicities are positive")
        .sample(rng);
    centers.push(points[first].clone());
    let mut nearest: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let scores: Vec<f64> = nearest.iter().zip(weights).map(|(d, w)| d * w).collect();
        let pick = match WeightedIndex::new(&scores) {
            Ok(dist) => dist.sample(rng),
            // every remaining point coincides with a center
            Err(_) => (0..r).find(|&i| nearest[i] > 0.0).unwrap_or(0),
        };
        centers.push(points[pick].clone());
        for (i, p) in points.iter().enumerate() {
            nearest[i] = nearest[i].min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }

    let mut labels = vec![usize::MAX; r];
    for _ in 0..max_iters.max(1) {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let d = sq_dist(p, center);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }

        // Re-seed empty clusters at the row farthest from its own centroid.
        let mut mass = vec![0.0; k];
        for (i, &l) in labels.iter().enumerate() {
            mass[l] += weights[i];
        }
        for c in 0..k {
            if mass[c] > 0.0 {
                continue;
            }
            let far = (0..r)
                .filter(|&i| mass[labels[i]] > weights[i])
                .max_by(|&a, &b| {
                    sq_dist(&points[a], &centers[labels[a]])
                        .total_cmp(&sq_dist(&points[b], &centers[labels[b]]))
                        .then(b.cmp(&a))
                });
            if let Some(i) = far {
                mass[labels[i]] -= weights[i];
                labels[i] = c;
                mass[c] = weights[i];
                changed = true;
            }
        }

        for (c, center) in centers.iter_mut().enumerate() {
            if mass[c] == 0.0 {
                continue;
            }
            center.iter_mut().for_each(|v| *v = 0.0);
            for (i, p) in points.iter().enumerate() {
                if labels[i] == c {
                    for (v, x) in center.iter_mut().zip(p) {
                        *v += weights[i] * x;
                    }
                }
            }
            center.iter_mut().for_each(|v| *v /= mass[c]);
        }
        if !changed {
            break;
        }
    }
    let inertia = points
        .iter()
        .zip(weights)
        .zip(&labels)
        .map(|((p, w), &l)| w * sq_dist(p, &centers[l]))
        .sum();
    (labels, inertia)
}

/// Average-linkage agglomerative clustering under normalized Hamming
/// distance, merging until `k` clusters remain. Ties go to the lowest
/// cluster pair.
pub fn hamming_agglomerative(log: &Log, k: usize, max_rows: usize) -> Result<Partition> {
    check_k(log, k)?;
    let r = log.distinct();
    if r > max_rows {
        return Err(LogrError::TooManyRows {
            rows: r,
            cap: max_rows,
        });
    }
    let n = log.width().max(1) as f64;
    let rows = log.rows();
    let mut dist = Condensed::new(r);
    for i in 0..r {
        for j in (i + 1)..r {
            let d = rows[i].0.hamming(&rows[j].0)? as f64 / n;
            dist.set(i, j, d);
        }
    }

    let mut mass: Vec<f64> = rows.iter().map(|(_, m)| *m as f64).collect();
    let mut active = vec![true; r];
    let mut labels: Vec<usize> = (0..r).collect();
    // nn[i] = closest active j > i
    let mut nn: Vec<Option<(f64, usize)>> = (0..r).map(|i| nearest_after(&dist, &active, i)).collect();

    let mut clusters = r;
    while clusters > k {
        let (i, j) = {
            let mut best: Option<(f64, usize, usize)> = None;
            for i in 0..r {
                if !active[i] {
                    continue;
                }
                if let Some((d, j)) = nn[i] {
                    if best.is_none_or(|(bd, _, _)| d < bd) {
                        best = Some((d, i, j));
                    }
                }
            }
            let (_, i, j) = best.expect("more than k clusters remain");
            (i, j)
        };
        // merge j into i
        let (wi, wj) = (mass[i], mass[j]);
        for a in 0..r {
            if !active[a] || a == i || a == j {
                continue;
            }
            let d = (wi * dist.get(a, i) + wj * dist.get(a, j)) / (wi + wj);
            dist.set(a, i, d);
        }
        mass[i] += wj;
        active[j] = false;
        for l in labels.iter_mut() {
            if *l == j {
                *l = i;
            }
        }
        clusters -= 1;

        for a in 0..r {
            if !active[a] {
                continue;
            }
            let stale = match nn[a] {
                Some((_, b)) => b == i || b == j || a == i,
                None => a == i,
            };
            if stale {
                nn[a] = nearest_after(&dist, &active, a);
            } else if a < i {
                let d = dist.get(a, i);
                if let Some((bd, b)) = nn[a] {
                    if d < bd || (d == bd && i < b) {
                        nn[a] = Some((d, i));
                    }
                }
            }
        }
    }
    Ok(Partition::from_labels(&labels))
}

fn nearest_after(dist: &Condensed, active: &[bool], i: usize) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for j in (i + 1)..active.len() {
        if active[j] {
            let d = dist.get(i, j);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, j));
            }
        }
    }
    best
}

/// Upper-triangular distance storage.
struct Condensed {
    r: usize,
    data: Vec<f64>,
}

impl Condensed {
    fn new(r: usize) -> Self {
        Condensed {
            r,
            data: vec![0.0; r * r.saturating_sub(1) / 2],
        }
    }

    fn offset(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        i * (2 * self.r - i - 1) / 2 + (j - i - 1)
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.offset(i, j)]
    }

    fn set(&mut self, i: usize, j: usize, d: f64) {
        let o = self.offset(i, j);
        self.data[o] = d;
    }
}
