//! Clustering and retrieval metrics on embeddings: seeded k-means with
//! k-means++ restarts, normalized mutual information, and Recall@K.
//!
//! Points are given one per row. NMI uses natural-log entropies and the
//! arithmetic-mean normalization `100 * I(A;Y) / ((H(A)+H(Y))/2)`; the
//! ratio itself is log-base invariant.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

/// Metrics of one evaluation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    /// Normalized mutual information, percent.
    pub nmi: f64,
    /// Recall@K in percent, keyed by K (sorted).
    pub recall: BTreeMap<usize, f64>,
    pub n_test: usize,
    pub seed: u64,
}

/// Restart and iteration budget for [`kmeans`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KmeansConfig {
    pub max_iter: usize,
    pub n_init: usize,
}

impl Default for KmeansConfig {
    fn default() -> Self {
        KmeansConfig {
            max_iter: 300,
            n_init: 10,
        }
    }
}

fn squared_distance(points: &DMatrix<f64>, i: usize, centroid: &[f64]) -> f64 {
    let mut s = 0.0;
    for (j, &c) in centroid.iter().enumerate() {
        let d = points[(i, j)] - c;
        s += d * d;
    }
    s
}

/// k-means++ seeding: first centroid uniform, the rest proportional to the
/// squared distance to the nearest chosen centroid.
fn kmeans_pp_init(points: &DMatrix<f64>, k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = points.nrows();
    let d = points.ncols();
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    let first = rng.random_range(0..n);
    centroids.push((0..d).map(|j| points[(first, j)]).collect());
    let mut dist2: Vec<f64> = (0..n)
        .map(|i| squared_distance(points, i, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = dist2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &w) in dist2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            // all remaining mass at chosen centroids (duplicate points):
            // take the first point not yet selected as a centroid
            (0..n)
                .find(|&i| {
                    !centroids
                        .iter()
                        .any(|c| squared_distance(points, i, c) == 0.0)
                })
                .unwrap_or(0)
        };
        let new_c: Vec<f64> = (0..d).map(|j| points[(pick, j)]).collect();
        for (i, d2) in dist2.iter_mut().enumerate() {
            *d2 = d2.min(squared_distance(points, i, &new_c));
        }
        centroids.push(new_c);
    }
    centroids
}

fn lloyd(
    points: &DMatrix<f64>,
    mut centroids: Vec<Vec<f64>>,
    max_iter: usize,
) -> (Vec<usize>, f64) {
    let n = points.nrows();
    let d = points.ncols();
    let k = centroids.len();
    let mut assign = vec![0usize; n];
    for _ in 0..max_iter {
        let mut changed = false;
        for (i, slot) in assign.iter_mut().enumerate() {
            let mut best = 0usize;
            let mut best_d = squared_distance(points, i, &centroids[0]);
            for (c, centroid) in centroids.iter().enumerate().skip(1) {
                let dd = squared_distance(points, i, centroid);
                if dd < best_d {
                    best_d = dd;
                    best = c;
                }
            }
            if *slot != best {
                *slot = best;
                changed = true;
            }
        }
        // recompute means; empty clusters keep their previous centroid
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assign[i]] += 1;
            for j in 0..d {
                sums[assign[i]][j] += points[(i, j)];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..d {
                    centroids[c][j] = sums[c][j] / counts[c] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = (0..n)
        .map(|i| squared_distance(points, i, &centroids[assign[i]]))
        .sum();
    (assign, inertia)
}

/// Seeded k-means over row-points: best-inertia run among `n_init`
/// k-means++ initializations, Lloyd iterations bounded by `max_iter`.
pub fn kmeans(
    points: &DMatrix<f64>,
    k: usize,
    seed: u64,
    cfg: &KmeansConfig,
) -> Result<Vec<usize>> {
    let n = points.nrows();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k = {k} must be in 1..={n}")));
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for init in 0..cfg.n_init.max(1) {
        let mut rng = rng_from_seed(derive_seed(seed, init as u64));
        let centroids = kmeans_pp_init(points, k, &mut rng);
        let (assign, inertia) = lloyd(points, centroids, cfg.max_iter);
        let better = match &best {
            None => true,
            Some((_, best_inertia)) => inertia < *best_inertia,
        };
        if better {
            best = Some((assign, inertia));
        }
    }
    Ok(best.expect("n_init >= 1").0)
}

/// Natural-log entropy of a discrete count distribution.
fn entropy(counts: &BTreeMap<usize, usize>, total: f64) -> f64 {
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information between a cluster assignment and labels,
/// in percent: `100 * I(A;Y) / ((H(A)+H(Y))/2)`; 0/0 is defined as 0.
pub fn nmi(assignment: &[usize], labels: &[usize]) -> Result<f64> {
    if assignment.len() != labels.len() {
        return Err(Error::invalid("assignment/label length mismatch"));
    }
    if assignment.is_empty() {
        return Err(Error::invalid("empty inputs"));
    }
    let n = assignment.len() as f64;
    let mut a_counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut y_counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (&a, &y) in assignment.iter().zip(labels) {
        *a_counts.entry(a).or_default() += 1;
        *y_counts.entry(y).or_default() += 1;
        *joint.entry((a, y)).or_default() += 1;
    }
    let mut mutual = 0.0;
    for (&(a, y), &c) in &joint {
        let p_joint = c as f64 / n;
        let p_a = a_counts[&a] as f64 / n;
        let p_y = y_counts[&y] as f64 / n;
        mutual += p_joint * (p_joint / (p_a * p_y)).ln();
    }
    let denom = 0.5 * (entropy(&a_counts, n) + entropy(&y_counts, n));
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(100.0 * mutual / denom)
}

/// Recall@K for each requested K: the percentage of points whose K nearest
/// Euclidean neighbors (self excluded, distance ties by ascending index)
/// include at least one point of the same class.
pub fn recall_at_k(
    embeddings: &DMatrix<f64>,
    labels: &[usize],
    ks: &[usize],
) -> Result<BTreeMap<usize, f64>> {
    let n = embeddings.nrows();
    if labels.len() != n {
        return Err(Error::invalid("embeddings/labels length mismatch"));
    }
    let max_k = ks.iter().copied().max().unwrap_or(0);
    if max_k == 0 {
        return Err(Error::invalid("need at least one K >= 1"));
    }
    if n < max_k + 1 {
        return Err(Error::invalid(format!(
            "need at least K+1 = {} points, got {n}",
            max_k + 1
        )));
    }
    let mut hits: BTreeMap<usize, usize> = ks.iter().map(|&k| (k, 0)).collect();
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        cand.clear();
        for j in 0..n {
            if j != i {
                let d2 = (embeddings.row(i) - embeddings.row(j)).norm_squared();
                cand.push((d2, j));
            }
        }
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        // rank of the first same-class neighbor, if within max_k
        let first_same = cand
            .iter()
            .take(max_k)
            .position(|&(_, j)| labels[j] == labels[i]);
        if let Some(rank) = first_same {
            for (&k, hit) in hits.iter_mut() {
                if rank < k {
                    *hit += 1;
                }
            }
        }
    }
    Ok(hits
        .into_iter()
        .map(|(k, h)| (k, 100.0 * h as f64 / n as f64))
        .collect())
}

/// Convenience wrapper: k-means with as many clusters as distinct labels,
/// NMI of the assignment, and Recall@K over `ks`.
pub fn evaluate_embeddings(
    embeddings: &DMatrix<f64>,
    labels: &[usize],
    ks: &[usize],
    seed: u64,
) -> Result<EvalReport> {
    let mut distinct: Vec<usize> = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let k = distinct.len();
    let assignment = kmeans(embeddings, k, seed, &KmeansConfig::default())?;
    let nmi_value = nmi(&assignment, labels)?;
    let recall = recall_at_k(embeddings, labels, ks)?;
    Ok(EvalReport {
        nmi: nmi_value,
        recall,
        n_test: labels.len(),
        seed,
    })
}
