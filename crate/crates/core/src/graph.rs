//! Affinity graph over a partition: kNN structure, signed initial
//! affinities from label agreement, closed-form propagation, and
//! symmetrization.
//!
//! The propagation solves `(I - gamma*Q) X = (1 - gamma) * W0` with a dense
//! LU factorization instead of forming the inverse. Because every row of `Q`
//! sums to at most 1, `||gamma*Q||_inf <= gamma < 1`, the system is always
//! nonsingular and the solution equals the Neumann series
//! `(1-gamma) * sum_t gamma^t Q^t W0`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// k-nearest-neighbor structure: per node, the k neighbor indices sorted by
/// ascending distance (ties broken by smaller index), with the distances.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnGraph {
    pub k: usize,
    pub neighbors: Vec<Vec<usize>>,
    pub distances: Vec<Vec<f64>>,
}

/// All stages of the affinity computation for one partition.
#[derive(Debug, Clone)]
pub struct AffinityGraph {
    /// Node count N_L + N_p.
    pub n: usize,
    pub k: usize,
    pub gamma: f64,
    pub knn: KnnGraph,
    /// Signed initial affinities in {-1, 0, +1}, +1 on the diagonal.
    pub w0: DMatrix<f64>,
    /// Row-wise neighborhood weights: 1/k to each kNN, 0 elsewhere.
    pub q: DMatrix<f64>,
    /// Propagated affinities.
    pub wstar: DMatrix<f64>,
    /// Symmetrized propagated affinities, used for mining.
    pub w: DMatrix<f64>,
}

/// Builds the Euclidean kNN structure and the neighborhood matrix Q for
/// `points` (one row per node), self excluded.
pub fn build_knn(points: &DMatrix<f64>, k: usize) -> Result<(KnnGraph, DMatrix<f64>)> {
    let n = points.nrows();
    if k < 2 {
        return Err(Error::invalid("k must be >= 2"));
    }
    if n <= k {
        return Err(Error::invalid(format!(
            "need more than k={k} nodes, got {n}"
        )));
    }
    let mut neighbors = Vec::with_capacity(n);
    let mut distances = Vec::with_capacity(n);
    let mut q = DMatrix::zeros(n, n);
    let inv_k = 1.0 / k as f64;
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        cand.clear();
        let ri = points.row(i);
        for j in 0..n {
            if j == i {
                continue;
            }
            let d2 = (ri - points.row(j)).norm_squared();
            cand.push((d2, j));
        }
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut nb = Vec::with_capacity(k);
        let mut ds = Vec::with_capacity(k);
        for &(d2, j) in cand.iter().take(k) {
            nb.push(j);
            ds.push(d2.sqrt());
            q[(i, j)] = inv_k;
        }
        neighbors.push(nb);
        distances.push(ds);
    }
    Ok((
        KnnGraph {
            k,
            neighbors,
            distances,
        },
        q,
    ))
}

/// Signed initial affinity matrix from per-node optional labels:
/// +1 for same-label pairs and the diagonal, -1 for different-label pairs,
/// 0 wherever either endpoint is unlabeled.
pub fn initial_affinity(labels: &[Option<usize>]) -> DMatrix<f64> {
    let n = labels.len();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            match (labels[i], labels[j]) {
                (Some(a), Some(b)) if a == b => 1.0,
                (Some(_), Some(_)) => -1.0,
                _ => 0.0,
            }
        }
    })
}

/// Closed-form affinity propagation: solves `(I - gamma*Q) X = (1-gamma)*W0`
/// column-block-wise via dense LU with partial pivoting.
pub fn propagate(w0: &DMatrix<f64>, q: &DMatrix<f64>, gamma: f64) -> Result<DMatrix<f64>> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::invalid("gamma must be in (0, 1)"));
    }
    let n = w0.nrows();
    if w0.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(Error::invalid("W0 and Q must be square of equal size"));
    }
    let mut system = -gamma * q;
    for i in 0..n {
        system[(i, i)] += 1.0;
    }
    let rhs = w0 * (1.0 - gamma);
    let lu = system.lu();
    let solution = lu
        .solve(&rhs)
        .ok_or_else(|| Error::numerical("singular propagation system".to_string()))?;
    if solution.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical(
            "non-finite propagated affinity".to_string(),
        ));
    }
    Ok(solution)
}

/// Symmetrizes the propagated affinities: `W_ij = (W*_ij + W*_ji) / 2`.
/// Output is bit-symmetric because float addition is commutative.
pub fn symmetrize(wstar: &DMatrix<f64>) -> DMatrix<f64> {
    let n = wstar.nrows();
    debug_assert_eq!(n, wstar.ncols());
    DMatrix::from_fn(n, n, |i, j| 0.5 * (wstar[(i, j)] + wstar[(j, i)]))
}

impl AffinityGraph {
    /// Runs the whole stage: kNN on `points` (one row per node, expected to
    /// be the current unit-norm embeddings), initial affinities from
    /// `labels`, propagation, and symmetrization.
    pub fn build(
        points: &DMatrix<f64>,
        labels: &[Option<usize>],
        k: usize,
        gamma: f64,
    ) -> Result<Self> {
        let n = points.nrows();
        if labels.len() != n {
            return Err(Error::invalid("labels length must match node count"));
        }
        let (knn, q) = build_knn(points, k)?;
        let w0 = initial_affinity(labels);
        let wstar = propagate(&w0, &q, gamma)?;
        let w = symmetrize(&wstar);
        Ok(AffinityGraph {
            n,
            k,
            gamma,
            knn,
            w0,
            q,
            wstar,
            w,
        })
    }
}
