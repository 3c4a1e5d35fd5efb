//! Triplet mining from affinity-sorted neighborhoods.
//!
//! For an anchor, its k graph neighbors are reordered by descending
//! symmetric affinity; the first half act as positives, the second half as
//! negatives, and the j-th positive is paired with the j-th negative. Mining
//! is deterministic: affinity ties fall back to ascending node index.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::graph::KnnGraph;
use crate::rng::rng_from_seed;

/// An (anchor, positive, negative) index triple into the partition's nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// One mini-batch of triplets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripletBatch {
    pub triplets: Vec<Triplet>,
}

impl TripletBatch {
    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }
}

/// How anchors are chosen. Only the every-node strategy is implemented;
/// the enum keeps the extension point explicit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AnchorSelection {
    #[default]
    AllNodes,
}

/// Mining options: anchor strategy plus an optional minimum affinity gap
/// `W(a,p) - W(a,n)` under which a triplet is dropped (0 keeps everything).
#[derive(Debug, Clone, Copy)]
pub struct MiningConfig {
    pub anchors: AnchorSelection,
    pub min_affinity_gap: f64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            anchors: AnchorSelection::AllNodes,
            min_affinity_gap: 0.0,
        }
    }
}

/// The k neighbors of `anchor` ordered by descending `w[anchor, .]`,
/// ties broken by ascending index.
pub fn sorted_neighborhood(w: &DMatrix<f64>, knn: &KnnGraph, anchor: usize) -> Vec<usize> {
    let mut order: Vec<usize> = knn.neighbors[anchor].clone();
    order.sort_by(|&a, &b| w[(anchor, b)].total_cmp(&w[(anchor, a)]).then(a.cmp(&b)));
    order
}

/// Mines `floor(k/2)` triplets per anchor: positives are the top half of the
/// sorted neighborhood, negatives the next half, paired positionally.
pub fn mine_triplets(w: &DMatrix<f64>, knn: &KnnGraph, anchors: &[usize]) -> Result<Vec<Triplet>> {
    mine_triplets_with(w, knn, anchors, &MiningConfig::default())
}

/// [`mine_triplets`] with explicit options.
pub fn mine_triplets_with(
    w: &DMatrix<f64>,
    knn: &KnnGraph,
    anchors: &[usize],
    cfg: &MiningConfig,
) -> Result<Vec<Triplet>> {
    if knn.k < 2 {
        return Err(Error::invalid("mining requires k >= 2"));
    }
    let AnchorSelection::AllNodes = cfg.anchors;
    let half = knn.k / 2;
    let mut out = Vec::with_capacity(anchors.len() * half);
    for &a in anchors {
        let order = sorted_neighborhood(w, knn, a);
        for j in 0..half {
            let p = order[j];
            let n = order[half + j];
            if w[(a, p)] - w[(a, n)] >= cfg.min_affinity_gap {
                out.push(Triplet {
                    anchor: a,
                    positive: p,
                    negative: n,
                });
            }
        }
    }
    Ok(out)
}

/// Shuffles triplets by `seed` and packs them into `floor(len / t_b)` full
/// batches; the remainder is dropped.
pub fn batch_triplets(triplets: &[Triplet], t_b: usize, seed: u64) -> Result<Vec<TripletBatch>> {
    if t_b < 1 {
        return Err(Error::invalid("t_b must be >= 1"));
    }
    let mut shuffled: Vec<Triplet> = triplets.to_vec();
    let mut rng = rng_from_seed(seed);
    use rand::Rng;
    // Fisher–Yates
    for i in (1..shuffled.len()).rev() {
        let j = rng.random_range(0..=i);
        shuffled.swap(i, j);
    }
    let n_batches = shuffled.len() / t_b;
    Ok((0..n_batches)
        .map(|b| TripletBatch {
            triplets: shuffled[b * t_b..(b + 1) * t_b].to_vec(),
        })
        .collect())
}
