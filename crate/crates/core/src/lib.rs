//! Semi-supervised distance metric learning with graph-based triplet mining.
//!
//! The pipeline alternates two phases on top of a small embedding network:
//!
//! 1. build a kNN graph over the labeled examples plus a sampled partition of
//!    unlabeled ones, diffuse pairwise label agreement through the graph in
//!    closed form, and mine triplets from each node's affinity-sorted
//!    neighborhood ([`graph`], [`mining`]);
//! 2. minimize an angular softplus loss over those triplets, optimizing the
//!    orthonormal metric factor by Riemannian descent on the Grassmann
//!    manifold and the network weights by SGD ([`loss`], [`manifold`],
//!    [`net`], [`trainer`]).
//!
//! [`dataset`] holds loading/synthesis/splitting, [`eval`] clustering and
//! retrieval metrics. All randomness flows from explicit 64-bit seeds through
//! the ChaCha8 generator (see [`rng`]), so every run is reproducible.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod graph;
pub mod loss;
pub mod manifold;
pub mod mining;
pub mod net;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
