//! Similarity-computation-free approximate nearest neighbor search for
//! ultra-high dimensional sparse binary data.
//!
//! The index hashes each vector once with densified one-permutation minwise
//! hashing (K hashes per table, L tables), stores identifiers in fixed-size
//! reservoir-sampled buckets, and answers queries by ranking candidates on
//! how often they collide with the query across the L tables. No
//! query-to-candidate similarity is ever evaluated in the query path; exact
//! Jaccard/cosine live in [`sparse`] solely for ground truth and evaluation.

pub mod doph;
pub mod error;
pub mod eval;
pub mod index;
pub mod index_io;
pub mod query;
pub mod sparse;
pub mod synth;

pub use doph::{HashParams, Signature};
pub use error::{FlashError, Result};
pub use eval::{GroundTruth, MetricsReport};
pub use index::{FlashIndex, IndexConfig, Reservoir};
pub use query::{CandidateArray, KnnGraph, QueryResult};
pub use sparse::{Dataset, Metric, SparseVector};

/// Scalar type used for similarity scores and metrics at the crate surface.
/// The similarity and metric functions themselves are generic over
/// [`num_traits::Float`].
pub type Score = f64;

/// Deterministic 64-bit mixer (splitmix64 finalizer). All seed derivation in
/// the crate flows through this so that a single root seed reproduces every
/// random stream.
#[inline]
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent sub-seed from a root seed and a stream tag.
#[inline]
pub(crate) fn derive_seed(root: u64, stream: u64) -> u64 {
    mix64(root ^ mix64(stream.wrapping_add(0x9e37_79b9_7f4a_7c15)))
}
