//! Planted-model synthetic data: clustered sparse binary vectors with a
//! controlled within-cluster Jaccard level, plus a pair generator with an
//! exact planted Jaccard. Both drive the Monte-Carlo oracles in the tests
//! and the `gen-synth` CLI command.

use std::collections::HashSet;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{FlashError, Result};
use crate::sparse::{Dataset, SparseVector};

/// Parameters for the planted-cluster generator. Cluster j owns the disjoint
/// index range [j·D/clusters, (j+1)·D/clusters); each vector is its cluster's
/// shared core plus individual indices from the same range, so cross-cluster
/// Jaccard is exactly 0 and within-cluster Jaccard concentrates near
/// `overlap`.
#[derive(Debug, Clone, Copy)]
pub struct SynthParams {
    pub n: usize,
    pub dimension: u32,
    pub nnz: usize,
    pub clusters: usize,
    pub overlap: f64,
    pub seed: u64,
}

impl SynthParams {
    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.dimension == 0 || self.nnz == 0 || self.clusters == 0 {
            return Err(FlashError::InvalidConfig(
                "n, dimension, nnz and clusters must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return Err(FlashError::InvalidConfig("overlap must be in [0, 1]".into()));
        }
        let range = self.dimension as usize / self.clusters;
        if self.nnz > range {
            return Err(FlashError::InvalidConfig(format!(
                "nnz {} exceeds per-cluster index range {range}",
                self.nnz
            )));
        }
        Ok(())
    }

    /// Shared-core size giving expected within-cluster Jaccard ≈ overlap:
    /// two cluster mates share s core indices out of 2·nnz − s total.
    pub fn core_size(&self) -> usize {
        ((2.0 * self.nnz as f64 * self.overlap) / (1.0 + self.overlap)).round() as usize
    }

    /// Analytic within-cluster Jaccard implied by the rounded core size.
    pub fn expected_within_jaccard(&self) -> f64 {
        let s = self.core_size() as f64;
        s / (2.0 * self.nnz as f64 - s)
    }
}

fn sample_distinct(rng: &mut impl Rng, lo: u32, hi: u32, n: usize, taken: &HashSet<u32>) -> Vec<u32> {
    let mut out = HashSet::with_capacity(n);
    while out.len() < n {
        let v = rng.gen_range(lo..hi);
        if !taken.contains(&v) {
            out.insert(v);
        }
    }
    out.into_iter().collect()
}

/// Generate the planted dataset; vector i belongs to cluster i mod clusters.
/// Deterministic for a fixed seed.
pub fn generate(params: &SynthParams) -> Result<Dataset> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let range = params.dimension as usize / params.clusters;
    let core = params.core_size();
    let cores: Vec<HashSet<u32>> = (0..params.clusters)
        .map(|j| {
            let lo = (j * range) as u32;
            sample_distinct(&mut rng, lo, lo + range as u32, core, &HashSet::new())
                .into_iter()
                .collect()
        })
        .collect();
    let mut vectors = Vec::with_capacity(params.n);
    for i in 0..params.n {
        let j = i % params.clusters;
        let lo = (j * range) as u32;
        let mut ix: Vec<u32> = cores[j].iter().copied().collect();
        ix.extend(sample_distinct(
            &mut rng,
            lo,
            lo + range as u32,
            params.nnz - core,
            &cores[j],
        ));
        vectors.push(SparseVector::new(ix));
    }
    Dataset::new(vectors, Some(params.dimension))
}

/// A pair of vectors with exact intersection `shared` and `own` extra
/// indices each, so Jaccard is exactly shared / (shared + 2·own).
pub fn planted_pair(
    rng: &mut impl Rng,
    shared: usize,
    own: usize,
    dimension: u32,
) -> (SparseVector, SparseVector) {
    let mut taken = HashSet::new();
    let common = sample_distinct(rng, 0, dimension, shared, &taken);
    taken.extend(common.iter().copied());
    let ax = sample_distinct(rng, 0, dimension, own, &taken);
    taken.extend(ax.iter().copied());
    let ay = sample_distinct(rng, 0, dimension, own, &taken);
    let mut x = common.clone();
    x.extend(ax);
    let mut y = common;
    y.extend(ay);
    (SparseVector::new(x), SparseVector::new(y))
}
