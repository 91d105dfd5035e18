//! Ground-truth generation, the R@k / S@k accuracy metrics, and a grid-sweep
//! driver that builds, graphs and scores one index per grid point, reporting
//! per-phase wall-clock timings as CSV.

use std::io::Write;
use std::time::Instant;

use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{FlashError, Result};
use crate::index::{FlashIndex, IndexConfig};
use crate::query::{query, QueryResult};
use crate::sparse::{brute_force_topk, similarity, Dataset, Metric, SparseVector};

/// Exact ranked neighbors for a sampled subset of queries, self excluded.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub metric: Metric,
    pub queries: Vec<u32>,
    /// Per query, (id, similarity) descending; possibly truncated to depth M.
    pub truth: Vec<Vec<(u32, f64)>>,
}

/// Sample `sample` query ids uniformly without replacement and rank all
/// other points exactly. `depth` truncates each list (None keeps all N-1).
pub fn ground_truth(
    data: &Dataset,
    sample: usize,
    metric: Metric,
    seed: u64,
    depth: Option<usize>,
) -> Result<GroundTruth> {
    if sample > data.len() {
        return Err(FlashError::InvalidArgument(format!(
            "sample {sample} exceeds dataset size {}",
            data.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, 0x97d));
    let mut queries: Vec<u32> = rand::seq::index::sample(&mut rng, data.len(), sample)
        .into_iter()
        .map(|i| i as u32)
        .collect();
    queries.sort_unstable();
    let depth = depth.unwrap_or(data.len().saturating_sub(1)).max(1);
    let truth: Vec<Vec<(u32, f64)>> = queries
        .par_iter()
        .map(|&qid| brute_force_topk(data.vector(qid), data, depth, metric, Some(qid)))
        .collect();
    Ok(GroundTruth {
        metric,
        queries,
        truth,
    })
}

/// 1 if the true 1-NN appears among the top-k returned ids, else 0.
pub fn r_at_k<F: Float>(result: &QueryResult, truth: &[(u32, f64)], k: usize) -> F {
    let Some(&(best, _)) = truth.first() else {
        return F::zero();
    };
    let hit = result.neighbors.iter().take(k).any(|&(id, _)| id == best);
    if hit {
        F::one()
    } else {
        F::zero()
    }
}

/// Mean exact similarity between the query and the (<= k) returned ids;
/// 0 for empty results. The gold-standard metric is cosine.
pub fn s_at_k<F: Float>(
    result: &QueryResult,
    query_vec: &SparseVector,
    data: &Dataset,
    k: usize,
    metric: Metric,
) -> F {
    let taken: Vec<F> = result
        .neighbors
        .iter()
        .take(k)
        .map(|&(id, _)| similarity(metric, query_vec, data.vector(id)))
        .collect();
    if taken.is_empty() {
        return F::zero();
    }
    let sum = taken.iter().fold(F::zero(), |a, &b| a + b);
    sum / F::from(taken.len()).unwrap()
}

/// Accuracy metrics plus the three wall-clock phases of a full build +
/// evaluate cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub r_at_k: f64,
    pub s_at_k: f64,
    pub k: usize,
    pub init_s: f64,
    pub index_s: f64,
    pub query_s: f64,
}

/// Score an already built index against ground truth (no timing).
pub fn evaluate(
    index: &FlashIndex,
    data: &Dataset,
    gt: &GroundTruth,
    k: usize,
) -> Result<(f64, f64)> {
    let scores: Result<Vec<(f64, f64)>> = gt
        .queries
        .par_iter()
        .zip(gt.truth.par_iter())
        .map(|(&qid, truth)| {
            let q = data.vector(qid);
            let result = query(index, q, k, Some(qid))?;
            Ok((
                r_at_k::<f64>(&result, truth, k),
                s_at_k::<f64>(&result, q, data, k, gt.metric),
            ))
        })
        .collect();
    let scores = scores?;
    let n = scores.len().max(1) as f64;
    let r = scores.iter().map(|s| s.0).sum::<f64>() / n;
    let s = scores.iter().map(|s| s.1).sum::<f64>() / n;
    Ok((r, s))
}

/// One timed build + evaluate cycle.
pub fn run_cycle(
    data: &Dataset,
    gt: &GroundTruth,
    config: IndexConfig,
    k: usize,
    workers: usize,
) -> Result<MetricsReport> {
    let t0 = Instant::now();
    let index = FlashIndex::new(config)?;
    let init_s = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    index.populate(data, workers)?;
    let index_s = t1.elapsed().as_secs_f64();
    let t2 = Instant::now();
    let (r, s) = evaluate(&index, data, gt, k)?;
    let query_s = t2.elapsed().as_secs_f64();
    Ok(MetricsReport {
        r_at_k: r,
        s_at_k: s,
        k,
        init_s,
        index_s,
        query_s,
    })
}

/// Cartesian grid over the index parameters.
#[derive(Debug, Clone)]
pub struct SweepGrid {
    pub ks: Vec<u32>,
    pub ls: Vec<u32>,
    pub rs: Vec<u32>,
    pub fs: Vec<f64>,
    pub range_bits: Vec<u32>,
}

/// One grid point's parameters and outcome.
#[derive(Debug)]
pub struct SweepRow {
    pub k_hashes: u32,
    pub l: u32,
    pub r: u32,
    pub f: f64,
    pub range_bits: u32,
    pub workers: usize,
    pub seed: u64,
    pub outcome: Result<MetricsReport>,
}

/// Build + evaluate every grid point. Per-point errors are recorded in the
/// row without aborting the sweep.
pub fn sweep(
    data: &Dataset,
    gt: &GroundTruth,
    grid: &SweepGrid,
    k: usize,
    workers: usize,
    seed: u64,
) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for &kh in &grid.ks {
        for &l in &grid.ls {
            for &r in &grid.rs {
                for &f in &grid.fs {
                    for &rb in &grid.range_bits {
                        let outcome = crate::doph::HashParams::new(kh, l, rb, seed)
                            .and_then(|h| IndexConfig::new(h, r, f))
                            .and_then(|config| run_cycle(data, gt, config, k, workers));
                        rows.push(SweepRow {
                            k_hashes: kh,
                            l,
                            r,
                            f,
                            range_bits: rb,
                            workers,
                            seed,
                            outcome,
                        });
                    }
                }
            }
        }
    }
    rows
}

/// CSV schema: `K,L,R,F,rangebits,workers,init_s,index_s,query_s,r_at_k,s_at_k,k,seed`.
/// Failed grid points are skipped (the caller reports them).
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut w: W) -> Result<()> {
    writeln!(
        w,
        "K,L,R,F,rangebits,workers,init_s,index_s,query_s,r_at_k,s_at_k,k,seed"
    )?;
    for row in rows {
        if let Ok(m) = &row.outcome {
            writeln!(
                w,
                "{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}",
                row.k_hashes,
                row.l,
                row.r,
                row.f,
                row.range_bits,
                row.workers,
                m.init_s,
                m.index_s,
                m.query_s,
                m.r_at_k,
                m.s_at_k,
                m.k,
                row.seed
            )?;
        }
    }
    Ok(())
}
