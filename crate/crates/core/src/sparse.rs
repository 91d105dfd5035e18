//! Sparse binary vectors, libsvm ingestion, exact similarity functions and
//! the brute-force ground-truth oracle.
//!
//! Every exact similarity evaluation bumps a global counter so that tests can
//! assert the query path of the index never computes one.

use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use num_traits::Float;
use rayon::prelude::*;

use crate::error::{FlashError, Result};

/// Number of exact similarity evaluations (jaccard or cosine) performed
/// process-wide since the last reset.
static SIM_EVALS: AtomicU64 = AtomicU64::new(0);

pub fn sim_eval_count() -> u64 {
    SIM_EVALS.load(Ordering::Relaxed)
}

pub fn reset_sim_eval_count() {
    SIM_EVALS.store(0, Ordering::Relaxed);
}

/// Which exact similarity to use for ground truth and metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Jaccard,
    Cosine,
}

impl std::str::FromStr for Metric {
    type Err = FlashError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jaccard" => Ok(Metric::Jaccard),
            "cosine" => Ok(Metric::Cosine),
            other => Err(FlashError::InvalidArgument(format!(
                "unknown metric `{other}` (expected jaccard or cosine)"
            ))),
        }
    }
}

/// A binary vector stored as its sorted set of nonzero feature indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SparseVector {
    indices: Vec<u32>,
}

impl SparseVector {
    /// Build from arbitrary indices; sorts and deduplicates.
    pub fn new(mut indices: Vec<u32>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        SparseVector { indices }
    }

    /// Build from indices already strictly increasing.
    pub fn from_sorted(indices: Vec<u32>) -> Result<Self> {
        if !indices.windows(2).all(|w| w[0] < w[1]) {
            return Err(FlashError::InvalidArgument(
                "indices must be strictly increasing".into(),
            ));
        }
        Ok(SparseVector { indices })
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    /// Number of nonzeros |x|.
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// |x ∩ y| via a linear merge of the two sorted index lists.
    pub fn intersection_size(&self, other: &SparseVector) -> usize {
        let (mut i, mut j, mut n) = (0, 0, 0);
        let (a, b) = (&self.indices, &other.indices);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }
}

/// Jaccard similarity |x∩y| / |x∪y|. Two empty vectors score 0.
pub fn jaccard<F: Float>(x: &SparseVector, y: &SparseVector) -> F {
    SIM_EVALS.fetch_add(1, Ordering::Relaxed);
    let inter = x.intersection_size(y);
    let union = x.nnz() + y.nnz() - inter;
    if union == 0 {
        return F::zero();
    }
    F::from(inter).unwrap() / F::from(union).unwrap()
}

/// Binary cosine similarity |x∩y| / sqrt(|x|·|y|). Zero if either is empty.
pub fn cosine<F: Float>(x: &SparseVector, y: &SparseVector) -> F {
    SIM_EVALS.fetch_add(1, Ordering::Relaxed);
    if x.is_empty() || y.is_empty() {
        return F::zero();
    }
    let inter = F::from(x.intersection_size(y)).unwrap();
    inter / (F::from(x.nnz()).unwrap() * F::from(y.nnz()).unwrap()).sqrt()
}

pub fn similarity<F: Float>(metric: Metric, x: &SparseVector, y: &SparseVector) -> F {
    match metric {
        Metric::Jaccard => jaccard(x, y),
        Metric::Cosine => cosine(x, y),
    }
}

/// An ordered collection of sparse vectors with dense ids 0..N-1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    vectors: Vec<SparseVector>,
    dimension: u32,
}

impl Dataset {
    /// Dimension is inferred as max index + 1; `dimension_override` may raise
    /// it for datasets whose nominal dimensionality exceeds the observed one.
    pub fn new(vectors: Vec<SparseVector>, dimension_override: Option<u32>) -> Result<Self> {
        let observed = vectors
            .iter()
            .filter_map(|v| v.indices().last().map(|&i| i + 1))
            .max()
            .unwrap_or(0);
        let dimension = match dimension_override {
            Some(d) if d < observed => {
                return Err(FlashError::InvalidArgument(format!(
                    "dimension override {d} below observed max index + 1 = {observed}"
                )))
            }
            Some(d) => d,
            None => observed,
        };
        Ok(Dataset { vectors, dimension })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dimension(&self) -> u32 {
        self.dimension
    }

    pub fn vector(&self, id: u32) -> &SparseVector {
        &self.vectors[id as usize]
    }

    pub fn vectors(&self) -> &[SparseVector] {
        &self.vectors
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &SparseVector)> {
        self.vectors.iter().enumerate().map(|(i, v)| (i as u32, v))
    }
}

/// Parse libsvm text (`label idx:val idx:val ...`, 1-based indices) into a
/// binary dataset. Labels are discarded; any feature with a nonzero textual
/// value becomes a set bit; empty lines are skipped.
pub fn parse_libsvm<R: BufRead>(reader: R, dimension_override: Option<u32>) -> Result<Dataset> {
    let mut vectors = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let lineno = lineno + 1;
        let mut tokens = line.split_ascii_whitespace();
        // First token is the label; its value is irrelevant here.
        tokens.next();
        let mut indices = Vec::new();
        for tok in tokens {
            let (idx, val) = tok.split_once(':').ok_or_else(|| FlashError::Parse {
                line: lineno,
                msg: format!("missing `:` in token `{tok}`"),
            })?;
            let idx: u64 = idx.parse().map_err(|_| FlashError::Parse {
                line: lineno,
                msg: format!("non-integer index `{idx}`"),
            })?;
            if idx == 0 {
                return Err(FlashError::Parse {
                    line: lineno,
                    msg: "index 0 not allowed in 1-based libsvm input".into(),
                });
            }
            if idx > u32::MAX as u64 {
                return Err(FlashError::Parse {
                    line: lineno,
                    msg: format!("index {idx} out of range"),
                });
            }
            let val: f64 = val.parse().map_err(|_| FlashError::Parse {
                line: lineno,
                msg: format!("non-numeric value `{val}`"),
            })?;
            if val != 0.0 {
                indices.push((idx - 1) as u32);
            }
        }
        vectors.push(SparseVector::new(indices));
    }
    Dataset::new(vectors, dimension_override)
}

/// Write a dataset back to libsvm text (label 1, all values 1, 1-based
/// indices). Re-parsing yields identical index sets.
pub fn write_libsvm<W: Write>(data: &Dataset, mut writer: W) -> Result<()> {
    for (_, v) in data.iter() {
        write!(writer, "1")?;
        for &idx in v.indices() {
            write!(writer, " {}:1", idx + 1)?;
        }
        writeln!(writer)?;
    }
    Ok(())
}

/// Exact top-k by the chosen metric, descending, ties broken by ascending id.
/// `exclude` removes one id (typically the query itself) from the ranking.
pub fn brute_force_topk<F: Float>(
    query: &SparseVector,
    data: &Dataset,
    k: usize,
    metric: Metric,
    exclude: Option<u32>,
) -> Vec<(u32, F)> {
    let mut scored: Vec<(u32, F)> = data
        .iter()
        .filter(|(id, _)| Some(*id) != exclude)
        .map(|(id, v)| (id, similarity::<F>(metric, query, v)))
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

/// Brute-force top-k for many queries in parallel (queries are dataset
/// members, self-excluded).
pub fn brute_force_topk_batch<F: Float + Send>(
    query_ids: &[u32],
    data: &Dataset,
    k: usize,
    metric: Metric,
) -> Vec<Vec<(u32, F)>> {
    query_ids
        .par_iter()
        .map(|&qid| brute_force_topk(data.vector(qid), data, k, metric, Some(qid)))
        .collect()
}
