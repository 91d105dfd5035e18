//! Querying: bucket aggregation, count-based k-selection, and all-pairs
//! k-NN-graph construction. Candidates are ranked purely by how many of the
//! query's addressed reservoirs contain them; no similarity against any
//! candidate is ever computed here.

use std::io::Write;

use rayon::prelude::*;

use crate::error::Result;
use crate::index::FlashIndex;
use crate::sparse::{Dataset, SparseVector};

/// Concatenated occupied slots of the query's addressed reservoirs; repeats
/// carry the count signal. Length is bounded by L·R regardless of skew.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CandidateArray {
    pub entries: Vec<u32>,
}

/// Ranked neighbors: (id, collision count) pairs, counts non-increasing,
/// ties broken by ascending id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QueryResult {
    pub neighbors: Vec<(u32, u32)>,
}

impl QueryResult {
    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.neighbors.iter().map(|&(id, _)| id)
    }

    pub fn contains(&self, id: u32) -> bool {
        self.neighbors.iter().any(|&(n, _)| n == id)
    }
}

/// Compute the query's L addresses and concatenate the addressed reservoirs.
/// With sharing (F < 1) two tables may bind the same pool reservoir; each
/// distinct reservoir is aggregated at most once so a candidate's count
/// stays capped at L.
pub fn aggregate(index: &FlashIndex, q: &SparseVector) -> Result<CandidateArray> {
    let sig = index.hasher().signature(q)?;
    let addrs = index.hasher().addresses(&sig);
    let mut bound: Vec<u32> = addrs
        .iter()
        .enumerate()
        .filter_map(|(table, &addr)| index.binding(table, addr))
        .collect();
    bound.sort_unstable();
    bound.dedup();
    let mut entries =
        Vec::with_capacity(bound.len() * index.config().reservoir_size as usize);
    for p in bound {
        index.read_slots(p, &mut entries);
    }
    Ok(CandidateArray { entries })
}

/// Distinct ids with their full multiplicity in the array, in ascending id
/// order.
pub fn count_frequencies(a: &CandidateArray) -> Vec<(u32, u32)> {
    let mut sorted = a.entries.clone();
    sorted.sort_unstable();
    let mut out: Vec<(u32, u32)> = Vec::new();
    for id in sorted {
        match out.last_mut() {
            Some((last, c)) if *last == id => *c += 1,
            _ => out.push((id, 1)),
        }
    }
    out
}

/// Sort, count adjacent runs, rank by count descending (ascending id on
/// ties) and keep the first k.
pub fn k_select(a: &CandidateArray, k: usize) -> QueryResult {
    let mut pairs = count_frequencies(a);
    pairs.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(&y.0)));
    pairs.truncate(k);
    QueryResult { neighbors: pairs }
}

/// Full querying phase: aggregate, optionally drop one id (self-exclusion),
/// then count-based k-selection.
pub fn query(
    index: &FlashIndex,
    q: &SparseVector,
    k: usize,
    exclude: Option<u32>,
) -> Result<QueryResult> {
    let mut a = aggregate(index, q)?;
    if let Some(ex) = exclude {
        a.entries.retain(|&id| id != ex);
    }
    Ok(k_select(&a, k))
}

/// Approximate k-NN graph: per-id adjacency with self excluded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnnGraph {
    pub neighbors: Vec<QueryResult>,
}

impl KnnGraph {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    /// One line per id: `id<TAB>neighbor:count,neighbor:count,...`
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        for (id, result) in self.neighbors.iter().enumerate() {
            write!(w, "{id}\t")?;
            let mut first = true;
            for &(n, c) in &result.neighbors {
                if !first {
                    write!(w, ",")?;
                }
                write!(w, "{n}:{c}")?;
                first = false;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Adjacency CSV: `id,neighbor,count` per edge.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "id,neighbor,count")?;
        for (id, result) in self.neighbors.iter().enumerate() {
            for &(n, c) in &result.neighbors {
                writeln!(w, "{id},{n},{c}")?;
            }
        }
        Ok(())
    }
}

/// Query every dataset point with self-exclusion, in parallel. Queries are
/// read-only over the immutable built index, so the result is deterministic
/// for any worker count.
pub fn knn_graph(
    index: &FlashIndex,
    data: &Dataset,
    k: usize,
    workers: usize,
) -> Result<KnnGraph> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| crate::error::FlashError::InvalidArgument(e.to_string()))?;
    let neighbors: Result<Vec<QueryResult>> = pool.install(|| {
        (0..data.len() as u32)
            .into_par_iter()
            .map(|id| query(index, data.vector(id), k, Some(id)))
            .collect()
    });
    Ok(KnnGraph {
        neighbors: neighbors?,
    })
}
