//! L hash tables whose buckets are fixed-size reservoirs drawn from a shared
//! pool, plus the data-parallel adding phase.
//!
//! A table cell starts unbound and is bound on first touch, first to the
//! table's local allotment of the pool and, once that is exhausted, to a
//! uniformly random pool reservoir (which may already be bound elsewhere —
//! that is the sharing governed by the fraction F). Bindings never change
//! once made. Reservoir updates are Vitter's algorithm R: fill the first R
//! slots, then replace a uniformly random slot with probability R/(i+1).
//!
//! Concurrency: adds are linearizable per reservoir (one mutex each), first
//! binds race through a compare-exchange with a single winner, and there is
//! no global lock. After build the index is immutable and freely shareable.

use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::Mutex;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::doph::{DophHasher, HashParams};
use crate::error::{FlashError, Result};
use crate::sparse::{Dataset, SparseVector};
use crate::derive_seed;

const UNBOUND: u32 = u32::MAX;

/// Fixed-capacity uniform sample of the identifier stream routed to one
/// bucket. Slot storage is materialized lazily on first insert.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct Reservoir {
    slots: Vec<u32>,
    counter: u64,
}

impl Reservoir {
    /// Algorithm-R update: RANDOM([0, counter]) is uniform over
    /// {0, ..., counter} inclusive, so the incoming id replaces a slot with
    /// probability R/(counter+1) once the fill phase is over.
    pub fn insert(&mut self, id: u32, capacity: usize, rng: &mut impl Rng) {
        if self.slots.len() < capacity {
            if self.slots.is_empty() {
                self.slots.reserve_exact(capacity);
            }
            self.slots.push(id);
        } else {
            let j = rng.gen_range(0..=self.counter);
            if j < capacity as u64 {
                self.slots[j as usize] = id;
            }
        }
        self.counter += 1;
    }

    /// Occupied slots, in slot order.
    pub fn slots(&self) -> &[u32] {
        &self.slots
    }

    /// Stream length seen so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn occupied(&self) -> usize {
        self.slots.len()
    }

    pub(crate) fn from_parts(slots: Vec<u32>, counter: u64) -> Self {
        Reservoir { slots, counter }
    }
}

/// Everything governing hashing, table geometry and sharing: (K, L, R,
/// rangebits, F, seed).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexConfig {
    pub hash: HashParams,
    /// Reservoir size R.
    pub reservoir_size: u32,
    /// Allocation fraction F in (0, 1].
    pub fraction: f64,
}

impl IndexConfig {
    pub fn new(hash: HashParams, reservoir_size: u32, fraction: f64) -> Result<Self> {
        if reservoir_size < 1 {
            return Err(FlashError::InvalidConfig("R must be >= 1".into()));
        }
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(FlashError::InvalidConfig("F must be in (0, 1]".into()));
        }
        Ok(IndexConfig {
            hash,
            reservoir_size,
            fraction,
        })
    }

    /// Recommended general-purpose defaults: K=4, L=32, rangebits=15, R=32, F=1.
    pub fn with_defaults(seed: u64) -> Self {
        IndexConfig {
            hash: HashParams::new(4, 32, 15, seed).expect("defaults are valid"),
            reservoir_size: 32,
            fraction: 1.0,
        }
    }

    /// Non-fatal advisories; the theory wants R >= 5 but small R still runs.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.reservoir_size < 5 {
            w.push(format!(
                "reservoir size R={} is below 5; retrieval guarantees degrade",
                self.reservoir_size
            ));
        }
        w
    }

    /// Total pool size: ceil(F · L · 2^rangebits).
    pub fn pool_size(&self) -> usize {
        let total = (self.hash.l as f64) * (self.hash.table_range() as f64) * self.fraction;
        (total.ceil() as usize).max(1)
    }

    /// Per-table local allotment: floor(F · 2^rangebits), consumed in bind
    /// order before overflow binds fall through to the whole pool.
    pub fn local_allotment(&self) -> usize {
        (self.fraction * self.hash.table_range() as f64).floor() as usize
    }

    /// Logical bytes of one fully materialized reservoir (slots + counter).
    pub fn reservoir_bytes(&self) -> usize {
        self.reservoir_size as usize * 4 + 8
    }
}

/// The built index: L tables of reservoir bindings over a shared pool. The
/// raw vectors are not retained; querying works from hash tables alone.
pub struct FlashIndex {
    config: IndexConfig,
    hasher: DophHasher,
    tables: Vec<AtomicU32>,
    local_next: Vec<AtomicU32>,
    pool: Vec<Mutex<Reservoir>>,
    count: AtomicU64,
}

impl FlashIndex {
    pub fn new(config: IndexConfig) -> Result<Self> {
        let pool_size = config.pool_size();
        if pool_size >= UNBOUND as usize {
            return Err(FlashError::InvalidConfig(format!(
                "pool of {pool_size} reservoirs is not addressable"
            )));
        }
        let cells = config.hash.l as usize * config.hash.table_range();
        let mut tables = Vec::with_capacity(cells);
        tables.resize_with(cells, || AtomicU32::new(UNBOUND));
        let mut pool = Vec::with_capacity(pool_size);
        pool.resize_with(pool_size, || Mutex::new(Reservoir::default()));
        let mut local_next = Vec::with_capacity(config.hash.l as usize);
        local_next.resize_with(config.hash.l as usize, || AtomicU32::new(0));
        Ok(FlashIndex {
            hasher: DophHasher::new(config.hash),
            config,
            tables,
            local_next,
            pool,
            count: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    pub fn hasher(&self) -> &DophHasher {
        &self.hasher
    }

    /// Number of points added.
    pub fn len(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn cell(&self, table: usize, addr: u32) -> &AtomicU32 {
        &self.tables[table * self.config.hash.table_range() + addr as usize]
    }

    fn allocate(&self, table: usize, rng: &mut impl Rng) -> u32 {
        let next = self.local_next[table].fetch_add(1, Ordering::Relaxed) as usize;
        let allotment = self.config.local_allotment();
        if next < allotment {
            (table * allotment + next) as u32
        } else {
            rng.gen_range(0..self.pool.len() as u32)
        }
    }

    /// Bind the reservoir for (table, address), idempotently; concurrent
    /// first binds resolve to a single winner. Returns the pool index.
    pub fn bind_reservoir(&self, table: usize, addr: u32, rng: &mut impl Rng) -> u32 {
        let cell = self.cell(table, addr);
        let cur = cell.load(Ordering::Acquire);
        if cur != UNBOUND {
            return cur;
        }
        let candidate = self.allocate(table, rng);
        match cell.compare_exchange(UNBOUND, candidate, Ordering::AcqRel, Ordering::Acquire) {
            Ok(_) => candidate,
            Err(winner) => winner,
        }
    }

    /// Current binding of (table, address) without creating one.
    pub fn binding(&self, table: usize, addr: u32) -> Option<u32> {
        match self.cell(table, addr).load(Ordering::Acquire) {
            UNBOUND => None,
            p => Some(p),
        }
    }

    /// Append the occupied slots of pool reservoir `p` to `out`.
    pub fn read_slots(&self, p: u32, out: &mut Vec<u32>) {
        let r = self.pool[p as usize].lock().unwrap();
        out.extend_from_slice(r.slots());
    }

    /// Snapshot of a pool reservoir.
    pub fn reservoir(&self, p: u32) -> Reservoir {
        self.pool[p as usize].lock().unwrap().clone()
    }

    pub fn pool_len(&self) -> usize {
        self.pool.len()
    }

    /// Hash the vector once, then bind and insert into one bucket per table.
    /// The vector itself is not stored.
    pub fn add(&self, id: u32, x: &SparseVector, rng: &mut impl Rng) -> Result<()> {
        let sig = self.hasher.signature(x)?;
        let addrs = self.hasher.addresses(&sig);
        let capacity = self.config.reservoir_size as usize;
        for (table, &addr) in addrs.iter().enumerate() {
            let p = self.bind_reservoir(table, addr, rng);
            let mut r = self.pool[p as usize].lock().unwrap();
            r.insert(id, capacity, rng);
        }
        self.count.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    /// Add every dataset point, partitioned across `workers` threads. The
    /// result is statistically equivalent to a sequential build (same
    /// marginal retention probabilities) though not bit-identical across
    /// worker counts.
    pub fn build(data: &Dataset, config: IndexConfig, workers: usize) -> Result<FlashIndex> {
        let index = FlashIndex::new(config)?;
        index.populate(data, workers)?;
        Ok(index)
    }

    /// The adding phase on its own, so callers can time initialization and
    /// indexing separately.
    pub fn populate(&self, data: &Dataset, workers: usize) -> Result<()> {
        if workers < 1 {
            return Err(FlashError::InvalidArgument("workers must be >= 1".into()));
        }
        let n = data.len();
        if n == 0 {
            return Ok(());
        }
        let chunk = n.div_ceil(workers);
        let seed = self.config.hash.seed;
        std::thread::scope(|scope| -> Result<()> {
            let mut handles = Vec::new();
            for (w, ids) in (0..n).collect::<Vec<_>>().chunks(chunk).enumerate() {
                let index = &*self;
                let ids = ids.to_vec();
                handles.push(scope.spawn(move || -> Result<()> {
                    let mut rng =
                        ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xadd_0000 + w as u64));
                    for id in ids {
                        index.add(id as u32, data.vector(id as u32), &mut rng).map_err(
                            |e| {
                                FlashError::InvalidArgument(format!(
                                    "adding id {id} failed: {e}"
                                ))
                            },
                        )?;
                    }
                    Ok(())
                }));
            }
            for h in handles {
                h.join().expect("worker panicked")?;
            }
            Ok(())
        })
    }

    /// Reservoirs that have materialized slot storage.
    pub fn materialized_reservoirs(&self) -> usize {
        self.pool
            .iter()
            .filter(|r| r.lock().unwrap().counter() > 0)
            .count()
    }

    /// Upper bound on reservoir memory: the whole pool fully materialized.
    /// Independent of data skew by construction.
    pub fn pool_capacity_bytes(&self) -> usize {
        self.pool.len() * self.config.reservoir_bytes()
    }

    /// Bytes actually backed by materialized reservoirs.
    pub fn materialized_bytes(&self) -> usize {
        self.materialized_reservoirs() * self.config.reservoir_bytes()
    }

    /// Largest occupied-slot count across the pool; structurally <= R.
    pub fn max_occupied(&self) -> usize {
        self.pool
            .iter()
            .map(|r| r.lock().unwrap().occupied())
            .max()
            .unwrap_or(0)
    }

    pub(crate) fn snapshot_parts(&self) -> (IndexConfig, Vec<u32>, Vec<u32>, Vec<Reservoir>, u64) {
        let tables = self.tables.iter().map(|c| c.load(Ordering::Acquire)).collect();
        let local_next = self
            .local_next
            .iter()
            .map(|c| c.load(Ordering::Acquire))
            .collect();
        let pool = self
            .pool
            .iter()
            .map(|r| r.lock().unwrap().clone())
            .collect();
        (
            self.config,
            tables,
            local_next,
            pool,
            self.count.load(Ordering::Relaxed),
        )
    }

    pub(crate) fn from_parts(
        config: IndexConfig,
        tables: Vec<u32>,
        local_next: Vec<u32>,
        pool: Vec<Reservoir>,
        count: u64,
    ) -> Result<Self> {
        let cells = config.hash.l as usize * config.hash.table_range();
        if tables.len() != cells
            || local_next.len() != config.hash.l as usize
            || pool.len() != config.pool_size()
        {
            return Err(FlashError::Format("index geometry mismatch".into()));
        }
        Ok(FlashIndex {
            hasher: DophHasher::new(config.hash),
            config,
            tables: tables.into_iter().map(AtomicU32::new).collect(),
            local_next: local_next.into_iter().map(AtomicU32::new).collect(),
            pool: pool.into_iter().map(Mutex::new).collect(),
            count: AtomicU64::new(count),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthParams};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn small_config(seed: u64) -> IndexConfig {
        IndexConfig::new(HashParams::new(2, 8, 8, seed).unwrap(), 8, 1.0).unwrap()
    }

    #[test]
    fn reservoir_fill_phase_retains_everything() {
        let mut r = Reservoir::default();
        let mut g = rng(0);
        for id in 0..4 {
            r.insert(id, 4, &mut g);
        }
        let mut got = r.slots().to_vec();
        got.sort_unstable();
        assert_eq!(got, vec![0, 1, 2, 3]);
        assert_eq!(r.counter(), 4);
    }

    #[test]
    fn replacement_probability_at_boundary() {
        // After R items, the next insert is retained with prob R/(R+1).
        let cap = 4;
        let trials = 20_000;
        let mut retained = 0;
        for t in 0..trials {
            let mut g = rng(t);
            let mut r = Reservoir::default();
            for id in 0..cap as u32 {
                r.insert(id, cap, &mut g);
            }
            r.insert(99, cap, &mut g);
            if r.slots().contains(&99) {
                retained += 1;
            }
        }
        let freq = retained as f64 / trials as f64;
        let expected = cap as f64 / (cap as f64 + 1.0);
        assert!((freq - expected).abs() < 0.02, "freq {freq}");
    }

    #[test]
    fn retention_uniformity_small() {
        // m=2000 into R=16: each id retained with probability 16/2000.
        let m = 2000u32;
        let cap = 16;
        let reps = 400;
        let mut counts = vec![0u32; m as usize];
        for t in 0..reps {
            let mut g = rng(1000 + t);
            let mut r = Reservoir::default();
            for id in 0..m {
                r.insert(id, cap, &mut g);
            }
            assert_eq!(r.counter(), m as u64);
            assert_eq!(r.occupied(), cap);
            for &id in r.slots() {
                counts[id as usize] += 1;
            }
        }
        let expected = reps as f64 * cap as f64 / m as f64; // 3.2
        let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / m as f64;
        assert!((mean - expected).abs() < 0.01 * expected + 0.05);
        // no id should be wildly over- or under-represented
        let max = *counts.iter().max().unwrap() as f64;
        assert!(max < expected + 8.0 * expected.sqrt(), "max {max}");
    }

    #[test]
    fn bind_is_idempotent_and_fresh_under_full_allocation() {
        let index = FlashIndex::new(small_config(1)).unwrap();
        let mut g = rng(2);
        let a = index.bind_reservoir(0, 5, &mut g);
        let b = index.bind_reservoir(0, 5, &mut g);
        assert_eq!(a, b);
        // F=1: distinct cells never share
        let mut seen = std::collections::HashSet::new();
        for table in 0..8 {
            for addr in 0..50 {
                assert!(seen.insert(index.bind_reservoir(table, addr, &mut g)));
            }
        }
    }

    #[test]
    fn shared_pool_balls_in_bins() {
        // F small enough that the pool is tiny; bind far more cells than
        // pool entries and check full utilization with balanced references.
        let hash = HashParams::new(2, 4, 10, 3).unwrap();
        let config = IndexConfig::new(hash, 8, 0.1).unwrap();
        let index = FlashIndex::new(config).unwrap();
        let pool_len = index.pool_len();
        assert_eq!(pool_len, (0.1f64 * 4.0 * 1024.0).ceil() as usize);
        let mut g = rng(4);
        let mut refs = vec![0u32; pool_len];
        let binds = 10 * pool_len;
        let mut cell = 0u32;
        let mut bound = 0;
        'outer: for table in 0..4 {
            for addr in 0..1024 {
                refs[index.bind_reservoir(table, addr, &mut g) as usize] += 1;
                cell += 1;
                bound += 1;
                if bound >= binds {
                    break 'outer;
                }
            }
        }
        let _ = cell;
        assert!(refs.iter().all(|&c| c > 0), "unreferenced pool reservoir");
        let mean = refs.iter().map(|&c| c as f64).sum::<f64>() / pool_len as f64;
        assert!((mean - 10.0).abs() < 1.0, "mean refs {mean}");
    }

    #[test]
    fn adversarial_hot_bucket_is_uniform_sample() {
        // Half the stream is one identical vector; its bucket must hold
        // exactly R ids forming a uniform sample of the duplicate stream.
        let cap = 16u32;
        let m = 1000u32;
        let reps = 300;
        let mut counts = vec![0u32; m as usize];
        for t in 0..reps {
            let config = IndexConfig::new(HashParams::new(2, 4, 8, 50 + t).unwrap(), cap, 1.0)
                .unwrap();
            let index = FlashIndex::new(config).unwrap();
            let v = SparseVector::new(vec![1, 5, 9, 13]);
            let mut g = rng(9000 + t);
            for id in 0..m {
                index.add(id, &v, &mut g).unwrap();
            }
            assert!(index.max_occupied() <= cap as usize);
            let sig = index.hasher().signature(&v).unwrap();
            let addrs = index.hasher().addresses(&sig);
            let p = index.binding(0, addrs[0]).unwrap();
            let r = index.reservoir(p);
            assert_eq!(r.occupied(), cap as usize);
            assert_eq!(r.counter(), m as u64);
            for &id in r.slots() {
                counts[id as usize] += 1;
            }
        }
        // every id retained with frequency R/m
        let expected = reps as f64 * cap as f64 / m as f64; // 4.8
        let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / m as f64;
        assert!((mean - expected).abs() < 0.05 * expected);
        let max = *counts.iter().max().unwrap() as f64;
        assert!(max < expected + 8.0 * expected.sqrt(), "max {max}");
    }

    #[test]
    fn build_empty_dataset() {
        let data = Dataset::new(vec![], None).unwrap();
        let index = FlashIndex::build(&data, small_config(5), 4).unwrap();
        assert!(index.is_empty());
        assert_eq!(index.materialized_reservoirs(), 0);
    }

    #[test]
    fn build_worker_counters_match() {
        let data = generate(&SynthParams {
            n: 500,
            dimension: 50_000,
            nnz: 20,
            clusters: 10,
            overlap: 0.5,
            seed: 6,
        })
        .unwrap();
        let config = IndexConfig::new(HashParams::new(2, 8, 10, 7).unwrap(), 8, 1.0).unwrap();
        let a = FlashIndex::build(&data, config, 1).unwrap();
        let b = FlashIndex::build(&data, config, 4).unwrap();
        assert_eq!(a.len(), b.len());
        // per-cell stream lengths are order-independent
        for table in 0..8 {
            for addr in 0..1024u32 {
                let ca = a.binding(table, addr).map(|p| a.reservoir(p).counter());
                let cb = b.binding(table, addr).map(|p| b.reservoir(p).counter());
                assert_eq!(ca.unwrap_or(0), cb.unwrap_or(0), "table {table} addr {addr}");
            }
        }
    }

    #[test]
    fn memory_ceiling_under_skew() {
        let config = IndexConfig::new(HashParams::new(2, 4, 8, 11).unwrap(), 8, 0.5).unwrap();
        let index = FlashIndex::new(config).unwrap();
        let v = SparseVector::new(vec![2, 4, 6]);
        let mut g = rng(12);
        for id in 0..10_000 {
            index.add(id, &v, &mut g).unwrap();
        }
        assert!(index.materialized_bytes() <= index.pool_capacity_bytes());
        assert!(index.max_occupied() <= 8);
    }

    #[test]
    fn config_warnings_below_theory_floor() {
        let c = IndexConfig::new(HashParams::new(2, 2, 8, 0).unwrap(), 4, 1.0).unwrap();
        assert_eq!(c.warnings().len(), 1);
        let c = IndexConfig::new(HashParams::new(2, 2, 8, 0).unwrap(), 5, 1.0).unwrap();
        assert!(c.warnings().is_empty());
    }
}
