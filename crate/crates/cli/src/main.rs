//! Command-line front-end: ingestion, index build, querying, k-NN-graph
//! construction, evaluation sweeps and synthetic data generation.
//!
//! Exit codes: 0 success, 1 usage, 2 I/O, 3 data error.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use flash_core::eval::{self, SweepGrid};
use flash_core::index_io;
use flash_core::query as fq;
use flash_core::sparse::{self, Metric};
use flash_core::synth::{self, SynthParams};
use flash_core::{Dataset, FlashError, FlashIndex, HashParams, IndexConfig};

#[derive(Parser)]
#[command(name = "flash", version, about = "Count-based LSH similarity search for sparse binary data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Index parameters shared by the commands that build an index.
#[derive(Args, Clone)]
struct IndexArgs {
    /// Hashes per meta-hash (K)
    #[arg(short = 'K', long, default_value_t = 4)]
    hashes: u32,
    /// Number of hash tables (L)
    #[arg(short = 'L', long, default_value_t = 32)]
    tables: u32,
    /// Bits per table address
    #[arg(long, default_value_t = 15)]
    rangebits: u32,
    /// Reservoir size (R)
    #[arg(short = 'R', long, default_value_t = 32)]
    reservoir: u32,
    /// Allocation fraction (F) in (0, 1]
    #[arg(short = 'F', long, default_value_t = 1.0)]
    fraction: f64,
    /// Root randomness seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl IndexArgs {
    fn config(&self) -> Result<IndexConfig, FlashError> {
        let hash = HashParams::new(self.hashes, self.tables, self.rangebits, self.seed)?;
        let config = IndexConfig::new(hash, self.reservoir, self.fraction)?;
        for w in config.warnings() {
            eprintln!("warning: {w}");
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build an index from libsvm input and write it to disk
    Build {
        /// Input dataset in libsvm sparse format
        #[arg(long)]
        input: PathBuf,
        /// Output index file
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        index: IndexArgs,
        /// Worker threads (default: hardware parallelism)
        #[arg(long)]
        workers: Option<usize>,
        /// Explicit dimensionality override
        #[arg(long)]
        dimension: Option<u32>,
    },
    /// Query a saved index with vectors from a libsvm file
    Query {
        /// Saved index file
        #[arg(long)]
        index: PathBuf,
        /// Query vectors in libsvm sparse format
        #[arg(long)]
        queries: PathBuf,
        /// Neighbors to report per query
        #[arg(short, long, default_value_t = 100)]
        k: usize,
        /// Drop candidates below this collision count
        #[arg(long)]
        min_count: Option<u32>,
        /// Verify the index was built with this seed
        #[arg(long)]
        expect_seed: Option<u64>,
        /// Write results here instead of stdout
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Build an index and emit the approximate k-NN graph of the dataset
    KnnGraph {
        /// Input dataset in libsvm sparse format
        #[arg(long)]
        input: PathBuf,
        /// Graph output, one `id<TAB>neighbor:count,...` line per id
        #[arg(long)]
        output: PathBuf,
        /// Also write an adjacency CSV here
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Neighbors per point
        #[arg(short, long, default_value_t = 100)]
        k: usize,
        #[command(flatten)]
        index: IndexArgs,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        dimension: Option<u32>,
    },
    /// Build, query and score against the brute-force oracle
    Eval {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        index: IndexArgs,
        #[arg(short, long, default_value_t = 100)]
        k: usize,
        /// Ground-truth query sample size (default min(N, 10000))
        #[arg(long)]
        sample: Option<usize>,
        /// Gold-standard metric: cosine or jaccard
        #[arg(long, default_value = "cosine")]
        metric: Metric,
        /// Truncate each ground-truth list to this depth
        #[arg(long)]
        truth_depth: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        dimension: Option<u32>,
        /// Write the metrics CSV row here instead of stdout
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Grid search over index parameters, one build+graph+evaluate per point
    Sweep {
        #[arg(long)]
        input: PathBuf,
        /// Comma-separated K values
        #[arg(long, value_delimiter = ',', default_value = "4")]
        grid_k: Vec<u32>,
        /// Comma-separated L values
        #[arg(long, value_delimiter = ',', default_value = "32")]
        grid_l: Vec<u32>,
        /// Comma-separated R values
        #[arg(long, value_delimiter = ',', default_value = "32")]
        grid_r: Vec<u32>,
        /// Comma-separated F values
        #[arg(long, value_delimiter = ',', default_value = "1.0")]
        grid_f: Vec<f64>,
        /// Comma-separated rangebits values
        #[arg(long, value_delimiter = ',', default_value = "15")]
        grid_rangebits: Vec<u32>,
        #[arg(short, long, default_value_t = 100)]
        k: usize,
        #[arg(long)]
        sample: Option<usize>,
        #[arg(long, default_value = "cosine")]
        metric: Metric,
        #[arg(long)]
        truth_depth: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        dimension: Option<u32>,
        /// Sweep CSV output path
        #[arg(long)]
        output: PathBuf,
    },
    /// Generate a planted-cluster synthetic dataset in libsvm format
    GenSynth {
        /// Number of vectors
        #[arg(long)]
        n: usize,
        /// Dimensionality
        #[arg(long)]
        d: u32,
        /// Nonzeros per vector
        #[arg(long)]
        nnz: usize,
        /// Number of planted clusters
        #[arg(long, default_value_t = 1)]
        clusters: usize,
        /// Target within-cluster Jaccard in [0, 1]
        #[arg(long, default_value_t = 0.5)]
        overlap: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output libsvm file
        #[arg(long)]
        output: PathBuf,
    },
}

fn open_input(path: &Path) -> Result<BufReader<File>, FlashError> {
    File::open(path).map(BufReader::new).map_err(|e| {
        FlashError::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn create_output(path: &Path) -> Result<BufWriter<File>, FlashError> {
    File::create(path).map(BufWriter::new).map_err(|e| {
        FlashError::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn load_dataset(path: &Path, dimension: Option<u32>) -> Result<Dataset, FlashError> {
    sparse::parse_libsvm(open_input(path)?, dimension)
}

fn default_workers(requested: Option<usize>) -> usize {
    requested.unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    })
}

fn run(cli: Cli) -> Result<(), FlashError> {
    match cli.command {
        Command::Build {
            input,
            output,
            index,
            workers,
            dimension,
        } => {
            let config = index.config()?;
            let workers = default_workers(workers);
            let t0 = Instant::now();
            let data = load_dataset(&input, dimension)?;
            let idx = FlashIndex::new(config)?;
            let init_s = t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            idx.populate(&data, workers)?;
            let index_s = t1.elapsed().as_secs_f64();
            let t2 = Instant::now();
            index_io::save_to_path(&idx, &output)?;
            let save_s = t2.elapsed().as_secs_f64();
            eprintln!(
                "indexed {} points (D={}): init {init_s:.3}s, indexing {index_s:.3}s, save {save_s:.3}s",
                data.len(),
                data.dimension()
            );
            Ok(())
        }
        Command::Query {
            index,
            queries,
            k,
            min_count,
            expect_seed,
            output,
        } => {
            let idx = index_io::load_from_path(&index)?;
            if let Some(seed) = expect_seed {
                if idx.config().hash.seed != seed {
                    return Err(FlashError::InvalidArgument(format!(
                        "index was built with seed {}, not {seed}",
                        idx.config().hash.seed
                    )));
                }
            }
            let qdata = load_dataset(&queries, None)?;
            let mut out: Box<dyn Write> = match output {
                Some(p) => Box::new(create_output(&p)?),
                None => Box::new(std::io::stdout().lock()),
            };
            for (qid, q) in qdata.iter() {
                let result = fq::query(&idx, q, k, None)?;
                write!(out, "{qid}:")?;
                for &(id, count) in &result.neighbors {
                    if min_count.is_some_and(|m| count < m) {
                        continue;
                    }
                    write!(out, " {id}:{count}")?;
                }
                writeln!(out)?;
            }
            out.flush()?;
            Ok(())
        }
        Command::KnnGraph {
            input,
            output,
            csv,
            k,
            index,
            workers,
            dimension,
        } => {
            let config = index.config()?;
            let workers = default_workers(workers);
            let data = load_dataset(&input, dimension)?;
            let t0 = Instant::now();
            let idx = FlashIndex::new(config)?;
            let init_s = t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            idx.populate(&data, workers)?;
            let index_s = t1.elapsed().as_secs_f64();
            let t2 = Instant::now();
            let graph = fq::knn_graph(&idx, &data, k, workers)?;
            let query_s = t2.elapsed().as_secs_f64();
            graph.write_tsv(&mut create_output(&output)?)?;
            if let Some(p) = csv {
                graph.write_csv(&mut create_output(&p)?)?;
            }
            eprintln!(
                "graph over {} points: init {init_s:.3}s, indexing {index_s:.3}s, querying {query_s:.3}s",
                data.len()
            );
            Ok(())
        }
        Command::Eval {
            input,
            index,
            k,
            sample,
            metric,
            truth_depth,
            workers,
            dimension,
            output,
        } => {
            let config = index.config()?;
            let workers = default_workers(workers);
            let data = load_dataset(&input, dimension)?;
            let sample = sample.unwrap_or_else(|| data.len().min(10_000));
            let gt = eval::ground_truth(&data, sample, metric, config.hash.seed, truth_depth)?;
            let report = eval::run_cycle(&data, &gt, config, k, workers)?;
            let row = eval::SweepRow {
                k_hashes: config.hash.k,
                l: config.hash.l,
                r: config.reservoir_size,
                f: config.fraction,
                range_bits: config.hash.range_bits,
                workers,
                seed: config.hash.seed,
                outcome: Ok(report),
            };
            match output {
                Some(p) => eval::write_sweep_csv(std::slice::from_ref(&row), create_output(&p)?)?,
                None => {
                    eval::write_sweep_csv(std::slice::from_ref(&row), std::io::stdout().lock())?
                }
            }
            eprintln!(
                "R@{k} = {:.4}, S@{k} = {:.4} over {sample} queries",
                report.r_at_k, report.s_at_k
            );
            Ok(())
        }
        Command::Sweep {
            input,
            grid_k,
            grid_l,
            grid_r,
            grid_f,
            grid_rangebits,
            k,
            sample,
            metric,
            truth_depth,
            seed,
            workers,
            dimension,
            output,
        } => {
            let workers = default_workers(workers);
            let data = load_dataset(&input, dimension)?;
            let sample = sample.unwrap_or_else(|| data.len().min(10_000));
            let gt = eval::ground_truth(&data, sample, metric, seed, truth_depth)?;
            let grid = SweepGrid {
                ks: grid_k,
                ls: grid_l,
                rs: grid_r,
                fs: grid_f,
                range_bits: grid_rangebits,
            };
            let rows = eval::sweep(&data, &gt, &grid, k, workers, seed);
            for row in &rows {
                if let Err(e) = &row.outcome {
                    eprintln!(
                        "grid point K={} L={} R={} F={} rangebits={} failed: {e}",
                        row.k_hashes, row.l, row.r, row.f, row.range_bits
                    );
                }
            }
            eval::write_sweep_csv(&rows, create_output(&output)?)?;
            eprintln!("{} grid points -> {}", rows.len(), output.display());
            Ok(())
        }
        Command::GenSynth {
            n,
            d,
            nnz,
            clusters,
            overlap,
            seed,
            output,
        } => {
            let params = SynthParams {
                n,
                dimension: d,
                nnz,
                clusters,
                overlap,
                seed,
            };
            let data = synth::generate(&params)?;
            sparse::write_libsvm(&data, &mut create_output(&output)?)?;
            eprintln!(
                "wrote {n} vectors (D={d}, nnz={nnz}, clusters={clusters}, target within-cluster J={:.3})",
                params.expected_within_jaccard()
            );
            Ok(())
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        let code = match e {
            FlashError::Io(_) => 2,
            _ => 3,
        };
        std::process::exit(code);
    }
}
