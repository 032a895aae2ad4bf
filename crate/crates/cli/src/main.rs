mod config;
mod report;
mod stages;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use glisp_core::graph::Direction;
use glisp_core::sampler::{FanoutSpec, Rounding};
use glisp_core::{DegreeKind, PartitionStore, ReorderAlgorithm};

use config::{InferenceSection, Method, PartitionSection, PipelineConfig, ReorderSection, SamplerSection};

/// Bad input from the user; exits with status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct Usage(pub String);

#[derive(Parser)]
#[command(name = "glisp", version, about = "Graph partitioning, sampling and layerwise inference")]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DirArg {
    /// Working directory holding the stage artifacts.
    #[arg(long, default_value = "glisp-out")]
    dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded power-law graph.
    Generate {
        #[command(flatten)]
        dir: DirArg,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        m: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Partition the graph's edges.
    Partition {
        #[command(flatten)]
        dir: DirArg,
        /// Edge list to import instead of the generated graph.
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        p: usize,
        #[arg(long, default_value = "adadne")]
        mode: Method,
        #[arg(long, default_value_t = 0.1)]
        lambda0: f64,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        /// Edge imbalance factor for dne mode.
        #[arg(long, default_value_t = 1.1)]
        tau: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Write one partition store per partition.
    BuildStore {
        #[command(flatten)]
        dir: DirArg,
    },
    /// Serve one partition store over TCP.
    Serve {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7878")]
        bind: String,
    },
    /// Sample K-hop neighborhoods for seeded batches and record shard load.
    SampleBench {
        #[command(flatten)]
        dir: DirArg,
        #[arg(long, default_value = "15,10,5")]
        fanouts: FanoutSpec,
        #[arg(long, default_value_t = 512)]
        batch_size: usize,
        #[arg(long, default_value_t = 4)]
        batches: usize,
        #[arg(long, default_value = "out")]
        direction: Direction,
        #[arg(long)]
        weighted: bool,
        #[arg(long, default_value = "stochastic")]
        rounding: Rounding,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// `host:port,...` of running shard servers; samples in process when absent.
        #[arg(long, value_delimiter = ',')]
        shards: Vec<String>,
    },
    /// Compute a vertex permutation.
    Reorder {
        #[command(flatten)]
        dir: DirArg,
        #[command(flatten)]
        order: ReorderArgs,
        /// Chunk size for the locality score.
        #[arg(long, default_value_t = 256)]
        chunk_size: usize,
    },
    /// Layerwise inference with the two-tier embedding cache.
    Infer {
        #[command(flatten)]
        dir: DirArg,
        #[arg(long, default_value_t = 2)]
        layers: usize,
        #[arg(long, default_value_t = glisp_core::inference::DEFAULT_CHUNK_SIZE)]
        chunk_size: usize,
        #[arg(long, default_value_t = 0.10)]
        dynamic_frac: f64,
        /// Recompute the permutation instead of reading the reorder output.
        #[arg(long)]
        reorder: Option<ReorderAlgorithm>,
        #[arg(long, default_value_t = 16)]
        input_dim: usize,
        #[arg(long, default_value_t = 16)]
        hidden_dim: usize,
        /// Sample at most this many neighbors per vertex.
        #[arg(long)]
        fanout: Option<u32>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Also run the samplewise baseline and compare.
        #[arg(long)]
        samplewise: bool,
    },
    /// Summarize the stage outputs in a directory.
    Report {
        #[command(flatten)]
        dir: DirArg,
    },
    /// Run every stage from a JSON pipeline config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Also run the samplewise inference baseline.
        #[arg(long)]
        samplewise: bool,
    },
}

#[derive(Args)]
struct ReorderArgs {
    #[arg(long = "reorder", default_value = "pds")]
    algorithm: ReorderAlgorithm,
    #[arg(long, default_value = "total", value_parser = parse_degree)]
    degree: DegreeKind,
    /// Sort degrees ascending instead of descending.
    #[arg(long)]
    ascending: bool,
}

fn parse_degree(s: &str) -> Result<DegreeKind, String> {
    match s {
        "total" => Ok(DegreeKind::Total),
        "out" => Ok(DegreeKind::Out),
        "in" => Ok(DegreeKind::In),
        other => Err(format!("unknown degree `{other}` (expected total, out or in)")),
    }
}

fn run_pipeline(cfg: &PipelineConfig, samplewise: bool) -> Result<()> {
    let dir = &cfg.workdir;
    match &cfg.graph.input {
        Some(input) => stages::import_graph(dir, input)?,
        None => stages::generate(dir, cfg.graph.n, cfg.graph.m, cfg.graph.seed)?,
    }
    stages::partition(dir, &cfg.partition)?;
    stages::build_store(dir)?;
    stages::sample_bench(dir, &cfg.sampler)?;
    stages::reorder(dir, &cfg.reorder)?;
    stages::infer(dir, &cfg.inference, None, samplewise)?;
    report::run(dir)?.print_table();
    Ok(())
}

fn serve(store: &Path, bind: &str) -> Result<()> {
    if !store.join("meta").exists() {
        return Err(Usage(format!("{} is not a partition store (no meta); run `glisp build-store`", store.display())).into());
    }
    let store = PartitionStore::load(store).with_context(|| format!("loading {}", store.display()))?;
    let shard = store.partition_id();
    let handle = glisp_core::serve(store, bind).with_context(|| format!("binding {bind}"))?;
    println!("shard {shard} listening on {}", handle.local_addr());
    handle.wait();
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { dir, n, m, seed } => stages::generate(&dir.dir, n, m, seed),
        Command::Partition { dir, graph, p, mode, lambda0, alpha, beta, tau, seed } => {
            if let Some(g) = graph {
                stages::import_graph(&dir.dir, &g)?;
            }
            let section = PartitionSection { p, mode, lambda0, alpha, beta, tau, seed };
            stages::partition(&dir.dir, &section)
        }
        Command::BuildStore { dir } => stages::build_store(&dir.dir),
        Command::Serve { store, bind } => serve(&store, &bind),
        Command::SampleBench { dir, fanouts, batch_size, batches, direction, weighted, rounding, seed, shards } => {
            let s = SamplerSection {
                fanouts: fanouts.as_slice().to_vec(),
                batch_size,
                batches,
                direction,
                weighted,
                rounding,
                seed,
                shards,
            };
            stages::sample_bench(&dir.dir, &s)
        }
        Command::Reorder { dir, order, chunk_size } => {
            let r = ReorderSection {
                algorithm: order.algorithm,
                degree: order.degree,
                ascending: order.ascending,
                chunk_size,
            };
            stages::reorder(&dir.dir, &r)
        }
        Command::Infer { dir, layers, chunk_size, dynamic_frac, reorder, input_dim, hidden_dim, fanout, seed, samplewise } => {
            let inf = InferenceSection { layers, input_dim, hidden_dim, chunk_size, dynamic_frac, fanout, seed };
            let r = reorder.map(|algorithm| ReorderSection { algorithm, ..Default::default() });
            stages::infer(&dir.dir, &inf, r.as_ref(), samplewise)
        }
        Command::Report { dir } => {
            report::run(&dir.dir)?.print_table();
            Ok(())
        }
        Command::Run { config, samplewise } => {
            if !config.exists() {
                return Err(Usage(format!("config {} does not exist", config.display())).into());
            }
            let cfg = PipelineConfig::load(&config)?;
            run_pipeline(&cfg, samplewise)
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<Usage>() {
            return 2;
        }
        if let Some(ce) = cause.downcast_ref::<glisp_core::Error>() {
            return if ce.is_validation() { 2 } else { 1 };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
