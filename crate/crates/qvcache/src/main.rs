//! Thin command-line front end over the library: synthetic data generation,
//! projector training, trace generation, ground truth, and benchmark runs.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qvcache::bench::{BackendChoice, BenchConfig};
use qvcache::{
    generate_trace, load_fvecs, load_trace, sample_dataset, save_trace, train, write_fvecs,
    write_ivecs, GaussianMixture, Projector, WorkloadParams,
};

#[derive(Parser)]
#[command(name = "qvcache", version, about = "Similarity-aware ANN query cache benchmark kit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a Gaussian-mixture dataset (and optionally queries) to fvecs.
    GenSynthetic(GenSynthetic),
    /// Train a PCA projector from a dataset sample.
    TrainPca(TrainPca),
    /// Generate a sliding-window workload trace.
    GenTrace(GenTrace),
    /// Compute exact top-k ids for every trace entry, written as ivecs.
    GroundTruth(GroundTruth),
    /// Replay a trace through the cache and report per-step metrics.
    Run(Run),
}

#[derive(Args)]
struct GenSynthetic {
    /// Number of dataset vectors.
    #[arg(long)]
    n: usize,
    #[arg(long)]
    dim: usize,
    #[arg(long)]
    clusters: usize,
    /// Per-cluster standard deviation.
    #[arg(long)]
    std: f32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output fvecs path for the dataset.
    #[arg(long)]
    output: PathBuf,
    /// Also draw this many queries from the same mixture.
    #[arg(long)]
    n_queries: Option<usize>,
    /// Output fvecs path for the queries (requires --n-queries).
    #[arg(long)]
    queries_output: Option<PathBuf>,
}

#[derive(Args)]
struct TrainPca {
    /// Dataset fvecs path.
    #[arg(long)]
    input: PathBuf,
    /// Fraction of the dataset to sample for training.
    #[arg(long, default_value_t = 0.01)]
    sample_ratio: f64,
    #[arg(long, default_value_t = 16)]
    d_reduced: usize,
    #[arg(long, default_value_t = 8)]
    n_buckets: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output projector path.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct GenTrace {
    /// Base queries fvecs path.
    #[arg(long)]
    queries: PathBuf,
    /// Dataset fvecs path (perturbation noise is drawn from it).
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    eta: f64,
    #[arg(long, default_value_t = 10)]
    n_split: usize,
    #[arg(long, default_value_t = 4)]
    window_size: usize,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long, default_value_t = 3)]
    n_repeat: usize,
    #[arg(long, default_value_t = 1)]
    n_round: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output trace path.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct GroundTruth {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Output ivecs path.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct Run {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    trace: PathBuf,
    /// Projector path; omit to train one inline from a 1% sample.
    #[arg(long)]
    projector: Option<PathBuf>,
    /// JSON benchmark config; explicit flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Backend: "exact" or "delayed:<search_ms>:<fetch_ms>".
    #[arg(long)]
    backend: Option<String>,
    /// Bypass the cache: pure backend baseline.
    #[arg(long)]
    no_cache: bool,
    /// Run fills and threshold updates synchronously for reproducible output.
    #[arg(long)]
    deterministic: bool,
    /// Skip ground-truth computation (faster; recall columns stay empty).
    #[arg(long)]
    skip_ground_truth: bool,
    /// Reports are written to <prefix>.csv and <prefix>.json.
    #[arg(long)]
    output_prefix: PathBuf,
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: Cli) -> qvcache::Result<()> {
    match cli.command {
        Command::GenSynthetic(args) => {
            let mixture = GaussianMixture::random(args.dim, args.clusters, args.std, args.seed);
            let dataset = mixture.sample(args.n, args.seed.wrapping_add(1));
            write_fvecs(&args.output, dataset.vectors())?;
            println!(
                "wrote {} vectors ({}-d, {} clusters) to {}",
                args.n,
                args.dim,
                args.clusters,
                args.output.display()
            );
            if let Some(n_queries) = args.n_queries {
                let path = args.queries_output.ok_or_else(|| {
                    qvcache::Error::InvalidConfig(
                        "--n-queries requires --queries-output".into(),
                    )
                })?;
                let queries = mixture.sample(n_queries, args.seed.wrapping_add(2));
                write_fvecs(&path, queries.vectors())?;
                println!("wrote {} queries to {}", n_queries, path.display());
            }
            Ok(())
        }
        Command::TrainPca(args) => {
            let dataset = load_fvecs(&args.input)?;
            let sample = sample_dataset(&dataset, args.sample_ratio, args.seed)?;
            let projector = train(&sample, args.d_reduced, args.n_buckets, args.seed)?;
            projector.save(&args.output)?;
            println!(
                "trained projector {} -> {} dims, {} buckets, from {} samples",
                projector.dim_in(),
                projector.d_reduced(),
                projector.n_buckets(),
                sample.len()
            );
            Ok(())
        }
        Command::GenTrace(args) => {
            let queries = load_fvecs(&args.queries)?.into_vectors();
            let dataset = load_fvecs(&args.dataset)?;
            let params = WorkloadParams {
                n_split: args.n_split,
                noise_ratio: args.eta,
                window_size: args.window_size,
                stride: args.stride,
                n_repeat: args.n_repeat,
                n_round: args.n_round,
                seed: args.seed,
            };
            let trace = generate_trace(&queries, &dataset, &params)?;
            save_trace(&args.output, &trace)?;
            println!(
                "wrote {} entries over {} window steps to {}",
                trace.len(),
                params.total_steps(),
                args.output.display()
            );
            Ok(())
        }
        Command::GroundTruth(args) => {
            let dataset = load_fvecs(&args.dataset)?;
            let trace = load_trace(&args.trace)?;
            let truth = qvcache::bench::ground_truth(&dataset, &trace, args.k)?;
            let records: Vec<Vec<i32>> = truth
                .iter()
                .map(|ids| ids.iter().map(|&id| id as i32).collect())
                .collect();
            write_ivecs(&args.output, &records)?;
            println!(
                "wrote top-{} ids for {} entries to {}",
                args.k,
                trace.len(),
                args.output.display()
            );
            Ok(())
        }
        Command::Run(args) => {
            let dataset = load_fvecs(&args.dataset)?;
            let trace = load_trace(&args.trace)?;

            let mut config: BenchConfig = match &args.config {
                Some(path) => serde_json::from_reader(std::io::BufReader::new(
                    std::fs::File::open(path)?,
                ))?,
                None => BenchConfig::default(),
            };
            if let Some(backend) = &args.backend {
                config.backend = BackendChoice::parse(backend)?;
            }
            if args.no_cache {
                config.no_cache = true;
            }
            if args.deterministic {
                config.cache.deterministic_mode = true;
            }
            config.cache.validate()?;

            let projector = match &args.projector {
                Some(path) => Projector::load(path)?,
                None => {
                    let ratio = (1000.0 / dataset.len() as f64).clamp(0.01, 1.0);
                    let sample = sample_dataset(&dataset, ratio, 0)?;
                    train(&sample, 16.min(dataset.dim()), 8, 0)?
                }
            };

            let truth = if args.skip_ground_truth {
                None
            } else {
                Some(qvcache::bench::ground_truth(&dataset, &trace, config.k)?)
            };
            let report = qvcache::bench::run_benchmark(
                &dataset,
                &trace,
                &projector,
                &config,
                truth.as_deref(),
            )?;

            let csv = args.output_prefix.with_extension("csv");
            let json = args.output_prefix.with_extension("json");
            report.write_csv(&csv)?;
            report.write_json(&json)?;

            println!(
                "{} queries, hit ratio {:.3}, recall {}, wrote {} and {}",
                report.total_queries,
                report.aggregate_hit_ratio,
                report
                    .aggregate_recall
                    .map(|r| format!("{r:.3}"))
                    .unwrap_or_else(|| "n/a".into()),
                csv.display(),
                json.display()
            );
            for s in &report.steps {
                println!(
                    "step {:>3}: hit_ratio {:.3} recall {} live {:>7} scanned {:.2}",
                    s.window_step,
                    s.hit_ratio,
                    s.recall_at_k
                        .map(|r| format!("{r:.3}"))
                        .unwrap_or_else(|| "  n/a".into()),
                    s.live_cached_vectors,
                    s.mean_mini_indexes_scanned,
                );
            }
            Ok(())
        }
    }
}
