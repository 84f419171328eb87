//! Command-line front end: dataset ingestion, the three experiments, and
//! standalone evaluation of saved models.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedpref::data::{parse_csv, split_stats, DatasetSplit, SplitName};
use fedpref::evaluation::evaluate_population;
use fedpref::experiments::{
    run_baseline, run_strategies, run_sweep, ExperimentKind, ExperimentSpec,
};
use fedpref::features::featurize_split;
use fedpref::labeling::{make_population, ClientSpec, DegeneratePriorPolicy};
use fedpref::model::ModelParams;

#[derive(Parser)]
#[command(
    name = "fedpref",
    version,
    about = "Federated preference-personalized humor classification simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse dataset CSVs, print split statistics, and write JSON caches.
    Ingest(IngestArgs),
    /// Alpha/beta sensitivity sweep of the scaled single-client model.
    Sweep(ExperimentArgs),
    /// Compare the AGG / INDV / FED learning strategies per client group.
    Strategies(ExperimentArgs),
    /// Centralized-vs-federated comparison on the alpha = 1 labels.
    Baseline(ExperimentArgs),
    /// Evaluate a saved model checkpoint over a population.
    Eval(EvalArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    validation: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    /// Directory for the JSON caches.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment config file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config's run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's training-split subsample fraction.
    #[arg(long)]
    subsample: Option<f64>,
    /// Worker thread count (defaults to the number of cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Saved model checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Population spec: JSON array of {"alpha", "beta"?} objects.
    #[arg(long)]
    population: PathBuf,
    /// Training split (CSV or JSON cache) for the clients' priors.
    #[arg(long)]
    train: PathBuf,
    /// Split to evaluate on (CSV or JSON cache).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = fedpref::features::DEFAULT_FEATURE_DIM)]
    feature_dim: usize,
    #[arg(long, default_value_t = 0)]
    hash_seed: u64,
    /// Fail on single-class clients instead of smoothing their priors.
    #[arg(long)]
    strict_priors: bool,
    #[arg(long)]
    threads: Option<usize>,
}

fn init_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        // ignore the error if a pool already exists (e.g. repeated calls in
        // tests)
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}

fn load_experiment(args: &ExperimentArgs, kind: ExperimentKind) -> anyhow::Result<ExperimentSpec> {
    init_threads(args.threads);
    let mut spec = ExperimentSpec::load(&args.config)?;
    if spec.kind != kind {
        anyhow::bail!(
            "config {} has kind {:?}, expected {:?}",
            args.config.display(),
            spec.kind,
            kind
        );
    }
    if let Some(out) = &args.out {
        spec.output_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        spec.federation.seed = seed;
    }
    if let Some(fraction) = args.subsample {
        spec.subsample_fraction = fraction;
    }
    Ok(spec)
}

fn cmd_ingest(args: &IngestArgs) -> anyhow::Result<()> {
    let inputs = [
        (SplitName::Train, &args.train),
        (SplitName::Validation, &args.validation),
        (SplitName::Test, &args.test),
    ];
    if inputs.iter().all(|(_, p)| p.is_none()) {
        anyhow::bail!("nothing to ingest: pass at least one of --train/--validation/--test");
    }
    std::fs::create_dir_all(&args.out)?;
    for (name, path) in inputs {
        let Some(path) = path else { continue };
        let split = parse_csv(path, name)?;
        let stats = split_stats(&split)?;
        let cache = args.out.join(format!("{name}.json"));
        split.save_cache(&cache)?;
        println!(
            "{name}: count={} mean={:.3} min={:.3} max={:.3} -> {}",
            stats.count,
            stats.mean_rating,
            stats.min_rating,
            stats.max_rating,
            cache.display()
        );
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> anyhow::Result<()> {
    init_threads(args.threads);
    let model = ModelParams::load(&args.model)?;
    let spec_text = std::fs::read_to_string(&args.population)?;
    let specs: Vec<ClientSpec> = serde_json::from_str(&spec_text)?;
    let train = DatasetSplit::load_auto(&args.train, SplitName::Train)?;
    let eval_split = DatasetSplit::load_auto(&args.data, SplitName::Test)?;
    let policy = if args.strict_priors {
        DegeneratePriorPolicy::Reject
    } else {
        DegeneratePriorPolicy::Clamp
    };
    let population = make_population(&specs, &train, policy)?;
    for client in &population {
        if client.profile.priors_clamped {
            eprintln!(
                "warning: client {} (alpha {}) has single-class labels; priors were smoothed",
                client.profile.client_id, client.profile.alpha
            );
        }
    }
    let features = featurize_split(&eval_split, args.feature_dim, args.hash_seed);
    let report = evaluate_population(&model, &population, &eval_split, &features)?;

    std::fs::create_dir_all(&args.out)?;
    report.save_json(args.out.join("report.json"))?;
    std::fs::write(args.out.join("report.csv"), report.to_csv())?;
    println!(
        "overall: precision={:.2} recall={:.2} f1={:.2} ({} clients)",
        report.overall_p * 100.0,
        report.overall_r * 100.0,
        report.overall_f1 * 100.0,
        report.per_client.len()
    );
    Ok(())
}

fn run() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Ingest(args) => {
            cmd_ingest(args)?;
        }
        Command::Sweep(args) => {
            let spec = load_experiment(args, ExperimentKind::Sweep)?;
            let outcome = run_sweep(&spec)?;
            println!(
                "sweep: {} cells ok, {} failed -> {}",
                outcome.rows.len(),
                outcome.failures.len(),
                spec.output_dir.display()
            );
            if !outcome.failures.is_empty() {
                for f in &outcome.failures {
                    eprintln!("cell alpha={} beta={} failed: {}", f.alpha, f.beta, f.error);
                }
                return Ok(ExitCode::from(2));
            }
        }
        Command::Strategies(args) => {
            let spec = load_experiment(args, ExperimentKind::Strategies)?;
            let outcome = run_strategies(&spec)?;
            for r in &outcome.rows {
                println!(
                    "{:<12} {:<5} precision={:.2} recall={:.2} f1={:.2}",
                    r.group,
                    r.strategy,
                    r.precision * 100.0,
                    r.recall * 100.0,
                    r.f1 * 100.0
                );
            }
            println!("results -> {}", spec.output_dir.display());
        }
        Command::Baseline(args) => {
            let spec = load_experiment(args, ExperimentKind::Baseline)?;
            let outcome = run_baseline(&spec)?;
            for r in &outcome.rows {
                println!(
                    "{:<12} precision={:.2} recall={:.2} f1={:.2}",
                    r.model,
                    r.precision * 100.0,
                    r.recall * 100.0,
                    r.f1 * 100.0
                );
            }
            println!(
                "alpha=1 test positives: {:.1}%",
                outcome.test_positive_fraction * 100.0
            );
            println!("results -> {}", spec.output_dir.display());
        }
        Command::Eval(args) => {
            cmd_eval(args)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
