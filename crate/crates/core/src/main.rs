use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use parlab::commands::{execute, replay, Invocation};
use parlab::config::KeyValues;

#[derive(Parser)]
#[command(name = "parlab", version, about = "Process-aware recommender laboratory")]
struct Cli {
    /// Plain-text `section.key = value` settings file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; every random stream is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SimFlags {
    /// Population size.
    #[arg(long)]
    n: Option<usize>,
    /// Simulated months.
    #[arg(long)]
    months: Option<u32>,
    /// Target monthly reclamation rate.
    #[arg(long)]
    base_rate: Option<f64>,
    /// First simulated month (YYYY-MM).
    #[arg(long)]
    start: Option<String>,
    #[arg(long)]
    theta_open: Option<f64>,
    #[arg(long)]
    theta_click: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic event log and outcome records.
    Simulate {
        #[command(flatten)]
        sim: SimFlags,
    },
    /// Split a log 80/20, cross-validate and fit a predictor bundle.
    Train {
        #[arg(long)]
        log: PathBuf,
        /// logistic or adaboost.
        #[arg(long)]
        learner: Option<String>,
        /// pooled or bucketed.
        #[arg(long)]
        architecture: Option<String>,
        /// default or single-point.
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
        /// eventual or next_month.
        #[arg(long)]
        label_mode: Option<String>,
        /// Keep all vectors of a case in one CV fold.
        #[arg(long)]
        cv_by_case: bool,
        /// Also report test AUC for pooled/bucketed x logistic/adaboost.
        #[arg(long)]
        compare_architectures: bool,
    },
    /// AUC and cumulative lift of a bundle on a (held-out) log.
    Evaluate {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        log: PathBuf,
        /// Label used for evaluation (default next_month).
        #[arg(long)]
        label_mode: Option<String>,
    },
    /// Score running cases at the end of a month.
    Score {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        log: PathBuf,
        /// YYYY-MM
        #[arg(long)]
        as_of: String,
    },
    /// Run a simulated A/B intervention experiment.
    Experiment {
        #[arg(long)]
        bundle: PathBuf,
        #[command(flatten)]
        sim: SimFlags,
        /// Comma-separated arm policies, e.g. `none,email`.
        #[arg(long)]
        policies: Option<String>,
        #[arg(long)]
        threshold: Option<f64>,
        /// Experimental share of the field population.
        #[arg(long)]
        fraction: Option<f64>,
        /// Independent replications for test calibration.
        #[arg(long)]
        replications: Option<usize>,
    },
    /// Collect the text reports of a results directory.
    Report {
        #[arg(long)]
        results: PathBuf,
    },
    /// Re-run the invocation recorded in a manifest.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
    },
}

fn put<T: ToString>(inv: &mut Invocation, key: &str, value: Option<T>) {
    if let Some(v) = value {
        inv.settings.insert(key.to_string(), v.to_string());
    }
}

fn put_sim(inv: &mut Invocation, sim: SimFlags) {
    put(inv, "sim.population_size", sim.n);
    put(inv, "sim.horizon_months", sim.months);
    put(inv, "sim.target_base_rate", sim.base_rate);
    put(inv, "sim.start", sim.start);
    put(inv, "model.theta_open", sim.theta_open);
    put(inv, "model.theta_click", sim.theta_click);
}

fn invocation(cli: Cli) -> parlab::Result<(Invocation, PathBuf)> {
    let name = match &cli.command {
        Command::Simulate { .. } => "simulate",
        Command::Train { .. } => "train",
        Command::Evaluate { .. } => "evaluate",
        Command::Score { .. } => "score",
        Command::Experiment { .. } => "experiment",
        Command::Report { .. } => "report",
        Command::Replay { .. } => unreachable!("handled in main"),
    };
    let mut inv = Invocation::new(name, cli.seed);
    if let Some(path) = &cli.config {
        for (k, v) in KeyValues::load(path)?.iter() {
            inv.settings.insert(k.to_string(), v.to_string());
        }
    }
    match cli.command {
        Command::Simulate { sim } => put_sim(&mut inv, sim),
        Command::Train {
            log,
            learner,
            architecture,
            grid,
            k,
            threshold,
            label_mode,
            cv_by_case,
            compare_architectures,
        } => {
            inv.inputs.insert("log".into(), log);
            put(&mut inv, "train.learner", learner);
            put(&mut inv, "train.architecture", architecture);
            put(&mut inv, "train.grid", grid);
            put(&mut inv, "train.k", k);
            put(&mut inv, "train.threshold", threshold);
            put(&mut inv, "train.label_mode", label_mode);
            put(&mut inv, "train.cv_by_case", cv_by_case.then_some(true));
            put(&mut inv, "train.compare_architectures", compare_architectures.then_some(true));
        }
        Command::Evaluate { bundle, log, label_mode } => {
            inv.inputs.insert("bundle".into(), bundle);
            inv.inputs.insert("log".into(), log);
            put(&mut inv, "eval.label_mode", label_mode);
        }
        Command::Score { bundle, log, as_of } => {
            inv.inputs.insert("bundle".into(), bundle);
            inv.inputs.insert("log".into(), log);
            put(&mut inv, "score.as_of", Some(as_of));
        }
        Command::Experiment {
            bundle,
            sim,
            policies,
            threshold,
            fraction,
            replications,
        } => {
            inv.inputs.insert("bundle".into(), bundle);
            put_sim(&mut inv, sim);
            put(&mut inv, "experiment.policies", policies);
            put(&mut inv, "experiment.threshold", threshold);
            put(&mut inv, "experiment.experimental_fraction", fraction);
            put(&mut inv, "experiment.replications", replications);
        }
        Command::Report { results } => {
            inv.inputs.insert("results".into(), results);
        }
        Command::Replay { .. } => unreachable!("handled above"),
    }
    Ok((inv, cli.out))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result = match &cli.command {
        Command::Replay { manifest } => replay(manifest, &cli.out),
        _ => invocation(cli).and_then(|(inv, out)| execute(&inv, &out)),
    };
    match result {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
