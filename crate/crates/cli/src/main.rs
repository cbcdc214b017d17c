//! `llp` — train and evaluate label-proportion methods, search learning
//! rates, and run the verification oracle suite.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use llp_core::data::{load_split, synthetic_gaussian, Dataset, Split};
use llp_core::experiment::{
    emit_report, emit_svg_curves, lr_search, run_experiment, ExperimentConfig, Method, ModelKind,
    DEFAULT_LR_GRID, DEFAULT_MLP_HIDDEN,
};
use llp_core::verify;
use llp_core::Error;

#[derive(Parser)]
#[command(
    name = "llp",
    about = "Multi-class learning from label proportions",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write per-epoch metrics as CSV.
    Run(RunArgs),
    /// Train one run per learning rate and pick the best by validation
    /// accuracy.
    SearchLr(SearchArgs),
    /// Run the numerical verification oracles and print a pass/fail table.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Dataset name: mnist | fashion | kmnist | synthetic.
    #[arg(long)]
    dataset: String,

    /// Root directory holding `<name>/{train,t10k}-...-ubyte[.gz]` files.
    /// Defaults to $LLP_DATA_DIR, then `./data`.
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training method: rc | rc-approx | rc-init | rc-const | dllp | proden | pn.
    #[arg(long)]
    method: Method,

    /// Model family: linear | mlp.
    #[arg(long, default_value = "linear")]
    model: String,

    /// Hidden widths for --model mlp.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,

    /// Instances per bag (K).
    #[arg(long)]
    bag_size: usize,

    /// Training epochs.
    #[arg(long, default_value_t = 100)]
    epochs: usize,

    /// Bags per minibatch; defaults to max(1, 1024/K).
    #[arg(long)]
    batch_bags: Option<usize>,

    /// Softmax temperature for the approximate path; defaults to 1/(K-1).
    #[arg(long)]
    temperature: Option<f64>,

    /// Warm-start epochs for rc-init.
    #[arg(long, default_value_t = 40)]
    init_epochs: usize,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Fraction of the training split held out for validation.
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,

    /// Metrics CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Optional SVG with accuracy and weight-KL curves.
    #[arg(long)]
    svg: Option<PathBuf>,

    /// Optional final model checkpoint path.
    #[arg(long)]
    checkpoint: Option<PathBuf>,

    /// Optional debug dump of the final weight table.
    #[arg(long)]
    dump_weights: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,

    #[command(flatten)]
    train: TrainArgs,

    /// Learning rate.
    #[arg(long)]
    lr: f64,
}

#[derive(Args)]
struct SearchArgs {
    #[command(flatten)]
    data: DataArgs,

    #[command(flatten)]
    train: TrainArgs,

    /// Learning-rate grid; defaults to 1e-6 .. 1e-1 by decades.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::SearchLr(args) => cmd_search(args),
        Command::Verify(args) => cmd_verify(args),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Config(_) | Error::LabelOutOfRange { .. } => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}

fn data_root(args: &DataArgs) -> PathBuf {
    args.data_dir.clone().unwrap_or_else(|| {
        std::env::var_os("LLP_DATA_DIR")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("data"))
    })
}

fn load_datasets(args: &DataArgs, seed: u64) -> Result<(Dataset, Dataset), Error> {
    match args.dataset.as_str() {
        "synthetic" => {
            // Desk-scale default: 10 classes, 64 dims, 6000/1000 instances.
            let train = synthetic_gaussian(10, 64, 600, 2.0, seed)?;
            let test = synthetic_gaussian(10, 64, 100, 2.0, seed.wrapping_add(1))?;
            Ok((train, test))
        }
        name @ ("mnist" | "fashion" | "kmnist") => {
            let root = data_root(args);
            Ok((
                load_split(&root, name, Split::Train)?,
                load_split(&root, name, Split::Test)?,
            ))
        }
        other => Err(Error::Config(format!(
            "unknown dataset '{other}' (expected mnist, fashion, kmnist, or synthetic)"
        ))),
    }
}

fn build_config(args: &TrainArgs, lr: f64) -> Result<ExperimentConfig, Error> {
    let model = match args.model.as_str() {
        "linear" => ModelKind::Linear,
        "mlp" => ModelKind::Mlp(
            args.hidden
                .clone()
                .unwrap_or_else(|| DEFAULT_MLP_HIDDEN.to_vec()),
        ),
        other => {
            return Err(Error::Config(format!(
                "unknown model '{other}' (expected linear or mlp)"
            )))
        }
    };
    let cfg = ExperimentConfig {
        method: args.method,
        model,
        bag_size: args.bag_size,
        epochs: args.epochs,
        batch_bags: args.batch_bags,
        lr,
        temperature: args.temperature,
        init_epochs: args.init_epochs,
        seed: args.seed,
        val_fraction: args.val_fraction,
        state_cap: llp_core::marginals::DEFAULT_STATE_CAP,
        checkpoint: args.checkpoint.clone(),
        weight_dump: args.dump_weights.clone(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_run(args: RunArgs) -> Result<ExitCode, Error> {
    let cfg = build_config(&args.train, args.lr)?;
    let (train, test) = load_datasets(&args.data, args.train.seed)?;
    let out = run_experiment(&cfg, &train, &test)?;
    println!(
        "method={} K={} seed={} final val acc {:.4}, test acc {:.4}",
        cfg.method, cfg.bag_size, cfg.seed, out.final_val_accuracy, out.final_test_accuracy
    );
    if let Some(path) = &args.train.out {
        emit_report(&out.records, path)?;
        println!("metrics written to {}", path.display());
    }
    if let Some(path) = &args.train.svg {
        emit_svg_curves(&out.records, path)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_search(args: SearchArgs) -> Result<ExitCode, Error> {
    let cfg = build_config(&args.train, 1e-3)?;
    let grid = args
        .grid
        .clone()
        .unwrap_or_else(|| DEFAULT_LR_GRID.to_vec());
    let (train, test) = load_datasets(&args.data, args.train.seed)?;
    let result = lr_search(&cfg, &grid, &train, &test)?;
    for run in &result.runs {
        match &run.outcome {
            Ok(out) => println!(
                "lr {:>8.1e}: final val acc {:.4}, test acc {:.4}",
                run.lr, out.final_val_accuracy, out.final_test_accuracy
            ),
            Err(cause) => println!("lr {:>8.1e}: failed: {cause}", run.lr),
        }
    }
    println!(
        "best lr {:.1e} (val acc {:.4})",
        result.best_lr, result.best_final_val_accuracy
    );
    if let Some(path) = &args.train.out {
        let records: Vec<_> = result
            .runs
            .iter()
            .filter_map(|r| r.outcome.as_ref().ok())
            .flat_map(|out| out.records.iter().cloned())
            .collect();
        emit_report(&records, path)?;
        println!("metrics written to {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(args: VerifyArgs) -> Result<ExitCode, Error> {
    let outcomes = verify::run_all(args.seed);
    let mut failures = 0;
    for o in &outcomes {
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!("{status}  {:<32} {}", o.name, o.detail);
        if !o.pass {
            failures += 1;
        }
    }
    if failures == 0 {
        println!("all {} checks passed", outcomes.len());
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("{failures} of {} checks failed", outcomes.len());
        Ok(ExitCode::from(3))
    }
}
