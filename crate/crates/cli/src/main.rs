//! Experiment command line. Exit codes: 0 success, 1 runtime failure,
//! 2 usage or configuration error. All outputs land under `--out`.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;

use gramet::dataset::{gen_blobs, load_csv, sample_partition, save_csv, validation_split};
use gramet::eval::evaluate_embeddings;
use gramet::graph::AffinityGraph;
use gramet::loss::MetricFactor;
use gramet::mining::mine_triplets;
use gramet::net::EmbedNet;
use gramet::trainer::{train, Checkpoint, TrainOutcome};

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "gramet",
    version,
    about = "Semi-supervised metric learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a Gaussian-blob dataset CSV.
    Synth(SynthArgs),
    /// Train a model from a JSON run configuration.
    Train(TrainArgs),
    /// Embed a test CSV with a checkpoint and compute NMI / Recall@K.
    Eval(EvalArgs),
    /// Dump the affinity matrices and mined triplets for one partition.
    PropagateDebug(PropagateDebugArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    classes: usize,
    #[arg(long)]
    per_class: usize,
    #[arg(long)]
    dim: usize,
    #[arg(long, default_value_t = 1.0)]
    spread: f64,
    #[arg(long, default_value_t = 0.1)]
    label_fraction: f64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON run configuration (see README for the schema).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for log.jsonl, checkpoints, and metrics.json.
    #[arg(long)]
    out: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config outer_rounds.
    #[arg(long)]
    rounds: Option<usize>,
    /// Held-out CSV to embed with the final model (writes embeddings.csv).
    #[arg(long)]
    test: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    ckpt: PathBuf,
    /// Fully labeled test CSV.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Project embeddings through the metric factor (l columns instead of d).
    #[arg(long, default_value_t = false)]
    project_l: bool,
    /// Comma-separated K values.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1, 2, 4, 8])]
    ks: Vec<usize>,
    /// Seed for the k-means clustering step.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PropagateDebugArgs {
    /// Dataset CSV.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 0.99)]
    gamma: f64,
    /// Unlabeled sample size for the partition.
    #[arg(long, default_value_t = 9000)]
    n_p: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional checkpoint: embed through the network first. Raw features
    /// are l2-normalized otherwise.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

/// Failure with a chosen process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<gramet::Error> for Failure {
    fn from(e: gramet::Error) -> Self {
        fn code(e: &gramet::Error) -> u8 {
            use gramet::Error::*;
            match e {
                Parse { .. } | EmptyDataset(_) | InvalidArgument(_) => 2,
                WithContext { source, .. } => code(source),
                _ => 1,
            }
        }
        Failure { code: code(&e), message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::runtime(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::usage(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::PropagateDebug(args) => cmd_propagate_debug(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn cmd_synth(args: SynthArgs) -> Result<(), Failure> {
    let ds = gen_blobs(
        args.seed,
        args.classes,
        args.per_class,
        args.dim,
        args.spread,
        args.label_fraction,
    )?;
    save_csv(&ds, &args.out)?;
    println!(
        "wrote {} examples ({} labeled) to {}",
        ds.len(),
        ds.n_labeled(),
        args.out.display()
    );
    Ok(())
}

fn ensure_out_dir(path: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(path)?;
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), Failure> {
    let raw = std::fs::read_to_string(&args.config)
        .map_err(|e| Failure::usage(format!("{}: {e}", args.config.display())))?;
    let mut run: RunConfig =
        serde_json::from_str(&raw).map_err(|e| Failure::usage(format!("config: {e}")))?;
    if let Some(seed) = args.seed {
        run.seed = seed;
    }
    if let Some(rounds) = args.rounds {
        run.outer_rounds = rounds;
    }
    run.validate().map_err(Failure::usage)?;
    ensure_out_dir(&args.out)?;

    // fixed sub-seed streams for the split and the factor init
    const VAL_STREAM: u64 = 101;
    const FACTOR_STREAM: u64 = 102;
    let ds = run.load_data()?;
    let (train_ds, val_ds) = match run.val_fraction {
        Some(f) => {
            let (t, v) = validation_split(&ds, f, gramet::rng::derive_seed(run.seed, VAL_STREAM))?;
            (t, Some(v))
        }
        None => (ds, None),
    };

    let net0 = EmbedNet::random(&run.net_widths(&train_ds), run.seed)?;
    let factor0 = MetricFactor::random_orthonormal(
        run.net.embed_dim,
        run.metric_rank,
        gramet::rng::derive_seed(run.seed, FACTOR_STREAM),
    )?;
    let cfg = run.train_config();

    let out_dir = args.out.clone();
    let mut round_writer = |round: usize,
                            net: &EmbedNet,
                            factor: &MetricFactor,
                            _val: Option<&gramet::eval::EvalReport>|
     -> gramet::Result<()> {
        let ck = Checkpoint::capture(net, factor);
        let path = out_dir.join(format!("ckpt_round_{round:03}.json"));
        std::fs::write(&path, serde_json::to_string(&ck)?)?;
        Ok(())
    };

    let TrainOutcome { net, factor, log } = train(
        &train_ds,
        &net0,
        &factor0,
        &cfg,
        val_ds.as_ref(),
        Some(&mut round_writer),
    )?;

    std::fs::write(args.out.join("log.jsonl"), log.to_jsonl()?)?;
    let ck = Checkpoint::capture(&net, &factor);
    std::fs::write(
        args.out.join("ckpt_final.json"),
        serde_json::to_string_pretty(&ck)?,
    )?;

    let final_val = log.rounds().last().and_then(|r| r.val.clone());
    let metrics = serde_json::json!({
        "rounds": cfg.outer_rounds,
        "best_round": log.best_round,
        "final_round_loss": log.rounds().last().map(|r| r.loss),
        "val": final_val,
    });
    std::fs::write(
        args.out.join("metrics.json"),
        serde_json::to_string_pretty(&metrics)?,
    )?;

    if let Some(test_csv) = &args.test {
        let test_ds = load_csv(test_csv)?;
        let embeddings = net.embed(&test_ds.features().transpose())?;
        write_embeddings_csv(
            &args.out.join("embeddings.csv"),
            &embeddings.transpose(),
            test_ds.labels(),
        )?;
    }
    println!("run artifacts in {}", args.out.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), Failure> {
    let raw = std::fs::read_to_string(&args.ckpt)
        .map_err(|e| Failure::usage(format!("{}: {e}", args.ckpt.display())))?;
    let ck: Checkpoint = serde_json::from_str(&raw)?;
    let (net, factor) = ck.restore()?;
    let test_ds = load_csv(&args.data)?;
    let labels: Vec<usize> = test_ds
        .labels()
        .iter()
        .map(|l| l.ok_or_else(|| Failure::usage("test CSV must be fully labeled")))
        .collect::<Result<_, _>>()?;
    ensure_out_dir(&args.out)?;

    let embedded = net.embed(&test_ds.features().transpose())?;
    let final_embeddings = if args.project_l {
        factor.project_points(&embedded)
    } else {
        embedded
    };
    let rows = final_embeddings.transpose();
    let report = evaluate_embeddings(&rows, &labels, &args.ks, args.seed)?;
    std::fs::write(
        args.out.join("metrics.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    write_embeddings_csv(&args.out.join("embeddings.csv"), &rows, test_ds.labels())?;
    println!(
        "n={} nmi={:.2} recall={:?}",
        report.n_test, report.nmi, report.recall
    );
    Ok(())
}

fn cmd_propagate_debug(args: PropagateDebugArgs) -> Result<(), Failure> {
    let ds = load_csv(&args.data)?;
    let partition = sample_partition(&ds, args.n_p, args.seed)?;
    let inputs = ds.gather(&partition.node_indices()).transpose();
    let points = match &args.ckpt {
        Some(path) => {
            let raw = std::fs::read_to_string(path)
                .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
            let ck: Checkpoint = serde_json::from_str(&raw)?;
            let (net, _) = ck.restore()?;
            net.embed(&inputs)?.transpose()
        }
        None => {
            // no model: normalize raw feature rows
            let mut rows = inputs.transpose();
            for mut row in rows.row_iter_mut() {
                let n = row.norm();
                if n > 0.0 {
                    row.unscale_mut(n);
                }
            }
            rows
        }
    };
    let graph = AffinityGraph::build(&points, &partition.node_labels(&ds), args.k, args.gamma)?;
    ensure_out_dir(&args.out)?;
    write_matrix_csv(&args.out.join("w0.csv"), &graph.w0)?;
    write_matrix_csv(&args.out.join("q.csv"), &graph.q)?;
    write_matrix_csv(&args.out.join("wstar.csv"), &graph.wstar)?;
    write_matrix_csv(&args.out.join("w.csv"), &graph.w)?;
    let anchors: Vec<usize> = (0..graph.n).collect();
    let triplets = mine_triplets(&graph.w, &graph.knn, &anchors)?;
    let mut body = String::from("a,p,n\n");
    for t in &triplets {
        body.push_str(&format!("{},{},{}\n", t.anchor, t.positive, t.negative));
    }
    std::fs::write(args.out.join("triplets.csv"), body)?;
    println!(
        "dumped {} nodes, {} triplets to {}",
        graph.n,
        triplets.len(),
        args.out.display()
    );
    Ok(())
}

/// Headerless numeric CSV, one matrix row per line.
fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<(), Failure> {
    let mut body = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{}", m[(i, j)])).collect();
        body.push_str(&row.join(","));
        body.push('\n');
    }
    std::fs::write(path, body)?;
    Ok(())
}

/// Embeddings CSV: e0..e{m-1} columns plus the (possibly empty) label.
fn write_embeddings_csv(
    path: &Path,
    rows: &DMatrix<f64>,
    labels: &[Option<usize>],
) -> Result<(), Failure> {
    let mut body = String::new();
    let cols = rows.ncols();
    let header: Vec<String> = (0..cols).map(|j| format!("e{j}")).collect();
    body.push_str(&header.join(","));
    body.push_str(",label\n");
    for i in 0..rows.nrows() {
        let row: Vec<String> = (0..cols).map(|j| format!("{}", rows[(i, j)])).collect();
        body.push_str(&row.join(","));
        body.push(',');
        if let Some(l) = labels.get(i).copied().flatten() {
            body.push_str(&l.to_string());
        }
        body.push('\n');
    }
    std::fs::write(path, body)?;
    Ok(())
}
