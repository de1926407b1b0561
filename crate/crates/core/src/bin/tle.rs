use std::fs::OpenOptions;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tle_core::bench::run_bench;
use tle_core::dataset::{read_dataset, synth_dataset, write_dataset, Split, StreamTag, SynthConfig};
use tle_core::gradcheck::{all_suites, DEFAULT_STEP, DEFAULT_TRIALS};
use tle_core::logits::{fuse_tables, fused_report, read_scores, score_accuracy, write_scores, ScoreRow};
use tle_core::train::{evaluate, train_steps, EvalReport, FuseMode};
use tle_core::{load_model, save_model, AggregationMode, EncoderKind, Result, Shape, TleError, TleModel, TrainConfig};

#[derive(Parser)]
#[command(name = "tle", version, about = "Temporal linear encoding over precomputed feature maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic feature-map dataset.
    Synth(SynthArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Evaluate a model on a dataset.
    Eval(EvalArgs),
    /// Run the finite-difference gradient suites.
    Gradcheck(GradcheckArgs),
    /// Fuse two per-video score files.
    Fuse(FuseArgs),
    /// Compare full bilinear pooling with the tensor sketch.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    classes: usize,
    #[arg(long, default_value_t = 20)]
    videos_per_class: usize,
    #[arg(long, default_value_t = 12)]
    frames: usize,
    #[arg(long, default_value_t = 4)]
    height: usize,
    #[arg(long, default_value_t = 4)]
    width: usize,
    #[arg(long, default_value_t = 8)]
    channels: usize,
    #[arg(long, default_value_t = 0.3)]
    difficulty: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = SplitArg::Train)]
    split: SplitArg,
    #[arg(long, value_enum, default_value_t = StreamArg::Spatial)]
    stream: StreamArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum StreamArg {
    Spatial,
    Temporal,
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset.
    #[arg(long)]
    data: PathBuf,
    /// Optional held-out dataset evaluated after training.
    #[arg(long)]
    test_data: Option<PathBuf>,
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    encoder: Option<EncoderKind>,
    #[arg(long)]
    aggregation: Option<AggregationMode>,
    #[arg(long)]
    sketch_dim: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Where to write the model.
    #[arg(long)]
    out: PathBuf,
    /// Metrics log, appended to.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Continue from a saved model; config options are taken from the model.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Stop after this many iterations in this invocation.
    #[arg(long)]
    stop_after: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Segment groups per video; defaults to the model's config.
    #[arg(long)]
    groups: Option<usize>,
    /// Write per-video scores as CSV.
    #[arg(long)]
    logits: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    trials: usize,
    #[arg(long, default_value_t = DEFAULT_STEP)]
    step: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run only suites whose name contains this string.
    #[arg(long)]
    only: Option<String>,
    /// Directory receiving a dataset file per failing suite.
    #[arg(long)]
    replay_dir: Option<PathBuf>,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    spatial: PathBuf,
    #[arg(long)]
    temporal: PathBuf,
    /// Weight of the spatial stream.
    #[arg(long, default_value_t = 0.5)]
    weight: f64,
    #[arg(long, value_enum, default_value_t = FuseArg::Logits)]
    mode: FuseArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FuseArg {
    Logits,
    Probabilities,
}

#[derive(Args)]
struct BenchArgs {
    /// Channels of the input feature map.
    #[arg(long = "c", default_value_t = 1024)]
    channels: usize,
    /// Compact (sketch) dimension.
    #[arg(long = "d", default_value_t = 8196)]
    dim: usize,
    #[arg(long, default_value_t = 2)]
    height: usize,
    #[arg(long, default_value_t = 2)]
    width: usize,
    #[arg(long, default_value_t = 101)]
    classes: usize,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Fuse(a) => fuse(a),
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn synth(a: SynthArgs) -> Result<ExitCode> {
    let cfg = SynthConfig {
        classes: a.classes,
        videos_per_class: a.videos_per_class,
        frames: a.frames,
        shape: Shape::new(a.height, a.width, a.channels)?,
        difficulty: a.difficulty,
        seed: a.seed,
        stream: match a.stream {
            StreamArg::Spatial => StreamTag::Spatial,
            StreamArg::Temporal => StreamTag::Temporal,
        },
    };
    let split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let ds = synth_dataset(&cfg, split)?;
    write_dataset(&ds, &a.out)?;
    println!("wrote {} videos ({} classes, {split}) to {}", ds.len(), ds.classes(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn build_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::parse(&std::fs::read_to_string(p)?)?,
        None => TrainConfig::default(),
    };
    for kv in &a.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| TleError::InvalidArgument(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(v) = a.encoder {
        cfg.encoder = v;
    }
    if let Some(v) = a.aggregation {
        cfg.aggregation = v;
    }
    if let Some(v) = a.sketch_dim {
        cfg.sketch_dim = v;
    }
    if let Some(v) = a.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.max_iters {
        cfg.max_iters = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train(a: TrainArgs) -> Result<ExitCode> {
    let data = read_dataset(&a.data)?;
    let mut model = match &a.resume {
        Some(p) => load_model(p)?,
        None => TleModel::new(build_config(&a)?, data.uniform_shape()?, data.classes())?,
    };
    let start = model.iteration();
    let log = train_steps(&mut model, &data, a.stop_after.unwrap_or(u64::MAX))?;
    save_model(&model, &a.out)?;
    if let Some(path) = &a.log {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let mut w = BufWriter::new(file);
        log.append_to(&mut w)?;
        w.flush()?;
    }
    let total = model.config().total_iters();
    println!("iterations {start}..{} of {total}", model.iteration());
    if let Some(last) = log.iters.last() {
        println!("last loss {:.6} (lr {})", last.loss, last.lr);
    }
    if let Some(e) = log.evals.last() {
        println!("train accuracy (epoch {}) {:.4}", e.epoch, e.accuracy);
    }
    if let Some(p) = &a.test_data {
        let test = read_dataset(p)?;
        let report = evaluate(&model, &test, model.config().test_groups)?;
        println!("test accuracy {:.4}", report.accuracy);
    }
    println!("saved model to {}", a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn print_report(report: &EvalReport, names: &[String]) {
    println!("{:<20} {:>8} {:>8} {:>9}", "class", "correct", "total", "accuracy");
    for (name, &(correct, total)) in names.iter().zip(&report.per_class) {
        let acc = if total == 0 { 0.0 } else { correct as f64 / total as f64 };
        println!("{name:<20} {correct:>8} {total:>8} {acc:>9.4}");
    }
    println!("accuracy {:.4}", report.accuracy);
}

fn eval(a: EvalArgs) -> Result<ExitCode> {
    let model = load_model(&a.model)?;
    let data = read_dataset(&a.data)?;
    let groups = a.groups.unwrap_or(model.config().test_groups);
    let report = evaluate(&model, &data, groups)?;
    print_report(&report, data.class_names());
    if let Some(p) = &a.logits {
        let rows: Vec<ScoreRow> = report.predictions.iter().map(ScoreRow::from).collect();
        write_scores(&rows, p)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    let mut failures = 0;
    for suite in all_suites() {
        if a.only.as_deref().is_some_and(|f| !suite.name.contains(f)) {
            continue;
        }
        let outcome = suite.run(a.trials, a.step, a.seed)?;
        let status = if outcome.passed() { "PASS" } else { "FAIL" };
        println!(
            "{status} {:<24} trials {:>3}  max rel err {:.3e}  tol {:.0e}",
            outcome.name,
            outcome.reports.len(),
            outcome.max_rel_error(),
            outcome.tolerance
        );
        if let Some(trial) = outcome.failed_trial {
            failures += 1;
            let worst = outcome
                .reports
                .last()
                .and_then(|r| r.coordinates.iter().enumerate().max_by(|a, b| a.1.rel_error.total_cmp(&b.1.rel_error)));
            if let Some((i, w)) = worst {
                println!("     trial {trial} coordinate {i}: analytic {:e} numeric {:e}", w.analytic, w.numeric);
            }
            if let (Some(dir), Some(ds)) = (&a.replay_dir, &outcome.replay) {
                std::fs::create_dir_all(dir)?;
                let path = dir.join(format!("{}.tlef", outcome.name));
                write_dataset(ds, &path)?;
                println!("     replay written to {}", path.display());
            }
        }
    }
    if failures == 0 {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("{failures} suite(s) failed");
        Ok(ExitCode::from(1))
    }
}

fn fuse(a: FuseArgs) -> Result<ExitCode> {
    let spatial = read_scores(&a.spatial)?;
    let temporal = read_scores(&a.temporal)?;
    let mode = match a.mode {
        FuseArg::Logits => FuseMode::Logits,
        FuseArg::Probabilities => FuseMode::Probabilities,
    };
    let fused = fuse_tables(&spatial, &temporal, a.weight, mode)?;
    println!("spatial accuracy {:.4}", score_accuracy(&spatial));
    println!("temporal accuracy {:.4}", score_accuracy(&temporal));
    let report = fused_report(&fused);
    println!("fused accuracy {:.4}", report.accuracy);
    if let Some(p) = &a.out {
        write_scores(&fused, p)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn bench(a: BenchArgs) -> Result<ExitCode> {
    let shape = Shape::new(a.height, a.width, a.channels)?;
    let report = run_bench(shape, a.dim, a.classes, a.reps, a.seed)?;
    print!("{}", report.to_text());
    Ok(ExitCode::SUCCESS)
}
