//! Command-line pipeline: train, forecast, evaluate, synth, and bench.
//!
//! Every training run writes a manifest (resolved config, dataset content
//! hashes, seed, artifact paths) before the first epoch, so the run can be
//! reproduced exactly from the manifest alone.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bench;
use crate::checkpoint;
use crate::data::{self, StreamDataset};
use crate::evaluation::{self, copy_last_baseline, evaluate_predictions};
use crate::forecaster::{Forecaster, ForecasterConfig};
use crate::recurrent::CellKind;
use crate::training::{self, TrainConfig};

#[derive(Parser, Debug)]
#[command(
    name = "cloudlstm",
    about = "Point-cloud stream forecasting with dynamic point-cloud convolutions",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a forecaster and write checkpoint + loss log + manifest.
    Train(TrainArgs),
    /// Roll a trained model forward past the end of a stream.
    Forecast(ForecastArgs),
    /// Score a trained model on the held-out test split.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic diffusion dataset.
    Synth(SynthArgs),
    /// Time the D-Conv weighting step or the KNN search over a shape grid.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct DatasetArgs {
    /// Station layout CSV (station_id,x,y).
    #[arg(long)]
    pub positions: PathBuf,
    /// Measurement CSV (timestamp,station_id,<channels...>).
    #[arg(long)]
    pub values: PathBuf,
    /// Fill missing measurements by linear interpolation in time.
    #[arg(long)]
    pub gap_fill: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,
    /// Recurrent cell variant.
    #[arg(long, default_value = "lstm", value_parser = ["lstm", "gru", "rnn"])]
    pub cell: String,
    /// Neighborhood size K.
    #[arg(long, default_value_t = 9)]
    pub k: usize,
    /// Hidden channels per cell.
    #[arg(long, default_value_t = 36)]
    pub channels: usize,
    /// Stacked cells per Seq2seq side.
    #[arg(long, default_value_t = 2)]
    pub stacks: usize,
    /// History length M.
    #[arg(long, default_value_t = 6)]
    pub history: usize,
    /// Forecast horizon J.
    #[arg(long, default_value_t = 6)]
    pub horizon: usize,
    /// Enable soft attention over encoder states.
    #[arg(long)]
    pub attention: bool,
    /// Emit network-predicted coordinates instead of the static layout.
    #[arg(long)]
    pub emit_coordinates: bool,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Feed ground-truth frames to the decoder during training.
    #[arg(long)]
    pub teacher_forcing: bool,
    /// Window stride over the stream.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Fraction of the training windows held out for validation (taken from
    /// the chronological tail).
    #[arg(long, default_value_t = 0.2)]
    pub val_fraction: f64,
    /// Output directory for model.bin, loss.csv, and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ForecastArgs {
    /// Model directory produced by `train`.
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub dataset: DatasetArgs,
    /// Output forecast CSV (values.csv layout, future timestamps).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Model directory produced by `train`.
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub dataset: DatasetArgs,
    /// Output metric report CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 50)]
    pub points: usize,
    #[arg(long, default_value_t = 2)]
    pub channels: usize,
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for positions.csv and values.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Which suite to run.
    #[arg(long, value_parser = ["dconv", "knn"])]
    pub suite: String,
    /// Timing CSV destination (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Repetitions per cell (median reported).
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
}

/// Everything needed to reproduce one training run.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub model: ForecasterConfig,
    pub training: TrainingManifest,
    pub dataset: DatasetManifest,
    pub artifacts: ArtifactManifest,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrainingManifest {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub teacher_forcing: bool,
    pub seed: u64,
    pub stride: usize,
    pub val_fraction: f64,
    pub split_ratio: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub positions: String,
    pub values: String,
    pub sha256_positions: String,
    pub sha256_values: String,
    pub frames: usize,
    pub stations: usize,
    pub channels: usize,
    pub gap_fill: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ArtifactManifest {
    pub manifest: String,
    pub checkpoint: String,
    pub loss_log: String,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(args) => train(args),
        Command::Forecast(args) => forecast(args),
        Command::Evaluate(args) => evaluate(args),
        Command::Synth(args) => synth(args),
        Command::Bench(args) => run_bench(args),
    }
}

fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn load_dataset(args: &DatasetArgs) -> anyhow::Result<StreamDataset> {
    data::load_stream(&args.positions, &args.values, args.gap_fill).context("loading dataset")
}

fn load_model(dir: &Path) -> anyhow::Result<Forecaster> {
    let path = dir.join("model.bin");
    checkpoint::load(&path).with_context(|| format!("loading model from {}", path.display()))
}

const SPLIT_RATIO: f64 = 0.8;

fn train(args: TrainArgs) -> anyhow::Result<()> {
    let dataset = load_dataset(&args.dataset)?;
    let samples = data::window_dataset(&dataset, args.history, args.horizon, args.stride)?;
    let (train_val, _test) = data::split_windows(&samples, SPLIT_RATIO);
    if train_val.is_empty() {
        bail!("no training windows after the split; stream too short");
    }
    let val_cut =
        ((train_val.len() as f64) * (1.0 - args.val_fraction.clamp(0.0, 1.0))).floor() as usize;
    let (train_set, val_set) = train_val.split_at(val_cut.clamp(1.min(train_val.len()), train_val.len()));

    let mut config = ForecasterConfig::new(dataset.channels(), 1, 2);
    config.stacks = args.stacks;
    config.hidden_channels = args.channels;
    config.k_neighbors = args.k;
    config.history = args.history;
    config.horizon = args.horizon;
    config.cell = CellKind::parse(&args.cell).expect("clap validated the variant");
    config.attention = args.attention;
    config.emit_coordinates = args.emit_coordinates;

    let train_config = TrainConfig {
        learning_rate: args.lr,
        epochs: args.epochs,
        batch_size: args.batch,
        teacher_forcing: args.teacher_forcing,
        seed: args.seed,
        ..TrainConfig::default()
    };

    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating output directory {}", args.out.display()))?;
    let manifest_path = args.out.join("manifest.json");
    let checkpoint_path = args.out.join("model.bin");
    let loss_path = args.out.join("loss.csv");
    let manifest = RunManifest {
        command: "train".into(),
        model: config.clone(),
        training: TrainingManifest {
            learning_rate: train_config.learning_rate,
            beta1: train_config.beta1,
            beta2: train_config.beta2,
            epsilon: train_config.epsilon,
            epochs: train_config.epochs,
            batch_size: train_config.batch_size,
            teacher_forcing: train_config.teacher_forcing,
            seed: args.seed,
            stride: args.stride,
            val_fraction: args.val_fraction,
            split_ratio: SPLIT_RATIO,
        },
        dataset: DatasetManifest {
            positions: args.dataset.positions.display().to_string(),
            values: args.dataset.values.display().to_string(),
            sha256_positions: sha256_file(&args.dataset.positions)?,
            sha256_values: sha256_file(&args.dataset.values)?,
            frames: dataset.frames.len(),
            stations: dataset.n_stations(),
            channels: dataset.channels(),
            gap_fill: args.dataset.gap_fill,
        },
        artifacts: ArtifactManifest {
            manifest: manifest_path.display().to_string(),
            checkpoint: checkpoint_path.display().to_string(),
            loss_log: loss_path.display().to_string(),
        },
    };
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)
        .with_context(|| format!("writing {}", manifest_path.display()))?;

    let mut model = Forecaster::new(config, args.seed);
    let val = (!val_set.is_empty()).then_some(val_set);
    let report = training::fit(&mut model, train_set, val, &train_config)?;
    fs::write(&loss_path, report.to_csv())
        .with_context(|| format!("writing {}", loss_path.display()))?;
    checkpoint::save(&model, &checkpoint_path)?;

    match report.final_train_mse() {
        Some(mse) => println!(
            "trained {} epochs on {} windows (val {}); final train MSE {mse:.6}",
            report.epochs.len(),
            train_set.len(),
            val_set.len()
        ),
        None => println!("zero epochs requested; wrote the initial weights"),
    }
    println!("artifacts in {}", args.out.display());
    Ok(())
}

fn forecast(args: ForecastArgs) -> anyhow::Result<()> {
    let model = load_model(&args.model)?;
    let dataset = load_dataset(&args.dataset)?;
    if dataset.channels() != model.config.input_channels {
        bail!(
            "dataset has {} channels, model expects {}",
            dataset.channels(),
            model.config.input_channels
        );
    }
    let m = model.config.history.min(dataset.frames.len());
    let history = &dataset.frames[dataset.frames.len() - m..];
    let frames = model.forecast(history)?;

    let mut out = String::from("timestamp,station_id");
    for name in &dataset.channel_names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for frame in &frames {
        for (s, id) in dataset.station_ids.iter().enumerate() {
            out.push_str(&format!("{},{id}", frame.timestamp()));
            for c in 0..dataset.channels() {
                out.push_str(&format!(",{}", frame.values().at(&[c, s, 0])));
            }
            out.push('\n');
        }
    }
    fs::write(&args.out, out).with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "wrote {}-step forecast for {} stations to {}",
        frames.len(),
        dataset.n_stations(),
        args.out.display()
    );
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> anyhow::Result<()> {
    let model = load_model(&args.model)?;
    let dataset = load_dataset(&args.dataset)?;
    let samples = data::window_dataset(&dataset, model.config.history, model.config.horizon, 1)?;
    let (_train, test) = data::split_windows(&samples, SPLIT_RATIO);
    if test.is_empty() {
        bail!("no test windows after the split; stream too short");
    }

    let mut model_runs = Vec::with_capacity(test.len());
    let mut baseline_runs = Vec::with_capacity(test.len());
    for sample in test {
        let pred = model.forecast_steps(&sample.history, sample.target.len())?;
        model_runs.push((pred, &sample.target[..]));
        baseline_runs.push((
            copy_last_baseline(&sample.history, sample.target.len()),
            &sample.target[..],
        ));
    }
    let model_report = evaluate_predictions(&model_runs, &dataset.channel_names)?;
    let baseline_report = evaluate_predictions(&baseline_runs, &dataset.channel_names)?;

    fs::write(
        &args.out,
        evaluation::render_csv(&model_report, Some(&baseline_report)),
    )
    .with_context(|| format!("writing {}", args.out.display()))?;

    let model_label = format!(
        "Cloud{} (K={})",
        match model.config.cell {
            CellKind::Lstm => "LSTM",
            CellKind::Gru => "GRU",
            CellKind::Rnn => "RNN",
        },
        model.config.k_neighbors
    );
    print!(
        "{}",
        evaluation::render_table(&[
            (model_label.as_str(), &model_report),
            ("Copy-last baseline", &baseline_report),
        ])
    );
    println!(
        "evaluated {} windows; report written to {}",
        test.len(),
        args.out.display()
    );
    Ok(())
}

fn synth(args: SynthArgs) -> anyhow::Result<()> {
    let dataset = data::synth_diffusion(args.points, args.channels, args.steps, args.seed);
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating output directory {}", args.out.display()))?;
    let positions = args.out.join("positions.csv");
    let values = args.out.join("values.csv");
    data::save_stream(&dataset, &positions, &values)?;
    println!(
        "wrote {} stations x {} channels x {} steps to {}",
        args.points,
        args.channels,
        args.steps,
        args.out.display()
    );
    Ok(())
}

fn run_bench(args: BenchArgs) -> anyhow::Result<()> {
    let ns = [256usize, 512, 1024, 2048, 4096];
    let records = match args.suite.as_str() {
        "dconv" => bench::bench_dconv(&ns, 9, 2, 2, args.reps),
        "knn" => bench::bench_knn(&ns, 9, 2, args.reps),
        _ => unreachable!("clap validated the suite"),
    };
    let csv = bench::render_csv(&records);
    match &args.out {
        Some(path) => {
            fs::write(path, &csv).with_context(|| format!("writing {}", path.display()))?;
            println!("timings written to {}", path.display());
        }
        None => print!("{csv}"),
    }
    let xs: Vec<f64> = records.iter().map(|r| r.n as f64).collect();
    let ys: Vec<f64> = records.iter().map(|r| r.seconds).collect();
    match args.suite.as_str() {
        "dconv" => {
            let (slope, intercept, r2) = bench::linear_fit(&xs, &ys);
            println!("linear fit: t = {slope:.3e} * N + {intercept:.3e} (R^2 = {r2:.4})");
        }
        _ => {
            let (exponent, r2) = bench::loglog_fit(&xs, &ys);
            println!("log-log fit: t ~ N^{exponent:.3} (R^2 = {r2:.4})");
        }
    }
    Ok(())
}
