//! The whole pipeline in one file: synthesize a stream, window and split it
//! chronologically, train a small CloudLSTM, and score it against the
//! copy-last-frame baseline on the held-out tail.
//!
//!     cargo run --example forecast_pipeline

use cloudlstm::data::{split_windows, synth_diffusion, window_dataset};
use cloudlstm::evaluation::{copy_last_baseline, evaluate_predictions, render_table};
use cloudlstm::forecaster::{Forecaster, ForecasterConfig};
use cloudlstm::recurrent::CellKind;
use cloudlstm::training::{fit, TrainConfig};

fn main() {
    let dataset = synth_diffusion(30, 1, 160, 17);
    let samples = window_dataset(&dataset, 4, 4, 2).unwrap();
    let (train, test) = split_windows(&samples, 0.8);
    println!(
        "{} windows -> {} train / {} test (chronological 8:2 split)",
        samples.len(),
        train.len(),
        test.len()
    );

    let mut config = ForecasterConfig::new(1, 1, 2);
    config.stacks = 1;
    config.hidden_channels = 4;
    config.k_neighbors = 3;
    config.history = 4;
    config.horizon = 4;
    config.cell = CellKind::Lstm;
    let mut model = Forecaster::new(config, 2);

    let train_config = TrainConfig {
        learning_rate: 4e-3,
        epochs: 25,
        batch_size: 4,
        seed: 2,
        ..TrainConfig::default()
    };
    let report = fit(&mut model, train, None, &train_config).unwrap();
    println!(
        "trained {} epochs; final train MSE {:.4e}",
        report.epochs.len(),
        report.final_train_mse().unwrap()
    );

    let model_runs: Vec<_> = test
        .iter()
        .map(|s| (model.forecast(&s.history).unwrap(), &s.target[..]))
        .collect();
    let baseline_runs: Vec<_> = test
        .iter()
        .map(|s| (copy_last_baseline(&s.history, 4), &s.target[..]))
        .collect();
    let model_report = evaluate_predictions(&model_runs, &dataset.channel_names).unwrap();
    let baseline_report = evaluate_predictions(&baseline_runs, &dataset.channel_names).unwrap();

    println!();
    print!(
        "{}",
        render_table(&[
            ("CloudLSTM (K=3)", &model_report),
            ("Copy-last baseline", &baseline_report),
        ])
    );
    println!();
    println!("per-step MAE (model):");
    for step in &model_report.per_step {
        println!("  step {}: {:.4} ± {:.4}", step.step, step.mae.mean, step.mae.std);
    }
    let gain = 100.0 * (1.0 - model_report.aggregate.mae.mean / baseline_report.aggregate.mae.mean);
    println!("aggregate MAE gain over copy-last: {gain:.1}%");
}
