//! Overfit a small CloudLSTM on a short synthetic diffusion stream and watch
//! the loss fall. Deterministic: rerunning prints the same numbers.
//!
//!     cargo run --example train_overfit

use std::time::Instant;

use cloudlstm::data::{synth_diffusion, window_dataset};
use cloudlstm::forecaster::{Forecaster, ForecasterConfig};
use cloudlstm::recurrent::CellKind;
use cloudlstm::training::{evaluate_mse, fit, TrainConfig};

fn main() {
    let dataset = synth_diffusion(24, 1, 20, 13);
    let samples = window_dataset(&dataset, 3, 2, 1).unwrap();
    println!(
        "dataset: {} stations, {} steps -> {} windows (3 in / 2 out)",
        dataset.n_stations(),
        dataset.frames.len(),
        samples.len()
    );

    let mut config = ForecasterConfig::new(1, 1, 2);
    config.stacks = 1;
    config.hidden_channels = 6;
    config.k_neighbors = 3;
    config.history = 3;
    config.horizon = 2;
    config.cell = CellKind::Lstm;
    let mut model = Forecaster::new(config, 1);

    let train_config = TrainConfig {
        learning_rate: 5e-3,
        epochs: 500,
        batch_size: 4,
        seed: 1,
        stop_at_train_mse: Some(1e-3),
        ..TrainConfig::default()
    };

    let start = Instant::now();
    let report = fit(&mut model, &samples, None, &train_config).unwrap();
    let elapsed = start.elapsed().as_secs_f64();

    for row in report.epochs.iter().step_by(10) {
        println!("epoch {:>4}  train MSE {:.5e}", row.epoch, row.train_mse);
    }
    let last = report.epochs.last().unwrap();
    println!("epoch {:>4}  train MSE {:.5e}", last.epoch, last.train_mse);
    println!(
        "stopped after {} epochs in {elapsed:.1}s; full-rollout MSE {:.5e}",
        report.epochs.len(),
        evaluate_mse(&model, &samples).unwrap()
    );
}
