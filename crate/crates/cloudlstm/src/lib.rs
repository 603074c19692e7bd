//! Dynamic point-cloud convolution (D-Conv) and CloudLSTM/CloudGRU/CloudRNN
//! sequence-to-sequence forecasting over geospatial point-cloud streams.
//!
//! A point-cloud stream is a time-ordered sequence of snapshots over a fixed
//! set of irregularly placed points, each carrying value features and
//! coordinate features. The D-Conv operator weights each anchor point's K
//! nearest neighbors (selected per channel, from coordinates that the model
//! itself predicts step by step) to produce new values and sigmoid-squashed
//! coordinates, and slots into recurrent cells where grid convolutions
//! cannot go.
//!
//! Start with the runnable examples (`cargo run --example ...`) or the
//! `cloudlstm` binary for the train / forecast / evaluate / synth / bench
//! pipeline.

pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod dconv;
pub mod evaluation;
pub mod forecaster;
pub mod gradcheck;
pub mod pointcloud;
pub mod recurrent;
pub mod tensor;
pub mod training;

pub use data::{load_stream, save_stream, synth_diffusion, window_dataset, Sample, StreamDataset};
pub use dconv::{dconv_apply, dconv_reference, DConvConfig, DConvWeights};
pub use evaluation::{copy_last_baseline, mae_rmse, psnr, ssim, MetricReport};
pub use forecaster::{Forecaster, ForecasterConfig};
pub use pointcloud::{normalize_coords, NeighborIndex, PointCloudFrame};
pub use recurrent::{
    cloudgru_step, cloudlstm_step, cloudrnn_step, init_state, CellKind, CellWeights,
    RecurrentState,
};
pub use tensor::{Graph, NdArray, Tensor, TensorError};
pub use training::{adam_update, fit, mse_loss, TrainConfig};
