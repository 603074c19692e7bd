//! Loss, optimizer, and the fit loop.
//!
//! The training loss is the mean squared error over value features only,
//! averaged across the horizon; coordinate features never enter it. One
//! Adam optimizer owns the weights; each window's forward/backward runs on
//! its own graph and the batch gradient is the mean over windows, reduced
//! in a fixed order so runs are bit-reproducible per seed.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::Sample;
use crate::dconv::{split_feature_block, ModelError};
use crate::forecaster::{forward_var, Forecaster};
use crate::pointcloud::PointCloudFrame;
use crate::tensor::{Graph, NdArray, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training aborted: non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("no gradient for parameter {0}; it does not reach the loss")]
    MissingGradient(String),
    #[error("gradient count {got} does not match parameter count {expected}")]
    GradientCount { expected: usize, got: usize },
    #[error("cannot fit on an empty sample list")]
    NoSamples,
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Adam hyperparameters and loop controls.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub teacher_forcing: bool,
    pub seed: u64,
    /// Stop early once the epoch train MSE drops to this level.
    pub stop_at_train_mse: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 100,
            batch_size: 4,
            teacher_forcing: false,
            seed: 0,
            stop_at_train_mse: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) {
        assert!(self.learning_rate > 0.0, "learning rate must be positive");
        assert!(
            (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2),
            "betas must lie in [0, 1)"
        );
        assert!(self.batch_size >= 1);
    }
}

/// Mean squared error over value features of matching frame sequences.
pub fn mse_loss(pred: &[PointCloudFrame], truth: &[PointCloudFrame]) -> std::result::Result<f64, ModelError> {
    if pred.len() != truth.len() {
        return Err(ModelError::Axis {
            op: "mse_loss",
            axis: "frame count",
            expected: truth.len(),
            actual: pred.len(),
        });
    }
    let mut acc = 0.0;
    let mut count = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        if p.values().shape() != t.values().shape() {
            return Err(ModelError::Invalid {
                op: "mse_loss",
                msg: format!(
                    "value shapes differ: {:?} vs {:?}",
                    p.values().shape(),
                    t.values().shape()
                ),
            });
        }
        for (a, b) in p.values().data().iter().zip(t.values().data()) {
            let d = a - b;
            acc += d * d;
        }
        count += p.values().numel();
    }
    Ok(acc / count as f64)
}

/// Graph-level MSE over the value block of emitted `(U, N, H+L)` tensors.
pub fn mse_loss_var(
    graph: &Graph,
    emissions: &[Tensor],
    targets: &[PointCloudFrame],
    value_dim: usize,
) -> std::result::Result<Tensor, ModelError> {
    assert_eq!(emissions.len(), targets.len(), "horizon mismatch");
    let mut total: Option<Tensor> = None;
    let mut count = 0usize;
    for (em, target) in emissions.iter().zip(targets) {
        let (values, _) = split_feature_block(em, value_dim)?;
        let truth = graph.leaf(target.values(), false);
        let diff = values.sub(&truth)?;
        let sq = diff.mul(&diff)?;
        count += sq.numel();
        let part = sq.reduce_sum()?;
        total = Some(match total {
            Some(acc) => acc.add(&part)?,
            None => part,
        });
    }
    Ok(total
        .expect("at least one emission")
        .scale(1.0 / count as f64)?)
}

/// Per-parameter Adam moments, aligned with the model's visitation order.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<NdArray>,
    v: Vec<NdArray>,
    step: u64,
}

impl AdamState {
    pub fn new(model: &Forecaster) -> Self {
        let mut m = Vec::new();
        model
            .weights
            .visit(&mut |_, arr| m.push(NdArray::zeros(arr.shape().to_vec())));
        AdamState {
            v: m.clone(),
            m,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update:
/// `m <- b1 m + (1-b1) g`, `v <- b2 v + (1-b2) g^2`,
/// `p <- p - lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_update(
    model: &mut Forecaster,
    grads: &[NdArray],
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<()> {
    if grads.len() != state.m.len() {
        return Err(TrainError::GradientCount {
            expected: state.m.len(),
            got: grads.len(),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    let mut slot = 0usize;
    let (m, v) = (&mut state.m, &mut state.v);
    model.weights.visit_mut(&mut |_, param| {
        let g = grads[slot].data();
        let m = m[slot].data_mut();
        let v = v[slot].data_mut();
        let p = param.data_mut();
        for i in 0..p.len() {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
        }
        slot += 1;
    });
    Ok(())
}

/// Mean loss and mean parameter gradients over one batch of windows.
pub fn batch_gradients(
    model: &Forecaster,
    batch: &[&Sample],
    teacher_forcing: bool,
) -> Result<(f64, Vec<NdArray>)> {
    assert!(!batch.is_empty());
    let scale = 1.0 / batch.len() as f64;
    let mut total_loss = 0.0;
    let mut grads: Option<Vec<NdArray>> = None;
    for sample in batch {
        let graph = Graph::new();
        let vars = model.weights.lift(&graph, true);
        let teacher = teacher_forcing.then_some(&sample.target[..]);
        let out = forward_var(
            &graph,
            &model.config,
            &vars,
            &sample.history,
            sample.target.len(),
            teacher,
        )?;
        let loss = mse_loss_var(&graph, &out.emissions, &sample.target, model.config.value_dim)?;
        total_loss += loss.item();
        graph.backward(&loss).map_err(ModelError::from)?;

        let mut window_grads: Vec<(String, Option<NdArray>)> = Vec::new();
        vars.visit_tensors(&mut |name, tensor| {
            window_grads.push((name.to_string(), tensor.grad_array()));
        });
        match &mut grads {
            None => {
                let mut acc = Vec::with_capacity(window_grads.len());
                for (name, g) in window_grads {
                    let mut g = g.ok_or(TrainError::MissingGradient(name))?;
                    for x in g.data_mut() {
                        *x *= scale;
                    }
                    acc.push(g);
                }
                grads = Some(acc);
            }
            Some(acc) => {
                for (slot, (name, g)) in acc.iter_mut().zip(window_grads) {
                    let g = g.ok_or(TrainError::MissingGradient(name))?;
                    for (a, b) in slot.data_mut().iter_mut().zip(g.data()) {
                        *a += scale * b;
                    }
                }
            }
        }
    }
    Ok((total_loss * scale, grads.expect("non-empty batch")))
}

/// Average forecast MSE of the current weights over a sample list (no
/// teacher forcing; the same rollout as inference).
pub fn evaluate_mse(model: &Forecaster, samples: &[Sample]) -> Result<f64> {
    assert!(!samples.is_empty());
    let mut acc = 0.0;
    for sample in samples {
        let pred = model.forecast_steps(&sample.history, sample.target.len())?;
        acc += mse_loss(&pred, &sample.target)?;
    }
    Ok(acc / samples.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitReport {
    pub epochs: Vec<EpochLog>,
}

impl FitReport {
    pub fn final_train_mse(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_mse)
    }

    /// Render as the loss-log CSV (`epoch,train_mse,val_mse`).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_mse,val_mse\n");
        for row in &self.epochs {
            match row.val_mse {
                Some(v) => out.push_str(&format!("{},{},{}\n", row.epoch, row.train_mse, v)),
                None => out.push_str(&format!("{},{},\n", row.epoch, row.train_mse)),
            }
        }
        out
    }
}

/// Train in place. Deterministic for a fixed (seed, data, config): batches
/// are shuffled by a seeded generator and gradients reduce in window order.
/// The per-epoch train MSE is the mean of batch losses (each measured before
/// its update); validation, when present, is a full no-grad pass.
pub fn fit(
    model: &mut Forecaster,
    train: &[Sample],
    val: Option<&[Sample]>,
    config: &TrainConfig,
) -> Result<FitReport> {
    config.validate();
    if train.is_empty() {
        return Err(TrainError::NoSamples);
    }
    let mut state = AdamState::new(model);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = FitReport::default();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grads) = match batch_gradients(model, &batch, config.teacher_forcing) {
                Ok(ok) => ok,
                Err(TrainError::Model(ModelError::Tensor(TensorError::NonFinite { .. }))) => {
                    return Err(TrainError::NonFiniteLoss { epoch });
                }
                Err(e) => return Err(e),
            };
            adam_update(model, &grads, &mut state, config)?;
            loss_sum += loss;
            batches += 1;
        }
        let train_mse = loss_sum / batches as f64;
        if !train_mse.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch });
        }
        let val_mse = match val {
            Some(samples) if !samples.is_empty() => Some(evaluate_mse(model, samples)?),
            _ => None,
        };
        report.epochs.push(EpochLog {
            epoch,
            train_mse,
            val_mse,
        });
        if let Some(target) = config.stop_at_train_mse {
            if train_mse <= target {
                break;
            }
        }
    }
    Ok(report)
}
