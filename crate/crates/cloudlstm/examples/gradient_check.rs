//! Validate the reverse-mode gradients of a small two-stack forecaster
//! against central finite differences, parameter by parameter.
//!
//!     cargo run --example gradient_check

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use cloudlstm::forecaster::{forward_var, Forecaster, ForecasterConfig};
use cloudlstm::gradcheck::{central_diff, max_rel_err};
use cloudlstm::pointcloud::PointCloudFrame;
use cloudlstm::recurrent::CellKind;
use cloudlstm::tensor::{Graph, NdArray};
use cloudlstm::training::mse_loss_var;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let (u, n) = (1usize, 5usize);
    let mut config = ForecasterConfig::new(u, 1, 2);
    config.stacks = 2;
    config.hidden_channels = 2;
    config.k_neighbors = 2;
    config.history = 2;
    config.horizon = 2;
    config.cell = CellKind::Lstm;
    let model = Forecaster::new(config, 42);

    let frame = |rng: &mut ChaCha8Rng, t: i64| {
        let values = NdArray::new(
            vec![u, n, 1],
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let coords = NdArray::new(
            vec![u, n, 2],
            (0..2 * n).map(|_| rng.random_range(0.0..1.0)).collect(),
        )
        .unwrap();
        PointCloudFrame::new(values, coords, t).unwrap()
    };
    let history: Vec<PointCloudFrame> = (0..2).map(|t| frame(&mut rng, t)).collect();
    let targets: Vec<PointCloudFrame> = (2..4).map(|t| frame(&mut rng, t)).collect();

    let mut flat = Vec::new();
    model.weights.visit(&mut |_, arr| flat.extend_from_slice(arr.data()));
    println!("model has {} parameters across every weight tensor", flat.len());

    let eval = |params: &[f64], want_grad: bool| -> (f64, Option<Vec<f64>>) {
        let mut m = model.clone();
        let mut cursor = 0;
        m.weights.visit_mut(&mut |_, arr| {
            let len = arr.numel();
            arr.data_mut().copy_from_slice(&params[cursor..cursor + len]);
            cursor += len;
        });
        let graph = Graph::new();
        let vars = m.weights.lift(&graph, want_grad);
        let out = forward_var(&graph, &m.config, &vars, &history, 2, None).unwrap();
        let loss = mse_loss_var(&graph, &out.emissions, &targets, 1).unwrap();
        let value = loss.item();
        if want_grad {
            graph.backward(&loss).unwrap();
            let mut grads = Vec::new();
            vars.visit_tensors(&mut |_, t| grads.extend_from_slice(&t.grad().unwrap()));
            (value, Some(grads))
        } else {
            (value, None)
        }
    };

    let (loss, grads) = eval(&flat, true);
    let analytic = grads.unwrap();
    println!("loss at init: {loss:.6}");
    println!("running central differences (h = 1e-5) over all parameters...");
    let numeric = central_diff(|p| eval(p, false).0, &flat, 1e-5);
    let err = max_rel_err(&analytic, &numeric, 1e-4);
    println!("max relative error: {err:.3e} (threshold 1e-4)");
    assert!(err < 1e-4);
    println!("analytic gradients agree with finite differences");
}
