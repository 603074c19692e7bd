//! Recurrent cell behavior you can verify by hand: gate saturation turns the
//! CloudLSTM memory cell into a pure pass-through, the GRU update gate
//! interpolates between state and candidate, and zero weights pin every gate
//! at one half.
//!
//!     cargo run --example cell_dynamics

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use cloudlstm::pointcloud::PointCloudFrame;
use cloudlstm::recurrent::{cloudgru_step, cloudlstm_step, CellKind, CellWeights, RecurrentState};
use cloudlstm::tensor::NdArray;

fn random_frame(rng: &mut ChaCha8Rng, u: usize, n: usize) -> PointCloudFrame {
    let values = NdArray::new(
        vec![u, n, 1],
        (0..u * n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let coords = NdArray::new(
        vec![u, n, 2],
        (0..2 * u * n).map(|_| rng.random_range(0.0..1.0)).collect(),
    )
    .unwrap();
    PointCloudFrame::new(values, coords, 0).unwrap()
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (u, n, k) = (2usize, 8usize, 3usize);
    let x = random_frame(&mut rng, u, n);
    let state = RecurrentState {
        hidden: random_frame(&mut rng, u, n),
        cell: Some(random_frame(&mut rng, u, n)),
    };

    // zero weights and a zero state: every gate sits at sigmoid(0) = 0.5 and
    // the candidate's value features are tanh(0), so H_t values vanish
    let zero_frame = PointCloudFrame::new(
        NdArray::zeros(vec![u, n, 1]),
        NdArray::zeros(vec![u, n, 2]),
        0,
    )
    .unwrap();
    let zero_state = RecurrentState {
        hidden: zero_frame.clone(),
        cell: Some(zero_frame),
    };
    let zeros = CellWeights::zeros(CellKind::Lstm, u, u, k, 1, 2);
    let next = cloudlstm_step(&x, &zero_state, &zeros, k).unwrap();
    println!(
        "zero-weight LSTM from zero state: |H_t values| max = {:.3e}, coords all {:.4} (= 0.5*tanh(0.25))",
        next.hidden
            .values()
            .data()
            .iter()
            .fold(0.0f64, |a, &b| a.max(b.abs())),
        next.hidden.coords().data()[0],
    );

    // saturate forget open, input closed: the memory cell passes through
    let mut saturated = CellWeights::zeros(CellKind::Lstm, u, u, k, 1, 2);
    saturated.gates[0].bias = NdArray::full(vec![u], -40.0); // input gate -> 0
    saturated.gates[1].bias = NdArray::full(vec![u], 40.0); // forget gate -> 1
    let next = cloudlstm_step(&x, &state, &saturated, k).unwrap();
    let drift = next
        .cell
        .as_ref()
        .unwrap()
        .values()
        .max_abs_diff(state.cell.as_ref().unwrap().values());
    println!("saturated gates: |C_t - C_(t-1)| max = {drift:.3e} (memory pass-through)");

    // GRU update gate at 1 keeps the previous state bit for bit
    let gru_state = RecurrentState {
        hidden: state.hidden.clone(),
        cell: None,
    };
    let mut keep = CellWeights::zeros(CellKind::Gru, u, u, k, 1, 2);
    keep.gates[0].bias = NdArray::full(vec![u], 40.0);
    let next = cloudgru_step(&x, &gru_state, &keep, k).unwrap();
    println!(
        "GRU update gate = 1: state preserved bitwise = {}",
        next.hidden.values().data() == gru_state.hidden.values().data()
    );

    // learned weights: states evolve but keep their shape
    let learned = CellWeights::glorot(CellKind::Lstm, u, u, k, 1, 2, &mut rng);
    let mut s = state;
    for step in 0..4 {
        s = cloudlstm_step(&x, &s, &learned, k).unwrap();
        let coords = s.hidden.coords();
        println!(
            "step {step}: hidden {}x{} pts, coord range [{:+.3}, {:+.3}]",
            s.hidden.channels(),
            s.hidden.n_points(),
            coords.data().iter().cloned().fold(f64::INFINITY, f64::min),
            coords.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        );
    }
}
