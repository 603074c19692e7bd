//! CloudLSTM, CloudGRU, and CloudRNN cells over point-cloud-shaped states.
//!
//! Every affine map of the standard cell is replaced by a D-Conv. Gates use
//! the no-coordinate-sigmoid variant and apply their sigmoid uniformly to the
//! whole (value || coordinate) feature block; candidate paths use the full
//! operator split — tanh on value features, sigmoid on coordinate features of
//! the summed pre-activation. Neighbor sets are recomputed from each
//! operand's own coordinates at every step, which is what makes the
//! positioning dynamic.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dconv::{
    dconv_linear, neighbor_index_for_feats, split_feature_block, tile_bias, ModelError, Result,
};
use crate::pointcloud::{FrameVar, PointCloudFrame};
use crate::tensor::{Graph, NdArray, Tensor};

/// Which recurrent cell a weight set drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Lstm,
    Gru,
    Rnn,
}

impl CellKind {
    /// Gate count: LSTM i/f/candidate/o, GRU update/reset/candidate, RNN one.
    pub fn n_gates(self) -> usize {
        match self {
            CellKind::Lstm => 4,
            CellKind::Gru => 3,
            CellKind::Rnn => 1,
        }
    }

    pub fn gate_names(self) -> &'static [&'static str] {
        match self {
            CellKind::Lstm => &["input", "forget", "candidate", "output"],
            CellKind::Gru => &["update", "reset", "candidate"],
            CellKind::Rnn => &["candidate"],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CellKind::Lstm => "lstm",
            CellKind::Gru => "gru",
            CellKind::Rnn => "rnn",
        }
    }

    pub fn parse(s: &str) -> Option<CellKind> {
        match s {
            "lstm" => Some(CellKind::Lstm),
            "gru" => Some(CellKind::Gru),
            "rnn" => Some(CellKind::Rnn),
            _ => None,
        }
    }
}

/// One gate's weights: an input-path D-Conv, a state-path D-Conv, and a
/// shared per-output-channel bias added after the two paths are summed.
#[derive(Debug, Clone, PartialEq)]
pub struct GatePair {
    pub w_input: NdArray,
    pub w_state: NdArray,
    pub bias: NdArray,
}

/// Full weight set for one recurrent cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellWeights {
    pub kind: CellKind,
    pub gates: Vec<GatePair>,
}

impl CellWeights {
    pub fn zeros(kind: CellKind, u_input: usize, u_hidden: usize, k: usize, h: usize, l: usize) -> Self {
        let f = h + l;
        let gates = (0..kind.n_gates())
            .map(|_| GatePair {
                w_input: NdArray::zeros(vec![u_input, k, f, f, u_hidden]),
                w_state: NdArray::zeros(vec![u_hidden, k, f, f, u_hidden]),
                bias: NdArray::zeros(vec![u_hidden]),
            })
            .collect();
        CellWeights { kind, gates }
    }

    pub fn glorot(
        kind: CellKind,
        u_input: usize,
        u_hidden: usize,
        k: usize,
        h: usize,
        l: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let gates = (0..kind.n_gates())
            .map(|_| GatePair {
                w_input: crate::dconv::DConvWeights::glorot(u_input, k, h, l, u_hidden, rng).w,
                w_state: crate::dconv::DConvWeights::glorot(u_hidden, k, h, l, u_hidden, rng).w,
                bias: NdArray::zeros(vec![u_hidden]),
            })
            .collect();
        CellWeights { kind, gates }
    }

    pub fn u_hidden(&self) -> usize {
        self.gates[0].w_state.shape()[0]
    }

    pub fn lift(&self, graph: &Graph, requires_grad: bool) -> CellVars {
        CellVars {
            kind: self.kind,
            gates: self
                .gates
                .iter()
                .map(|g| GateVars {
                    w_input: graph.leaf(&g.w_input, requires_grad),
                    w_state: graph.leaf(&g.w_state, requires_grad),
                    bias: graph.leaf(&g.bias, requires_grad),
                })
                .collect(),
        }
    }
}

/// Graph handles to one cell's weights.
#[derive(Clone)]
pub struct CellVars {
    pub kind: CellKind,
    pub gates: Vec<GateVars>,
}

#[derive(Clone)]
pub struct GateVars {
    pub w_input: Tensor,
    pub w_state: Tensor,
    pub bias: Tensor,
}

/// Value/coordinate feature widths of the point-cloud blocks a cell carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureLayout {
    pub value_dim: usize,
    pub coord_dim: usize,
}

impl FeatureLayout {
    pub fn width(self) -> usize {
        self.value_dim + self.coord_dim
    }
}

/// Recurrent state in graph form: combined `(U_hidden, N, H+L)` blocks.
#[derive(Clone)]
pub struct CellState {
    pub hidden: Tensor,
    pub cell: Option<Tensor>,
}

/// Plain-data recurrent state: hidden (and, for LSTM, memory cell) frames.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    pub hidden: PointCloudFrame,
    pub cell: Option<PointCloudFrame>,
}

impl RecurrentState {
    pub fn lift(&self, graph: &Graph) -> CellState {
        CellState {
            hidden: FrameVar::from_frame(graph, &self.hidden, false)
                .feats()
                .expect("state frame concat"),
            cell: self.cell.as_ref().map(|c| {
                FrameVar::from_frame(graph, c, false)
                    .feats()
                    .expect("state frame concat")
            }),
        }
    }
}

/// Zero-valued initial state whose coordinate features copy the template
/// frame's channel-0 coordinates, replicated across `u_hidden` channels, so
/// the first step's neighborhoods are geometrically meaningful.
pub fn init_state(template: &PointCloudFrame, u_hidden: usize, kind: CellKind) -> RecurrentState {
    let (n, h, l) = (
        template.n_points(),
        template.value_dim(),
        template.coord_dim(),
    );
    let coords = NdArray::from_fn(vec![u_hidden, n, l], |idx| {
        template.coords().at(&[0, idx[1], idx[2]])
    });
    let frame = PointCloudFrame::new(
        NdArray::zeros(vec![u_hidden, n, h]),
        coords,
        template.timestamp(),
    )
    .expect("template dims validated");
    let cell = match kind {
        CellKind::Lstm => Some(frame.clone()),
        _ => None,
    };
    RecurrentState {
        hidden: frame,
        cell,
    }
}

/// Split a combined block back into a plain frame.
pub fn combined_to_frame(block: &Tensor, layout: FeatureLayout, timestamp: i64) -> PointCloudFrame {
    let arr = block.to_array();
    let (u, n) = (arr.shape()[0], arr.shape()[1]);
    let h = layout.value_dim;
    let values = NdArray::from_fn(vec![u, n, h], |idx| arr.at(&[idx[0], idx[1], idx[2]]));
    let coords = NdArray::from_fn(vec![u, n, layout.coord_dim], |idx| {
        arr.at(&[idx[0], idx[1], h + idx[2]])
    });
    PointCloudFrame::new(values, coords, timestamp).expect("block dims validated")
}

/// The candidate-path nonlinearity: tanh on value features, sigmoid on
/// coordinate features of the summed pre-activation.
pub fn candidate_activation(pre: &Tensor, value_dim: usize) -> Result<Tensor> {
    let (values, coords) = split_feature_block(pre, value_dim)?;
    Ok(Tensor::concat(&[&values.tanh()?, &coords.sigmoid()?], 2)?)
}

struct StepContext {
    x_index: crate::pointcloud::NeighborIndex,
    h_index: crate::pointcloud::NeighborIndex,
    n: usize,
    f: usize,
}

fn step_context(
    op: &'static str,
    x: &Tensor,
    state: &CellState,
    k: usize,
    layout: FeatureLayout,
) -> Result<StepContext> {
    let xs = x.shape();
    let hs = state.hidden.shape();
    if xs[1] != hs[1] {
        return Err(ModelError::Axis {
            op,
            axis: "point count (N)",
            expected: xs[1],
            actual: hs[1],
        });
    }
    let x_index = neighbor_index_for_feats(x, layout.coord_dim, k)?;
    let h_index = neighbor_index_for_feats(&state.hidden, layout.coord_dim, k)?;
    Ok(StepContext {
        x_index,
        h_index,
        n: xs[1],
        f: layout.width(),
    })
}

fn gate_preactivation(
    x: &Tensor,
    hidden: &Tensor,
    gate: &GateVars,
    ctx: &StepContext,
) -> Result<Tensor> {
    let a = dconv_linear(x, &ctx.x_index, &gate.w_input)?;
    let b = dconv_linear(hidden, &ctx.h_index, &gate.w_state)?;
    a.add(&b)?
        .add(&tile_bias(&gate.bias, ctx.n, ctx.f)?)
        .map_err(ModelError::from)
}

/// One CloudLSTM step: sigma-gates on the unified feature block, a full
/// D-Conv candidate, memory update, and tanh-gated output.
pub fn cloudlstm_step_var(
    x: &Tensor,
    state: &CellState,
    weights: &CellVars,
    k: usize,
    layout: FeatureLayout,
) -> Result<CellState> {
    debug_assert_eq!(weights.kind, CellKind::Lstm);
    let ctx = step_context("cloudlstm_step", x, state, k, layout)?;
    let cell = state.cell.as_ref().expect("LSTM state carries a cell");
    let i = gate_preactivation(x, &state.hidden, &weights.gates[0], &ctx)?.sigmoid()?;
    let f = gate_preactivation(x, &state.hidden, &weights.gates[1], &ctx)?.sigmoid()?;
    let cand = candidate_activation(
        &gate_preactivation(x, &state.hidden, &weights.gates[2], &ctx)?,
        layout.value_dim,
    )?;
    let o = gate_preactivation(x, &state.hidden, &weights.gates[3], &ctx)?.sigmoid()?;
    let c_t = f.mul(cell)?.add(&i.mul(&cand)?)?;
    let h_t = o.mul(&c_t.tanh()?)?;
    assert_eq!(h_t.shape()[1], ctx.n, "information intactness");
    Ok(CellState {
        hidden: h_t,
        cell: Some(c_t),
    })
}

/// One CloudGRU step. Update gate at 1 passes the previous hidden state
/// through unchanged; at 0 the candidate replaces it.
pub fn cloudgru_step_var(
    x: &Tensor,
    state: &CellState,
    weights: &CellVars,
    k: usize,
    layout: FeatureLayout,
) -> Result<CellState> {
    debug_assert_eq!(weights.kind, CellKind::Gru);
    let ctx = step_context("cloudgru_step", x, state, k, layout)?;
    let z = gate_preactivation(x, &state.hidden, &weights.gates[0], &ctx)?.sigmoid()?;
    let r = gate_preactivation(x, &state.hidden, &weights.gates[1], &ctx)?.sigmoid()?;
    let gated = r.mul(&state.hidden)?;
    // the reset-gated state is a new point cloud; search its own coordinates
    let gated_index = neighbor_index_for_feats(&gated, layout.coord_dim, k)?;
    let cand_gate = &weights.gates[2];
    let pre = dconv_linear(x, &ctx.x_index, &cand_gate.w_input)?
        .add(&dconv_linear(&gated, &gated_index, &cand_gate.w_state)?)?
        .add(&tile_bias(&cand_gate.bias, ctx.n, ctx.f)?)?;
    let cand = candidate_activation(&pre, layout.value_dim)?;
    let ones = x.graph().full(z.shape(), 1.0);
    let h_t = z.mul(&state.hidden)?.add(&ones.sub(&z)?.mul(&cand)?)?;
    assert_eq!(h_t.shape()[1], ctx.n, "information intactness");
    Ok(CellState {
        hidden: h_t,
        cell: None,
    })
}

/// One CloudRNN (Elman-style) step.
pub fn cloudrnn_step_var(
    x: &Tensor,
    state: &CellState,
    weights: &CellVars,
    k: usize,
    layout: FeatureLayout,
) -> Result<CellState> {
    debug_assert_eq!(weights.kind, CellKind::Rnn);
    let ctx = step_context("cloudrnn_step", x, state, k, layout)?;
    let pre = gate_preactivation(x, &state.hidden, &weights.gates[0], &ctx)?;
    let h_t = candidate_activation(&pre, layout.value_dim)?;
    assert_eq!(h_t.shape()[1], ctx.n, "information intactness");
    Ok(CellState {
        hidden: h_t,
        cell: None,
    })
}

/// Dispatch one step on the cell kind carried by the weights.
pub fn cell_step_var(
    x: &Tensor,
    state: &CellState,
    weights: &CellVars,
    k: usize,
    layout: FeatureLayout,
) -> Result<CellState> {
    match weights.kind {
        CellKind::Lstm => cloudlstm_step_var(x, state, weights, k, layout),
        CellKind::Gru => cloudgru_step_var(x, state, weights, k, layout),
        CellKind::Rnn => cloudrnn_step_var(x, state, weights, k, layout),
    }
}

fn plain_step(
    x: &PointCloudFrame,
    state: &RecurrentState,
    weights: &CellWeights,
    k: usize,
) -> Result<RecurrentState> {
    let layout = FeatureLayout {
        value_dim: x.value_dim(),
        coord_dim: x.coord_dim(),
    };
    let graph = Graph::new();
    let x_feats = FrameVar::from_frame(&graph, x, false).feats()?;
    let state_var = state.lift(&graph);
    let vars = weights.lift(&graph, false);
    let next = cell_step_var(&x_feats, &state_var, &vars, k, layout)?;
    Ok(RecurrentState {
        hidden: combined_to_frame(&next.hidden, layout, x.timestamp()),
        cell: next
            .cell
            .map(|c| combined_to_frame(&c, layout, x.timestamp())),
    })
}

/// CloudLSTM step on plain frames (builds a throwaway graph).
pub fn cloudlstm_step(
    x: &PointCloudFrame,
    state: &RecurrentState,
    weights: &CellWeights,
    k: usize,
) -> Result<RecurrentState> {
    assert_eq!(weights.kind, CellKind::Lstm);
    plain_step(x, state, weights, k)
}

/// CloudGRU step on plain frames.
pub fn cloudgru_step(
    x: &PointCloudFrame,
    state: &RecurrentState,
    weights: &CellWeights,
    k: usize,
) -> Result<RecurrentState> {
    assert_eq!(weights.kind, CellKind::Gru);
    plain_step(x, state, weights, k)
}

/// CloudRNN step on plain frames.
pub fn cloudrnn_step(
    x: &PointCloudFrame,
    state: &RecurrentState,
    weights: &CellWeights,
    k: usize,
) -> Result<RecurrentState> {
    assert_eq!(weights.kind, CellKind::Rnn);
    plain_step(x, state, weights, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dconv::{dconv_reference_with_index, DConvConfig, DConvWeights};
    use crate::pointcloud::NeighborIndex;
    use crate::tensor::sigmoid;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_frame(rng: &mut ChaCha8Rng, u: usize, n: usize, h: usize, l: usize) -> PointCloudFrame {
        let values = NdArray::new(
            vec![u, n, h],
            (0..u * n * h).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let coords = NdArray::new(
            vec![u, n, l],
            (0..u * n * l).map(|_| rng.random_range(0.0..1.0)).collect(),
        )
        .unwrap();
        PointCloudFrame::new(values, coords, 0).unwrap()
    }

    fn zero_state(u: usize, n: usize, h: usize, l: usize, kind: CellKind) -> RecurrentState {
        let frame = PointCloudFrame::new(
            NdArray::zeros(vec![u, n, h]),
            NdArray::zeros(vec![u, n, l]),
            0,
        )
        .unwrap();
        RecurrentState {
            hidden: frame.clone(),
            cell: matches!(kind, CellKind::Lstm).then_some(frame),
        }
    }

    #[test]
    fn lstm_zero_weights_forced_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let x = random_frame(&mut rng, 2, 5, 1, 2);
        let state = zero_state(3, 5, 1, 2, CellKind::Lstm);
        let weights = CellWeights::zeros(CellKind::Lstm, 2, 3, 2, 1, 2);
        let next = cloudlstm_step(&x, &state, &weights, 2).unwrap();
        // gates are all 0.5; candidate values tanh(0)=0, coords sigmoid(0)=0.5
        // C_t: values 0, coords 0.25; H_t = 0.5 * tanh(C_t)
        for &v in next.hidden.values().data() {
            assert!(v.abs() < 1e-15);
        }
        let expect_coord = 0.5 * (0.25f64).tanh();
        for &c in next.hidden.coords().data() {
            assert!((c - expect_coord).abs() < 1e-12);
        }
        let cell = next.cell.unwrap();
        for &v in cell.values().data() {
            assert!(v.abs() < 1e-15);
        }
        for &c in cell.coords().data() {
            assert!((c - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn lstm_saturated_gates_pass_memory_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let x = random_frame(&mut rng, 2, 6, 1, 2);
        let mut state = zero_state(2, 6, 1, 2, CellKind::Lstm);
        state.cell = Some(random_frame(&mut rng, 2, 6, 1, 2));
        let mut weights = CellWeights::zeros(CellKind::Lstm, 2, 2, 2, 1, 2);
        weights.gates[0].bias = NdArray::full(vec![2], -40.0); // input gate -> 0
        weights.gates[1].bias = NdArray::full(vec![2], 40.0); // forget gate -> 1
        let next = cloudlstm_step(&x, &state, &weights, 2).unwrap();
        let prev = state.cell.unwrap();
        let got = next.cell.unwrap();
        assert!(got.values().max_abs_diff(prev.values()) <= 1e-12);
        assert!(got.coords().max_abs_diff(prev.coords()) <= 1e-12);
    }

    /// Straight-line transcription of the cell equations composed from
    /// dconv_reference, on plain buffers.
    fn lstm_oracle(
        x: &PointCloudFrame,
        state: &RecurrentState,
        weights: &CellWeights,
        k: usize,
    ) -> (NdArray, NdArray) {
        let u_h = weights.u_hidden();
        let (n, h, l) = (x.n_points(), x.value_dim(), x.coord_dim());
        let f = h + l;
        let x_index = NeighborIndex::from_frame(x, k).unwrap();
        let h_index = NeighborIndex::from_frame(&state.hidden, k).unwrap();
        let gate_cfg = DConvConfig::gate(k);

        // combined (U, N, F) pre-activation of one gate pair
        let pre = |gate: &GatePair| -> NdArray {
            let a = dconv_reference_with_index(
                x,
                &x_index,
                &DConvWeights {
                    w: gate.w_input.clone(),
                    b: NdArray::zeros(vec![u_h]),
                },
                &gate_cfg,
            )
            .unwrap();
            let b = dconv_reference_with_index(
                &state.hidden,
                &h_index,
                &DConvWeights {
                    w: gate.w_state.clone(),
                    b: NdArray::zeros(vec![u_h]),
                },
                &gate_cfg,
            )
            .unwrap();
            NdArray::from_fn(vec![u_h, n, f], |idx| {
                let (u, p, m) = (idx[0], idx[1], idx[2]);
                let pick = |fr: &PointCloudFrame| {
                    if m < h {
                        fr.values().at(&[u, p, m])
                    } else {
                        fr.coords().at(&[u, p, m - h])
                    }
                };
                pick(&a) + pick(&b) + gate.bias.at(&[u])
            })
        };

        let map = |arr: &NdArray, f: &dyn Fn(f64) -> f64| {
            NdArray::new(arr.shape().to_vec(), arr.data().iter().map(|&v| f(v)).collect()).unwrap()
        };
        let i = map(&pre(&weights.gates[0]), &sigmoid);
        let fg = map(&pre(&weights.gates[1]), &sigmoid);
        let cand_pre = pre(&weights.gates[2]);
        let cand = NdArray::from_fn(vec![u_h, n, f], |idx| {
            let v = cand_pre.at(idx);
            if idx[2] < h {
                v.tanh()
            } else {
                sigmoid(v)
            }
        });
        let o = map(&pre(&weights.gates[3]), &sigmoid);

        let prev_cell = state.cell.as_ref().unwrap();
        let c_t = NdArray::from_fn(vec![u_h, n, f], |idx| {
            let (u, p, m) = (idx[0], idx[1], idx[2]);
            let prev = if m < h {
                prev_cell.values().at(&[u, p, m])
            } else {
                prev_cell.coords().at(&[u, p, m - h])
            };
            fg.at(idx) * prev + i.at(idx) * cand.at(idx)
        });
        let h_t = NdArray::from_fn(vec![u_h, n, f], |idx| o.at(idx) * c_t.at(idx).tanh());
        (h_t, c_t)
    }

    #[test]
    fn lstm_matches_transcription_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = random_frame(&mut rng, 2, 6, 1, 2);
        let mut state = zero_state(3, 6, 1, 2, CellKind::Lstm);
        state.hidden = random_frame(&mut rng, 3, 6, 1, 2);
        state.cell = Some(random_frame(&mut rng, 3, 6, 1, 2));
        let weights = CellWeights::glorot(CellKind::Lstm, 2, 3, 3, 1, 2, &mut rng);

        let next = cloudlstm_step(&x, &state, &weights, 3).unwrap();
        let (h_expect, c_expect) = lstm_oracle(&x, &state, &weights, 3);

        let combined = |fr: &PointCloudFrame| {
            NdArray::from_fn(vec![3, 6, 3], |idx| {
                if idx[2] < 1 {
                    fr.values().at(&[idx[0], idx[1], idx[2]])
                } else {
                    fr.coords().at(&[idx[0], idx[1], idx[2] - 1])
                }
            })
        };
        assert!(combined(&next.hidden).max_abs_diff(&h_expect) < 1e-9);
        assert!(combined(&next.cell.unwrap()).max_abs_diff(&c_expect) < 1e-9);
    }

    #[test]
    fn gru_update_gate_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let x = random_frame(&mut rng, 2, 5, 1, 2);
        let mut state = zero_state(2, 5, 1, 2, CellKind::Gru);
        state.hidden = random_frame(&mut rng, 2, 5, 1, 2);

        // update gate -> 1: state passes through exactly
        let mut keep = CellWeights::zeros(CellKind::Gru, 2, 2, 2, 1, 2);
        keep.gates[0].bias = NdArray::full(vec![2], 40.0);
        let next = cloudgru_step(&x, &state, &keep, 2).unwrap();
        assert_eq!(next.hidden.values().data(), state.hidden.values().data());
        assert_eq!(next.hidden.coords().data(), state.hidden.coords().data());

        // update gate -> 0: candidate replaces the state
        let mut replace = CellWeights::zeros(CellKind::Gru, 2, 2, 2, 1, 2);
        replace.gates[0].bias = NdArray::full(vec![2], -40.0);
        let next = cloudgru_step(&x, &state, &replace, 2).unwrap();
        // zero candidate weights: values tanh(0)=0, coords sigmoid(0)=0.5
        for &v in next.hidden.values().data() {
            assert!(v.abs() <= 1e-12);
        }
        for &c in next.hidden.coords().data() {
            assert!((c - 0.5).abs() <= 1e-12);
        }
    }

    #[test]
    fn gru_matches_transcription_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let x = random_frame(&mut rng, 2, 6, 1, 2);
        let mut state = zero_state(2, 6, 1, 2, CellKind::Gru);
        state.hidden = random_frame(&mut rng, 2, 6, 1, 2);
        let weights = CellWeights::glorot(CellKind::Gru, 2, 2, 3, 1, 2, &mut rng);
        let next = cloudgru_step(&x, &state, &weights, 3).unwrap();

        // oracle from dconv_reference
        let (n, h, f, u_h) = (6usize, 1usize, 3usize, 2usize);
        let x_index = NeighborIndex::from_frame(&x, 3).unwrap();
        let h_index = NeighborIndex::from_frame(&state.hidden, 3).unwrap();
        let cfg = DConvConfig::gate(3);
        let raw = |fr: &PointCloudFrame, idx: &NeighborIndex, w: &NdArray| {
            dconv_reference_with_index(
                fr,
                idx,
                &DConvWeights {
                    w: w.clone(),
                    b: NdArray::zeros(vec![u_h]),
                },
                &cfg,
            )
            .unwrap()
        };
        let pick = |fr: &PointCloudFrame, u: usize, p: usize, m: usize| {
            if m < h {
                fr.values().at(&[u, p, m])
            } else {
                fr.coords().at(&[u, p, m - h])
            }
        };
        let pre_of = |gate: &GatePair| {
            let a = raw(&x, &x_index, &gate.w_input);
            let b = raw(&state.hidden, &h_index, &gate.w_state);
            NdArray::from_fn(vec![u_h, n, f], |idx| {
                pick(&a, idx[0], idx[1], idx[2]) + pick(&b, idx[0], idx[1], idx[2])
                    + gate.bias.at(&[idx[0]])
            })
        };
        let z = pre_of(&weights.gates[0]);
        let r = pre_of(&weights.gates[1]);
        let gated = PointCloudFrame::new(
            NdArray::from_fn(vec![u_h, n, h], |idx| {
                sigmoid(r.at(idx)) * state.hidden.values().at(idx)
            }),
            NdArray::from_fn(vec![u_h, n, 2], |idx| {
                sigmoid(r.at(&[idx[0], idx[1], h + idx[2]])) * state.hidden.coords().at(idx)
            }),
            0,
        )
        .unwrap();
        let gated_index = NeighborIndex::from_frame(&gated, 3).unwrap();
        let a = raw(&x, &x_index, &weights.gates[2].w_input);
        let b = raw(&gated, &gated_index, &weights.gates[2].w_state);
        let expect = NdArray::from_fn(vec![u_h, n, f], |idx| {
            let (u, p, m) = (idx[0], idx[1], idx[2]);
            let pre = pick(&a, u, p, m) + pick(&b, u, p, m) + weights.gates[2].bias.at(&[u]);
            let cand = if m < h { pre.tanh() } else { sigmoid(pre) };
            let zz = sigmoid(z.at(idx));
            let prev = pick(&state.hidden, u, p, m);
            zz * prev + (1.0 - zz) * cand
        });
        let got = NdArray::from_fn(vec![u_h, n, f], |idx| pick(&next.hidden, idx[0], idx[1], idx[2]));
        assert!(got.max_abs_diff(&expect) < 1e-9);
    }

    #[test]
    fn rnn_zero_weights_and_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let x = random_frame(&mut rng, 2, 5, 1, 2);
        let mut state = zero_state(2, 5, 1, 2, CellKind::Rnn);
        state.hidden = random_frame(&mut rng, 2, 5, 1, 2);

        let zeros = CellWeights::zeros(CellKind::Rnn, 2, 2, 2, 1, 2);
        let next = cloudrnn_step(&x, &state, &zeros, 2).unwrap();
        assert!(next.hidden.values().data().iter().all(|&v| v == 0.0));
        assert!(next.hidden.coords().data().iter().all(|&c| c == 0.5));

        // single-point hand computation: K=1, U=1, H=1, L=1
        let x1 = PointCloudFrame::new(
            NdArray::new(vec![1, 1, 1], vec![0.8]).unwrap(),
            NdArray::new(vec![1, 1, 1], vec![0.3]).unwrap(),
            0,
        )
        .unwrap();
        let s1 = RecurrentState {
            hidden: PointCloudFrame::new(
                NdArray::new(vec![1, 1, 1], vec![0.2]).unwrap(),
                NdArray::new(vec![1, 1, 1], vec![0.6]).unwrap(),
                0,
            )
            .unwrap(),
            cell: None,
        };
        let mut w1 = CellWeights::zeros(CellKind::Rnn, 1, 1, 1, 1, 1);
        // w[input feature m, output feature m'] laid out as (1,1,2,2,1)
        w1.gates[0].w_input = NdArray::new(vec![1, 1, 2, 2, 1], vec![0.5, -0.25, 1.5, 0.75]).unwrap();
        w1.gates[0].w_state = NdArray::new(vec![1, 1, 2, 2, 1], vec![-1.0, 0.5, 0.25, -0.5]).unwrap();
        w1.gates[0].bias = NdArray::new(vec![1], vec![0.1]).unwrap();
        let got = cloudrnn_step(&x1, &s1, &w1, 1).unwrap();
        #[allow(clippy::neg_multiply)] // mirrors the w * feature pairing
        let pre_v: f64 = 0.5 * 0.8 + 1.5 * 0.3 + (-1.0) * 0.2 + 0.25 * 0.6 + 0.1;
        let pre_c: f64 = -0.25 * 0.8 + 0.75 * 0.3 + 0.5 * 0.2 + (-0.5) * 0.6 + 0.1;
        assert!((got.hidden.values().at(&[0, 0, 0]) - pre_v.tanh()).abs() < 1e-12);
        assert!((got.hidden.coords().at(&[0, 0, 0]) - sigmoid(pre_c)).abs() < 1e-12);
    }

    #[test]
    fn init_state_copies_template_coords() {
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let template = random_frame(&mut rng, 2, 7, 1, 2);
        let a = init_state(&template, 4, CellKind::Lstm);
        let b = init_state(&template, 4, CellKind::Lstm);
        assert_eq!(a, b);
        assert!(a.hidden.values().data().iter().all(|&v| v == 0.0));
        assert_eq!(a.hidden.channels(), 4);
        for u in 0..4 {
            for p in 0..7 {
                for d in 0..2 {
                    assert_eq!(
                        a.hidden.coords().at(&[u, p, d]).to_bits(),
                        template.coords().at(&[0, p, d]).to_bits()
                    );
                }
            }
        }
        let cell = a.cell.unwrap();
        assert_eq!(cell.coords().data(), a.hidden.coords().data());
        assert!(init_state(&template, 4, CellKind::Gru).cell.is_none());
    }

    #[test]
    fn full_step_permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let x = random_frame(&mut rng, 2, 9, 1, 2);
        let mut state = zero_state(2, 9, 1, 2, CellKind::Lstm);
        state.hidden = random_frame(&mut rng, 2, 9, 1, 2);
        state.cell = Some(random_frame(&mut rng, 2, 9, 1, 2));
        let weights = CellWeights::glorot(CellKind::Lstm, 2, 2, 3, 1, 2, &mut rng);

        let mut perm: Vec<usize> = (0..9).collect();
        perm.shuffle(&mut rng);

        let direct = cloudlstm_step(&x, &state, &weights, 3).unwrap();
        let permuted_state = RecurrentState {
            hidden: state.hidden.permute_points(&perm),
            cell: state.cell.as_ref().map(|c| c.permute_points(&perm)),
        };
        let permuted = cloudlstm_step(&x.permute_points(&perm), &permuted_state, &weights, 3).unwrap();

        let direct_h = direct.hidden.permute_points(&perm);
        assert!(direct_h.values().max_abs_diff(permuted.hidden.values()) <= 1e-9);
        assert!(direct_h.coords().max_abs_diff(permuted.hidden.coords()) <= 1e-9);
    }

    /// Location variance: the next step's neighborhoods come from predicted
    /// coordinates, so they generally differ from the input's neighborhoods.
    #[test]
    fn dynamic_positioning_changes_neighbor_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let x = random_frame(&mut rng, 2, 10, 1, 2);
        let state = init_state(&x, 2, CellKind::Lstm);
        let weights = CellWeights::glorot(CellKind::Lstm, 2, 2, 3, 1, 2, &mut rng);
        let next = cloudlstm_step(&x, &state, &weights, 3).unwrap();
        let before = NeighborIndex::from_frame(&x, 3).unwrap();
        let after = NeighborIndex::from_frame(&next.hidden, 3).unwrap();
        assert_ne!(before, after, "predicted coordinates should move the neighborhoods");
    }

    #[test]
    fn state_shape_preserved_over_many_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(48);
        let weights = CellWeights::glorot(CellKind::Gru, 2, 3, 2, 1, 2, &mut rng);
        let x = random_frame(&mut rng, 2, 6, 1, 2);
        let mut state = init_state(&x, 3, CellKind::Gru);
        for _ in 0..8 {
            state = cloudgru_step(&x, &state, &weights, 2).unwrap();
            assert_eq!(state.hidden.channels(), 3);
            assert_eq!(state.hidden.n_points(), 6);
        }
    }

    #[test]
    fn point_count_mismatch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(49);
        let x = random_frame(&mut rng, 2, 5, 1, 2);
        let state = zero_state(2, 6, 1, 2, CellKind::Rnn);
        let weights = CellWeights::zeros(CellKind::Rnn, 2, 2, 2, 1, 2);
        assert!(matches!(
            cloudrnn_step(&x, &state, &weights, 2),
            Err(ModelError::Axis { axis: "point count (N)", .. })
        ));
    }

    /// Gradients through six unrolled steps match finite differences for
    /// every weight tensor of the cell.
    #[test]
    fn unrolled_gradients_match_finite_differences() {
        use crate::gradcheck::{central_diff, max_rel_err};
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let frames: Vec<PointCloudFrame> =
            (0..6).map(|_| random_frame(&mut rng, 1, 4, 1, 2)).collect();
        let init = init_state(&frames[0], 2, CellKind::Lstm);
        let weights = CellWeights::glorot(CellKind::Lstm, 1, 2, 2, 1, 2, &mut rng);
        let layout = FeatureLayout {
            value_dim: 1,
            coord_dim: 2,
        };
        let probe: Vec<f64> = (0..2 * 4 * 3).map(|i| 0.08 + 0.013 * i as f64).collect();

        let flatten = |w: &CellWeights| -> Vec<f64> {
            let mut flat = Vec::new();
            for gate in &w.gates {
                flat.extend_from_slice(gate.w_input.data());
                flat.extend_from_slice(gate.w_state.data());
                flat.extend_from_slice(gate.bias.data());
            }
            flat
        };
        let unflatten = |flat: &[f64]| -> CellWeights {
            let mut w = weights.clone();
            let mut cursor = 0;
            for gate in &mut w.gates {
                for arr in [&mut gate.w_input, &mut gate.w_state, &mut gate.bias] {
                    let len = arr.numel();
                    arr.data_mut().copy_from_slice(&flat[cursor..cursor + len]);
                    cursor += len;
                }
            }
            w
        };

        let eval = |flat: &[f64], want_grad: bool| -> (f64, Option<Vec<f64>>) {
            let graph = Graph::new();
            let vars = unflatten(flat).lift(&graph, true);
            let mut state = init.lift(&graph);
            for frame in &frames {
                let x = FrameVar::from_frame(&graph, frame, false).feats().unwrap();
                state = cloudlstm_step_var(&x, &state, &vars, 2, layout).unwrap();
            }
            let wt = graph.leaf(&NdArray::new(state.hidden.shape(), probe.clone()).unwrap(), false);
            let loss = state.hidden.mul(&wt).unwrap().reduce_sum().unwrap();
            let v = loss.item();
            if want_grad {
                graph.backward(&loss).unwrap();
                let mut g = Vec::new();
                for gate in &vars.gates {
                    g.extend_from_slice(&gate.w_input.grad().unwrap());
                    g.extend_from_slice(&gate.w_state.grad().unwrap());
                    g.extend_from_slice(&gate.bias.grad().unwrap());
                }
                (v, Some(g))
            } else {
                (v, None)
            }
        };

        let base = flatten(&weights);
        let (_, g) = eval(&base, true);
        let analytic = g.unwrap();
        let numeric = central_diff(|w| eval(w, false).0, &base, 1e-5);
        assert!(max_rel_err(&analytic, &numeric, 1e-4) < 1e-4);
    }
}
