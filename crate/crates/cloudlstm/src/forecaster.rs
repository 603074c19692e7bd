//! Two-stack Seq2seq encoder-decoder over point-cloud frames, with
//! D-Conv embedding layers around the recurrent core and optional soft
//! attention between encoder and decoder states.
//!
//! The encoder runs the stacked cells over the M history frames; the decoder
//! seeds from the last history frame and rolls out autoregressively for J
//! steps, each de-embedded output feeding the next step's input (or the
//! ground-truth frame under teacher forcing).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dconv::{
    dconv_combined, dconv_linear, split_feature_block, tile_bias, DConvVars, DConvWeights,
    ModelError, Result,
};
use crate::pointcloud::{FrameVar, NeighborIndex, PointCloudFrame};
use crate::recurrent::{
    cell_step_var, init_state, CellKind, CellState, CellVars, CellWeights, FeatureLayout,
};
use crate::tensor::{Graph, NdArray, Tensor};

/// Architecture and rollout configuration; fully materialized so a manifest
/// entry reproduces the model exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecasterConfig {
    /// Input channels U (one per measured quantity).
    pub input_channels: usize,
    /// Value features per channel H.
    pub value_dim: usize,
    /// Coordinate features per channel L.
    pub coord_dim: usize,
    /// Stacked cells per side of the Seq2seq pair.
    pub stacks: usize,
    /// Hidden channels per cell.
    pub hidden_channels: usize,
    /// Neighborhood size K.
    pub k_neighbors: usize,
    /// History length M.
    pub history: usize,
    /// Forecast horizon J.
    pub horizon: usize,
    /// Recurrent cell variant.
    pub cell: CellKind,
    /// Soft attention between encoder and decoder top-stack states.
    pub attention: bool,
    /// Emit network-predicted coordinates; when false, forecasts carry the
    /// static input coordinates and only value features come from the net.
    pub emit_coordinates: bool,
}

impl ForecasterConfig {
    /// Paper-style defaults: 2 stacks, 36 channels, K = 9, 6-in / 6-out.
    pub fn new(input_channels: usize, value_dim: usize, coord_dim: usize) -> Self {
        ForecasterConfig {
            input_channels,
            value_dim,
            coord_dim,
            stacks: 2,
            hidden_channels: 36,
            k_neighbors: 9,
            history: 6,
            horizon: 6,
            cell: CellKind::Lstm,
            attention: false,
            emit_coordinates: false,
        }
    }

    pub fn feature_layout(&self) -> FeatureLayout {
        FeatureLayout {
            value_dim: self.value_dim,
            coord_dim: self.coord_dim,
        }
    }
}

/// Attention parameters: the score kernel W_a (a pointwise D-Conv over the
/// concatenated encoder/decoder states), the score projection vector v_a,
/// and the pointwise projection that maps the [state; context] concatenation
/// back to `hidden_channels` before de-embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub score_kernel: DConvWeights,
    pub score_vec: NdArray,
    pub output_proj: DConvWeights,
}

/// All learnable tensors of one forecaster.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub embed: DConvWeights,
    pub encoder: Vec<CellWeights>,
    pub decoder: Vec<CellWeights>,
    pub attention: Option<AttentionWeights>,
    pub de_embed: DConvWeights,
}

impl ModelWeights {
    pub fn init(config: &ForecasterConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (u, h, l, c, k) = (
            config.input_channels,
            config.value_dim,
            config.coord_dim,
            config.hidden_channels,
            config.k_neighbors,
        );
        let embed = DConvWeights::glorot(u, k, h, l, c, &mut rng);
        let cells = |rng: &mut ChaCha8Rng| -> Vec<CellWeights> {
            (0..config.stacks)
                .map(|_| CellWeights::glorot(config.cell, c, c, k, h, l, rng))
                .collect()
        };
        let encoder = cells(&mut rng);
        let decoder = cells(&mut rng);
        let attention = config.attention.then(|| {
            let f = h + l;
            let limit = (6.0 / ((2 * c * f) as f64 + (c * f) as f64)).sqrt();
            let mut uniform = |n: usize| -> NdArray {
                use rand::Rng;
                NdArray::new(
                    vec![n],
                    (0..n).map(|_| rng.random_range(-limit..limit)).collect(),
                )
                .unwrap()
            };
            let score_vec = uniform(c);
            AttentionWeights {
                score_kernel: DConvWeights::glorot(2 * c, 1, h, l, c, &mut rng),
                score_vec,
                output_proj: DConvWeights::glorot(2 * c, 1, h, l, c, &mut rng),
            }
        });
        let de_embed = DConvWeights::glorot(c, k, h, l, u, &mut rng);
        ModelWeights {
            embed,
            encoder,
            decoder,
            attention,
            de_embed,
        }
    }

    pub fn zeros(config: &ForecasterConfig) -> Self {
        let (u, h, l, c, k) = (
            config.input_channels,
            config.value_dim,
            config.coord_dim,
            config.hidden_channels,
            config.k_neighbors,
        );
        ModelWeights {
            embed: DConvWeights::zeros(u, k, h, l, c),
            encoder: (0..config.stacks)
                .map(|_| CellWeights::zeros(config.cell, c, c, k, h, l))
                .collect(),
            decoder: (0..config.stacks)
                .map(|_| CellWeights::zeros(config.cell, c, c, k, h, l))
                .collect(),
            attention: config.attention.then(|| AttentionWeights {
                score_kernel: DConvWeights::zeros(2 * c, 1, h, l, c),
                score_vec: NdArray::zeros(vec![c]),
                output_proj: DConvWeights::zeros(2 * c, 1, h, l, c),
            }),
            de_embed: DConvWeights::zeros(c, k, h, l, u),
        }
    }

    /// Visit every parameter tensor in a stable, documented order. The same
    /// order backs the optimizer state, checkpoint layout, and gradient
    /// extraction.
    pub fn visit(&self, f: &mut impl FnMut(&str, &NdArray)) {
        f("embed.w", &self.embed.w);
        f("embed.b", &self.embed.b);
        for (side, cells) in [("encoder", &self.encoder), ("decoder", &self.decoder)] {
            for (s, cell) in cells.iter().enumerate() {
                for (g, gate) in cell.gates.iter().enumerate() {
                    let gate_name = cell.kind.gate_names()[g];
                    f(&format!("{side}{s}.{gate_name}.w_input"), &gate.w_input);
                    f(&format!("{side}{s}.{gate_name}.w_state"), &gate.w_state);
                    f(&format!("{side}{s}.{gate_name}.bias"), &gate.bias);
                }
            }
        }
        if let Some(att) = &self.attention {
            f("attention.score_kernel.w", &att.score_kernel.w);
            f("attention.score_kernel.b", &att.score_kernel.b);
            f("attention.score_vec", &att.score_vec);
            f("attention.output_proj.w", &att.output_proj.w);
            f("attention.output_proj.b", &att.output_proj.b);
        }
        f("de_embed.w", &self.de_embed.w);
        f("de_embed.b", &self.de_embed.b);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&str, &mut NdArray)) {
        f("embed.w", &mut self.embed.w);
        f("embed.b", &mut self.embed.b);
        for (side, cells) in [
            ("encoder", &mut self.encoder),
            ("decoder", &mut self.decoder),
        ] {
            for (s, cell) in cells.iter_mut().enumerate() {
                let kind = cell.kind;
                for (g, gate) in cell.gates.iter_mut().enumerate() {
                    let gate_name = kind.gate_names()[g];
                    f(&format!("{side}{s}.{gate_name}.w_input"), &mut gate.w_input);
                    f(&format!("{side}{s}.{gate_name}.w_state"), &mut gate.w_state);
                    f(&format!("{side}{s}.{gate_name}.bias"), &mut gate.bias);
                }
            }
        }
        if let Some(att) = &mut self.attention {
            f("attention.score_kernel.w", &mut att.score_kernel.w);
            f("attention.score_kernel.b", &mut att.score_kernel.b);
            f("attention.score_vec", &mut att.score_vec);
            f("attention.output_proj.w", &mut att.output_proj.w);
            f("attention.output_proj.b", &mut att.output_proj.b);
        }
        f("de_embed.w", &mut self.de_embed.w);
        f("de_embed.b", &mut self.de_embed.b);
    }

    pub fn lift(&self, graph: &Graph, requires_grad: bool) -> ModelVars {
        ModelVars {
            embed: self.embed.lift(graph, requires_grad),
            encoder: self
                .encoder
                .iter()
                .map(|c| c.lift(graph, requires_grad))
                .collect(),
            decoder: self
                .decoder
                .iter()
                .map(|c| c.lift(graph, requires_grad))
                .collect(),
            attention: self.attention.as_ref().map(|a| AttentionVars {
                score_kernel: a.score_kernel.lift(graph, requires_grad),
                score_vec: graph.leaf(&a.score_vec, requires_grad),
                output_proj: a.output_proj.lift(graph, requires_grad),
            }),
            de_embed: self.de_embed.lift(graph, requires_grad),
        }
    }
}

/// Graph handles to the full weight set; mirrors [`ModelWeights::visit`].
#[derive(Clone)]
pub struct ModelVars {
    pub embed: DConvVars,
    pub encoder: Vec<CellVars>,
    pub decoder: Vec<CellVars>,
    pub attention: Option<AttentionVars>,
    pub de_embed: DConvVars,
}

#[derive(Clone)]
pub struct AttentionVars {
    pub score_kernel: DConvVars,
    pub score_vec: Tensor,
    pub output_proj: DConvVars,
}

impl ModelVars {
    /// Same visitation order as [`ModelWeights::visit`].
    pub fn visit_tensors(&self, f: &mut impl FnMut(&str, &Tensor)) {
        f("embed.w", &self.embed.w);
        f("embed.b", &self.embed.b);
        for (side, cells) in [("encoder", &self.encoder), ("decoder", &self.decoder)] {
            for (s, cell) in cells.iter().enumerate() {
                for (g, gate) in cell.gates.iter().enumerate() {
                    let gate_name = cell.kind.gate_names()[g];
                    f(&format!("{side}{s}.{gate_name}.w_input"), &gate.w_input);
                    f(&format!("{side}{s}.{gate_name}.w_state"), &gate.w_state);
                    f(&format!("{side}{s}.{gate_name}.bias"), &gate.bias);
                }
            }
        }
        if let Some(att) = &self.attention {
            f("attention.score_kernel.w", &att.score_kernel.w);
            f("attention.score_kernel.b", &att.score_kernel.b);
            f("attention.score_vec", &att.score_vec);
            f("attention.output_proj.w", &att.output_proj.w);
            f("attention.output_proj.b", &att.output_proj.b);
        }
        f("de_embed.w", &self.de_embed.w);
        f("de_embed.b", &self.de_embed.b);
    }
}

/// Embedding layer: one full D-Conv lifting the raw channels to
/// `hidden_channels`, on combined blocks.
pub fn embed_var(
    raw_feats: &Tensor,
    weights: &DConvVars,
    k: usize,
    layout: FeatureLayout,
) -> Result<Tensor> {
    let index = crate::dconv::neighbor_index_for_feats(raw_feats, layout.coord_dim, k)?;
    dconv_combined(raw_feats, layout.value_dim, &index, weights, true)
}

/// Inverse head mapping hidden blocks back to the input channel count.
pub fn de_embed_var(
    hidden: &Tensor,
    weights: &DConvVars,
    k: usize,
    layout: FeatureLayout,
) -> Result<Tensor> {
    let index = crate::dconv::neighbor_index_for_feats(hidden, layout.coord_dim, k)?;
    dconv_combined(hidden, layout.value_dim, &index, weights, true)
}

/// Encoder pass over the already-embedded history.
pub struct EncoderOutput {
    /// Top-stack hidden state per history step (attention keys/values).
    pub top_states: Vec<Tensor>,
    /// Final state of every stack, in stack order.
    pub final_states: Vec<CellState>,
}

pub fn encode_var(
    embedded_history: &[Tensor],
    init_states: Vec<CellState>,
    cells: &[CellVars],
    k: usize,
    layout: FeatureLayout,
) -> Result<EncoderOutput> {
    assert!(!embedded_history.is_empty(), "encoder needs history frames");
    let mut states = init_states;
    let mut top_states = Vec::with_capacity(embedded_history.len());
    for x in embedded_history {
        let mut input = x.clone();
        for (s, cell) in cells.iter().enumerate() {
            states[s] = cell_step_var(&input, &states[s], cell, k, layout)?;
            input = states[s].hidden.clone();
        }
        top_states.push(input);
    }
    Ok(EncoderOutput {
        top_states,
        final_states: states,
    })
}

/// Soft-attention context for one decoder state: scores every encoder state
/// through a pointwise convolution and tanh, projects with the score vector,
/// softmax-normalizes over encoder steps, and returns the convex combination
/// of encoder states together with the attention weights.
pub fn attention_context_var(
    encoder_states: &[Tensor],
    decoder_state: &Tensor,
    weights: &AttentionVars,
) -> Result<(Tensor, Tensor)> {
    assert!(!encoder_states.is_empty(), "attention needs encoder states");
    let shape = decoder_state.shape();
    let (c, n, f) = (shape[0], shape[1], shape[2]);
    let index = NeighborIndex::anchor_only(2 * c, n);
    let mut scores = Vec::with_capacity(encoder_states.len());
    for enc in encoder_states {
        if enc.shape()[0] != c {
            return Err(ModelError::Axis {
                op: "attention_context",
                axis: "hidden channels",
                expected: c,
                actual: enc.shape()[0],
            });
        }
        let cat = Tensor::concat(&[enc, decoder_state], 0)?;
        let z = dconv_linear(&cat, &index, &weights.score_kernel.w)?
            .add(&tile_bias(&weights.score_kernel.b, n, f)?)?
            .tanh()?;
        let v = tile_channel_vector(&weights.score_vec, n, f)?;
        scores.push(z.mul(&v)?.reduce_sum()?.reshape(vec![1])?);
    }
    let score_refs: Vec<&Tensor> = scores.iter().collect();
    let attn = Tensor::concat(&score_refs, 0)?.softmax()?;

    let mut context: Option<Tensor> = None;
    for (j, enc) in encoder_states.iter().enumerate() {
        let aj = attn.gather(0, vec![j])?;
        let tiled = aj.gather(0, vec![0; c * n * f])?.reshape(vec![c, n, f])?;
        let term = tiled.mul(enc)?;
        context = Some(match context {
            Some(acc) => acc.add(&term)?,
            None => term,
        });
    }
    Ok((context.expect("non-empty encoder states"), attn))
}

/// Tile a per-channel vector `(C)` to a combined block `(C, N, F)`.
fn tile_channel_vector(v: &Tensor, n: usize, f: usize) -> Result<Tensor> {
    let c = v.shape()[0];
    let mut ids = Vec::with_capacity(c * n * f);
    for j in 0..c {
        ids.extend(std::iter::repeat_n(j, n * f));
    }
    Ok(v.gather(0, ids)?.reshape(vec![c, n, f])?)
}

/// One decoder emission step's bookkeeping.
struct DecodeStep {
    emission: Tensor,
    attention: Option<Tensor>,
}

/// Full forward pass: embed + encode + autoregressive decode. Returns the J
/// emission blocks `(U, N, H+L)` and the per-step attention weights (when
/// attention is enabled).
pub struct ForwardOutput {
    pub emissions: Vec<Tensor>,
    pub attention_weights: Vec<Tensor>,
}

pub fn forward_var(
    graph: &Graph,
    config: &ForecasterConfig,
    vars: &ModelVars,
    history: &[PointCloudFrame],
    horizon: usize,
    teacher: Option<&[PointCloudFrame]>,
) -> Result<ForwardOutput> {
    if history.is_empty() {
        return Err(ModelError::Invalid {
            op: "forecast",
            msg: "history must contain at least one frame".into(),
        });
    }
    let layout = config.feature_layout();
    let k = config.k_neighbors;
    let n = history[0].n_points();
    for frame in history {
        if frame.n_points() != n {
            return Err(ModelError::Axis {
                op: "forecast",
                axis: "point count (N)",
                expected: n,
                actual: frame.n_points(),
            });
        }
        if frame.channels() != config.input_channels {
            return Err(ModelError::Axis {
                op: "forecast",
                axis: "input channels (U)",
                expected: config.input_channels,
                actual: frame.channels(),
            });
        }
    }
    if let Some(t) = teacher {
        if t.len() < horizon.saturating_sub(1) {
            return Err(ModelError::Invalid {
                op: "forecast",
                msg: format!(
                    "teacher forcing needs {} target frames, got {}",
                    horizon.saturating_sub(1),
                    t.len()
                ),
            });
        }
    }

    // encoder
    let embedded: Vec<Tensor> = history
        .iter()
        .map(|frame| {
            let feats = FrameVar::from_frame(graph, frame, false).feats()?;
            embed_var(&feats, &vars.embed, k, layout)
        })
        .collect::<Result<_>>()?;
    let init: Vec<CellState> = (0..config.stacks)
        .map(|_| init_state(&history[0], config.hidden_channels, config.cell).lift(graph))
        .collect();
    let encoded = encode_var(&embedded, init, &vars.encoder, k, layout)?;

    // decoder: seeded with the last history frame
    let last = history.last().expect("non-empty history");
    let static_coords = graph.leaf(last.coords(), false);
    let mut input_feats = FrameVar::from_frame(graph, last, false).feats()?;
    let mut states = encoded.final_states;
    let mut steps = Vec::with_capacity(horizon);
    for j in 0..horizon {
        let x = embed_var(&input_feats, &vars.embed, k, layout)?;
        let mut input = x;
        for (s, cell) in vars.decoder.iter().enumerate() {
            states[s] = cell_step_var(&input, &states[s], cell, k, layout)?;
            input = states[s].hidden.clone();
        }
        let top = input;
        let (head_in, attn) = match (&vars.attention, config.attention) {
            (Some(att), true) => {
                let (ctx, a) = attention_context_var(&encoded.top_states, &top, att)?;
                let cat = Tensor::concat(&[&top, &ctx], 0)?;
                let index = NeighborIndex::anchor_only(cat.shape()[0], n);
                let proj = dconv_combined(&cat, layout.value_dim, &index, &att.output_proj, true)?;
                (proj, Some(a))
            }
            _ => (top, None),
        };
        let emission = de_embed_var(&head_in, &vars.de_embed, k, layout)?;
        assert_eq!(emission.shape()[1], n, "information intactness");

        // next decoder input: teacher frame or own emission
        if j + 1 < horizon {
            input_feats = match teacher {
                Some(t) => FrameVar::from_frame(graph, &t[j], false).feats()?,
                None => {
                    if config.emit_coordinates {
                        emission.clone()
                    } else {
                        let (values, _) = split_feature_block(&emission, layout.value_dim)?;
                        Tensor::concat(&[&values, &static_coords], 2)?
                    }
                }
            };
        }
        steps.push(DecodeStep {
            emission,
            attention: attn,
        });
    }

    let mut emissions = Vec::with_capacity(steps.len());
    let mut attention_weights = Vec::new();
    for step in steps {
        emissions.push(step.emission);
        if let Some(a) = step.attention {
            attention_weights.push(a);
        }
    }
    Ok(ForwardOutput {
        emissions,
        attention_weights,
    })
}

/// A configured model with its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecaster {
    pub config: ForecasterConfig,
    pub weights: ModelWeights,
}

impl Forecaster {
    /// Fresh model with seeded Glorot-uniform weights.
    pub fn new(config: ForecasterConfig, seed: u64) -> Self {
        let weights = ModelWeights::init(&config, seed);
        Forecaster { config, weights }
    }

    /// J-step forecast from a history of at least one frame. Output frames
    /// carry extrapolated timestamps; when `emit_coordinates` is off their
    /// coordinates are the last history frame's, bitwise.
    pub fn forecast(&self, history: &[PointCloudFrame]) -> Result<Vec<PointCloudFrame>> {
        self.forecast_steps(history, self.config.horizon)
    }

    /// Forecast an arbitrary horizon (the weights are horizon-agnostic).
    pub fn forecast_steps(
        &self,
        history: &[PointCloudFrame],
        horizon: usize,
    ) -> Result<Vec<PointCloudFrame>> {
        let graph = Graph::new();
        let vars = self.weights.lift(&graph, false);
        let out = forward_var(&graph, &self.config, &vars, history, horizon, None)?;
        let last = history.last().expect("validated non-empty");
        let dt = if history.len() >= 2 {
            last.timestamp() - history[history.len() - 2].timestamp()
        } else {
            1
        };
        let layout = self.config.feature_layout();
        out.emissions
            .iter()
            .enumerate()
            .map(|(j, em)| {
                let ts = last.timestamp() + dt * (j as i64 + 1);
                let frame = crate::recurrent::combined_to_frame(em, layout, ts);
                if self.config.emit_coordinates {
                    Ok(frame)
                } else {
                    Ok(PointCloudFrame::new(
                        frame.values().clone(),
                        last.coords().clone(),
                        ts,
                    )?)
                }
            })
            .collect()
    }
}
