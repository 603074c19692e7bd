//! Dynamic point-cloud convolution (D-Conv).
//!
//! For each anchor point, D-Conv sums learnable elementwise products over the
//! K nearest neighbors' value and coordinate features, producing new value
//! features (raw weighted sums plus bias) and new coordinate features
//! (sigmoid-squashed unless the gate variant is requested). Neighbor sets are
//! recomputed per channel from the input's own coordinates on every call and
//! are not differentiated through.
//!
//! Two interchangeable implementations:
//! - [`dconv_apply`], the fast path: gather neighbors, reshape, and run a
//!   single stride-1 2D convolution;
//! - [`dconv_reference`], a direct quadruple-loop transcription of the same
//!   weighted sum, kept free of reshape tricks as an oracle.

use rand::Rng;
use thiserror::Error;

use crate::pointcloud::{FrameVar, NeighborIndex, PointCloudError, PointCloudFrame};
use crate::tensor::{sigmoid, Graph, NdArray, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{op}: {axis} mismatch: expected {expected}, got {actual}")]
    Axis {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    PointCloud(#[from] PointCloudError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// D-Conv configuration: neighborhood size and whether coordinate outputs
/// pass through the sigmoid (`true` for the full operator, `false` for the
/// gate variant used inside sigma-wrapped gates).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DConvConfig {
    pub k_neighbors: usize,
    pub coord_sigmoid: bool,
}

impl DConvConfig {
    pub fn new(k_neighbors: usize) -> Self {
        DConvConfig {
            k_neighbors,
            coord_sigmoid: true,
        }
    }

    pub fn gate(k_neighbors: usize) -> Self {
        DConvConfig {
            k_neighbors,
            coord_sigmoid: false,
        }
    }
}

/// Learnable D-Conv weights: a 5-axis tensor `(U_in, K, H+L, H+L, U_out)`
/// plus one shared bias per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct DConvWeights {
    pub w: NdArray,
    pub b: NdArray,
}

impl DConvWeights {
    pub fn zeros(u_in: usize, k: usize, h: usize, l: usize, u_out: usize) -> Self {
        DConvWeights {
            w: NdArray::zeros(vec![u_in, k, h + l, h + l, u_out]),
            b: NdArray::zeros(vec![u_out]),
        }
    }

    /// Uniform init in +-sqrt(6 / (fan_in + fan_out)) with
    /// fan = K * (H+L) * U on each side; biases start at zero.
    pub fn glorot(
        u_in: usize,
        k: usize,
        h: usize,
        l: usize,
        u_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let f = h + l;
        let fan_in = (k * f * u_in) as f64;
        let fan_out = (k * f * u_out) as f64;
        let limit = (6.0 / (fan_in + fan_out)).sqrt();
        let numel = u_in * k * f * f * u_out;
        let data = (0..numel).map(|_| rng.random_range(-limit..limit)).collect();
        DConvWeights {
            w: NdArray::new(vec![u_in, k, f, f, u_out], data).expect("shape matches count"),
            b: NdArray::zeros(vec![u_out]),
        }
    }

    pub fn u_in(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn k(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn feature_width(&self) -> usize {
        self.w.shape()[2]
    }

    pub fn u_out(&self) -> usize {
        self.w.shape()[4]
    }

    pub fn lift(&self, graph: &Graph, requires_grad: bool) -> DConvVars {
        DConvVars {
            w: graph.leaf(&self.w, requires_grad),
            b: graph.leaf(&self.b, requires_grad),
        }
    }
}

/// Graph handles to one D-Conv's weights.
#[derive(Clone)]
pub struct DConvVars {
    pub w: Tensor,
    pub b: Tensor,
}

fn check_weight_tensor(
    op: &'static str,
    w_shape: &[usize],
    u_in: usize,
    k: usize,
    f: usize,
) -> Result<()> {
    if w_shape.len() != 5 {
        return Err(ModelError::Invalid {
            op,
            msg: format!("weights must be 5-axis, got {w_shape:?}"),
        });
    }
    if w_shape[0] != u_in {
        return Err(ModelError::Axis {
            op,
            axis: "input channels (U_in)",
            expected: u_in,
            actual: w_shape[0],
        });
    }
    if w_shape[1] != k {
        return Err(ModelError::Axis {
            op,
            axis: "neighborhood size (K)",
            expected: k,
            actual: w_shape[1],
        });
    }
    if w_shape[2] != f {
        return Err(ModelError::Axis {
            op,
            axis: "input feature width (H+L)",
            expected: f,
            actual: w_shape[2],
        });
    }
    if w_shape[3] != f {
        return Err(ModelError::Axis {
            op,
            axis: "output feature width (H+L)",
            expected: f,
            actual: w_shape[3],
        });
    }
    Ok(())
}

/// Neighbor index for a combined feature tensor `(U, N, H+L)` whose last
/// `coord_dim` columns are coordinates.
pub fn neighbor_index_for_feats(
    feats: &Tensor,
    coord_dim: usize,
    k: usize,
) -> Result<NeighborIndex> {
    let shape = feats.shape();
    assert_eq!(shape.len(), 3, "feats must be (U, N, H+L)");
    let (u, n, f) = (shape[0], shape[1], shape[2]);
    assert!(coord_dim <= f);
    let h = f - coord_dim;
    let coords = feats.with_data(|data| {
        NdArray::from_fn(vec![u, n, coord_dim], |idx| {
            data[(idx[0] * n + idx[1]) * f + h + idx[2]]
        })
    });
    Ok(NeighborIndex::from_coords(&coords, k)?)
}

/// The raw weighted sum of Algorithm-1 form: gather each anchor's neighbor
/// block, flatten `(feature, channel)` pairs, and convolve. No bias, no
/// sigmoid; returns the combined output block `(U_out, N, H+L)`.
pub fn dconv_linear(feats: &Tensor, index: &NeighborIndex, w: &Tensor) -> Result<Tensor> {
    let shape = feats.shape();
    let (u, n, f) = (shape[0], shape[1], shape[2]);
    check_weight_tensor("dconv", &w.shape(), u, index.k(), f)?;
    if index.n_points() != n {
        return Err(ModelError::Axis {
            op: "dconv",
            axis: "point count (N)",
            expected: n,
            actual: index.n_points(),
        });
    }
    let u_out = w.shape()[4];
    let k = index.k();

    // (U, N, F) -> (U*N, F) -> gather rows -> (U, N, K, F)
    let flat = feats.reshape(vec![u * n, f])?;
    let mut row_ids = Vec::with_capacity(u * n * k);
    for c in 0..u {
        for p in 0..n {
            for q in 0..k {
                row_ids.push(c * n + index.at(c, p, q));
            }
        }
    }
    let gathered = flat.gather(0, row_ids)?.reshape(vec![u, n, k, f])?;

    // input (N, K, F*U) with flattened column m*U + i
    let x = gathered
        .permute(vec![1, 2, 3, 0])?
        .reshape(vec![n, k, f * u])?;
    // kernel (1, K, F*U_in, F*U_out) matching the same flattening
    let kernel = w
        .permute(vec![1, 2, 0, 3, 4])?
        .reshape(vec![1, k, f * u, f * u_out])?;
    let out = x.conv2d(&kernel)?;
    // (N, 1, F*U_out) -> (N, F, U_out) -> (U_out, N, F)
    let out = out.reshape(vec![n, f, u_out])?.permute(vec![2, 0, 1])?;
    assert_eq!(out.shape()[1], n, "information intactness: N_out == N_in");
    Ok(out)
}

/// Tile a per-channel bias `(U_out)` to the combined block `(U_out, N, F)`.
pub fn tile_bias(b: &Tensor, n: usize, f: usize) -> Result<Tensor> {
    let u_out = b.shape()[0];
    let mut ids = Vec::with_capacity(u_out * n * f);
    for j in 0..u_out {
        ids.extend(std::iter::repeat_n(j, n * f));
    }
    Ok(b.gather(0, ids)?.reshape(vec![u_out, n, f])?)
}

/// Split a combined block `(U, N, H+L)` into values `(U, N, H)` and
/// coordinates `(U, N, L)`.
pub fn split_feature_block(block: &Tensor, h: usize) -> Result<(Tensor, Tensor)> {
    let f = block.shape()[2];
    let values = block.gather(2, (0..h).collect())?;
    let coords = block.gather(2, (h..f).collect())?;
    Ok((values, coords))
}

/// Weighted sum plus bias plus the optional coordinate sigmoid, on combined
/// blocks: `(U_in, N, H+L)` in, `(U_out, N, H+L)` out.
pub fn dconv_combined(
    feats: &Tensor,
    value_dim: usize,
    index: &NeighborIndex,
    weights: &DConvVars,
    coord_sigmoid: bool,
) -> Result<Tensor> {
    let shape = feats.shape();
    let (n, f) = (shape[1], shape[2]);
    let pre = dconv_linear(feats, index, &weights.w)?;
    let pre = pre.add(&tile_bias(&weights.b, n, f)?)?;
    if coord_sigmoid {
        let (values, coords) = split_feature_block(&pre, value_dim)?;
        Ok(Tensor::concat(&[&values, &coords.sigmoid()?], 2)?)
    } else {
        Ok(pre)
    }
}

/// Full graph-level D-Conv on a lifted frame, using a caller-provided
/// neighbor index (kept fixed, e.g. for locality probes).
pub fn dconv_apply_var_with_index(
    frame: &FrameVar,
    index: &NeighborIndex,
    weights: &DConvVars,
    cfg: &DConvConfig,
) -> Result<FrameVar> {
    let h = frame.value_dim();
    if index.k() != cfg.k_neighbors {
        return Err(ModelError::Axis {
            op: "dconv",
            axis: "neighborhood size (K)",
            expected: cfg.k_neighbors,
            actual: index.k(),
        });
    }
    let combined = dconv_combined(
        &frame.feats()?,
        h,
        index,
        weights,
        cfg.coord_sigmoid,
    )?;
    let (values, coords) = split_feature_block(&combined, h)?;
    let out = FrameVar { values, coords };
    assert_eq!(out.n_points(), frame.n_points(), "information intactness");
    Ok(out)
}

/// Graph-level D-Conv; recomputes the per-channel neighbor index from the
/// frame's own coordinate features.
pub fn dconv_apply_var(
    frame: &FrameVar,
    weights: &DConvVars,
    cfg: &DConvConfig,
) -> Result<FrameVar> {
    let index = neighbor_index_for_feats(&frame.feats()?, frame.coord_dim(), cfg.k_neighbors)?;
    dconv_apply_var_with_index(frame, &index, weights, cfg)
}

/// D-Conv on plain frames (fast path). Builds a throwaway graph internally.
pub fn dconv_apply(
    frame: &PointCloudFrame,
    weights: &DConvWeights,
    cfg: &DConvConfig,
) -> Result<PointCloudFrame> {
    let index = NeighborIndex::from_frame(frame, cfg.k_neighbors)?;
    dconv_apply_with_index(frame, &index, weights, cfg)
}

/// Fast path with a fixed neighbor index.
pub fn dconv_apply_with_index(
    frame: &PointCloudFrame,
    index: &NeighborIndex,
    weights: &DConvWeights,
    cfg: &DConvConfig,
) -> Result<PointCloudFrame> {
    let graph = Graph::new();
    let fv = FrameVar::from_frame(&graph, frame, false);
    let vars = weights.lift(&graph, false);
    let out = dconv_apply_var_with_index(&fv, index, &vars, cfg)?;
    Ok(out.to_frame(frame.timestamp()))
}

/// Direct quadruple-loop transcription of the D-Conv weighted sum; exists
/// as the oracle for the fast path. Forward values only.
pub fn dconv_reference(
    frame: &PointCloudFrame,
    weights: &DConvWeights,
    cfg: &DConvConfig,
) -> Result<PointCloudFrame> {
    let index = NeighborIndex::from_frame(frame, cfg.k_neighbors)?;
    dconv_reference_with_index(frame, &index, weights, cfg)
}

/// Reference path with a fixed neighbor index.
pub fn dconv_reference_with_index(
    frame: &PointCloudFrame,
    index: &NeighborIndex,
    weights: &DConvWeights,
    cfg: &DConvConfig,
) -> Result<PointCloudFrame> {
    let (u_in, n, h, l) = (
        frame.channels(),
        frame.n_points(),
        frame.value_dim(),
        frame.coord_dim(),
    );
    let f = h + l;
    check_weight_tensor("dconv_reference", weights.w.shape(), u_in, index.k(), f)?;
    if index.n_points() != n {
        return Err(ModelError::Axis {
            op: "dconv_reference",
            axis: "point count (N)",
            expected: n,
            actual: index.n_points(),
        });
    }
    if index.k() != cfg.k_neighbors {
        return Err(ModelError::Axis {
            op: "dconv_reference",
            axis: "neighborhood size (K)",
            expected: cfg.k_neighbors,
            actual: index.k(),
        });
    }
    let u_out = weights.u_out();
    let k = index.k();
    let values = frame.values();
    let coords = frame.coords();
    let w = &weights.w;
    let mut out_values = NdArray::zeros(vec![u_out, n, h]);
    let mut out_coords = NdArray::zeros(vec![u_out, n, l]);
    for j in 0..u_out {
        let bias = weights.b.at(&[j]);
        for p in 0..n {
            for m_out in 0..f {
                let mut acc = 0.0;
                for i in 0..u_in {
                    for q in 0..k {
                        let nb = index.at(i, p, q);
                        for m in 0..h {
                            acc += w.at(&[i, q, m, m_out, j]) * values.at(&[i, nb, m]);
                        }
                        for d in 0..l {
                            acc += w.at(&[i, q, h + d, m_out, j]) * coords.at(&[i, nb, d]);
                        }
                    }
                }
                acc += bias;
                if m_out < h {
                    out_values.set(&[j, p, m_out], acc);
                } else if cfg.coord_sigmoid {
                    out_coords.set(&[j, p, m_out - h], sigmoid(acc));
                } else {
                    out_coords.set(&[j, p, m_out - h], acc);
                }
            }
        }
    }
    let out = PointCloudFrame::new(out_values, out_coords, frame.timestamp())?;
    assert_eq!(out.n_points(), frame.n_points(), "information intactness");
    Ok(out)
}
