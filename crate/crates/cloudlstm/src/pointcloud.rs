//! Point-cloud data model, coordinate normalization, and per-channel
//! K-nearest-neighbor search.
//!
//! A frame holds `U` channels over the same `N` points; each channel carries
//! `H` value features and `L` coordinate features per point. Neighbor sets
//! are computed per channel from that channel's own coordinates, so channels
//! with different spatial correlations select different neighborhoods.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::tensor::{Graph, NdArray, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum PointCloudError {
    #[error("k = {k} exceeds point count n = {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("expected a rank-{expected} array, got shape {shape:?}")]
    Rank { expected: usize, shape: Vec<usize> },
    #[error("values shape {values:?} and coords shape {coords:?} disagree on {what}")]
    FrameMismatch {
        values: Vec<usize>,
        coords: Vec<usize>,
        what: &'static str,
    },
    #[error("frame axes must be nonzero, got values {values:?}, coords {coords:?}")]
    EmptyAxis {
        values: Vec<usize>,
        coords: Vec<usize>,
    },
    #[error("neighbor index built for {expected} points, frame has {actual}")]
    StaleIndex { expected: usize, actual: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, PointCloudError>;

/// One time-step snapshot: `U` channels x `N` points, each point carrying
/// `H` value features and `L` coordinate features.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloudFrame {
    values: NdArray,
    coords: NdArray,
    timestamp: i64,
}

impl PointCloudFrame {
    /// `values` must be `(U, N, H)` and `coords` `(U, N, L)` with matching
    /// `U` and `N`; every axis must be nonzero.
    pub fn new(values: NdArray, coords: NdArray, timestamp: i64) -> Result<Self> {
        if values.shape().len() != 3 {
            return Err(PointCloudError::Rank {
                expected: 3,
                shape: values.shape().to_vec(),
            });
        }
        if coords.shape().len() != 3 {
            return Err(PointCloudError::Rank {
                expected: 3,
                shape: coords.shape().to_vec(),
            });
        }
        if values.shape()[0] != coords.shape()[0] {
            return Err(PointCloudError::FrameMismatch {
                values: values.shape().to_vec(),
                coords: coords.shape().to_vec(),
                what: "channel count",
            });
        }
        if values.shape()[1] != coords.shape()[1] {
            return Err(PointCloudError::FrameMismatch {
                values: values.shape().to_vec(),
                coords: coords.shape().to_vec(),
                what: "point count",
            });
        }
        if values.shape().contains(&0) || coords.shape().contains(&0) {
            return Err(PointCloudError::EmptyAxis {
                values: values.shape().to_vec(),
                coords: coords.shape().to_vec(),
            });
        }
        Ok(PointCloudFrame {
            values,
            coords,
            timestamp,
        })
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn n_points(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn value_dim(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn coord_dim(&self) -> usize {
        self.coords.shape()[2]
    }

    pub fn values(&self) -> &NdArray {
        &self.values
    }

    pub fn coords(&self) -> &NdArray {
        &self.coords
    }

    pub fn timestamp(&self) -> i64 {
        self.timestamp
    }

    pub fn with_timestamp(mut self, timestamp: i64) -> Self {
        self.timestamp = timestamp;
        self
    }

    /// Reorder points by `perm` (new position `i` takes old point `perm[i]`)
    /// in every channel. Used by the permutation-invariance suites.
    pub fn permute_points(&self, perm: &[usize]) -> PointCloudFrame {
        assert_eq!(perm.len(), self.n_points(), "permutation length mismatch");
        let (u, n, h, l) = (
            self.channels(),
            self.n_points(),
            self.value_dim(),
            self.coord_dim(),
        );
        let values = NdArray::from_fn(vec![u, n, h], |idx| {
            self.values.at(&[idx[0], perm[idx[1]], idx[2]])
        });
        let coords = NdArray::from_fn(vec![u, n, l], |idx| {
            self.coords.at(&[idx[0], perm[idx[1]], idx[2]])
        });
        PointCloudFrame {
            values,
            coords,
            timestamp: self.timestamp,
        }
    }
}

/// Map each coordinate dimension affinely onto [0, 1]:
/// `(x - min) / (max - min)` per dimension, independently per channel for
/// rank-3 input. A degenerate dimension (`max == min`) maps to 0.5, keeping
/// coincident points coincident. Idempotent: renormalizing is bitwise stable.
pub fn normalize_coords(raw: &NdArray) -> NdArray {
    match raw.shape().len() {
        2 => {
            let (n, l) = (raw.shape()[0], raw.shape()[1]);
            let mut out = raw.clone();
            normalize_block(out.data_mut(), n, l);
            out
        }
        3 => {
            let (u, n, l) = (raw.shape()[0], raw.shape()[1], raw.shape()[2]);
            let mut out = raw.clone();
            for c in 0..u {
                normalize_block(&mut out.data_mut()[c * n * l..(c + 1) * n * l], n, l);
            }
            out
        }
        _ => panic!(
            "normalize_coords expects rank 2 or 3, got {:?}",
            raw.shape()
        ),
    }
}

fn normalize_block(data: &mut [f64], n: usize, l: usize) {
    for dim in 0..l {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for p in 0..n {
            let v = data[p * l + dim];
            min = min.min(v);
            max = max.max(v);
        }
        if max > min {
            let range = max - min;
            for p in 0..n {
                data[p * l + dim] = (data[p * l + dim] - min) / range;
            }
        } else {
            for p in 0..n {
                data[p * l + dim] = 0.5;
            }
        }
    }
}

/// Squared Euclidean distance between points `a` and `b` of a row-major
/// `(N, L)` buffer. Fixed summation order so KD-tree and exhaustive search
/// compare bitwise-identical distances.
#[inline]
fn dist2(data: &[f64], l: usize, a: usize, b: usize) -> f64 {
    let pa = &data[a * l..(a + 1) * l];
    let pb = &data[b * l..(b + 1) * l];
    let mut acc = 0.0;
    for d in 0..l {
        let diff = pa[d] - pb[d];
        acc += diff * diff;
    }
    acc
}

/// Candidate ordering: ascending squared distance, ties broken by ascending
/// point index. Makes neighbor selection a total order, so both search paths
/// must return identical lists.
#[derive(Copy, Clone, PartialEq)]
struct Cand {
    d2: f64,
    idx: usize,
}

impl Eq for Cand {}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2
            .partial_cmp(&other.d2)
            .expect("non-finite distance")
            .then(self.idx.cmp(&other.idx))
    }
}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Static KD-tree over one channel's coordinates, cycling split dimensions.
pub struct KdTree {
    data: Vec<f64>,
    l: usize,
    nodes: Vec<KdNode>,
    root: i32,
}

struct KdNode {
    point: usize,
    left: i32,
    right: i32,
    depth: usize,
}

impl KdTree {
    /// Build from `(N, L)` coordinates.
    pub fn build(coords: &NdArray) -> Result<Self> {
        if coords.shape().len() != 2 {
            return Err(PointCloudError::Rank {
                expected: 2,
                shape: coords.shape().to_vec(),
            });
        }
        let (n, l) = (coords.shape()[0], coords.shape()[1]);
        let data = coords.data().to_vec();
        let mut order: Vec<usize> = (0..n).collect();
        let mut nodes = Vec::with_capacity(n);
        let root = build_rec(&data, l, &mut order, 0, &mut nodes);
        Ok(KdTree {
            data,
            l,
            nodes,
            root,
        })
    }

    /// The `k` nearest points to point `query` under the (distance, index)
    /// order, optionally excluding the query point itself. Ascending order.
    pub fn nearest(&self, query: usize, k: usize, exclude_self: bool) -> Vec<usize> {
        let mut heap: BinaryHeap<Cand> = BinaryHeap::with_capacity(k + 1);
        if k > 0 {
            let exclude = if exclude_self { query as i64 } else { -1 };
            self.search(self.root, query, k, exclude, &mut heap);
        }
        let mut found = heap.into_vec();
        found.sort_unstable();
        found.into_iter().map(|c| c.idx).collect()
    }

    fn search(&self, node: i32, query: usize, k: usize, exclude: i64, heap: &mut BinaryHeap<Cand>) {
        if node < 0 {
            return;
        }
        let nd = &self.nodes[node as usize];
        let depth_dim = self.split_dim(node as usize);
        let p = nd.point;
        if p as i64 != exclude {
            let cand = Cand {
                d2: dist2(&self.data, self.l, query, p),
                idx: p,
            };
            if heap.len() < k {
                heap.push(cand);
            } else if cand < *heap.peek().unwrap() {
                heap.pop();
                heap.push(cand);
            }
        }
        let diff = self.data[query * self.l + depth_dim] - self.data[p * self.l + depth_dim];
        let (near, far) = if diff < 0.0 {
            (nd.left, nd.right)
        } else {
            (nd.right, nd.left)
        };
        self.search(near, query, k, exclude, heap);
        let plane = Cand {
            d2: diff * diff,
            idx: 0,
        };
        if heap.len() < k || plane <= *heap.peek().unwrap() {
            self.search(far, query, k, exclude, heap);
        }
    }

    fn split_dim(&self, node: usize) -> usize {
        self.nodes[node].depth % self.l
    }
}

fn build_rec(
    data: &[f64],
    l: usize,
    order: &mut [usize],
    depth: usize,
    nodes: &mut Vec<KdNode>,
) -> i32 {
    if order.is_empty() {
        return -1;
    }
    let dim = depth % l;
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        data[a * l + dim]
            .partial_cmp(&data[b * l + dim])
            .expect("non-finite coordinate")
            .then(a.cmp(&b))
    });
    let point = order[mid];
    let slot = nodes.len();
    nodes.push(KdNode {
        point,
        left: -1,
        right: -1,
        depth,
    });
    let (lo, rest) = order.split_at_mut(mid);
    let hi = &mut rest[1..];
    let left = build_rec(data, l, lo, depth + 1, nodes);
    let right = build_rec(data, l, hi, depth + 1, nodes);
    nodes[slot].left = left;
    nodes[slot].right = right;
    slot as i32
}

/// Exhaustive O(N^2) scan with the same (distance, index) tie rule as the
/// KD-tree. Returns the `(N, K)` neighbor lists, anchor first.
pub fn knn_exhaustive(coords: &NdArray, k: usize) -> Result<Vec<usize>> {
    let (n, l) = check_channel_coords(coords, k)?;
    let data = coords.data();
    let mut out = Vec::with_capacity(n * k);
    let mut cands: Vec<Cand> = Vec::with_capacity(n - 1);
    for anchor in 0..n {
        out.push(anchor);
        cands.clear();
        for other in 0..n {
            if other != anchor {
                cands.push(Cand {
                    d2: dist2(data, l, anchor, other),
                    idx: other,
                });
            }
        }
        cands.sort_unstable();
        out.extend(cands.iter().take(k - 1).map(|c| c.idx));
    }
    Ok(out)
}

/// KD-tree backed K-nearest-neighbor search; contract identical to
/// [`knn_exhaustive`].
pub fn knn_kdtree(coords: &NdArray, k: usize) -> Result<Vec<usize>> {
    let (n, _) = check_channel_coords(coords, k)?;
    let tree = KdTree::build(coords)?;
    let mut out = Vec::with_capacity(n * k);
    for anchor in 0..n {
        out.push(anchor);
        out.extend(tree.nearest(anchor, k - 1, true));
    }
    Ok(out)
}

/// Exhaustive search below this point count; tree overhead dominates there.
pub const KDTREE_MIN_POINTS: usize = 64;

/// Ordered neighbor lists for one channel's `(N, L)` coordinates: row `n`
/// holds the anchor `n` first, then the `K - 1` nearest other points by
/// Euclidean distance, ties broken by smaller point index.
pub fn knn_search(coords: &NdArray, k: usize) -> Result<Vec<usize>> {
    let (n, _) = check_channel_coords(coords, k)?;
    if n < KDTREE_MIN_POINTS {
        knn_exhaustive(coords, k)
    } else {
        knn_kdtree(coords, k)
    }
}

fn check_channel_coords(coords: &NdArray, k: usize) -> Result<(usize, usize)> {
    if coords.shape().len() != 2 {
        return Err(PointCloudError::Rank {
            expected: 2,
            shape: coords.shape().to_vec(),
        });
    }
    let (n, l) = (coords.shape()[0], coords.shape()[1]);
    if k == 0 || k > n {
        return Err(PointCloudError::KTooLarge { k, n });
    }
    Ok((n, l))
}

/// Per-channel, per-anchor ordered neighbor lists: `indices[u, n, 0] == n`
/// (anchor property), remaining entries ordered by non-decreasing distance
/// in channel `u`'s coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborIndex {
    channels: usize,
    n_points: usize,
    k: usize,
    indices: Vec<usize>,
}

impl NeighborIndex {
    /// Build from `(U, N, L)` coordinate data, one search per channel.
    pub fn from_coords(coords: &NdArray, k: usize) -> Result<Self> {
        if coords.shape().len() != 3 {
            return Err(PointCloudError::Rank {
                expected: 3,
                shape: coords.shape().to_vec(),
            });
        }
        let (u, n, l) = (coords.shape()[0], coords.shape()[1], coords.shape()[2]);
        let mut indices = Vec::with_capacity(u * n * k);
        for c in 0..u {
            let channel =
                NdArray::new(vec![n, l], coords.data()[c * n * l..(c + 1) * n * l].to_vec())
                    .expect("channel slice");
            indices.extend(knn_search(&channel, k)?);
        }
        Ok(NeighborIndex {
            channels: u,
            n_points: n,
            k,
            indices,
        })
    }

    pub fn from_frame(frame: &PointCloudFrame, k: usize) -> Result<Self> {
        Self::from_coords(frame.coords(), k)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn at(&self, u: usize, n: usize, q: usize) -> usize {
        self.indices[(u * self.n_points + n) * self.k + q]
    }

    /// Row of K neighbor indices for anchor `n` in channel `u`.
    pub fn row(&self, u: usize, n: usize) -> &[usize] {
        let base = (u * self.n_points + n) * self.k;
        &self.indices[base..base + self.k]
    }

    /// K = 1 index: every anchor's neighborhood is just itself. Used for
    /// pointwise convolutions where no search is needed.
    pub fn anchor_only(channels: usize, n_points: usize) -> Self {
        let mut indices = Vec::with_capacity(channels * n_points);
        for _ in 0..channels {
            indices.extend(0..n_points);
        }
        NeighborIndex {
            channels,
            n_points,
            k: 1,
            indices,
        }
    }

    /// Hand-built index for tests and fixtures; validates ranges and the
    /// anchor property.
    pub fn from_rows(channels: usize, n_points: usize, k: usize, indices: Vec<usize>) -> Self {
        assert_eq!(indices.len(), channels * n_points * k);
        for u in 0..channels {
            for n in 0..n_points {
                let base = (u * n_points + n) * k;
                assert_eq!(indices[base], n, "anchor must come first");
                assert!(indices[base..base + k].iter().all(|&i| i < n_points));
            }
        }
        NeighborIndex {
            channels,
            n_points,
            k,
            indices,
        }
    }
}

/// A frame lifted into a computation graph: `values (U, N, H)` and
/// `coords (U, N, L)` tensors.
#[derive(Clone)]
pub struct FrameVar {
    pub values: Tensor,
    pub coords: Tensor,
}

impl FrameVar {
    pub fn from_frame(graph: &Graph, frame: &PointCloudFrame, requires_grad: bool) -> FrameVar {
        FrameVar {
            values: graph.leaf(frame.values(), requires_grad),
            coords: graph.leaf(frame.coords(), requires_grad),
        }
    }

    pub fn to_frame(&self, timestamp: i64) -> PointCloudFrame {
        PointCloudFrame::new(self.values.to_array(), self.coords.to_array(), timestamp)
            .expect("graph frame shapes are validated on construction")
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn n_points(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn value_dim(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn coord_dim(&self) -> usize {
        self.coords.shape()[2]
    }

    /// Combined feature block `(U, N, H + L)`, values first.
    pub fn feats(&self) -> Result<Tensor> {
        Ok(Tensor::concat(&[&self.values, &self.coords], 2)?)
    }
}

/// Differentiable gather of each anchor's neighbor features into the D-Conv
/// input layout `(U, N, K, H + L)`: slot `[u, n, q]` holds the value-then-
/// coordinate features of point `index[u, n, q]` in channel `u`.
pub fn gather_neighbors(frame: &FrameVar, index: &NeighborIndex) -> Result<Tensor> {
    let (u, n) = (frame.channels(), frame.n_points());
    if index.n_points() != n {
        return Err(PointCloudError::StaleIndex {
            expected: index.n_points(),
            actual: n,
        });
    }
    let f = frame.value_dim() + frame.coord_dim();
    let k = index.k();
    let feats = frame.feats()?.reshape(vec![u * n, f])?;
    let mut flat = Vec::with_capacity(u * n * k);
    for c in 0..u {
        for p in 0..n {
            for q in 0..k {
                flat.push(c * n + index.at(c, p, q));
            }
        }
    }
    Ok(feats.gather(0, flat)?.reshape(vec![u, n, k, f])?)
}
