//! The D-Conv operator on a small frame: the reshape-to-conv2d fast path
//! against the direct-sum reference path, the permutation-invariance
//! property, and the gate variant.
//!
//!     cargo run --example dconv_paths

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use cloudlstm::dconv::{dconv_apply, dconv_reference, DConvConfig, DConvWeights};
use cloudlstm::pointcloud::PointCloudFrame;
use cloudlstm::tensor::NdArray;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (u, n, h, l, k) = (2usize, 10usize, 1usize, 2usize, 4usize);

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
    let frame = PointCloudFrame::new(values, coords, 0).unwrap();
    let weights = DConvWeights::glorot(u, k, h, l, 3, &mut rng);

    println!("input: U={u} channels, N={n} points, H={h}+L={l} features, K={k} neighbors");

    let cfg = DConvConfig::new(k);
    let fast = dconv_apply(&frame, &weights, &cfg).unwrap();
    let slow = dconv_reference(&frame, &weights, &cfg).unwrap();
    println!(
        "fast path vs reference: max |dv| = {:.3e}, max |dc| = {:.3e}",
        fast.values().max_abs_diff(slow.values()),
        fast.coords().max_abs_diff(slow.coords()),
    );
    println!(
        "output: U={} channels, N={} points (information intactness)",
        fast.channels(),
        fast.n_points()
    );
    println!(
        "coordinate range after sigmoid: [{:.4}, {:.4}]",
        fast.coords().data().iter().cloned().fold(f64::INFINITY, f64::min),
        fast.coords().data().iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );

    // gate variant: same weighted sums, no coordinate sigmoid
    let gate = dconv_apply(&frame, &weights, &DConvConfig::gate(k)).unwrap();
    println!(
        "gate variant coordinate range (raw sums): [{:.4}, {:.4}]",
        gate.coords().data().iter().cloned().fold(f64::INFINITY, f64::min),
        gate.coords().data().iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );

    // permuting the input points permutes the output identically
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let direct = dconv_apply(&frame, &weights, &cfg).unwrap().permute_points(&perm);
    let permuted = dconv_apply(&frame.permute_points(&perm), &weights, &cfg).unwrap();
    println!(
        "permutation invariance: max |diff| = {:.3e}",
        direct.values().max_abs_diff(permuted.values())
    );
}
