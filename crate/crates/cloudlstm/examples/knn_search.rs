//! Per-channel K-nearest-neighbor search: KD-tree versus exhaustive scan,
//! with the (distance, index) tie rule making both paths return identical
//! lists, and a quick look at how each scales.
//!
//!     cargo run --example knn_search

use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use cloudlstm::pointcloud::{knn_exhaustive, knn_kdtree, knn_search, KDTREE_MIN_POINTS};
use cloudlstm::tensor::NdArray;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let k = 9;

    println!("dispatch threshold: exhaustive below N={KDTREE_MIN_POINTS}, KD-tree above");
    println!();
    println!("{:>6} {:>14} {:>14} {:>10}", "N", "kd-tree (s)", "exhaustive (s)", "identical");
    for n in [128usize, 512, 2048, 8192] {
        let coords = NdArray::new(
            vec![n, 2],
            (0..2 * n).map(|_| rng.random_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let t0 = Instant::now();
        let fast = knn_kdtree(&coords, k).unwrap();
        let t_fast = t0.elapsed().as_secs_f64();
        let t0 = Instant::now();
        let slow = knn_exhaustive(&coords, k).unwrap();
        let t_slow = t0.elapsed().as_secs_f64();
        println!(
            "{:>6} {:>14.6} {:>14.6} {:>10}",
            n,
            t_fast,
            t_slow,
            fast == slow
        );
    }

    // anchor property on a small cloud
    let coords = NdArray::new(vec![5, 2], vec![0.1, 0.1, 0.9, 0.1, 0.5, 0.5, 0.1, 0.9, 0.9, 0.9])
        .unwrap();
    let lists = knn_search(&coords, 3).unwrap();
    println!();
    println!("neighbor lists for 5 corner/center points (anchor always first):");
    for anchor in 0..5 {
        println!("  point {anchor}: {:?}", &lists[anchor * 3..(anchor + 1) * 3]);
    }
}
