//! Timing harness for the scaling checks: D-Conv weighting time versus point
//! count, and KNN build+query growth.
//!
//! Each cell is measured `reps` times after one warmup run and reported as
//! the median, which keeps single-shot scheduler noise out of the fits.

use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::dconv::{dconv_apply_with_index, DConvConfig, DConvWeights};
use crate::pointcloud::{knn_search, NeighborIndex, PointCloudFrame};
use crate::tensor::NdArray;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub suite: &'static str,
    pub n: usize,
    pub k: usize,
    pub feature_width: usize,
    pub seconds: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs[xs.len() / 2]
}

fn random_frame(rng: &mut ChaCha8Rng, n: usize, h: usize, l: usize) -> PointCloudFrame {
    let values = NdArray::new(
        vec![1, n, h],
        (0..n * h).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .expect("shape matches count");
    let coords = NdArray::new(
        vec![1, n, l],
        (0..n * l).map(|_| rng.random_range(0.0..1.0)).collect(),
    )
    .expect("shape matches count");
    PointCloudFrame::new(values, coords, 0).expect("valid frame")
}

/// Time the D-Conv weighting step (neighbor index precomputed and excluded)
/// across a grid of point counts, K and H+L fixed.
pub fn bench_dconv(ns: &[usize], k: usize, h: usize, l: usize, reps: usize) -> Vec<BenchRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let cfg = DConvConfig::new(k);
    ns.iter()
        .map(|&n| {
            let frame = random_frame(&mut rng, n, h, l);
            let weights = DConvWeights::glorot(1, k, h, l, 1, &mut rng);
            let index = NeighborIndex::from_frame(&frame, k).expect("index");
            let run = || {
                let out = dconv_apply_with_index(&frame, &index, &weights, &cfg).expect("dconv");
                assert_eq!(out.n_points(), n);
            };
            run(); // warmup
            let times: Vec<f64> = (0..reps.max(1))
                .map(|_| {
                    let start = Instant::now();
                    run();
                    start.elapsed().as_secs_f64()
                })
                .collect();
            BenchRecord {
                suite: "dconv",
                n,
                k,
                feature_width: h + l,
                seconds: median(times),
            }
        })
        .collect()
}

/// Time KNN (tree build plus one query per point) across a grid of point
/// counts.
pub fn bench_knn(ns: &[usize], k: usize, l: usize, reps: usize) -> Vec<BenchRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(4321);
    ns.iter()
        .map(|&n| {
            let coords = NdArray::new(
                vec![n, l],
                (0..n * l).map(|_| rng.random_range(0.0..1.0)).collect(),
            )
            .expect("shape matches count");
            let run = || {
                let out = knn_search(&coords, k).expect("knn");
                assert_eq!(out.len(), n * k);
            };
            run(); // warmup
            let times: Vec<f64> = (0..reps.max(1))
                .map(|_| {
                    let start = Instant::now();
                    run();
                    start.elapsed().as_secs_f64()
                })
                .collect();
            BenchRecord {
                suite: "knn",
                n,
                k,
                feature_width: l,
                seconds: median(times),
            }
        })
        .collect()
}

/// Least-squares line fit: returns (slope, intercept, r_squared).
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let fit = slope * x + intercept;
        ss_res += (y - fit) * (y - fit);
        ss_tot += (y - my) * (y - my);
    }
    (slope, intercept, 1.0 - ss_res / ss_tot)
}

/// Log-log fit: returns (exponent, r_squared) of `y ~ c * x^e`.
pub fn loglog_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let (slope, _, r2) = linear_fit(&lx, &ly);
    (slope, r2)
}

/// Timing CSV: `suite,n,k,feature_width,seconds`.
pub fn render_csv(records: &[BenchRecord]) -> String {
    let mut out = String::from("suite,n,k,feature_width,seconds\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.suite, r.n, r.k, r.feature_width, r.seconds
        ));
    }
    out
}
