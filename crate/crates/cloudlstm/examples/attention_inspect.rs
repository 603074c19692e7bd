//! Peek at the soft-attention weights: for each decoder step, how much mass
//! the score function puts on each encoder step. Rows always sum to one.
//!
//!     cargo run --example attention_inspect

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use cloudlstm::forecaster::{forward_var, Forecaster, ForecasterConfig};
use cloudlstm::pointcloud::PointCloudFrame;
use cloudlstm::recurrent::CellKind;
use cloudlstm::tensor::{Graph, NdArray};

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (u, n, m, j) = (1usize, 12usize, 6usize, 4usize);

    // static stations, drifting values
    let coords = NdArray::new(
        vec![u, n, 2],
        (0..2 * n).map(|_| rng.random_range(0.0..1.0)).collect(),
    )
    .unwrap();
    let history: Vec<PointCloudFrame> = (0..m)
        .map(|t| {
            let values = NdArray::from_fn(vec![u, n, 1], |idx| {
                ((idx[1] as f64) * 0.4 + (t as f64) * 0.3).sin()
            });
            PointCloudFrame::new(values, coords.clone(), t as i64).unwrap()
        })
        .collect();

    let mut config = ForecasterConfig::new(u, 1, 2);
    config.stacks = 2;
    config.hidden_channels = 4;
    config.k_neighbors = 3;
    config.history = m;
    config.horizon = j;
    config.cell = CellKind::Lstm;
    config.attention = true;
    let model = Forecaster::new(config.clone(), 21);

    let graph = Graph::new();
    let vars = model.weights.lift(&graph, false);
    let out = forward_var(&graph, &config, &vars, &history, j, None).unwrap();

    println!("attention weights a[i][j] over {m} encoder steps ({j} decoder steps):");
    print!("{:>10}", "dec \\ enc");
    for enc in 0..m {
        print!("{enc:>9}");
    }
    println!();
    for (i, attn) in out.attention_weights.iter().enumerate() {
        let weights = attn.data();
        print!("{i:>10}");
        for w in &weights {
            print!("{w:>9.4}");
        }
        let total: f64 = weights.iter().sum();
        println!("   (sum {total:.12})");
    }
}
