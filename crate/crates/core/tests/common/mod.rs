#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vfgnn_core::graph::{generate_sbm, vertical_partition, Graph, PartitionedGraph, Proportions, SbmSpec, Split};
use vfgnn_core::protocol::{train, TrainConfig, TrainOutcome};
use vfgnn_core::tensor::uniform;
use vfgnn_core::PartyId;

pub const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// 210 nodes in three planted communities.
pub fn sbm_spec() -> SbmSpec {
    SbmSpec { blocks: 3, per_block: 70, p_in: 0.1, p_out: 0.01, feature_dim: 16, class_signal: 0.5 }
}

pub fn sbm(seed: u64) -> Graph {
    generate_sbm(&sbm_spec(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

pub fn split_even(master: &Graph, holders: usize, seed: u64) -> PartitionedGraph {
    vertical_partition(master, &Proportions::even(holders), PartyId(0), seed).unwrap()
}

/// Settings used for every accuracy comparison on the block model.
pub fn sbm_config(seed: u64) -> TrainConfig {
    TrainConfig { epochs: 150, learning_rate: 0.5, seed, ..TrainConfig::default() }
}

/// Small random graph with every node in the training split.
pub fn small_graph(n: usize, f: usize, classes: usize, seed: u64) -> Graph {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform((n, f), 1.0, &mut r);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if r.random::<f64>() < 0.3 {
                edges.push((u, v));
            }
        }
    }
    let labels = (0..n).map(|_| r.random_range(0..classes)).collect();
    let split = (0..n).map(|v| if v % 4 == 3 { Split::Test } else { Split::Train }).collect();
    Graph::new(x, edges, labels, classes, split).unwrap()
}

/// Trains and fails the calling test if the scanner flagged any message.
pub fn checked_train(graph: &PartitionedGraph, config: &TrainConfig) -> TrainOutcome {
    let out = train(graph, config).unwrap();
    assert!(out.transcript.violations().is_empty(), "locality violations: {:?}", out.transcript.violations());
    out
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard error of the mean.
pub fn std_err(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0);
    (var / xs.len() as f64).sqrt()
}
