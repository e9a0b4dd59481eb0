use alloc::vec::Vec;

use crate::error::Result;
use crate::graph::{Graph, PartitionedGraph};
use crate::secure_init::InitMode;
use crate::server::CombineKind;

use super::config::{DpConfig, TrainConfig};
use super::session::train;

/// Final test accuracy of the three training set-ups.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineReport {
    /// One entry per holder, training alone on its own columns and edges.
    pub isolated: Vec<f64>,
    /// One party holding every column and edge, no secret sharing and no DP.
    pub centralized: f64,
    /// The federated protocol with `config` as given.
    pub federated: f64,
}

/// Settings for runs with a single party: no sharing, no noise, no clipping.
pub fn plain_config(config: &TrainConfig) -> TrainConfig {
    TrainConfig { init_mode: InitMode::Individual, combine: CombineKind::Mean, dp: DpConfig::off(), ..config.clone() }
}

/// Runs the federated protocol on `partitioned` and the isolated and
/// centralised baselines. `master` must be the graph `partitioned` was cut from.
pub fn run_baselines(master: &Graph, partitioned: &PartitionedGraph, config: &TrainConfig) -> Result<BaselineReport> {
    let plain = plain_config(config);
    let federated = train(partitioned, config)?.final_record().test_accuracy;
    let centralized = train(&PartitionedGraph::single_holder(master), &plain)?.final_record().test_accuracy;
    let isolated = partitioned
        .holder_ids()
        .into_iter()
        .map(|id| Ok(train(&partitioned.isolated(id), &plain)?.final_record().test_accuracy))
        .collect::<Result<Vec<_>>>()?;
    Ok(BaselineReport { isolated, centralized, federated })
}
