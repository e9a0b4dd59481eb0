//! Experiment configuration files (TOML).
//!
//! ```toml
//! seeds = [0, 1, 2, 3, 4]
//! out = "metrics.jsonl"
//!
//! [graph.sbm]
//! blocks = 3
//! per_block = 70
//! p_in = 0.1
//! p_out = 0.01
//! feature_dim = 16
//! class_signal = 0.5
//!
//! [partition]
//! holders = 2
//! label_holder = 0
//!
//! [train]
//! epochs = 150
//! learning_rate = 0.5
//!
//! [train.dp]
//! epsilon = inf
//! ```
//!
//! Every table rejects unknown keys. Omitted keys take their defaults.
//! `train.seed` is ignored: each run takes its seed from `seeds`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vfgnn_core::dp::Mechanism;
use vfgnn_core::graph::{generate_sbm, vertical_partition, Graph, PartitionedGraph, Proportions, SbmSpec};
use vfgnn_core::protocol::TrainConfig;
use vfgnn_core::server::CombineKind;
use vfgnn_core::PartyId;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Every run is repeated once per seed; the seed drives graph generation,
    /// the partition and training.
    pub seeds: Vec<u64>,
    /// Output file; `--out` takes precedence.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub graph: GraphSource,
    pub partition: PartitionConfig,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
    pub audit: AuditConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSource {
    Sbm(SbmSpec),
    Files(GraphFiles),
}

/// Text inputs; relative paths are resolved against the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFiles {
    pub features: PathBuf,
    pub edges: PathBuf,
    pub labels: PathBuf,
    pub mask: PathBuf,
    /// Defaults to one more than the largest label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    /// Number of holders for an even split.
    pub holders: usize,
    /// Relative shares of features and edges, e.g. `[9, 1]`; overrides `holders`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proportions: Option<Vec<f64>>,
    pub label_holder: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// `inf` is allowed and means no noise.
    pub epsilons: Vec<f64>,
    pub mechanisms: Vec<Mechanism>,
    pub combine: Vec<CombineKind>,
    /// Holder counts for the `compare` holder sweep; empty skips it.
    pub holders: Vec<usize>,
    /// Partition ratios for the `compare` proportion sweep; empty skips it.
    pub proportions: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    /// Message to inject after the audited epoch.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fault: Option<Fault>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// One more embedding from holder 1 than the closed form allows.
    ExtraMessage,
    /// Holder 1 publishes its raw feature block.
    RawFeatures,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seeds: vec![0, 1, 2, 3, 4],
            out: None,
            graph: GraphSource::default(),
            partition: PartitionConfig::default(),
            train: TrainConfig { epochs: 150, learning_rate: 0.5, ..TrainConfig::default() },
            sweep: SweepConfig::default(),
            audit: AuditConfig::default(),
        }
    }
}

impl Default for GraphSource {
    fn default() -> Self {
        GraphSource::Sbm(SbmSpec { blocks: 3, per_block: 70, p_in: 0.1, p_out: 0.01, feature_dim: 16, class_signal: 0.5 })
    }
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig { holders: 2, proportions: None, label_holder: 0 }
    }
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            epsilons: vec![4.0, 8.0, 16.0, 32.0, 64.0, f64::INFINITY],
            mechanisms: vec![Mechanism::Gaussian, Mechanism::JamesStein],
            combine: CombineKind::ALL.to_vec(),
            holders: Vec::new(),
            proportions: Vec::new(),
        }
    }
}

impl PartitionConfig {
    pub fn proportions(&self) -> Proportions {
        match &self.proportions {
            Some(w) => Proportions::ratio(w),
            None => Proportions::even(self.holders),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string().trim_end().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable in TOML")
    }

    /// Reads `path`, resolving relative graph file paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let (GraphSource::Files(files), Some(dir)) = (&mut config.graph, path.parent()) {
            for p in [&mut files.features, &mut files.edges, &mut files.labels, &mut files.mask] {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(config)
    }

    /// Checks everything that can be checked without training.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.seeds.is_empty() {
            return Err(CliError::Config("seeds must not be empty".into()));
        }
        self.train.validate().map_err(|e| CliError::Config(format!("[train]: {e}")))?;
        let holders = self.partition.proportions.as_ref().map_or(self.partition.holders, Vec::len);
        if usize::from(self.partition.label_holder) >= holders {
            return Err(CliError::Config(format!(
                "[partition]: label_holder {} is not one of the {holders} holders",
                self.partition.label_holder
            )));
        }
        Ok(())
    }

    /// The master graph for one seed. Files give the same graph for every seed.
    pub fn graph(&self, seed: u64) -> Result<Graph, CliError> {
        match &self.graph {
            GraphSource::Sbm(spec) => {
                generate_sbm(spec, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(|e| CliError::Config(format!("[graph.sbm]: {e}")))
            }
            GraphSource::Files(files) => load_graph(files),
        }
    }

    pub fn partitioned(&self, master: &Graph, proportions: &Proportions, seed: u64) -> Result<PartitionedGraph, CliError> {
        vertical_partition(master, proportions, PartyId(self.partition.label_holder), seed)
            .map_err(|e| CliError::Config(format!("[partition]: {e}")))
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig { seed, ..self.train.clone() }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn at(path: &Path) -> impl Fn(vfgnn_core::Error) -> CliError + '_ {
    move |e| CliError::Config(format!("{}: {e}", path.display()))
}

fn load_graph(files: &GraphFiles) -> Result<Graph, CliError> {
    use vfgnn_core::graph::{parse_edges, parse_features, parse_labels, parse_mask};
    let features = parse_features(&read(&files.features)?).map_err(at(&files.features))?;
    let edges = parse_edges(&read(&files.edges)?, features.nrows()).map_err(at(&files.edges))?;
    let labels = parse_labels(&read(&files.labels)?).map_err(at(&files.labels))?;
    let split = parse_mask(&read(&files.mask)?).map_err(at(&files.mask))?;
    let classes = files.num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    Graph::new(features, edges, labels, classes, split).map_err(|e| CliError::Config(format!("graph files: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(ExperimentConfig::parse("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_name_their_line() {
        let err = ExperimentConfig::parse("seeds = [1]\n\n[train]\nepochz = 3\n").unwrap_err();
        assert!(err.to_string().contains("line 4"), "{err}");
    }

    #[test]
    fn infinite_epsilon_is_accepted() {
        let c = ExperimentConfig::parse("[sweep]\nepsilons = [4, inf]\n").unwrap();
        assert_eq!(c.sweep.epsilons, vec![4.0, f64::INFINITY]);
    }
}
