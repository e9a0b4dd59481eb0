//! Graph data: the master graph, its text formats, the synthetic block-model
//! generator and the vertical partitioner producing per-holder views.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::party::PartyId;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn code(self) -> char {
        match self {
            Split::Train => 't',
            Split::Val => 'v',
            Split::Test => 's',
        }
    }
}

/// A full, unpartitioned graph. Only the simulator ever sees one.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub features: Matrix,
    /// Undirected edges stored as `(min, max)`, sorted and deduplicated.
    pub edges: Vec<(usize, usize)>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Vec<Split>,
}

fn canonical_edges(edges: impl IntoIterator<Item = (usize, usize)>) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = edges.into_iter().map(|(a, b)| if a <= b { (a, b) } else { (b, a) }).collect();
    out.sort_unstable();
    out.dedup();
    out
}

impl Graph {
    pub fn new(
        features: Matrix,
        edges: Vec<(usize, usize)>,
        labels: Vec<usize>,
        num_classes: usize,
        split: Vec<Split>,
    ) -> Result<Self> {
        let n = features.nrows();
        if labels.len() != n {
            return Err(Error::Graph(format!("{} labels for {} nodes", labels.len(), n)));
        }
        if split.len() != n {
            return Err(Error::Graph(format!("{} mask entries for {} nodes", split.len(), n)));
        }
        if let Some(&(a, b)) = edges.iter().find(|&&(a, b)| a >= n || b >= n) {
            return Err(Error::Graph(format!("edge ({a}, {b}) has an endpoint outside 0..{n}")));
        }
        if let Some((v, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::Graph(format!("node {v} has label {l} but there are {num_classes} classes")));
        }
        Ok(Graph { features, edges: canonical_edges(edges), labels, num_classes, split })
    }

    /// Parses the four text inputs. Row order of the feature text defines node ids.
    pub fn from_text(features: &str, edges: &str, labels: &str, mask: &str) -> Result<Self> {
        let features = parse_features(features)?;
        let labels = parse_labels(labels)?;
        let split = parse_mask(mask)?;
        let edges = parse_edges(edges, features.nrows())?;
        let num_classes = labels.iter().max().map_or(0, |m| m + 1);
        Graph::new(features, edges, labels, num_classes, split)
    }

    pub fn node_count(&self) -> usize {
        self.features.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn mask(&self, which: Split) -> Vec<bool> {
        self.split.iter().map(|&s| s == which).collect()
    }
}

fn non_blank(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty())
}

/// Tab-separated feature rows, no header.
pub fn parse_features(text: &str) -> Result<Matrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, l) in non_blank(text) {
        let row = l
            .split('\t')
            .map(|t| {
                t.trim().parse::<f64>().map_err(|e| Error::Parse { line, message: format!("bad feature value {t:?}: {e}") })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {} feature columns, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    let cols = rows.first().map_or(0, |r| r.len());
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), cols), flat).map_err(|e| Error::Graph(format!("{e}")))
}

/// Two whitespace-separated node ids per line.
pub fn parse_edges(text: &str, node_count: usize) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for (line, l) in non_blank(text) {
        let ids: Vec<&str> = l.split_whitespace().collect();
        if ids.len() != 2 {
            return Err(Error::Parse { line, message: format!("expected two node ids, found {}", ids.len()) });
        }
        let mut pair = [0usize; 2];
        for (slot, t) in pair.iter_mut().zip(&ids) {
            *slot = t.parse().map_err(|e| Error::Parse { line, message: format!("bad node id {t:?}: {e}") })?;
            if *slot >= node_count {
                return Err(Error::Parse {
                    line,
                    message: format!("dangling endpoint {slot}: graph has {node_count} nodes"),
                });
            }
        }
        out.push((pair[0], pair[1]));
    }
    Ok(out)
}

pub fn parse_labels(text: &str) -> Result<Vec<usize>> {
    non_blank(text)
        .map(|(line, l)| l.parse().map_err(|e| Error::Parse { line, message: format!("bad class id {l:?}: {e}") }))
        .collect()
}

/// One of `t`, `v`, `s` per line.
pub fn parse_mask(text: &str) -> Result<Vec<Split>> {
    non_blank(text)
        .map(|(line, l)| match l {
            "t" => Ok(Split::Train),
            "v" => Ok(Split::Val),
            "s" => Ok(Split::Test),
            other => Err(Error::Parse { line, message: format!("mask entry must be t, v or s, found {other:?}") }),
        })
        .collect()
}

/// Adjacency lists over one holder's edge set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborIndex {
    lists: Vec<Vec<usize>>,
}

impl NeighborIndex {
    pub fn new(node_count: usize, edges: &[(usize, usize)]) -> Self {
        let mut lists = vec![Vec::new(); node_count];
        for &(a, b) in edges {
            lists[a].push(b);
            if a != b {
                lists[b].push(a);
            }
        }
        for l in &mut lists {
            l.sort_unstable();
            l.dedup();
        }
        NeighborIndex { lists }
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.lists[v]
    }

    pub fn node_count(&self) -> usize {
        self.lists.len()
    }
}

/// Everything one holder owns.
#[derive(Debug, Clone, PartialEq)]
pub struct HolderView {
    pub id: PartyId,
    /// Columns of the master feature matrix this holder owns.
    pub feature_range: Range<usize>,
    pub features: Matrix,
    pub edges: Vec<(usize, usize)>,
    pub neighbors: NeighborIndex,
    /// Present only at the label holder.
    pub labels: Option<Vec<usize>>,
}

/// A node set shared by all holders, with vertically split features and private edges.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedGraph {
    pub node_count: usize,
    pub holders: Vec<HolderView>,
    pub label_holder: PartyId,
    pub num_classes: usize,
    pub split: Vec<Split>,
}

impl PartitionedGraph {
    pub fn holder_ids(&self) -> Vec<PartyId> {
        self.holders.iter().map(|h| h.id).collect()
    }

    pub fn holder(&self, id: PartyId) -> &HolderView {
        &self.holders[id.index()]
    }

    pub fn feature_dim(&self) -> usize {
        self.holders.iter().map(|h| h.features.ncols()).sum()
    }

    pub fn labels(&self) -> &[usize] {
        self.holder(self.label_holder).labels.as_deref().expect("label holder keeps labels")
    }

    pub fn mask(&self, which: Split) -> Vec<bool> {
        self.split.iter().map(|&s| s == which).collect()
    }

    /// Column-wise merge of every holder's block, in holder order.
    pub fn merged_features(&self) -> Matrix {
        let blocks: Vec<&Matrix> = self.holders.iter().map(|h| &h.features).collect();
        crate::tensor::hstack(&blocks)
    }

    pub fn merged_edges(&self) -> Vec<(usize, usize)> {
        canonical_edges(self.holders.iter().flat_map(|h| h.edges.iter().copied()))
    }

    /// One holder that owns everything; used for centralised training.
    pub fn single_holder(master: &Graph) -> Self {
        PartitionedGraph {
            node_count: master.node_count(),
            holders: vec![HolderView {
                id: PartyId(0),
                feature_range: 0..master.feature_dim(),
                features: master.features.clone(),
                edges: master.edges.clone(),
                neighbors: NeighborIndex::new(master.node_count(), &master.edges),
                labels: Some(master.labels.clone()),
            }],
            label_holder: PartyId(0),
            num_classes: master.num_classes,
            split: master.split.clone(),
        }
    }

    /// Holder `id` alone with its own features and edges, given the labels
    /// (simulator privilege, for the isolated baseline).
    pub fn isolated(&self, id: PartyId) -> Self {
        let h = self.holder(id);
        PartitionedGraph {
            node_count: self.node_count,
            holders: vec![HolderView { id: PartyId(0), labels: Some(self.labels().to_vec()), ..h.clone() }],
            label_holder: PartyId(0),
            num_classes: self.num_classes,
            split: self.split.clone(),
        }
    }
}

/// Per-holder shares of the feature columns and of the edges.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Proportions {
    pub features: Vec<f64>,
    pub edges: Vec<f64>,
}

impl Proportions {
    pub fn even(holders: usize) -> Self {
        let p = vec![1.0 / holders as f64; holders];
        Proportions { features: p.clone(), edges: p }
    }

    /// Same ratio for features and edges, e.g. `ratio(&[9.0, 1.0])`.
    pub fn ratio(weights: &[f64]) -> Self {
        let total: f64 = weights.iter().sum();
        let p: Vec<f64> = weights.iter().map(|w| w / total).collect();
        Proportions { features: p.clone(), edges: p }
    }

    fn validate(&self) -> Result<()> {
        for (what, p) in [("feature", &self.features), ("edge", &self.edges)] {
            if p.is_empty() {
                return Err(Error::InvalidProportions(format!("no {what} proportions")));
            }
            if p.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
                return Err(Error::InvalidProportions(format!("{what} proportions must be positive: {p:?}")));
            }
            let sum: f64 = p.iter().sum();
            if libm::fabs(sum - 1.0) > 1e-9 {
                return Err(Error::InvalidProportions(format!("{what} proportions sum to {sum}, not 1")));
            }
        }
        if self.features.len() != self.edges.len() {
            return Err(Error::InvalidProportions(String::from("feature and edge proportions name different holder counts")));
        }
        Ok(())
    }
}

// Cumulative rounding: boundaries round(total * prefix_sum), so the pieces add up exactly.
fn cut(total: usize, proportions: &[f64]) -> Vec<Range<usize>> {
    let mut out = Vec::with_capacity(proportions.len());
    let mut acc = 0.0;
    let mut start = 0;
    for (i, p) in proportions.iter().enumerate() {
        acc += p;
        let end = if i + 1 == proportions.len() { total } else { (libm::round(acc * total as f64) as usize).min(total) };
        let end = end.max(start);
        out.push(start..end);
        start = end;
    }
    out
}

/// Splits feature columns contiguously and edges by a seeded shuffle, giving
/// every edge to exactly one holder.
pub fn vertical_partition(master: &Graph, proportions: &Proportions, label_holder: PartyId, seed: u64) -> Result<PartitionedGraph> {
    proportions.validate()?;
    let holders = proportions.features.len();
    if label_holder.index() >= holders {
        return Err(Error::InvalidProportions(format!("label holder {label_holder} not among {holders} holders")));
    }
    let n = master.node_count();
    let feature_ranges = cut(master.feature_dim(), &proportions.features);

    let mut order: Vec<usize> = (0..master.edges.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let edge_ranges = cut(order.len(), &proportions.edges);

    let views = (0..holders)
        .map(|i| {
            let id = PartyId(i as u16);
            let cols = feature_ranges[i].clone();
            let edges = canonical_edges(order[edge_ranges[i].clone()].iter().map(|&e| master.edges[e]));
            HolderView {
                id,
                features: master.features.slice(s![.., cols.clone()]).to_owned(),
                feature_range: cols,
                neighbors: NeighborIndex::new(n, &edges),
                edges,
                labels: (id == label_holder).then(|| master.labels.clone()),
            }
        })
        .collect();

    Ok(PartitionedGraph {
        node_count: n,
        holders: views,
        label_holder,
        num_classes: master.num_classes,
        split: master.split.clone(),
    })
}

/// Stochastic block model parameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct SbmSpec {
    pub blocks: usize,
    pub per_block: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub class_signal: f64,
}

/// Block-model graph: node `b * per_block + t` belongs to block (and class) `b`.
///
/// Each class gets a random sign vector; a node's features are that vector
/// times `class_signal` plus unit Gaussian noise. Nodes are shuffled into a
/// 60/20/20 train/val/test split.
pub fn generate_sbm<R: Rng + ?Sized>(spec: &SbmSpec, rng: &mut R) -> Result<Graph> {
    let ok = |p: f64| (0.0..=1.0).contains(&p);
    if !(ok(spec.p_in) && ok(spec.p_out) && spec.p_out < spec.p_in) {
        return Err(Error::InvalidProbability(format!(
            "need 0 <= p_out < p_in <= 1, got p_in={} p_out={}",
            spec.p_in, spec.p_out
        )));
    }
    if spec.blocks == 0 || spec.per_block == 0 {
        return Err(Error::Graph(String::from("block model needs at least one block and one node per block")));
    }
    let n = spec.blocks * spec.per_block;
    let labels: Vec<usize> = (0..n).map(|v| v / spec.per_block).collect();

    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if labels[u] == labels[v] { spec.p_in } else { spec.p_out };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }

    let means: Vec<Vec<f64>> = (0..spec.blocks)
        .map(|_| (0..spec.feature_dim).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect())
        .collect();
    let mut features = Array2::zeros((n, spec.feature_dim));
    for v in 0..n {
        for j in 0..spec.feature_dim {
            let noise: f64 = StandardNormal.sample(rng);
            features[[v, j]] = spec.class_signal * means[labels[v]][j] + noise;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let n_train = libm::round(0.6 * n as f64) as usize;
    let n_val = libm::round(0.2 * n as f64) as usize;
    let mut split = vec![Split::Test; n];
    for (rank, &v) in order.iter().enumerate() {
        split[v] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    Graph::new(features, edges, labels, spec.blocks, split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Graph {
        Graph::from_text(
            "1\t0\t2\n0\t1\t0\n3\t3\t1\n0.5\t-1\t2\n",
            "0 1\n1 2\n3 2\n",
            "0\n1\n1\n0\n",
            "t\nv\ns\nt\n",
        )
        .unwrap()
    }

    fn sbm(seed: u64) -> Graph {
        let spec = SbmSpec { blocks: 3, per_block: 70, p_in: 0.1, p_out: 0.01, feature_dim: 10, class_signal: 1.0 };
        generate_sbm(&spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn loads_toy_files() {
        let g = toy();
        assert_eq!(g.node_count(), 4);
        assert_eq!(g.feature_dim(), 3);
        assert_eq!(g.edges, vec![(0, 1), (1, 2), (2, 3)]);
        assert_eq!(g.num_classes, 2);
        assert_eq!(g.mask(Split::Train), vec![true, false, false, true]);
    }

    #[test]
    fn dangling_endpoint_is_reported_with_line() {
        let err = Graph::from_text("1\n2\n3\n4\n", "0 1\n2 99\n", "0\n0\n0\n0\n", "t\nt\nt\nt\n").unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("99"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_edge_file_is_fine() {
        let g = Graph::from_text("1\n2\n", "", "0\n1\n", "t\ns\n").unwrap();
        assert!(g.edges.is_empty());
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(parse_features("1\t2\n3\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_features("1\tx\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_mask("t\nq\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_edges("0 1 2\n", 4), Err(Error::Parse { line: 1, .. })));
        assert!(Graph::from_text("1\n2\n", "", "0\n", "t\nt\n").is_err());
    }

    #[test]
    fn neighbor_index_is_symmetric() {
        let idx = NeighborIndex::new(4, &[(0, 1), (1, 2), (2, 2)]);
        assert_eq!(idx.neighbors(1), &[0, 2]);
        assert_eq!(idx.neighbors(2), &[1, 2]);
        assert!(idx.neighbors(3).is_empty());
    }

    #[test]
    fn contiguous_feature_split() {
        let mut g = sbm(1);
        assert_eq!(g.feature_dim(), 10);
        let p = vertical_partition(&g, &Proportions::even(2), PartyId(0), 3).unwrap();
        assert_eq!(p.holders[0].feature_range, 0..5);
        assert_eq!(p.holders[1].feature_range, 5..10);
        let p = vertical_partition(&g, &Proportions::ratio(&[9.0, 1.0]), PartyId(0), 3).unwrap();
        assert_eq!(p.holders[0].features.ncols(), 9);
        assert_eq!(p.holders[1].features.ncols(), 1);
        g.features[[0, 0]] = 42.0;
        let p = vertical_partition(&g, &Proportions::ratio(&[7.0, 3.0]), PartyId(1), 3).unwrap();
        assert_eq!(p.merged_features(), g.features);
        assert!(p.holders[0].labels.is_none());
        assert_eq!(p.labels(), &g.labels[..]);
    }

    #[test]
    fn edges_are_partitioned() {
        let g = sbm(2);
        for holders in 2..=4 {
            let p = vertical_partition(&g, &Proportions::even(holders), PartyId(0), 9).unwrap();
            let total: usize = p.holders.iter().map(|h| h.edges.len()).sum();
            assert_eq!(total, g.edges.len(), "intersection must be empty");
            assert_eq!(p.merged_edges(), g.edges);
        }
    }

    #[test]
    fn partition_is_deterministic() {
        let g = sbm(3);
        let a = vertical_partition(&g, &Proportions::even(3), PartyId(0), 5).unwrap();
        let b = vertical_partition(&g, &Proportions::even(3), PartyId(0), 5).unwrap();
        assert_eq!(a, b);
        let c = vertical_partition(&g, &Proportions::even(3), PartyId(0), 6).unwrap();
        assert_ne!(a.holders[0].edges, c.holders[0].edges);
    }

    #[test]
    fn proportions_must_sum_to_one() {
        let g = sbm(4);
        let bad = Proportions { features: vec![0.5, 0.6], edges: vec![0.5, 0.5] };
        assert!(matches!(vertical_partition(&g, &bad, PartyId(0), 0), Err(Error::InvalidProportions(_))));
        let bad = Proportions { features: vec![1.0, 0.0], edges: vec![0.5, 0.5] };
        assert!(vertical_partition(&g, &bad, PartyId(0), 0).is_err());
        let ok = Proportions { features: vec![0.5, 0.5 + 1e-12], edges: vec![0.5, 0.5] };
        assert!(vertical_partition(&g, &ok, PartyId(0), 0).is_ok());
    }

    #[test]
    fn sbm_shape_and_masks() {
        let g = sbm(5);
        assert_eq!(g.node_count(), 210);
        assert_eq!(g.num_classes, 3);
        assert_eq!(g.mask(Split::Train).iter().filter(|&&b| b).count(), 126);
        assert_eq!(g.mask(Split::Val).iter().filter(|&&b| b).count(), 42);
        assert_eq!(g.mask(Split::Test).iter().filter(|&&b| b).count(), 42);
    }

    #[test]
    fn sbm_rejects_bad_probabilities() {
        let spec = SbmSpec { blocks: 2, per_block: 5, p_in: 0.1, p_out: 0.2, feature_dim: 2, class_signal: 1.0 };
        assert!(matches!(generate_sbm(&spec, &mut ChaCha8Rng::seed_from_u64(0)), Err(Error::InvalidProbability(_))));
    }

    #[test]
    fn sbm_edge_count_matches_binomial_expectation() {
        let (k, n, p_in, p_out) = (3.0f64, 70.0f64, 0.1, 0.01);
        let pairs_in = k * n * (n - 1.0) / 2.0;
        let pairs_out = k * (k - 1.0) / 2.0 * n * n;
        let mean = pairs_in * p_in + pairs_out * p_out;
        let var = pairs_in * p_in * (1.0 - p_in) + pairs_out * p_out * (1.0 - p_out);
        let seeds = 20;
        let avg = (0..seeds).map(|s| sbm(100 + s).edges.len() as f64).sum::<f64>() / seeds as f64;
        let sd_of_mean = (var / seeds as f64).sqrt();
        assert!((avg - mean).abs() <= 3.0 * sd_of_mean, "avg {avg} vs {mean} (sd {sd_of_mean})");
    }

    #[test]
    fn zero_signal_features_are_label_free() {
        let spec = SbmSpec { blocks: 3, per_block: 200, p_in: 0.001, p_out: 0.0, feature_dim: 4, class_signal: 0.0 };
        let g = generate_sbm(&spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for c in 0..3 {
            let rows: Vec<usize> = (0..g.node_count()).filter(|&v| g.labels[v] == c).collect();
            for j in 0..4 {
                let m: f64 = rows.iter().map(|&v| g.features[[v, j]]).sum::<f64>() / rows.len() as f64;
                // class means are pure noise: |m| ~ N(0, 1/200)
                assert!(m.abs() < 4.0 / (rows.len() as f64).sqrt(), "class {c} col {j}: {m}");
            }
        }
    }
}
