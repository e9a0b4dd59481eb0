//! Closed-form message counts and their comparison with a transcript.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::graph::PartitionedGraph;
use crate::secure_init::InitMode;
use crate::transcript::{Phase, PhaseTally, Transcript};

use super::config::TrainConfig;

/// Everything the closed forms depend on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuditShape {
    pub holders: u64,
    pub epochs: u64,
    pub node_count: u64,
    pub feature_dim: u64,
    pub embed_dim: u64,
    pub ring_bytes: u64,
    pub init_mode: InitMode,
    pub freeze_h0: bool,
}

impl AuditShape {
    pub fn new(graph: &PartitionedGraph, config: &TrainConfig, epochs: usize) -> Self {
        AuditShape {
            holders: graph.holders.len() as u64,
            epochs: epochs as u64,
            node_count: graph.node_count as u64,
            feature_dim: graph.feature_dim() as u64,
            embed_dim: config.embed_dim as u64,
            ring_bytes: config.codec().ring().element_bytes() as u64,
            init_mode: config.init_mode,
            freeze_h0: config.freeze_h0,
        }
    }
}

/// Expected cumulative messages and bytes per phase after `shape.epochs` epochs.
pub fn expected_counts(shape: &AuditShape) -> BTreeMap<Phase, PhaseTally> {
    let AuditShape { holders: p, epochs: t, node_count: n, feature_dim: f, embed_dim: d, ring_bytes: rb, .. } = *shape;
    let mut out: BTreeMap<Phase, PhaseTally> = Phase::ALL.iter().map(|&ph| (ph, PhaseTally::default())).collect();
    let mut add = |phase: Phase, messages: u64, bytes: u64| {
        let e = out.entry(phase).or_default();
        e.messages += messages;
        e.bytes += bytes;
    };
    let pairs = p * p.saturating_sub(1);
    if shape.init_mode == InitMode::Collaborative && p > 1 {
        let (init_rounds, backward_rounds) = if shape.freeze_h0 { (t.min(1), 0) } else { (t, t) };
        for _ in 0..init_rounds {
            add(Phase::ShareDistribution, pairs, (p - 1) * n * f * rb);
            add(Phase::BeaverReveal, 4 * pairs, pairs * 2 * (n * f + f * d) * rb);
            add(Phase::ShareReconstruct, pairs, pairs * n * d * rb);
        }
        for _ in 0..backward_rounds {
            add(Phase::WeightSync, pairs, pairs * n * d * rb);
            if p > 2 {
                // gradient truncation and weight-update truncation
                add(Phase::Truncation, 2 * (p - 2), 2 * (p - 2) * f * d * rb);
            }
        }
    }
    for _ in 0..t {
        add(Phase::EmbeddingPublish, p, p * n * d * 8);
        add(Phase::HiddenToLabelHolder, 1, 2 * n * d * 8);
        add(Phase::GradientPublish, 1, n * d * 8 + 8);
        add(Phase::GradientReturn, p, p * n * d * 8);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuditRow {
    pub phase: Phase,
    pub expected: PhaseTally,
    pub observed: PhaseTally,
}

impl AuditRow {
    pub fn matches(&self) -> bool {
        self.expected == self.observed
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub rows: Vec<AuditRow>,
    /// Locality violations flagged during the run.
    pub violations: Vec<String>,
}

impl AuditReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty() && self.rows.iter().all(AuditRow::matches)
    }

    pub fn row(&self, phase: Phase) -> AuditRow {
        *self.rows.iter().find(|r| r.phase == phase).expect("every phase has a row")
    }
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<24} {:>10} {:>10} {:>14} {:>14}  status", "phase", "exp msgs", "obs msgs", "exp bytes", "obs bytes")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<24} {:>10} {:>10} {:>14} {:>14}  {}",
                r.phase.name(),
                r.expected.messages,
                r.observed.messages,
                r.expected.bytes,
                r.observed.bytes,
                if r.matches() { "ok" } else { "MISMATCH" }
            )?;
        }
        for v in &self.violations {
            writeln!(f, "locality violation: {v}")?;
        }
        Ok(())
    }
}

/// Compares `transcript` with the closed forms for `shape`.
pub fn comm_audit(transcript: &Transcript, shape: &AuditShape) -> AuditReport {
    let expected = expected_counts(shape);
    let rows = Phase::ALL
        .iter()
        .map(|&phase| AuditRow { phase, expected: expected[&phase], observed: transcript.tally(phase) })
        .collect();
    AuditReport { rows, violations: transcript.violations().to_vec() }
}
