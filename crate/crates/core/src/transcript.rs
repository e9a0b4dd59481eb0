//! Message accounting shared by the sharing engine and the training protocol.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use ndarray::Array2;

use crate::party::PartyId;

/// What a message is for. Counts are kept per phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Phase {
    /// Holder-to-holder shares of feature blocks.
    ShareDistribution,
    /// Masked `e`/`f` openings inside Beaver multiplications.
    BeaverReveal,
    /// Share hand-off used to truncate with more than two parties.
    Truncation,
    /// Holder-to-holder shares of the initial embedding for reconstruction.
    ShareReconstruct,
    /// DP-published local embeddings, holder to server.
    EmbeddingPublish,
    /// Final hidden layer, server to label holder.
    HiddenToLabelHolder,
    /// DP-published output gradient, label holder to server.
    GradientPublish,
    /// Per-holder embedding gradients, server to holders.
    GradientReturn,
    /// Initial-embedding gradient contributions exchanged between holders.
    WeightSync,
}

impl Phase {
    pub const ALL: [Phase; 9] = [
        Phase::ShareDistribution,
        Phase::BeaverReveal,
        Phase::Truncation,
        Phase::ShareReconstruct,
        Phase::EmbeddingPublish,
        Phase::HiddenToLabelHolder,
        Phase::GradientPublish,
        Phase::GradientReturn,
        Phase::WeightSync,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phase::ShareDistribution => "share_distribution",
            Phase::BeaverReveal => "beaver_reveal",
            Phase::Truncation => "truncation",
            Phase::ShareReconstruct => "share_reconstruct",
            Phase::EmbeddingPublish => "embedding_publish",
            Phase::HiddenToLabelHolder => "hidden_to_label_holder",
            Phase::GradientPublish => "gradient_publish",
            Phase::GradientReturn => "gradient_return",
            Phase::WeightSync => "weight_sync",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PhaseTally {
    pub messages: u64,
    pub bytes: u64,
}

/// Exact per-phase message and byte counters, with per-epoch snapshots.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    totals: BTreeMap<Phase, PhaseTally>,
    snapshots: Vec<BTreeMap<Phase, PhaseTally>>,
    violations: Vec<String>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, phase: Phase, bytes: usize) {
        let t = self.totals.entry(phase).or_default();
        t.messages += 1;
        t.bytes += bytes as u64;
    }

    pub fn tally(&self, phase: Phase) -> PhaseTally {
        self.totals.get(&phase).copied().unwrap_or_default()
    }

    pub fn messages(&self, phase: Phase) -> u64 {
        self.tally(phase).messages
    }

    pub fn bytes(&self, phase: Phase) -> u64 {
        self.tally(phase).bytes
    }

    pub fn total_messages(&self) -> u64 {
        self.totals.values().map(|t| t.messages).sum()
    }

    /// Closes an epoch: stores the cumulative counters seen so far.
    pub fn snapshot(&mut self) {
        self.snapshots.push(self.totals.clone());
    }

    pub fn snapshots(&self) -> &[BTreeMap<Phase, PhaseTally>] {
        &self.snapshots
    }

    pub fn flag_violation(&mut self, what: String) {
        self.violations.push(what);
    }

    pub fn violations(&self) -> &[String] {
        &self.violations
    }
}

/// Transport used by the sharing engine for holder-to-holder ring payloads.
///
/// `transfer` must log the message before handing the payload to `to`.
pub trait ShareChannel {
    fn transfer(&mut self, phase: Phase, from: PartyId, to: PartyId, payload: &Array2<u64>, element_bytes: usize)
        -> Array2<u64>;

    fn transcript(&self) -> &Transcript;
}

/// In-process channel that delivers immediately and only keeps counts.
#[derive(Debug, Default)]
pub struct LoopbackChannel {
    pub transcript: Transcript,
}

impl LoopbackChannel {
    pub fn new() -> Self {
        Self::default()
    }
}

impl ShareChannel for LoopbackChannel {
    fn transfer(
        &mut self,
        phase: Phase,
        _from: PartyId,
        _to: PartyId,
        payload: &Array2<u64>,
        element_bytes: usize,
    ) -> Array2<u64> {
        self.transcript.record(phase, payload.len() * element_bytes);
        payload.clone()
    }

    fn transcript(&self) -> &Transcript {
        &self.transcript
    }
}
