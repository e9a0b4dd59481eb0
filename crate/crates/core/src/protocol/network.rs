//! Simulated message layer between holders and the server.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::graph::PartitionedGraph;
use crate::party::{Endpoint, PartyId};
use crate::tensor::Matrix;
use crate::transcript::{Phase, ShareChannel, Transcript};

/// Typed message bodies.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    /// Ring elements exchanged between holders (shares, Beaver openings,
    /// encoded gradient contributions).
    Ring(Array2<u64>),
    /// A DP-published local embedding.
    Embedding(Matrix),
    /// The server's last hidden layer in training and evaluation mode.
    Hidden { train: Matrix, eval: Matrix },
    /// DP-published per-node output gradients; the server multiplies by `scale`.
    Gradient { rows: Matrix, scale: f64 },
    /// Gradient of one holder's local embedding.
    EmbeddingGradient(Matrix),
    /// Unvetted real matrix; only fault-injection tests send this.
    Plain(Matrix),
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::Ring(_) => "ring",
            Payload::Embedding(_) => "embedding",
            Payload::Hidden { .. } => "hidden",
            Payload::Gradient { .. } => "gradient",
            Payload::EmbeddingGradient(_) => "embedding_gradient",
            Payload::Plain(_) => "plain",
        }
    }

    /// Wire size: ring elements at `ring_bytes`, reals as 8-byte floats.
    pub fn bytes(&self, ring_bytes: usize) -> usize {
        match self {
            Payload::Ring(m) => m.len() * ring_bytes,
            Payload::Embedding(m) | Payload::EmbeddingGradient(m) | Payload::Plain(m) => m.len() * 8,
            Payload::Hidden { train, eval } => (train.len() + eval.len()) * 8,
            Payload::Gradient { rows, .. } => rows.len() * 8 + 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub from: Endpoint,
    pub to: Endpoint,
    pub phase: Phase,
    pub payload_bytes: usize,
    pub payload: Payload,
}

/// Checks every message online against fingerprints of the raw private data.
///
/// Nothing is stored beyond the fingerprints; violations are reported to the
/// transcript.
#[derive(Debug, Clone, Default)]
pub struct LocalityScanner {
    feature_rows: BTreeSet<Vec<u64>>,
    labels: Vec<u64>,
    edges: BTreeSet<(usize, usize)>,
}

fn row_bits(row: ndarray::ArrayView1<'_, f64>) -> Vec<u64> {
    row.iter().map(|v| v.to_bits()).collect()
}

impl LocalityScanner {
    pub fn new(graph: &PartitionedGraph) -> Self {
        let mut feature_rows = BTreeSet::new();
        let mut edges = BTreeSet::new();
        for h in &graph.holders {
            for r in h.features.axis_iter(Axis(0)) {
                if r.iter().any(|&v| v != 0.0) {
                    feature_rows.insert(row_bits(r));
                }
            }
            edges.extend(h.edges.iter().copied());
        }
        let labels = graph.labels().iter().map(|&l| (l as f64).to_bits()).collect();
        LocalityScanner { feature_rows, labels, edges }
    }

    fn leaks(&self, m: &Matrix) -> Option<&'static str> {
        for r in m.axis_iter(Axis(0)) {
            if self.feature_rows.contains(&row_bits(r)) {
                return Some("raw feature row");
            }
        }
        if m.nrows() == self.labels.len() && self.labels.len() > 1 {
            for c in m.axis_iter(Axis(1)) {
                if c.iter().map(|v| v.to_bits()).eq(self.labels.iter().copied()) {
                    return Some("label vector");
                }
            }
        }
        if m.ncols() == 2 && m.nrows() > 0 {
            let all_edges = m.axis_iter(Axis(0)).all(|r| {
                let (a, b) = (r[0], r[1]);
                a >= 0.0 && b >= 0.0 && libm::trunc(a) == a && libm::trunc(b) == b && {
                    let (a, b) = (a as usize, b as usize);
                    self.edges.contains(&(a.min(b), a.max(b)))
                }
            });
            if all_edges {
                return Some("edge list");
            }
        }
        None
    }

    /// Returns a description of the violation, if any.
    pub fn inspect(&self, msg: &Message) -> Option<String> {
        match (msg.from, msg.to) {
            (Endpoint::Holder(_), Endpoint::Holder(_)) => {
                if !matches!(msg.payload, Payload::Ring(_)) {
                    return Some(format!("{} payload between holders {} -> {}", msg.payload.kind(), msg.from, msg.to));
                }
                None
            }
            (_, Endpoint::Server) => {
                let body = match &msg.payload {
                    Payload::Embedding(m) => m,
                    Payload::Gradient { rows, .. } => rows,
                    other => return Some(format!("{} payload sent to the server by {}", other.kind(), msg.from)),
                };
                self.leaks(body).map(|what| format!("{what} in {} from {}", msg.phase, msg.from))
            }
            (Endpoint::Server, Endpoint::Holder(_)) => match &msg.payload {
                Payload::Hidden { .. } | Payload::EmbeddingGradient(_) => None,
                other => Some(format!("{} payload sent by the server", other.kind())),
            },
        }
    }
}

/// In-memory mailboxes. Every message is logged to the transcript and
/// scanned before it is queued for its receiver.
#[derive(Debug, Default)]
pub struct Network {
    transcript: Transcript,
    mailboxes: BTreeMap<Endpoint, VecDeque<Message>>,
    scanner: Option<LocalityScanner>,
    ring_bytes: usize,
}

impl Network {
    pub fn new(ring_bytes: usize, scanner: Option<LocalityScanner>) -> Self {
        Network { transcript: Transcript::new(), mailboxes: BTreeMap::new(), scanner, ring_bytes }
    }

    pub fn send(&mut self, from: Endpoint, to: Endpoint, phase: Phase, payload: Payload) {
        let payload_bytes = payload.bytes(self.ring_bytes);
        let msg = Message { from, to, phase, payload_bytes, payload };
        self.transcript.record(phase, payload_bytes);
        if let Some(scanner) = &self.scanner {
            if let Some(v) = scanner.inspect(&msg) {
                self.transcript.flag_violation(v);
            }
        }
        self.mailboxes.entry(to).or_default().push_back(msg);
    }

    pub fn recv(&mut self, at: Endpoint) -> Option<Message> {
        self.mailboxes.get_mut(&at).and_then(|q| q.pop_front())
    }

    /// Next message for `at`, which must belong to `phase`.
    pub fn expect(&mut self, at: Endpoint, phase: Phase) -> Result<Message> {
        let msg = self.recv(at).ok_or_else(|| Error::Protocol(format!("{at} expected a {phase} message")))?;
        if msg.phase != phase {
            return Err(Error::Protocol(format!("{at} expected {phase}, got {}", msg.phase)));
        }
        Ok(msg)
    }

    pub fn pending(&self) -> usize {
        self.mailboxes.values().map(|q| q.len()).sum()
    }

    /// Drops undelivered messages, e.g. after a fault was injected.
    pub fn drain(&mut self) {
        self.mailboxes.clear();
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn transcript_mut(&mut self) -> &mut Transcript {
        &mut self.transcript
    }
}

impl ShareChannel for Network {
    fn transfer(
        &mut self,
        phase: Phase,
        from: PartyId,
        to: PartyId,
        payload: &Array2<u64>,
        _element_bytes: usize,
    ) -> Array2<u64> {
        self.send(Endpoint::Holder(from), Endpoint::Holder(to), phase, Payload::Ring(payload.clone()));
        match self.recv(Endpoint::Holder(to)).map(|m| m.payload) {
            Some(Payload::Ring(m)) => m,
            _ => unreachable!("ring message was queued just above"),
        }
    }

    fn transcript(&self) -> &Transcript {
        &self.transcript
    }
}
