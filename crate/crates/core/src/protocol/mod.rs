//! Holders and server as message-passing parties running the training loop.
//!
//! Each epoch is a fixed sequence of synchronous rounds:
//!
//! 1. secure initial embeddings among the holders (shares, Beaver openings,
//!    reconstruction of `h0`),
//! 2. local propagation at every holder and DP publication to the server,
//! 3. server combination and MLP; the last hidden layer goes to the label holder,
//! 4. the label holder computes the loss and DP-publishes the output gradient,
//! 5. the server back-propagates and returns each holder's embedding gradient,
//! 6. holders back-propagate locally, exchange their `h0` gradients and update
//!    their shares of `W`.
//!
//! Every message goes through [`Network`], which counts it in the transcript
//! and checks it with a [`LocalityScanner`] before delivery.

mod audit;
mod baselines;
mod config;
mod network;
mod session;

pub use audit::{comm_audit, expected_counts, AuditReport, AuditRow, AuditShape};
pub use baselines::{plain_config, run_baselines, BaselineReport};
pub use config::{DpConfig, TrainConfig};
pub use network::{LocalityScanner, Message, Network, Payload};
pub use session::{
    reference_loss, stream, train, InitGradients, InitState, MetricsRecord, ModelState, Session, StepGradients,
    TrainOutcome,
};

use alloc::vec::Vec;

use crate::server::argmax_rows;
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: Vec<usize>,
    /// Fraction of masked nodes predicted correctly (0 for an empty mask).
    pub accuracy: f64,
}

/// Argmax of each row of `probs` (ties to the lowest class) and accuracy on `mask`.
pub fn predict(probs: &Matrix, labels: &[usize], mask: &[bool]) -> Prediction {
    let predicted = argmax_rows(probs);
    let mut hits = 0usize;
    let mut total = 0usize;
    for ((&p, &y), &m) in predicted.iter().zip(labels).zip(mask) {
        if m {
            total += 1;
            hits += usize::from(p == y);
        }
    }
    let accuracy = if total == 0 { 0.0 } else { hits as f64 / total as f64 };
    Prediction { labels: predicted, accuracy }
}
