//! Vertically federated GraphSAGE training.
//!
//! Several data holders share one node set but hold disjoint feature columns,
//! private edge sets and (at one holder) the labels. They jointly train a
//! node classifier with a semi-honest server:
//!
//! * initial embeddings are computed from secret-shared features ([`secure_init`]),
//! * each holder aggregates neighbours over its own edges only ([`gnn`]),
//! * everything sent to the server passes through a DP mechanism ([`dp`]),
//! * the server combines local embeddings and runs an MLP, the label holder
//!   owns the softmax head ([`server`]),
//! * [`protocol`] drives the whole loop over logged messages.
//!
//! The crate is `no_std` with `alloc`; file IO and the CLI live in the `vfgnn` crate.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod dp;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod party;
pub mod protocol;
pub mod ring;
pub mod secure_init;
pub mod server;
pub mod sharing;
pub mod tensor;
pub mod transcript;

pub use error::{Error, Result};
pub use party::{Endpoint, PartyId};
