//! The four subcommands.

pub mod comm_audit;
pub mod compare;
pub mod dp_sweep;
pub mod train;

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use vfgnn_core::graph::PartitionedGraph;
use vfgnn_core::protocol::{Session, TrainConfig, TrainOutcome};

use crate::error::CliError;

/// Runs `f` for every item in parallel and returns the results in input order.
pub fn parallel<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> Result<U, CliError> + Sync + Send) -> Result<Vec<U>, CliError> {
    items.par_iter().map(f).collect()
}

/// Trains one run and turns locality violations into an error.
pub fn checked_run(graph: &PartitionedGraph, config: &TrainConfig, run_id: Option<String>) -> Result<TrainOutcome, CliError> {
    let mut session = Session::new(graph, config.clone())?;
    if let Some(id) = run_id {
        session = session.with_run_id(id);
    }
    let out = session.run()?;
    if let Some(v) = out.transcript.violations().first() {
        return Err(CliError::Runtime(format!("locality violation: {v}")));
    }
    Ok(out)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// `inf` for the unbounded budget, the shortest exact form otherwise.
pub fn eps_label(eps: f64) -> String {
    if eps.is_infinite() {
        "inf".into()
    } else {
        format!("{eps}")
    }
}
