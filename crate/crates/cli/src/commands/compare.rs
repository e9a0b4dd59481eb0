use vfgnn_core::graph::{PartitionedGraph, Proportions};
use vfgnn_core::protocol::{plain_config, TrainConfig};
use vfgnn_core::server::CombineKind;

use crate::commands::{checked_run, parallel};
use crate::config::ExperimentConfig;
use crate::metrics::emit;
use crate::report::{Cell, Table};
use crate::{CliError, Context};

pub fn strategy_name(kind: CombineKind) -> String {
    let initial = kind.name()[..1].to_uppercase();
    format!("VFGNN_{initial}")
}

fn final_accuracy(g: &PartitionedGraph, config: &TrainConfig) -> Result<f64, CliError> {
    Ok(checked_run(g, config, None)?.final_record().test_accuracy)
}

/// Federated accuracy for each strategy under one partition, per seed.
fn federated(cfg: &ExperimentConfig, proportions: &Proportions) -> Result<Vec<Vec<f64>>, CliError> {
    let per_seed = parallel(&cfg.seeds, |&seed| {
        let master = cfg.graph(seed)?;
        let g = cfg.partitioned(&master, proportions, seed)?;
        cfg.sweep
            .combine
            .iter()
            .map(|&combine| final_accuracy(&g, &TrainConfig { combine, ..cfg.train_config(seed) }))
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(transpose(per_seed))
}

fn transpose(per_seed: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let cols = per_seed.first().map_or(0, Vec::len);
    (0..cols).map(|c| per_seed.iter().map(|row| row[c]).collect()).collect()
}

fn strategy_columns(cfg: &ExperimentConfig) -> Vec<String> {
    cfg.sweep.combine.iter().map(|&k| strategy_name(k)).collect()
}

fn check_label_holder(cfg: &ExperimentConfig, holders: usize, what: &str) -> Result<(), CliError> {
    if usize::from(cfg.partition.label_holder) >= holders {
        return Err(CliError::Config(format!(
            "[sweep]: {what} has {holders} holders but label_holder is {}",
            cfg.partition.label_holder
        )));
    }
    Ok(())
}

fn base_table(cfg: &ExperimentConfig) -> Result<Table, CliError> {
    let proportions = cfg.partition.proportions();
    let per_seed = parallel(&cfg.seeds, |&seed| {
        let master = cfg.graph(seed)?;
        let g = cfg.partitioned(&master, &proportions, seed)?;
        let config = cfg.train_config(seed);
        let plain = plain_config(&config);
        let mut row = Vec::new();
        for id in g.holder_ids() {
            row.push(final_accuracy(&g.isolated(id), &plain)?);
        }
        for &combine in &cfg.sweep.combine {
            row.push(final_accuracy(&g, &TrainConfig { combine, ..config.clone() })?);
        }
        row.push(final_accuracy(&PartitionedGraph::single_holder(&master), &plain)?);
        Ok(row)
    })?;
    let mut names: Vec<String> = (1..=proportions.features.len()).map(|i| format!("isolated_{i}")).collect();
    names.extend(strategy_columns(cfg));
    names.push("centralized".into());

    let mut table = Table::new("setting", vec!["test accuracy".into()]);
    for (name, values) in names.into_iter().zip(transpose(per_seed)) {
        table.push(name, vec![Cell::new(values)]);
    }
    Ok(table)
}

fn ratio_label(weights: &[f64]) -> String {
    weights.iter().map(|w| format!("{w}")).collect::<Vec<_>>().join(":")
}

fn proportion_table(cfg: &ExperimentConfig) -> Result<Table, CliError> {
    let mut table = Table::new("proportions", strategy_columns(cfg));
    for weights in &cfg.sweep.proportions {
        check_label_holder(cfg, weights.len(), &format!("proportions {}", ratio_label(weights)))?;
        let cols = federated(cfg, &Proportions::ratio(weights))?;
        table.push(ratio_label(weights), cols.into_iter().map(Cell::new).collect());
    }
    Ok(table)
}

fn holder_table(cfg: &ExperimentConfig) -> Result<Table, CliError> {
    let mut table = Table::new("holders", strategy_columns(cfg));
    for &h in &cfg.sweep.holders {
        check_label_holder(cfg, h, &format!("holder count {h}"))?;
        let cols = federated(cfg, &Proportions::even(h))?;
        table.push(h.to_string(), cols.into_iter().map(Cell::new).collect());
    }
    Ok(table)
}

/// Whether the column means never increase down the rows.
pub fn non_increasing(table: &Table, col: usize) -> bool {
    table.rows.windows(2).all(|w| w[1].1[col].mean <= w[0].1[col].mean)
}

pub fn run(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    if cfg.sweep.combine.is_empty() {
        return Err(CliError::Config("[sweep]: combine must list at least one strategy".into()));
    }
    let mut tables = vec![base_table(cfg)?];
    if !cfg.sweep.proportions.is_empty() {
        tables.push(proportion_table(cfg)?);
    }
    let mut trend = Vec::new();
    if !cfg.sweep.holders.is_empty() {
        let t = holder_table(cfg)?;
        for (i, name) in t.columns.iter().enumerate() {
            let flag = if non_increasing(&t, i) { "non-increasing" } else { "not monotone" };
            trend.push(format!("{name} accuracy over holder counts: {flag}"));
        }
        tables.push(t);
    }

    for t in &tables {
        println!("{t}");
    }
    for line in &trend {
        println!("{line}");
    }
    if let Some(path) = &ctx.out {
        emit(Some(path), &tables)?;
    }
    Ok(())
}
