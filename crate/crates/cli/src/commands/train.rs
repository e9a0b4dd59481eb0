use vfgnn_core::protocol::MetricsRecord;

use crate::commands::{checked_run, parallel, write_text};
use crate::metrics::emit;
use crate::plot::{line_chart, Series};
use crate::{CliError, Context};

pub fn run(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let runs = parallel(&cfg.seeds, |&seed| {
        let master = cfg.graph(seed)?;
        let g = cfg.partitioned(&master, &cfg.partition.proportions(), seed)?;
        checked_run(&g, &cfg.train_config(seed), None)
    })?;

    for (seed, out) in cfg.seeds.iter().zip(&runs) {
        for w in &out.warnings {
            ctx.note(format!("warning (seed {seed}): {w}"));
        }
        let last = out.final_record();
        ctx.note(format!(
            "seed {seed}: loss {:.4}, test accuracy {:.3} after {} epochs",
            last.loss, last.test_accuracy, last.epoch
        ));
    }
    let records: Vec<&MetricsRecord> = runs.iter().flat_map(|o| &o.history).collect();
    emit(ctx.out.as_deref(), &records)?;

    if let Some(path) = &ctx.plot {
        let series: Vec<Series> = runs
            .iter()
            .map(|o| Series {
                name: format!("seed {}", o.final_record().seed),
                points: o.history.iter().map(|r| (r.epoch as f64, r.test_accuracy)).collect(),
            })
            .collect();
        write_text(path, &line_chart("Test accuracy", "epoch", "accuracy", &series, &[]))?;
    }
    Ok(())
}
