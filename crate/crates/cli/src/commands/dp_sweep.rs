use vfgnn_core::dp::Mechanism;
use vfgnn_core::protocol::{DpConfig, MetricsRecord, TrainConfig};

use crate::commands::{checked_run, eps_label, parallel, write_text};
use crate::metrics::emit;
use crate::plot::{line_chart, Series};
use crate::report::{mean, std_err, Cell, Table};
use crate::{CliError, Context};

pub fn mechanism_name(m: Mechanism) -> &'static str {
    match m {
        Mechanism::Gaussian => "gaussian",
        Mechanism::JamesStein => "james_stein",
    }
}

/// A drop in mean accuracy from one epsilon to the next larger one counts as
/// a violation only beyond this margin: one point or twice the standard error
/// of the per-seed differences, whichever is larger.
pub fn trend_tolerance(diffs: &[f64]) -> f64 {
    let se = if diffs.len() > 1 { std_err(diffs) } else { 0.0 };
    (2.0 * se).max(0.01)
}

pub fn run(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let mut epsilons = cfg.sweep.epsilons.clone();
    if epsilons.is_empty() || cfg.sweep.mechanisms.is_empty() {
        return Err(CliError::Config("[sweep]: epsilons and mechanisms must not be empty".into()));
    }
    epsilons.sort_by(f64::total_cmp);
    let mechanisms = &cfg.sweep.mechanisms;

    let config_for = |m: Mechanism, eps: f64, seed: u64| TrainConfig {
        dp: DpConfig { epsilon: eps, mechanism: m, ..cfg.train.dp },
        ..cfg.train_config(seed)
    };
    for &m in mechanisms {
        for &eps in &epsilons {
            config_for(m, eps, cfg.seeds[0])
                .validate()
                .map_err(|e| CliError::Config(format!("[sweep]: {} at epsilon {}: {e}", mechanism_name(m), eps_label(eps))))?;
        }
    }

    let grid: Vec<(Mechanism, f64, u64)> = mechanisms
        .iter()
        .flat_map(|&m| epsilons.iter().flat_map(move |&e| cfg.seeds.iter().map(move |&s| (m, e, s))))
        .collect();
    let finals: Vec<MetricsRecord> = parallel(&grid, |&(m, eps, seed)| {
        let master = cfg.graph(seed)?;
        let g = cfg.partitioned(&master, &cfg.partition.proportions(), seed)?;
        let id = format!("dp-{}-eps{}-seed{seed}", mechanism_name(m), eps_label(eps));
        Ok(checked_run(&g, &config_for(m, eps, seed), Some(id))?.final_record().clone())
    })?;

    // finals[(mi * E + ei) * S + si]
    let (ne, ns) = (epsilons.len(), cfg.seeds.len());
    let acc = |mi: usize, ei: usize| -> Vec<f64> {
        (0..ns).map(|si| finals[(mi * ne + ei) * ns + si].test_accuracy).collect()
    };

    let mut table = Table::new("epsilon", mechanisms.iter().map(|&m| mechanism_name(m).to_string()).collect());
    for (ei, &eps) in epsilons.iter().enumerate() {
        table.push(eps_label(eps), (0..mechanisms.len()).map(|mi| Cell::new(acc(mi, ei))).collect());
    }
    println!("{table}");

    let mut violations = Vec::new();
    for (mi, &m) in mechanisms.iter().enumerate() {
        for ei in 1..ne {
            let (lo, hi) = (acc(mi, ei - 1), acc(mi, ei));
            let diffs: Vec<f64> = hi.iter().zip(&lo).map(|(h, l)| h - l).collect();
            let drop = -mean(&diffs);
            if drop > trend_tolerance(&diffs) {
                violations.push(format!(
                    "{}: accuracy falls by {drop:.3} from epsilon {} to {}",
                    mechanism_name(m),
                    eps_label(epsilons[ei - 1]),
                    eps_label(epsilons[ei])
                ));
            }
        }
    }
    let g = mechanisms.iter().position(|&m| m == Mechanism::Gaussian);
    let js = mechanisms.iter().position(|&m| m == Mechanism::JamesStein);
    if let (Some(g), Some(js)) = (g, js) {
        for (ei, &eps) in epsilons.iter().enumerate() {
            let (a, b) = (mean(&acc(g, ei)), mean(&acc(js, ei)));
            if b < a {
                ctx.note(format!("warning: james_stein below gaussian at epsilon {} ({b:.3} < {a:.3})", eps_label(eps)));
            }
        }
    }

    if let Some(path) = &ctx.out {
        emit(Some(path), &finals)?;
    }
    if let Some(path) = &ctx.plot {
        // unbounded epsilon is drawn one step past the largest finite value
        let finite: Vec<f64> = epsilons.iter().copied().filter(|e| e.is_finite()).collect();
        let top = finite.last().map_or(0.0, |e| e.log2());
        let x = |e: f64| if e.is_finite() { e.log2() } else { top + 1.0 };
        let ticks: Vec<(f64, String)> = epsilons.iter().map(|&e| (x(e), eps_label(e))).collect();
        let series: Vec<Series> = table
            .columns
            .iter()
            .enumerate()
            .map(|(mi, name)| Series {
                name: name.clone(),
                points: epsilons.iter().enumerate().map(|(ei, &e)| (x(e), table.rows[ei].1[mi].mean)).collect(),
            })
            .collect();
        write_text(path, &line_chart("Test accuracy against epsilon", "epsilon", "accuracy", &series, &ticks))?;
    }

    if violations.is_empty() {
        println!("trend: accuracy non-decreasing in epsilon for every mechanism");
        Ok(())
    } else {
        Err(CliError::Runtime(format!("trend check failed: {}", violations.join("; "))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tolerance_has_a_one_point_floor() {
        assert_eq!(trend_tolerance(&[0.0, 0.0, 0.0]), 0.01);
        assert_eq!(trend_tolerance(&[-0.5]), 0.01);
        let wide = [0.1, -0.1, 0.1, -0.1];
        assert!((trend_tolerance(&wide) - 2.0 * std_err(&wide)).abs() < 1e-15);
    }
}
