use ndarray::Array2;
use vfgnn_core::protocol::{comm_audit, AuditShape, Payload, Session, TrainConfig};
use vfgnn_core::transcript::Phase;
use vfgnn_core::{Endpoint, PartyId};

use crate::commands::write_text;
use crate::config::Fault;
use crate::{CliError, Context};

pub fn run(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let seed = cfg.seeds[0];
    let master = cfg.graph(seed)?;
    let g = cfg.partitioned(&master, &cfg.partition.proportions(), seed)?;
    let config = TrainConfig { epochs: 1, ..cfg.train_config(seed) };

    let mut session = Session::new(&g, config.clone())?;
    session.step()?;
    if let Some(fault) = cfg.audit.fault {
        let last = g.holders.len() - 1;
        let from = Endpoint::Holder(PartyId(last.min(1) as u16));
        let payload = match fault {
            Fault::ExtraMessage => Payload::Embedding(Array2::zeros((g.node_count, config.embed_dim))),
            Fault::RawFeatures => Payload::Embedding(g.holders[last.min(1)].features.clone()),
        };
        ctx.note(format!("injecting {fault:?} from {from}"));
        let net = session.network_mut();
        net.send(from, Endpoint::Server, Phase::EmbeddingPublish, payload);
        net.drain();
    }

    let report = comm_audit(session.transcript(), &AuditShape::new(&g, &config, 1));
    let text = format!("{} holders, {} nodes, 1 epoch\n{report}", g.holders.len(), g.node_count);
    print!("{text}");
    if let Some(path) = &ctx.out {
        write_text(path, &text)?;
    }
    if report.ok() {
        Ok(())
    } else {
        let bad = report.rows.iter().filter(|r| !r.matches()).count();
        Err(CliError::Runtime(format!(
            "communication audit failed: {bad} phase(s) differ from the closed forms, {} locality violation(s)",
            report.violations.len()
        )))
    }
}
