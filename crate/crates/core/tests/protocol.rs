mod common;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vfgnn_core::dp::Mechanism;
use vfgnn_core::graph::{generate_sbm, vertical_partition, Graph, PartitionedGraph, Proportions, SbmSpec, Split};
use vfgnn_core::protocol::{
    comm_audit, predict, run_baselines, AuditShape, DpConfig, Payload, Session, TrainConfig,
};
use vfgnn_core::secure_init::InitMode;
use vfgnn_core::server::CombineKind;
use vfgnn_core::transcript::Phase;
use vfgnn_core::{Endpoint, Error, PartyId};

use common::*;

fn bits(xs: &[f64]) -> Vec<u64> {
    xs.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn same_seed_gives_bit_identical_runs() {
    let master = small_graph(30, 8, 3, 1);
    let g = split_even(&master, 3, 1);
    let config = TrainConfig {
        epochs: 5,
        embed_dim: 4,
        sample_rate: 0.5,
        dp: DpConfig { epsilon: 8.0, mechanism: Mechanism::JamesStein, ..DpConfig::default() },
        seed: 17,
        ..TrainConfig::default()
    };
    let a = checked_train(&g, &config);
    let b = checked_train(&g, &config);
    assert_eq!(a.history, b.history);
    let losses = |o: &vfgnn_core::protocol::TrainOutcome| bits(&o.history.iter().map(|r| r.loss).collect::<Vec<_>>());
    assert_eq!(losses(&a), losses(&b));
    assert_eq!(a.transcript, b.transcript);
    assert_eq!(a.model, b.model);

    let c = checked_train(&g, &TrainConfig { seed: 18, ..config });
    assert_ne!(losses(&a), losses(&c));
}

#[test]
fn single_holder_loss_decreases_over_first_epochs() {
    let master = sbm(0);
    let g = PartitionedGraph::single_holder(&master);
    // dropout draws a fresh mask every epoch, which would swamp the small steps
    let config = TrainConfig { epochs: 20, learning_rate: 0.01, dropout: 0.0, seed: 0, ..TrainConfig::default() };
    let out = checked_train(&g, &config);
    let losses: Vec<f64> = out.history.iter().map(|r| r.loss).collect();
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "loss went up: {losses:?}");
    }
}

#[test]
fn transcripts_match_closed_forms() {
    let master = small_graph(20, 9, 3, 2);
    let cases: Vec<(usize, TrainConfig)> = vec![
        (2, TrainConfig { epochs: 2, embed_dim: 3, ..TrainConfig::default() }),
        (3, TrainConfig { epochs: 3, embed_dim: 5, combine: CombineKind::Concat, ..TrainConfig::default() }),
        (4, TrainConfig { epochs: 2, embed_dim: 4, combine: CombineKind::Regression, sample_rate: 0.5, ..TrainConfig::default() }),
        (3, TrainConfig { epochs: 4, embed_dim: 4, freeze_h0: true, ..TrainConfig::default() }),
        (2, TrainConfig { epochs: 3, embed_dim: 4, init_mode: InitMode::Individual, ..TrainConfig::default() }),
        (1, TrainConfig { epochs: 2, embed_dim: 4, ..TrainConfig::default() }),
        (2, TrainConfig { epochs: 2, embed_dim: 4, ring_bits: 48, frac_bits: 12, ..TrainConfig::default() }),
    ];
    for (p, config) in cases {
        let g = split_even(&master, p, p as u64);
        let out = checked_train(&g, &config);
        let report = comm_audit(&out.transcript, &AuditShape::new(&g, &config, config.epochs));
        assert!(report.ok(), "{p} holders, {config:?}\n{report}");
        assert_eq!(out.transcript.snapshots().len(), config.epochs);
    }
}

#[test]
fn audit_examples() {
    let master = small_graph(20, 9, 3, 3);
    let g3 = split_even(&master, 3, 3);
    let one = TrainConfig { epochs: 1, embed_dim: 4, ..TrainConfig::default() };
    let t = checked_train(&g3, &one).transcript;
    assert_eq!(t.messages(Phase::ShareDistribution), 6);

    let g2 = split_even(&master, 2, 3);
    let small = checked_train(&g2, &one).transcript;
    let wide = checked_train(&g2, &TrainConfig { embed_dim: 8, ..one.clone() }).transcript;
    assert_eq!(small.messages(Phase::EmbeddingPublish), 2);
    assert_eq!(wide.bytes(Phase::EmbeddingPublish), 2 * small.bytes(Phase::EmbeddingPublish));
}

#[test]
fn extra_message_breaks_the_audit() {
    let master = small_graph(16, 6, 2, 4);
    let g = split_even(&master, 2, 4);
    let config = TrainConfig { epochs: 1, embed_dim: 4, ..TrainConfig::default() };
    let mut s = Session::new(&g, config.clone()).unwrap();
    s.step().unwrap();
    let h = ndarray::Array2::zeros((g.node_count, 4));
    s.network_mut().send(Endpoint::Holder(PartyId(1)), Endpoint::Server, Phase::EmbeddingPublish, Payload::Embedding(h));
    s.network_mut().drain();
    let report = comm_audit(s.transcript(), &AuditShape::new(&g, &config, 1));
    assert!(!report.ok());
    assert!(!report.row(Phase::EmbeddingPublish).matches());
    assert!(report.row(Phase::ShareDistribution).matches());
    assert!(report.to_string().contains("MISMATCH"));
}

#[test]
fn noiseless_unclipped_mechanisms_coincide() {
    let master = small_graph(24, 8, 3, 5);
    let g = split_even(&master, 2, 5);
    let base = TrainConfig { epochs: 4, embed_dim: 4, dp: DpConfig::off(), ..TrainConfig::default() };
    let gauss = checked_train(&g, &base);
    let js = checked_train(&g, &TrainConfig { dp: DpConfig { mechanism: Mechanism::JamesStein, ..DpConfig::off() }, ..base });
    assert_eq!(gauss.history, js.history);
    assert_eq!(gauss.model, js.model);
}

#[test]
fn accountant_tracks_epochs() {
    let master = small_graph(24, 8, 3, 6);
    let g = split_even(&master, 2, 6);
    let (eps, q, c2, t) = (2.0, 0.5, 1.5, 7usize);
    let config = TrainConfig {
        epochs: t,
        embed_dim: 4,
        sample_rate: q,
        dp: DpConfig { epsilon: eps, c2, ..DpConfig::default() },
        ..TrainConfig::default()
    };
    let mut s = Session::new(&g, config).unwrap();
    for k in 1..=t {
        s.step().unwrap();
        let expected = c2 * q * (k as f64).sqrt() * eps;
        assert_eq!(s.embedding_accountant().total(), expected);
        assert_eq!(s.gradient_accountant().total(), expected);
        assert_eq!(s.history()[k - 1].epsilon_spent, expected);
    }
    let out = s.finish();
    assert!(out.transcript.violations().is_empty());
    // eps = 2 is not below q sqrt(7) ~ 1.32 at the end
    assert_eq!(out.warnings.len(), 2);
}

#[test]
fn noiseless_runs_report_unbounded_epsilon_without_warnings() {
    let master = small_graph(16, 6, 2, 7);
    let out = checked_train(&split_even(&master, 2, 7), &TrainConfig { epochs: 2, embed_dim: 4, ..TrainConfig::default() });
    assert!(out.warnings.is_empty());
    assert!(out.history.iter().all(|r| r.epsilon_spent.is_infinite()));
}

#[test]
fn random_labels_give_chance_accuracy() {
    let master = sbm(8);
    let mut labels = master.labels.clone();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(8));
    let shuffled = Graph::new(master.features.clone(), master.edges.clone(), labels, 3, master.split.clone()).unwrap();
    let g = split_even(&shuffled, 2, 8);
    let out = checked_train(&g, &sbm_config(8));
    let n_test = g.mask(Split::Test).iter().filter(|&&m| m).count() as f64;
    let p = 1.0 / 3.0;
    let band = 3.0 * (p * (1.0 - p) / n_test).sqrt();
    let acc = out.final_record().test_accuracy;
    assert!((acc - p).abs() <= band, "accuracy {acc} outside {p} +- {band}");
}

#[test]
fn label_free_block_model_gives_chance_baselines() {
    let spec = SbmSpec { class_signal: 0.0, p_in: 0.0101, p_out: 0.01, ..sbm_spec() };
    let master = generate_sbm(&spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let g = split_even(&master, 2, 9);
    let rep = run_baselines(&master, &g, &sbm_config(9)).unwrap();
    let n_test = master.mask(Split::Test).iter().filter(|&&m| m).count() as f64;
    let p = 1.0 / 3.0;
    let band = 3.0 * (p * (1.0 - p) / n_test).sqrt();
    for acc in rep.isolated.iter().chain([&rep.centralized, &rep.federated]) {
        assert!((acc - p).abs() <= band, "{rep:?}");
    }
}

#[test]
fn final_probabilities_reproduce_reported_accuracy() {
    let master = small_graph(30, 8, 3, 10);
    let g = split_even(&master, 2, 10);
    let out = checked_train(&g, &TrainConfig { epochs: 5, embed_dim: 4, learning_rate: 0.5, ..TrainConfig::default() });
    let pred = predict(&out.eval_probs, g.labels(), &g.mask(Split::Test));
    assert_eq!(pred.accuracy, out.final_record().test_accuracy);
    assert_eq!(pred.labels.len(), g.node_count);
}

#[test]
fn session_rejects_bad_inputs() {
    let master = small_graph(12, 6, 2, 11);
    let g = split_even(&master, 2, 11);
    let bad = TrainConfig { l2_reg: 0.5, ..TrainConfig::default() };
    assert!(Session::new(&g, bad).is_err());

    let no_train = Graph::new(master.features.clone(), master.edges.clone(), master.labels.clone(), 2, vec![Split::Test; 12]).unwrap();
    let g = vertical_partition(&no_train, &Proportions::even(2), PartyId(0), 0).unwrap();
    assert_eq!(Session::new(&g, TrainConfig::default()).err(), Some(Error::EmptyMask));

    let js_narrow = TrainConfig {
        embed_dim: 2,
        dp: DpConfig { mechanism: Mechanism::JamesStein, ..DpConfig::default() },
        ..TrainConfig::default()
    };
    assert!(Session::new(&split_even(&master, 2, 0), js_narrow).is_err());
}

#[test]
fn label_holder_can_be_any_party() {
    let master = small_graph(20, 9, 3, 12);
    for lh in 0..3u16 {
        let g = vertical_partition(&master, &Proportions::even(3), PartyId(lh), 12).unwrap();
        let config = TrainConfig { epochs: 2, embed_dim: 4, ..TrainConfig::default() };
        let out = checked_train(&g, &config);
        assert!(comm_audit(&out.transcript, &AuditShape::new(&g, &config, 2)).ok());
    }
}
