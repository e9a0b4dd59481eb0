//! The training loop: one synchronous round sequence per epoch.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dp::{publish_rows, DpParams, GuardStatus, PrivacyAccountant};
use crate::error::{Error, Result};
use crate::gnn::{local_backward, local_forward, GnnCache, LocalGnnParams};
use crate::graph::{PartitionedGraph, Split};
use crate::party::Endpoint;
use crate::secure_init::{
    individual_initial_embeddings, init_weight_shares, reconstruct_weights, secure_init_backward,
    secure_initial_embeddings, update_weight_shares, InitMode,
};
use crate::server::{
    combine, combine_backward, cross_entropy, output_backward, output_forward, server_backward, server_forward,
    sgd, Combiner, Mode, OutputHead, ServerMlp,
};
use crate::sharing::{ShareTensor, TrustedDealer};
use crate::tensor::{uniform, Matrix};
use crate::transcript::{Phase, PhaseTally, Transcript};

use super::config::TrainConfig;
use super::network::{LocalityScanner, Network, Payload};
use super::predict;

const STREAM_INIT: u64 = 1;
const STREAM_SHARING: u64 = 2;
const STREAM_EMBED_DP: u64 = 3;
const STREAM_DROPOUT: u64 = 4;
const STREAM_SAMPLE: u64 = 5;
const STREAM_GRAD_DP: u64 = 6;
const DEALER_SALT: u64 = 0x5eed_dea1;

/// Independent generator for one purpose, epoch and party.
pub fn stream(seed: u64, purpose: u64, epoch: usize, party: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream((purpose << 48) | ((epoch as u64) << 16) | party as u64);
    r
}

/// Weights of the initial embedding.
#[derive(Debug, Clone, PartialEq)]
pub enum InitState {
    /// Secret-shared `W` (one share per holder).
    Shared(Vec<ShareTensor>),
    /// Private `W^i` per holder.
    Individual(Vec<Matrix>),
}

/// Every trainable parameter, grouped by owner.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub init: InitState,
    /// Per holder, in holder order.
    pub gnn: Vec<LocalGnnParams>,
    pub combiner: Combiner,
    pub mlp: ServerMlp,
    /// Kept by the label holder.
    pub head: OutputHead,
}

impl ModelState {
    pub fn new(graph: &PartitionedGraph, config: &TrainConfig) -> Result<Self> {
        let mut rng = stream(config.seed, STREAM_INIT, 0, 0);
        let d = config.embed_dim;
        let holders = graph.holders.len();
        let init = match config.init_mode {
            InitMode::Collaborative => InitState::Shared(init_weight_shares(graph, d, config.codec(), &mut rng)?),
            InitMode::Individual => {
                let limit = 1.0 / libm::sqrt(d as f64);
                InitState::Individual(graph.holders.iter().map(|h| uniform((h.features.ncols(), d), limit, &mut rng)).collect())
            }
        };
        let gnn = (0..holders)
            .map(|_| LocalGnnParams::glorot(config.depth, d, d, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let combiner = Combiner::new(config.combine, holders, d);
        let server_in = combiner.output_dim(&alloc::vec![d; holders]);
        let mlp = ServerMlp::glorot(config.server_layers, server_in, d, config.dropout, &mut rng)?;
        let head = OutputHead::glorot(d, graph.num_classes, &mut rng);
        Ok(ModelState { init, gnn, combiner, mlp, head })
    }

    /// Plain initial-embedding weights: one `F x d` matrix when shared, one per holder otherwise.
    pub fn init_weights_plain(&self) -> Result<Vec<Matrix>> {
        match &self.init {
            InitState::Shared(shares) => Ok(alloc::vec![reconstruct_weights(shares)?]),
            InitState::Individual(ws) => Ok(ws.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitGradients {
    /// Shares of `dL/dW`, one per holder.
    Shared(Vec<ShareTensor>),
    Individual(Vec<Matrix>),
    /// `h0` is frozen; nothing to update.
    Frozen,
}

/// Everything one forward/backward round produces.
#[derive(Debug, Clone)]
pub struct StepGradients {
    pub loss: f64,
    pub init: InitGradients,
    pub gnn: Vec<Vec<Matrix>>,
    pub mlp: Vec<Matrix>,
    pub omega: Vec<Array1<f64>>,
    pub head: Matrix,
    /// Evaluation-mode class probabilities seen by the label holder.
    pub eval_probs: Matrix,
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsRecord {
    pub run_id: String,
    pub seed: u64,
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    /// Composed epsilon so far; infinite when no noise is added (`null` in JSON).
    #[cfg_attr(feature = "serde", serde(with = "unbounded"))]
    pub epsilon_spent: f64,
    /// Cumulative message counts and bytes per phase.
    pub phases: BTreeMap<String, PhaseTally>,
}

#[cfg(feature = "serde")]
mod unbounded {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Result of a finished run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelState,
    pub history: Vec<MetricsRecord>,
    pub transcript: Transcript,
    pub eval_probs: Matrix,
    pub warnings: Vec<String>,
}

impl TrainOutcome {
    pub fn final_record(&self) -> &MetricsRecord {
        self.history.last().expect("at least one epoch")
    }
}

pub struct Session<'g> {
    graph: &'g PartitionedGraph,
    config: TrainConfig,
    dp: DpParams,
    model: ModelState,
    net: Network,
    dealer: TrustedDealer,
    frozen_h0: Option<Matrix>,
    embedding_accountant: PrivacyAccountant,
    gradient_accountant: PrivacyAccountant,
    epoch: usize,
    history: Vec<MetricsRecord>,
    warnings: Vec<String>,
    run_id: String,
    last_probs: Option<Matrix>,
}

impl<'g> Session<'g> {
    pub fn new(graph: &'g PartitionedGraph, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if graph.holders.is_empty() {
            return Err(Error::TooFewParties(0));
        }
        for (i, h) in graph.holders.iter().enumerate() {
            if h.id.index() != i {
                return Err(Error::Graph(format!("holder ids must be 0..{}, found {}", graph.holders.len(), h.id)));
            }
        }
        if !graph.mask(Split::Train).iter().any(|&m| m) {
            return Err(Error::EmptyMask);
        }
        let codec = config.codec();
        let model = ModelState::new(graph, &config)?;
        let net = Network::new(codec.ring().element_bytes(), Some(LocalityScanner::new(graph)));
        let run_id = format!("{}h-{}-seed{}", graph.holders.len(), config.combine.name(), config.seed);
        Ok(Session {
            graph,
            dp: config.dp.params()?,
            embedding_accountant: config.dp.accountant(config.sample_rate),
            gradient_accountant: config.dp.accountant(config.sample_rate),
            dealer: TrustedDealer::new(config.seed ^ DEALER_SALT, codec),
            model,
            net,
            frozen_h0: None,
            epoch: 0,
            history: Vec::new(),
            warnings: Vec::new(),
            run_id,
            last_probs: None,
            config,
        })
    }

    pub fn with_run_id(mut self, id: impl Into<String>) -> Self {
        self.run_id = id.into();
        self
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &ModelState {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut ModelState {
        &mut self.model
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn transcript(&self) -> &Transcript {
        self.net.transcript()
    }

    pub fn history(&self) -> &[MetricsRecord] {
        &self.history
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Number of completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn embedding_accountant(&self) -> &PrivacyAccountant {
        &self.embedding_accountant
    }

    pub fn gradient_accountant(&self) -> &PrivacyAccountant {
        &self.gradient_accountant
    }

    /// Dropout generator the server uses in epoch `epoch` (0-based).
    pub fn dropout_rng(&self, epoch: usize) -> ChaCha8Rng {
        stream(self.config.seed, STREAM_DROPOUT, epoch, 0)
    }

    /// Training nodes used in epoch `epoch`: all of them, or a Poisson sample at rate `q`.
    pub fn batch_mask(&self, epoch: usize) -> Vec<bool> {
        let train = self.graph.mask(Split::Train);
        let q = self.config.sample_rate;
        if q >= 1.0 {
            return train;
        }
        let mut rng = stream(self.config.seed, STREAM_SAMPLE, epoch, 0);
        loop {
            let batch: Vec<bool> = train.iter().map(|&t| t && rng.random::<f64>() < q).collect();
            if batch.iter().any(|&b| b) {
                return batch;
            }
        }
    }

    fn initial_embeddings(&mut self) -> Result<(Vec<Matrix>, Option<Vec<ShareTensor>>)> {
        let holders = self.graph.holders.len();
        match &self.model.init {
            InitState::Individual(ws) => Ok((individual_initial_embeddings(self.graph, ws)?, None)),
            InitState::Shared(shares) => {
                if let Some(h0) = &self.frozen_h0 {
                    return Ok((alloc::vec![h0.clone(); holders], None));
                }
                let mut rng = stream(self.config.seed, STREAM_SHARING, self.epoch, 0);
                let out = secure_initial_embeddings(self.graph, shares, &mut self.dealer, &mut self.net, &mut rng)?;
                if self.config.freeze_h0 {
                    self.frozen_h0 = Some(out.h0.clone());
                    return Ok((alloc::vec![out.h0; holders], None));
                }
                Ok((alloc::vec![out.h0; holders], Some(out.x_shares)))
            }
        }
    }

    /// Runs one forward and backward round over the network without updating any weight.
    pub fn compute_gradients(&mut self) -> Result<StepGradients> {
        let graph = self.graph;
        let ids = graph.holder_ids();
        let server = Endpoint::Server;
        let label_holder = Endpoint::Holder(graph.label_holder);

        // holders: initial and local embeddings, then DP publication
        let (h0, x_shares) = self.initial_embeddings()?;
        let mut caches: Vec<GnnCache> = Vec::with_capacity(ids.len());
        for (i, &id) in ids.iter().enumerate() {
            let (emb, cache) = local_forward(id, &h0[i], &self.model.gnn[i], &graph.holder(id).neighbors)?;
            let mut rng = stream(self.config.seed, STREAM_EMBED_DP, self.epoch, i);
            let published = publish_rows(&emb.h, &self.dp, self.config.dp.mechanism, &mut rng)?;
            self.net.send(Endpoint::Holder(id), server, Phase::EmbeddingPublish, Payload::Embedding(published));
            caches.push(cache);
        }

        // server: combine and run the MLP
        let mut published = Vec::with_capacity(ids.len());
        for _ in &ids {
            match self.net.expect(server, Phase::EmbeddingPublish)?.payload {
                Payload::Embedding(m) => published.push(m),
                other => return Err(Error::Protocol(format!("unexpected {} payload", other.kind()))),
            }
        }
        let refs: Vec<&Matrix> = published.iter().collect();
        let global = combine(&refs, &self.model.combiner)?;
        let mut dropout = self.dropout_rng(self.epoch);
        let (z_train, mlp_cache) = server_forward(&global, &self.model.mlp, Mode::Train, &mut dropout)?;
        let (z_eval, _) = server_forward(&global, &self.model.mlp, Mode::Eval, &mut dropout)?;
        self.net.send(server, label_holder, Phase::HiddenToLabelHolder, Payload::Hidden { train: z_train, eval: z_eval });

        // label holder: loss, head gradient, DP-published output gradient
        let (z_train, z_eval) = match self.net.expect(label_holder, Phase::HiddenToLabelHolder)?.payload {
            Payload::Hidden { train, eval } => (train, eval),
            other => return Err(Error::Protocol(format!("unexpected {} payload", other.kind()))),
        };
        let batch = self.batch_mask(self.epoch);
        let (_, probs) = output_forward(&z_train, &self.model.head)?;
        let (loss, d_logits) = cross_entropy(&probs, graph.labels(), &batch)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: self.epoch + 1 });
        }
        let (_, eval_probs) = output_forward(&z_eval, &self.model.head)?;
        let (d_head, d_z) = output_backward(&d_logits, &z_train, &self.model.head);
        let count = batch.iter().filter(|&&b| b).count() as f64;
        let per_node = &d_z * count;
        let mut rng = stream(self.config.seed, STREAM_GRAD_DP, self.epoch, 0);
        let rows = publish_rows(&per_node, &self.dp, self.config.dp.mechanism, &mut rng)?;
        self.net.send(label_holder, server, Phase::GradientPublish, Payload::Gradient { rows, scale: 1.0 / count });

        // server: backward and per-holder gradients
        let d_z = match self.net.expect(server, Phase::GradientPublish)?.payload {
            Payload::Gradient { rows, scale } => rows * scale,
            other => return Err(Error::Protocol(format!("unexpected {} payload", other.kind()))),
        };
        let (d_mlp, d_global) = server_backward(&d_z, &mlp_cache, &self.model.mlp)?;
        let (d_locals, d_omega) = combine_backward(&d_global, &refs, &self.model.combiner)?;
        for (&id, d) in ids.iter().zip(d_locals) {
            self.net.send(server, Endpoint::Holder(id), Phase::GradientReturn, Payload::EmbeddingGradient(d));
        }

        // holders: local backward, then the initial-embedding gradient
        let mut gnn_grads = Vec::with_capacity(ids.len());
        let mut h0_grads = Vec::with_capacity(ids.len());
        for (i, &id) in ids.iter().enumerate() {
            let d = match self.net.expect(Endpoint::Holder(id), Phase::GradientReturn)?.payload {
                Payload::EmbeddingGradient(d) => d,
                other => return Err(Error::Protocol(format!("unexpected {} payload", other.kind()))),
            };
            let g = local_backward(&d, &caches[i], &self.model.gnn[i])?;
            gnn_grads.push(g.weights);
            h0_grads.push((id, g.h0));
        }
        let init = match (&self.model.init, x_shares) {
            (InitState::Individual(_), _) => InitGradients::Individual(
                graph.holders.iter().zip(&h0_grads).map(|(h, (_, g))| h.features.t().dot(g)).collect(),
            ),
            (InitState::Shared(_), Some(x)) => InitGradients::Shared(secure_init_backward(&x, &h0_grads, &mut self.net)?),
            (InitState::Shared(_), None) => InitGradients::Frozen,
        };
        if self.net.pending() != 0 {
            return Err(Error::Protocol(format!("{} undelivered messages after the round", self.net.pending())));
        }
        Ok(StepGradients { loss, init, gnn: gnn_grads, mlp: d_mlp, omega: d_omega, head: d_head, eval_probs })
    }

    fn apply(&mut self, g: &StepGradients) -> Result<()> {
        let (lr, l2) = (self.config.learning_rate, self.config.l2_reg);
        match (&mut self.model.init, &g.init) {
            (InitState::Shared(shares), InitGradients::Shared(gs)) => {
                *shares = update_weight_shares(shares, gs, lr, l2, &mut self.net)?;
            }
            (InitState::Individual(ws), InitGradients::Individual(gs)) => sgd(ws, gs, lr, l2)?,
            (_, InitGradients::Frozen) => {}
            _ => return Err(Error::Protocol("initial-embedding gradient does not match the model".into())),
        }
        for (p, gr) in self.model.gnn.iter_mut().zip(&g.gnn) {
            p.sgd_step(gr, lr, l2)?;
        }
        self.model.mlp.sgd_step(&g.mlp, lr, l2)?;
        for (w, gr) in self.model.combiner.omega.iter_mut().zip(&g.omega) {
            w.zip_mut_with(gr, |w, g| *w -= lr * g);
        }
        let head = &mut self.model.head.weight;
        head.zip_mut_with(&g.head, |w, g| *w -= lr * (g + l2 * *w));
        Ok(())
    }

    /// One full epoch: forward, backward, update, accounting and a metrics record.
    pub fn step(&mut self) -> Result<&MetricsRecord> {
        let grads = self.compute_gradients()?;
        self.apply(&grads)?;
        self.embedding_accountant.compose(1);
        self.gradient_accountant.compose(1);
        self.epoch += 1;
        let labels = self.graph.labels();
        let acc = |split: Split| predict(&grads.eval_probs, labels, &self.graph.mask(split)).accuracy;
        self.net.transcript_mut().snapshot();
        let phases = Phase::ALL
            .iter()
            .map(|&p| (p.name().to_string(), self.net.transcript().tally(p)))
            .collect();
        let record = MetricsRecord {
            run_id: self.run_id.clone(),
            seed: self.config.seed,
            epoch: self.epoch,
            loss: grads.loss,
            train_accuracy: acc(Split::Train),
            val_accuracy: acc(Split::Val),
            test_accuracy: acc(Split::Test),
            epsilon_spent: self.embedding_accountant.total().max(self.gradient_accountant.total()),
            phases,
        };
        self.last_probs = Some(grads.eval_probs);
        self.history.push(record);
        Ok(self.history.last().expect("just pushed"))
    }

    pub fn run(mut self) -> Result<TrainOutcome> {
        while self.epoch < self.config.epochs {
            self.step()?;
        }
        Ok(self.finish())
    }

    pub fn finish(mut self) -> TrainOutcome {
        for (name, acct) in [("embedding", &self.embedding_accountant), ("gradient", &self.gradient_accountant)] {
            if acct.steps > 0 && acct.per_step_epsilon.is_finite() && acct.guard() == GuardStatus::Violated {
                self.warnings.push(format!(
                    "{name} publications: epsilon {} is not below c1 q sqrt(T) = {}, so the composed bound is outside its stated regime",
                    acct.per_step_epsilon,
                    acct.c1 * acct.q * libm::sqrt(acct.steps as f64)
                ));
            }
        }
        let eval_probs = self.last_probs.unwrap_or_else(|| Matrix::zeros((0, 0)));
        TrainOutcome {
            model: self.model,
            history: self.history,
            transcript: self.net.transcript().clone(),
            eval_probs,
            warnings: self.warnings,
        }
    }
}

/// Trains `config.epochs` epochs from a fresh model.
pub fn train(graph: &PartitionedGraph, config: &TrainConfig) -> Result<TrainOutcome> {
    Session::new(graph, config.clone())?.run()
}

/// The training loss computed in plain floating point, without DP, for a
/// given batch and dropout generator. Used to check gradients numerically.
pub fn reference_loss<R: Rng + ?Sized>(
    graph: &PartitionedGraph,
    model: &ModelState,
    batch: &[bool],
    dropout: &mut R,
) -> Result<f64> {
    let ids = graph.holder_ids();
    let h0: Vec<Matrix> = match &model.init {
        InitState::Shared(shares) => {
            let h = graph.merged_features().dot(&reconstruct_weights(shares)?);
            alloc::vec![h; ids.len()]
        }
        InitState::Individual(ws) => individual_initial_embeddings(graph, ws)?,
    };
    let mut locals = Vec::with_capacity(ids.len());
    for (i, &id) in ids.iter().enumerate() {
        locals.push(local_forward(id, &h0[i], &model.gnn[i], &graph.holder(id).neighbors)?.0.h);
    }
    let refs: Vec<&Matrix> = locals.iter().collect();
    let global = combine(&refs, &model.combiner)?;
    let (z, _) = server_forward(&global, &model.mlp, Mode::Train, dropout)?;
    let (_, probs) = output_forward(&z, &model.head)?;
    Ok(cross_entropy(&probs, graph.labels(), batch)?.0)
}
