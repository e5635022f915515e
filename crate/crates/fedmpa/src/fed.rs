//! Federated averaging over clients that each hold a private subgraph.

use crate::error::{Error, Result};
use crate::graph::{normalize_sym_selfloop, ClientSubgraph, SparseGraph};
use crate::nn::{
    mlp_backward, mlp_eval, mlp_forward, optimizer_step, softmax_ce_loss, DenseMatrix,
    MlpParams, Mode, OptimState, TrainConfig,
};

/// Everything one client holds locally: its induced subgraph (already
/// normalized), features, labels, masks over local node indices, model
/// parameters, optimizer state, and a private RNG.
pub struct ClientState {
    pub client_id: usize,
    pub global_ids: Vec<usize>,
    pub norm_graph: SparseGraph,
    pub features: DenseMatrix,
    pub labels: Vec<usize>,
    pub train_mask: Vec<usize>,
    pub val_mask: Vec<usize>,
    pub test_mask: Vec<usize>,
    pub params: MlpParams,
    pub opt_state: OptimState,
    pub rng: crate::nn::Rng,
}

impl ClientState {
    /// Assembles a client from its subgraph and the global arrays. Masks
    /// arrive as global node ids and are translated to local indices; ids
    /// that live on other clients are ignored.
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        client_id: usize,
        sub: &ClientSubgraph,
        global_features: &DenseMatrix,
        global_labels: &[usize],
        train_ids: &[usize],
        val_ids: &[usize],
        test_ids: &[usize],
        params: MlpParams,
        train: &TrainConfig,
        seed: u64,
    ) -> Result<Self> {
        let n_local = sub.global_ids.len();
        let d = global_features.cols();
        let mut features = DenseMatrix::zeros(n_local, d);
        let mut labels = Vec::with_capacity(n_local);
        for (local, &global) in sub.global_ids.iter().enumerate() {
            if global >= global_features.rows() || global >= global_labels.len() {
                return Err(Error::Shape(format!(
                    "node {} outside feature or label arrays",
                    global
                )));
            }
            for c in 0..d {
                features.set(local, c, global_features.get(global, c));
            }
            labels.push(global_labels[global]);
        }
        let to_local = |ids: &[usize]| -> Vec<usize> {
            let mut out: Vec<usize> = ids
                .iter()
                .filter_map(|g| sub.global_to_local.get(g).copied())
                .collect();
            out.sort_unstable();
            out
        };
        let norm_graph = normalize_sym_selfloop(&sub.local_graph)?;
        let opt_state =
            OptimState::new(train.optimizer, MlpParams::param_count(params.layer_dims()));
        Ok(ClientState {
            client_id,
            global_ids: sub.global_ids.clone(),
            norm_graph,
            features,
            labels,
            train_mask: to_local(train_ids),
            val_mask: to_local(val_ids),
            test_mask: to_local(test_ids),
            params,
            opt_state,
            rng: crate::nn::seeded(seed),
        })
    }

    pub fn n_local_nodes(&self) -> usize {
        self.global_ids.len()
    }

    /// Installs a flat weight vector, keeping the layer dims.
    pub fn install_weights(&mut self, flat: &[f64]) -> Result<()> {
        let dims = self.params.layer_dims().to_vec();
        self.params = MlpParams::unflatten(&dims, flat)?;
        Ok(())
    }

    /// The client's raw 0/1 adjacency (no self-loops), reconstructed from
    /// the normalized graph's off-diagonal pattern.
    pub fn local_binary_adjacency(&self) -> DenseMatrix {
        let n = self.n_local_nodes();
        let mut a = DenseMatrix::zeros(n, n);
        for (i, j, _) in self.norm_graph.entries() {
            if i != j {
                a.set(i, j, 1.0);
            }
        }
        a
    }
}

/// What a client uploads each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadKind {
    Weights,
    Gradients,
}

/// The only object that crosses the client boundary: a parameter-shaped
/// vector plus the sample count used for weighting. No features, labels,
/// embeddings, or adjacency ever ride along.
#[derive(Debug, Clone)]
pub struct RoundPayload {
    pub client_id: usize,
    pub kind: PayloadKind,
    pub vector: Vec<f64>,
    pub n_samples: usize,
}

/// How the server combines client payloads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregationRule {
    Uniform,
    SampleWeighted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FedAvgConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub rule: AggregationRule,
    pub payload: PayloadKind,
    pub reset_moments_on_broadcast: bool,
}

impl Default for FedAvgConfig {
    fn default() -> Self {
        FedAvgConfig {
            rounds: 100,
            local_epochs: 1,
            rule: AggregationRule::Uniform,
            payload: PayloadKind::Weights,
            reset_moments_on_broadcast: false,
        }
    }
}

/// Combines payloads into one vector. Clients are processed in ascending
/// client id so the floating-point reduction order is fixed. A payload with
/// a non-finite entry poisons the round and names the offender.
pub fn server_aggregate(payloads: &[RoundPayload], rule: AggregationRule) -> Result<Vec<f64>> {
    if payloads.is_empty() {
        return Err(Error::Protocol("no payloads to aggregate".into()));
    }
    let mut order: Vec<&RoundPayload> = payloads.iter().collect();
    order.sort_by_key(|p| p.client_id);
    for w in order.windows(2) {
        if w[0].client_id == w[1].client_id {
            return Err(Error::Protocol(format!(
                "duplicate payload from client {}",
                w[0].client_id
            )));
        }
    }
    let kind = order[0].kind;
    let len = order[0].vector.len();
    for p in &order {
        if p.kind != kind {
            return Err(Error::Protocol(format!(
                "client {} sent {:?}, expected {:?}",
                p.client_id, p.kind, kind
            )));
        }
        if p.vector.len() != len {
            return Err(Error::Protocol(format!(
                "client {} sent {} values, expected {}",
                p.client_id,
                p.vector.len(),
                len
            )));
        }
        if let Some(pos) = p.vector.iter().position(|v| !v.is_finite()) {
            return Err(Error::PoisonedRound {
                client: p.client_id,
                detail: format!("non-finite value at parameter {}", pos),
            });
        }
    }
    let weights: Vec<f64> = match rule {
        AggregationRule::Uniform => {
            let w = 1.0 / order.len() as f64;
            vec![w; order.len()]
        }
        AggregationRule::SampleWeighted => {
            let total: usize = order.iter().map(|p| p.n_samples).sum();
            if total == 0 {
                return Err(Error::Protocol(
                    "sample-weighted aggregation with zero total samples".into(),
                ));
            }
            order.iter().map(|p| p.n_samples as f64 / total as f64).collect()
        }
    };
    let mut out = vec![0.0; len];
    for (p, &w) in order.iter().zip(&weights) {
        for (o, &v) in out.iter_mut().zip(&p.vector) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// Installs the aggregated weights on every client.
pub fn broadcast(clients: &mut [ClientState], flat: &[f64], fed: &FedAvgConfig) -> Result<()> {
    for client in clients.iter_mut() {
        client.install_weights(flat)?;
        if fed.reset_moments_on_broadcast {
            client.opt_state.reset();
        }
    }
    Ok(())
}

/// Runs `local_epochs` of full-batch training on one client's labeled nodes
/// and returns the mean loss of the first epoch. The caller decides what to
/// upload afterwards.
pub fn local_train_epochs(
    client: &mut ClientState,
    train: &TrainConfig,
    local_epochs: usize,
) -> Result<f64> {
    if client.train_mask.is_empty() {
        return Err(Error::EmptyMask(format!("client {} training", client.client_id)));
    }
    let mut first_loss = 0.0;
    for epoch in 0..local_epochs {
        let (logits, tape) = mlp_forward(
            &client.params,
            &client.features,
            train.dropout_rate,
            Mode::Train,
            &mut client.rng,
        )?;
        let (loss, grad) = softmax_ce_loss(&logits, &client.labels, &client.train_mask)?;
        if epoch == 0 {
            first_loss = loss;
        }
        let grads = mlp_backward(&client.params, &tape, &grad)?;
        let mut flat = client.params.flatten();
        let flat_grads = grads.flatten();
        optimizer_step(
            &mut flat,
            &flat_grads,
            &mut client.opt_state,
            train.optimizer,
            train.learning_rate,
        )?;
        client.install_weights(&flat)?;
    }
    Ok(first_loss)
}

/// Computes one full-batch gradient at the current weights without touching
/// them.
pub fn local_gradient(client: &mut ClientState, train: &TrainConfig) -> Result<(f64, Vec<f64>)> {
    if client.train_mask.is_empty() {
        return Err(Error::EmptyMask(format!("client {} training", client.client_id)));
    }
    let (logits, tape) = mlp_forward(
        &client.params,
        &client.features,
        train.dropout_rate,
        Mode::Train,
        &mut client.rng,
    )?;
    let (loss, grad) = softmax_ce_loss(&logits, &client.labels, &client.train_mask)?;
    let grads = mlp_backward(&client.params, &tape, &grad)?;
    Ok((loss, grads.flatten()))
}

/// Per-round record kept by the round loop.
#[derive(Debug, Clone)]
pub struct RoundRecord {
    pub round: usize,
    pub client_losses: Vec<f64>,
    pub val_accuracy: f64,
    pub online_ms: f64,
}

/// Output of a federated run: the weights to hand to downstream heads plus
/// the per-round history.
pub struct FedRunResult {
    pub final_params: MlpParams,
    pub best_params: MlpParams,
    pub best_val_accuracy: f64,
    pub best_round: usize,
    pub history: Vec<RoundRecord>,
}

/// Validation accuracy pooled over every client at the current weights.
pub fn pooled_val_accuracy(clients: &[ClientState]) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for client in clients {
        if client.val_mask.is_empty() {
            continue;
        }
        let logits = mlp_eval(&client.params, &client.features)?;
        let (c, t) = crate::nn::masked_accuracy(&logits, &client.labels, &client.val_mask);
        correct += c;
        total += t;
    }
    if total == 0 {
        return Err(Error::EmptyMask("pooled validation".into()));
    }
    Ok(correct as f64 / total as f64)
}

/// Weight-averaging federation with the default payload and reset policy.
pub fn run_fedmlp(
    clients: &mut [ClientState],
    rounds: usize,
    local_epochs: usize,
    rule: AggregationRule,
    train: &TrainConfig,
) -> Result<FedRunResult> {
    let fed = FedAvgConfig { rounds, local_epochs, rule, ..FedAvgConfig::default() };
    run_fedavg(clients, &fed, train)
}

/// The round loop. Weight mode: every client trains locally for
/// `local_epochs`, uploads its weights, the server averages and broadcasts.
/// Gradient mode: clients upload one gradient each, the server applies its
/// own optimizer to the shared weights and broadcasts; `local_epochs` must
/// be 1 there since later local steps would move weights the server never
/// sees.
///
/// A client whose training mask is empty skips local training: in weight
/// mode it uploads the broadcast weights unchanged (recorded as loss 0), in
/// gradient mode it sits the round out.
pub fn run_fedavg(
    clients: &mut [ClientState],
    fed: &FedAvgConfig,
    train: &TrainConfig,
) -> Result<FedRunResult> {
    run_fedavg_observed(clients, fed, train, |_| {})
}

/// One message crossing the client/server boundary, as seen by an observer.
/// Uploads carry a [`RoundPayload`]; broadcasts carry the averaged weight
/// vector the server sends to every client.
pub enum BoundaryEvent<'a> {
    Broadcast { vector: &'a [f64] },
    Upload(&'a RoundPayload),
}

/// Same round loop as [`run_fedavg`], but every message that crosses the
/// client boundary is also handed to `observe`, in transmission order. This
/// is how a run can be audited: whatever the observer never sees, the server
/// never saw either.
pub fn run_fedavg_observed(
    clients: &mut [ClientState],
    fed: &FedAvgConfig,
    train: &TrainConfig,
    mut observe: impl FnMut(BoundaryEvent<'_>),
) -> Result<FedRunResult> {
    if clients.is_empty() {
        return Err(Error::Protocol("no clients".into()));
    }
    if fed.payload == PayloadKind::Gradients && fed.local_epochs != 1 {
        return Err(Error::Domain(
            "gradient payloads require local_epochs = 1".into(),
        ));
    }
    let dims_0 = clients[0].params.layer_dims().to_vec();
    for c in clients.iter() {
        if c.params.layer_dims() != dims_0.as_slice() {
            return Err(Error::Protocol(format!(
                "client {} has mismatched layer dims",
                c.client_id
            )));
        }
    }

    // Start every client from client 0's weights so round one averages a
    // coherent model.
    let init = clients[0].params.flatten();
    broadcast(clients, &init, fed)?;
    observe(BoundaryEvent::Broadcast { vector: &init });
    let mut server_flat = init;
    let mut server_opt = OptimState::new(train.optimizer, server_flat.len());

    let mut history = Vec::with_capacity(fed.rounds);
    let mut best_params = clients[0].params.clone();
    let mut best_val = f64::NEG_INFINITY;
    let mut best_round = 0;

    for round in 0..fed.rounds {
        let started = std::time::Instant::now();
        let mut payloads = Vec::with_capacity(clients.len());
        let mut losses = vec![0.0; clients.len()];
        for client in clients.iter_mut() {
            match fed.payload {
                PayloadKind::Weights => {
                    if !client.train_mask.is_empty() {
                        losses[client.client_id] =
                            local_train_epochs(client, train, fed.local_epochs)?;
                    }
                    let payload = RoundPayload {
                        client_id: client.client_id,
                        kind: PayloadKind::Weights,
                        vector: client.params.flatten(),
                        n_samples: client.train_mask.len(),
                    };
                    observe(BoundaryEvent::Upload(&payload));
                    payloads.push(payload);
                }
                PayloadKind::Gradients => {
                    if client.train_mask.is_empty() {
                        continue;
                    }
                    let (loss, grad) = local_gradient(client, train)?;
                    losses[client.client_id] = loss;
                    let payload = RoundPayload {
                        client_id: client.client_id,
                        kind: PayloadKind::Gradients,
                        vector: grad,
                        n_samples: client.train_mask.len(),
                    };
                    observe(BoundaryEvent::Upload(&payload));
                    payloads.push(payload);
                }
            }
        }
        match fed.payload {
            PayloadKind::Weights => {
                server_flat = server_aggregate(&payloads, fed.rule)?;
            }
            PayloadKind::Gradients => {
                let grad = server_aggregate(&payloads, fed.rule)?;
                optimizer_step(
                    &mut server_flat,
                    &grad,
                    &mut server_opt,
                    train.optimizer,
                    train.learning_rate,
                )?;
            }
        }
        broadcast(clients, &server_flat, fed)?;
        observe(BoundaryEvent::Broadcast { vector: &server_flat });
        let online_ms = started.elapsed().as_secs_f64() * 1e3;

        let val_accuracy = pooled_val_accuracy(clients)?;
        if val_accuracy > best_val {
            best_val = val_accuracy;
            best_params = clients[0].params.clone();
            best_round = round;
        }
        history.push(RoundRecord { round, client_losses: losses, val_accuracy, online_ms });
    }

    Ok(FedRunResult {
        final_params: clients[0].params.clone(),
        best_params,
        best_val_accuracy: best_val,
        best_round,
        history,
    })
}
