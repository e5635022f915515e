//! Local training heads layered on the (federated or local) MLP: plain
//! fine-tuning, propagation, and propagation with adjacency reconstruction.

use crate::error::{Error, Result};
use crate::fed::ClientState;
use crate::graph::SparseGraph;
use crate::models::{
    decode_adjacency, decode_adjacency_backward, diffuse, diffuse_recorded, DiffusionConfig,
    LearnedStructure,
};
use crate::nn::{
    masked_accuracy, mlp_backward, mlp_eval, mlp_forward, mse_matrix, optimizer_step, rng,
    softmax_ce_loss, softmax_rows, DenseMatrix, MlpParams, Mode, OptimState, Rng, TrainConfig,
};

/// How the reconstruction objective is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReconMode {
    /// Mean-squared error between the binary local adjacency and the decoded
    /// matrix; the graph itself stays fixed.
    Simplified,
    /// Edge weights (plus one stand-in node for the unseen neighborhood)
    /// become trainable, and the loss compares adjacency, learned structure,
    /// and decoded structure by Frobenius norms.
    LearnableStructure,
}

/// Which representation feeds the adjacency decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderInput {
    PreSoftmax,
    PostSoftmax,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpaeConfig {
    /// Weight of the classification term.
    pub beta: f64,
    /// Weight of the reconstruction term.
    pub gamma: f64,
    /// Learnable mode: weight of |A - learned|.
    pub a: f64,
    /// Learnable mode: weight of |decoded - learned|.
    pub b: f64,
    pub recon_mode: ReconMode,
    pub decoder_input: DecoderInput,
    /// Learnable mode refuses graphs above this many local nodes.
    pub node_budget: usize,
    /// Simplified mode switches to subsampled reconstruction above this.
    pub max_dense_nodes: usize,
}

impl Default for MpaeConfig {
    fn default() -> Self {
        MpaeConfig {
            beta: 1.0,
            gamma: 1.0,
            a: 1.0,
            b: 1.0,
            recon_mode: ReconMode::Simplified,
            decoder_input: DecoderInput::PreSoftmax,
            node_budget: 300,
            max_dense_nodes: 3000,
        }
    }
}

impl MpaeConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("a", self.a),
            ("b", self.b),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Domain(format!("{} = {} must be finite and >= 0", name, v)));
            }
        }
        if self.node_budget == 0 || self.max_dense_nodes == 0 {
            return Err(Error::Domain("node budgets must be positive".into()));
        }
        Ok(())
    }
}

/// The head being trained.
#[derive(Debug, Clone, PartialEq)]
pub enum HeadModel {
    /// Plain MLP fine-tuning; no graph involvement.
    Mlp,
    /// MLP followed by fixed diffusion over the local graph.
    Mpa(DiffusionConfig),
    /// Diffusion plus adjacency reconstruction.
    Mpae(DiffusionConfig, MpaeConfig),
}

impl HeadModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            HeadModel::Mlp => Ok(()),
            HeadModel::Mpa(d) => d.validate(),
            HeadModel::Mpae(d, m) => {
                d.validate()?;
                m.validate()
            }
        }
    }
}

/// Frobenius distances logged per epoch in learnable-structure mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconNorms {
    pub a_vs_learned: f64,
    pub decoded_vs_learned: f64,
    pub a_vs_decoded: f64,
}

#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total_loss: f64,
    pub ce_loss: f64,
    pub recon_loss: f64,
    /// Validation accuracy after this epoch's update; 0 when the client has
    /// no validation nodes.
    pub val_accuracy: f64,
    pub recon_norms: Option<ReconNorms>,
}

pub struct HeadResult {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub best_params: MlpParams,
    pub final_params: MlpParams,
    pub test_correct: usize,
    pub test_total: usize,
    /// Learned structure at the best checkpoint (learnable mode only).
    pub structure: Option<LearnedStructure>,
}

pub(crate) struct LossParts {
    pub total: f64,
    pub ce: f64,
    pub recon: f64,
    pub norms: Option<ReconNorms>,
}

pub(crate) struct HeadLossArgs<'a> {
    pub model: &'a HeadModel,
    pub features: &'a DenseMatrix,
    pub labels: &'a [usize],
    pub train_mask: &'a [usize],
    pub norm_graph: &'a SparseGraph,
    pub a_bin: Option<&'a DenseMatrix>,
    pub params: &'a MlpParams,
    pub structure: Option<&'a LearnedStructure>,
    pub dropout: f64,
    pub mode: Mode,
    pub recon_seed: u64,
}

fn take_local_rows(m: &DenseMatrix, n: usize) -> DenseMatrix {
    DenseMatrix::from_fn(n, m.cols(), |i, j| m.get(i, j))
}

fn embed_local_rows(m: &DenseMatrix, n_aug: usize) -> DenseMatrix {
    DenseMatrix::from_fn(n_aug, m.cols(), |i, j| if i < m.rows() { m.get(i, j) } else { 0.0 })
}

fn softmax_backward_rows(softmax: &DenseMatrix, grad: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::from_fn(softmax.rows(), softmax.cols(), |i, j| {
        let s_row = softmax.row(i);
        let g_row = grad.row(i);
        let dot: f64 = s_row.iter().zip(g_row).map(|(s, g)| s * g).sum();
        s_row[j] * (g_row[j] - dot)
    })
}

fn frobenius_diff(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn dense_local_block(g: &SparseGraph, n: usize) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(n, n);
    for (i, j, w) in g.entries() {
        if i < n && j < n {
            out.set(i, j, w);
        }
    }
    out
}

/// Dense or subsampled reconstruction error against the binary adjacency.
/// Above `max_dense_nodes`, all positive pairs plus an equal count of seeded
/// negative pairs are scored instead of the full matrix.
fn recon_mse(
    a_bin: &DenseMatrix,
    decoded: &DenseMatrix,
    max_dense_nodes: usize,
    seed: u64,
) -> Result<(f64, DenseMatrix)> {
    let n = a_bin.rows();
    if n <= max_dense_nodes {
        return mse_matrix(a_bin, decoded);
    }
    let mut positives = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if a_bin.get(i, j) != 0.0 {
                positives.push((i, j));
            }
        }
    }
    let want = positives.len().max(1);
    let mut r = rng::seeded(seed);
    let mut negatives = Vec::with_capacity(want);
    let mut seen = std::collections::BTreeSet::new();
    let mut attempts = 0usize;
    while negatives.len() < want && attempts < want.saturating_mul(200) {
        use rand::Rng as _;
        attempts += 1;
        let i = r.gen_range(0..n);
        let j = r.gen_range(0..n);
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        if i == j || a_bin.get(i, j) != 0.0 || !seen.insert((i, j)) {
            continue;
        }
        negatives.push((i, j));
    }
    let pairs: Vec<(usize, usize)> = positives.into_iter().chain(negatives).collect();
    let count = pairs.len() as f64;
    let mut loss = 0.0;
    let mut grad = DenseMatrix::zeros(n, n);
    for (i, j) in pairs {
        let diff = decoded.get(i, j) - a_bin.get(i, j);
        loss += diff * diff / count;
        grad.set(i, j, 2.0 * diff / count);
    }
    Ok((loss, grad))
}

/// One loss (and optionally gradient) evaluation of a head. The returned
/// gradient is flat: MLP parameters first, then edge logits when the model
/// carries a learnable structure.
pub(crate) fn head_loss_grad(
    args: &HeadLossArgs,
    rng: &mut Rng,
    want_grad: bool,
) -> Result<(LossParts, Option<Vec<f64>>)> {
    if args.train_mask.is_empty() {
        return Err(Error::EmptyMask("head training".into()));
    }
    let (logits0, tape) =
        mlp_forward(args.params, args.features, args.dropout, args.mode, rng)?;

    match args.model {
        HeadModel::Mlp => {
            let (ce, gce) = softmax_ce_loss(&logits0, args.labels, args.train_mask)?;
            let parts = LossParts { total: ce, ce, recon: 0.0, norms: None };
            if !want_grad {
                return Ok((parts, None));
            }
            let grads = mlp_backward(args.params, &tape, &gce)?;
            Ok((parts, Some(grads.flatten())))
        }
        HeadModel::Mpa(dcfg) => {
            let rk = diffuse(args.norm_graph, &logits0, dcfg)?;
            let (ce, gce) = softmax_ce_loss(&rk, args.labels, args.train_mask)?;
            let parts = LossParts { total: ce, ce, recon: 0.0, norms: None };
            if !want_grad {
                return Ok((parts, None));
            }
            let g0 = diffuse(args.norm_graph, &gce, dcfg)?;
            let grads = mlp_backward(args.params, &tape, &g0)?;
            Ok((parts, Some(grads.flatten())))
        }
        HeadModel::Mpae(dcfg, mcfg) => {
            let a_bin = args
                .a_bin
                .ok_or_else(|| Error::Contract("reconstruction needs the local adjacency".into()))?;
            match mcfg.recon_mode {
                ReconMode::Simplified => {
                    simplified_mpae(args, a_bin, &logits0, &tape, dcfg, mcfg, want_grad)
                }
                ReconMode::LearnableStructure => {
                    learnable_mpae(args, a_bin, &logits0, &tape, dcfg, mcfg, want_grad)
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn simplified_mpae(
    args: &HeadLossArgs,
    a_bin: &DenseMatrix,
    logits0: &DenseMatrix,
    tape: &crate::nn::ForwardTape,
    dcfg: &DiffusionConfig,
    mcfg: &MpaeConfig,
    want_grad: bool,
) -> Result<(LossParts, Option<Vec<f64>>)> {
    let rk = diffuse(args.norm_graph, logits0, dcfg)?;
    let (ce, gce) = softmax_ce_loss(&rk, args.labels, args.train_mask)?;
    let z = match mcfg.decoder_input {
        DecoderInput::PreSoftmax => rk.clone(),
        DecoderInput::PostSoftmax => softmax_rows(&rk),
    };
    let decoded = decode_adjacency(&z);
    let (mse, grad_decoded) = recon_mse(a_bin, &decoded, mcfg.max_dense_nodes, args.recon_seed)?;
    let total = mcfg.beta * ce + mcfg.gamma * mse;
    let parts = LossParts { total, ce, recon: mse, norms: None };
    if !want_grad {
        return Ok((parts, None));
    }

    let mut grk = gce.clone();
    grk.scale(mcfg.beta);
    let mut grad_decoded = grad_decoded;
    grad_decoded.scale(mcfg.gamma);
    let gz = decode_adjacency_backward(&z, &decoded, &grad_decoded)?;
    let gz = match mcfg.decoder_input {
        DecoderInput::PreSoftmax => gz,
        DecoderInput::PostSoftmax => softmax_backward_rows(&z, &gz),
    };
    grk.add_scaled(&gz, 1.0)?;
    let g0 = diffuse(args.norm_graph, &grk, dcfg)?;
    let grads = mlp_backward(args.params, tape, &g0)?;
    Ok((parts, Some(grads.flatten())))
}

fn learnable_mpae(
    args: &HeadLossArgs,
    a_bin: &DenseMatrix,
    logits0: &DenseMatrix,
    tape: &crate::nn::ForwardTape,
    dcfg: &DiffusionConfig,
    mcfg: &MpaeConfig,
    want_grad: bool,
) -> Result<(LossParts, Option<Vec<f64>>)> {
    let st = args
        .structure
        .ok_or_else(|| Error::Contract("learnable mode needs a structure".into()))?;
    let n = st.n_local();
    let a_hat = st.materialize()?;
    let r0_aug = st.augment_rows(logits0)?;
    let steps = diffuse_recorded(&a_hat, &r0_aug, dcfg)?;
    let rk_local = take_local_rows(steps.last().unwrap(), n);
    let (ce, gce_local) = softmax_ce_loss(&rk_local, args.labels, args.train_mask)?;

    let z = match mcfg.decoder_input {
        DecoderInput::PreSoftmax => rk_local.clone(),
        DecoderInput::PostSoftmax => softmax_rows(&rk_local),
    };
    let decoded = decode_adjacency(&z);
    let learned_local = dense_local_block(&a_hat, n);
    let n1 = frobenius_diff(a_bin, &learned_local);
    let n2 = frobenius_diff(&decoded, &learned_local);
    let n3 = frobenius_diff(a_bin, &decoded);
    let recon = mcfg.a * n1 + mcfg.b * n2;
    let total = mcfg.beta * ce + mcfg.gamma * recon;
    let norms = Some(ReconNorms { a_vs_learned: n1, decoded_vs_learned: n2, a_vs_decoded: n3 });
    let parts = LossParts { total, ce, recon, norms };
    if !want_grad {
        return Ok((parts, None));
    }

    // Gradient into the diffused local representation: classification plus
    // the decoder branch of |decoded - learned|.
    let mut grk_local = gce_local.clone();
    grk_local.scale(mcfg.beta);
    if mcfg.gamma * mcfg.b > 0.0 && n2 > 1e-30 {
        let coeff = mcfg.gamma * mcfg.b / n2;
        let grad_decoded = DenseMatrix::from_fn(n, n, |i, j| {
            coeff * (decoded.get(i, j) - learned_local.get(i, j))
        });
        let gz = decode_adjacency_backward(&z, &decoded, &grad_decoded)?;
        let gz = match mcfg.decoder_input {
            DecoderInput::PreSoftmax => gz,
            DecoderInput::PostSoftmax => softmax_backward_rows(&z, &gz),
        };
        grk_local.add_scaled(&gz, 1.0)?;
    }

    // Back-diffusion, accumulating the gradient on the materialized matrix.
    let n_aug = st.n_augmented();
    let one_minus = 1.0 - dcfg.alpha;
    let mut carry = embed_local_rows(&grk_local, n_aug);
    let mut u = DenseMatrix::zeros(n_aug, n_aug);
    let mut dr0_aug = DenseMatrix::zeros(n_aug, grk_local.cols());
    for t in (1..=dcfg.k_steps).rev() {
        let outer = carry.matmul_transb(&steps[t - 1])?;
        u.add_scaled(&outer, one_minus)?;
        dr0_aug.add_scaled(&carry, dcfg.alpha)?;
        let mut next = crate::models::sparse_dense_mul(&a_hat, &carry);
        next.scale(one_minus);
        carry = next;
    }
    dr0_aug.add_scaled(&carry, 1.0)?;

    // Direct dependence of the Frobenius terms on the materialized matrix.
    if mcfg.gamma > 0.0 {
        for i in 0..n {
            for j in 0..n {
                let mut add = 0.0;
                if mcfg.a > 0.0 && n1 > 1e-30 {
                    add += mcfg.gamma * mcfg.a * (learned_local.get(i, j) - a_bin.get(i, j)) / n1;
                }
                if mcfg.b > 0.0 && n2 > 1e-30 {
                    add += mcfg.gamma * mcfg.b * (learned_local.get(i, j) - decoded.get(i, j)) / n2;
                }
                if add != 0.0 {
                    u.set(i, j, u.get(i, j) + add);
                }
            }
        }
    }

    let logit_grads = st.logits_grad(&u)?;
    let dr0_local = st.reduce_rows_grad(&dr0_aug)?;
    let grads = mlp_backward(args.params, tape, &dr0_local)?;
    let mut flat = grads.flatten();
    flat.extend_from_slice(&logit_grads);
    Ok((parts, Some(flat)))
}

/// Deterministic evaluation logits of a head at given parameters (local rows
/// only).
pub fn head_eval(
    model: &HeadModel,
    features: &DenseMatrix,
    norm_graph: &SparseGraph,
    params: &MlpParams,
    structure: Option<&LearnedStructure>,
) -> Result<DenseMatrix> {
    let logits0 = mlp_eval(params, features)?;
    match model {
        HeadModel::Mlp => Ok(logits0),
        HeadModel::Mpa(dcfg) => diffuse(norm_graph, &logits0, dcfg),
        HeadModel::Mpae(dcfg, mcfg) => match mcfg.recon_mode {
            ReconMode::Simplified => diffuse(norm_graph, &logits0, dcfg),
            ReconMode::LearnableStructure => {
                let st = structure
                    .ok_or_else(|| Error::Contract("learnable mode needs a structure".into()))?;
                let a_hat = st.materialize()?;
                let aug = st.augment_rows(&logits0)?;
                let rk = diffuse(&a_hat, &aug, dcfg)?;
                Ok(take_local_rows(&rk, st.n_local()))
            }
        },
    }
}

/// Simplified-mode loss at fixed parameters, no dropout, no gradient. Handy
/// for reporting and for external checks.
pub fn mpae_loss(
    client: &ClientState,
    params: &MlpParams,
    dcfg: &DiffusionConfig,
    mcfg: &MpaeConfig,
) -> Result<(f64, f64, f64)> {
    let a_bin = client.local_binary_adjacency();
    let model = HeadModel::Mpae(*dcfg, *mcfg);
    let args = HeadLossArgs {
        model: &model,
        features: &client.features,
        labels: &client.labels,
        train_mask: &client.train_mask,
        norm_graph: &client.norm_graph,
        a_bin: Some(&a_bin),
        params,
        structure: None,
        dropout: 0.0,
        mode: Mode::Eval,
        recon_seed: 0,
    };
    let mut r = rng::seeded(0);
    let (parts, _) = head_loss_grad(&args, &mut r, false)?;
    Ok((parts.total, parts.ce, parts.recon))
}

/// Trains one head on one client, starting from `init`. Tracks the best
/// validation accuracy (ties keep the earlier epoch), stops early after
/// `patience` epochs without improvement, and reports test accuracy at the
/// best checkpoint. The client's RNG stream drives dropout; nothing here
/// communicates.
pub fn train_head(
    client: &mut ClientState,
    init: MlpParams,
    model: &HeadModel,
    tcfg: &TrainConfig,
) -> Result<HeadResult> {
    tcfg.validate()?;
    model.validate()?;
    if client.train_mask.is_empty() {
        return Err(Error::EmptyMask(format!("client {} head training", client.client_id)));
    }

    let learnable = matches!(
        model,
        HeadModel::Mpae(_, m) if m.recon_mode == ReconMode::LearnableStructure
    );
    if let HeadModel::Mpae(_, m) = model {
        if learnable && client.n_local_nodes() > m.node_budget {
            return Err(Error::Capacity(format!(
                "{} local nodes exceed the learnable-structure budget of {}",
                client.n_local_nodes(),
                m.node_budget
            )));
        }
    }
    let mut structure = if learnable {
        Some(LearnedStructure::from_normalized(&client.norm_graph)?)
    } else {
        None
    };
    let a_bin = if matches!(model, HeadModel::Mpae(..)) {
        Some(client.local_binary_adjacency())
    } else {
        None
    };

    let dims = init.layer_dims().to_vec();
    let mlp_len = MlpParams::param_count(&dims);
    let mut flat = init.flatten();
    if let Some(st) = &structure {
        flat.extend_from_slice(&st.logits);
    }
    let mut opt = OptimState::new(tcfg.optimizer, flat.len());
    let dropout = if tcfg.head_dropout { tcfg.dropout_rate } else { 0.0 };

    let mut records: Vec<EpochRecord> = Vec::new();
    let mut best_flat = flat.clone();
    let mut best_val = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0usize;

    for epoch in 0..tcfg.head_epochs {
        let params = MlpParams::unflatten(&dims, &flat[..mlp_len])?;
        if let Some(st) = structure.as_mut() {
            st.logits.copy_from_slice(&flat[mlp_len..]);
        }
        let args = HeadLossArgs {
            model,
            features: &client.features,
            labels: &client.labels,
            train_mask: &client.train_mask,
            norm_graph: &client.norm_graph,
            a_bin: a_bin.as_ref(),
            params: &params,
            structure: structure.as_ref(),
            dropout,
            mode: Mode::Train,
            recon_seed: rng::derive_seed(tcfg.seed ^ 0x7265_636f, epoch as u64),
        };
        let (parts, grad) = head_loss_grad(&args, &mut client.rng, true)?;
        let grad = grad.expect("gradient requested");
        optimizer_step(&mut flat, &grad, &mut opt, tcfg.optimizer, tcfg.learning_rate)?;

        let params = MlpParams::unflatten(&dims, &flat[..mlp_len])?;
        if let Some(st) = structure.as_mut() {
            st.logits.copy_from_slice(&flat[mlp_len..]);
        }
        let val_accuracy = if client.val_mask.is_empty() {
            0.0
        } else {
            let logits = head_eval(
                model,
                &client.features,
                &client.norm_graph,
                &params,
                structure.as_ref(),
            )?;
            let (c, t) = masked_accuracy(&logits, &client.labels, &client.val_mask);
            c as f64 / t as f64
        };
        records.push(EpochRecord {
            epoch,
            total_loss: parts.total,
            ce_loss: parts.ce,
            recon_loss: parts.recon,
            val_accuracy,
            recon_norms: parts.norms,
        });

        let improved = client.val_mask.is_empty() || val_accuracy > best_val;
        if improved {
            best_val = val_accuracy;
            best_flat = flat.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > tcfg.patience {
                break;
            }
        }
    }

    let final_params = MlpParams::unflatten(&dims, &flat[..mlp_len])?;
    let best_params = MlpParams::unflatten(&dims, &best_flat[..mlp_len])?;
    let best_structure = structure.map(|mut st| {
        st.logits.copy_from_slice(&best_flat[mlp_len..]);
        st
    });

    let (test_correct, test_total) = if client.test_mask.is_empty() {
        (0, 0)
    } else {
        let logits = head_eval(
            model,
            &client.features,
            &client.norm_graph,
            &best_params,
            best_structure.as_ref(),
        )?;
        masked_accuracy(&logits, &client.labels, &client.test_mask)
    };

    Ok(HeadResult {
        records,
        best_epoch,
        best_val_accuracy: if best_val == f64::NEG_INFINITY { 0.0 } else { best_val },
        best_params,
        final_params,
        test_correct,
        test_total,
        structure: best_structure,
    })
}

/// Propagation head on the federated weights.
pub fn fedmpa_train(
    client: &mut ClientState,
    w0: MlpParams,
    dcfg: &DiffusionConfig,
    tcfg: &TrainConfig,
) -> Result<HeadResult> {
    train_head(client, w0, &HeadModel::Mpa(*dcfg), tcfg)
}

/// Propagation-plus-reconstruction head on the federated weights.
pub fn fedmpae_train(
    client: &mut ClientState,
    w0: MlpParams,
    dcfg: &DiffusionConfig,
    mcfg: &MpaeConfig,
    tcfg: &TrainConfig,
) -> Result<HeadResult> {
    train_head(client, w0, &HeadModel::Mpae(*dcfg, *mcfg), tcfg)
}

/// The local-only baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocVariant {
    Mlp,
    Mpa,
    Mpae,
}

/// Trains a baseline entirely on one client: a local MLP phase over the same
/// epoch budget the federation would have had, then (for the mpa/mpae
/// variants) the matching head. Nothing is exchanged with anyone.
pub fn loc_variants(
    client: &mut ClientState,
    variant: LocVariant,
    pretrain_epochs: usize,
    dcfg: &DiffusionConfig,
    mcfg: &MpaeConfig,
    tcfg: &TrainConfig,
) -> Result<HeadResult> {
    let pretrain_cfg = TrainConfig {
        head_epochs: pretrain_epochs,
        patience: usize::MAX,
        head_dropout: true,
        ..tcfg.clone()
    };
    let init = client.params.clone();
    match variant {
        LocVariant::Mlp => train_head(client, init, &HeadModel::Mlp, &pretrain_cfg),
        LocVariant::Mpa => {
            let pre = train_head(client, init, &HeadModel::Mlp, &pretrain_cfg)?;
            train_head(client, pre.final_params, &HeadModel::Mpa(*dcfg), tcfg)
        }
        LocVariant::Mpae => {
            let pre = train_head(client, init, &HeadModel::Mlp, &pretrain_cfg)?;
            train_head(client, pre.final_params, &HeadModel::Mpae(*dcfg, *mcfg), tcfg)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{normalize_sym_selfloop, Partition};
    use crate::nn::OptimizerKind;

    /// Two dense 10-node clusters joined by one edge, with noisy two-class
    /// features and one label per class.
    fn two_cluster_client(seed: u64, feature_noise: f64) -> ClientState {
        use rand::Rng as _;
        let size = 10;
        let mut edges = Vec::new();
        let mut r = rng::seeded(seed);
        for base in [0, size] {
            for u in 0..size {
                for v in (u + 1)..size {
                    if r.gen::<f64>() < 0.6 {
                        edges.push((base + u, base + v));
                    }
                }
            }
        }
        edges.push((size - 1, size));
        let n = 2 * size;
        let g = SparseGraph::from_edges(n, &edges).unwrap();
        let labels: Vec<usize> = (0..n).map(|i| i / size).collect();
        let features = DenseMatrix::from_fn(n, 4, |i, j| {
            let base = if labels[i] == j % 2 { 1.0 } else { -1.0 };
            base + feature_noise * (r.gen::<f64>() - 0.5)
        });
        let part = Partition::from_assignment(&g, &vec![0; n], 1).unwrap();
        let train_ids = vec![0, size];
        let val_ids: Vec<usize> = (1..4).chain(size + 1..size + 4).collect();
        let test_ids: Vec<usize> = (4..size).chain(size + 4..n).collect();
        let tcfg = TrainConfig::default();
        let params = MlpParams::glorot(&[4, 8, 2], &mut rng::seeded(seed + 1)).unwrap();
        ClientState::build(
            0,
            &part.clients[0],
            &features,
            &labels,
            &train_ids,
            &val_ids,
            &test_ids,
            params,
            &tcfg,
            seed + 2,
        )
        .unwrap()
    }

    fn quiet_tcfg() -> TrainConfig {
        TrainConfig {
            dropout_rate: 0.0,
            head_dropout: false,
            head_epochs: 60,
            patience: 60,
            learning_rate: 0.01,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn diffusion_head_beats_no_diffusion_with_one_label_per_class() {
        let tcfg = quiet_tcfg();
        let dcfg = DiffusionConfig { alpha: 0.1, k_steps: 10 };

        let mut with = two_cluster_client(100, 6.0);
        let init = with.params.clone();
        let diffused = train_head(&mut with, init.clone(), &HeadModel::Mpa(dcfg), &tcfg).unwrap();

        let mut without = two_cluster_client(100, 6.0);
        let flat =
            train_head(&mut without, init, &HeadModel::Mlp, &tcfg).unwrap();

        let acc_with = diffused.test_correct as f64 / diffused.test_total as f64;
        let acc_without = flat.test_correct as f64 / flat.test_total as f64;
        assert!(
            acc_with > acc_without,
            "diffused {} vs flat {}",
            acc_with,
            acc_without
        );
    }

    #[test]
    fn zero_step_and_edgeless_diffusion_match_plain_finetuning_bitwise() {
        let tcfg = quiet_tcfg();

        let mut a = two_cluster_client(7, 1.0);
        let init = a.params.clone();
        let k0 = train_head(
            &mut a,
            init.clone(),
            &HeadModel::Mpa(DiffusionConfig { alpha: 0.1, k_steps: 0 }),
            &tcfg,
        )
        .unwrap();

        let mut b = two_cluster_client(7, 1.0);
        let plain = train_head(&mut b, init.clone(), &HeadModel::Mlp, &tcfg).unwrap();
        assert_eq!(k0.final_params.flatten(), plain.final_params.flatten());
        assert_eq!(k0.best_epoch, plain.best_epoch);

        // Same comparison with edges removed entirely: the normalized graph
        // is the identity, so any k behaves like k = 0.
        let mut c = two_cluster_client(7, 1.0);
        let edgeless = normalize_sym_selfloop(
            &SparseGraph::from_edges(c.n_local_nodes(), &[]).unwrap(),
        )
        .unwrap();
        c.norm_graph = edgeless;
        let iso = train_head(
            &mut c,
            init,
            &HeadModel::Mpa(DiffusionConfig { alpha: 0.1, k_steps: 10 }),
            &tcfg,
        )
        .unwrap();
        assert_eq!(iso.final_params.flatten(), plain.final_params.flatten());
    }

    #[test]
    fn gamma_zero_reconstruction_reduces_to_the_propagation_head() {
        let tcfg = TrainConfig { head_epochs: 25, ..quiet_tcfg() };
        let dcfg = DiffusionConfig::default();
        let mcfg = MpaeConfig { gamma: 0.0, ..MpaeConfig::default() };

        let mut a = two_cluster_client(21, 1.5);
        let init = a.params.clone();
        let mpae = fedmpae_train(&mut a, init.clone(), &dcfg, &mcfg, &tcfg).unwrap();

        let mut b = two_cluster_client(21, 1.5);
        let mpa = fedmpa_train(&mut b, init, &dcfg, &tcfg).unwrap();

        assert_eq!(mpae.best_epoch, mpa.best_epoch);
        assert_eq!(mpae.test_correct, mpa.test_correct);
        for (x, y) in mpae.final_params.flatten().iter().zip(mpa.final_params.flatten()) {
            assert!((x - y).abs() == 0.0, "{} vs {}", x, y);
        }
        for (ra, rb) in mpae.records.iter().zip(&mpa.records) {
            assert_eq!(ra.ce_loss, rb.ce_loss);
            assert_eq!(ra.val_accuracy, rb.val_accuracy);
            assert!(ra.recon_loss > 0.0);
            assert_eq!(rb.recon_loss, 0.0);
        }
    }

    #[test]
    fn pure_reconstruction_objective_descends() {
        let tcfg = TrainConfig { head_epochs: 50, patience: usize::MAX, ..quiet_tcfg() };
        let dcfg = DiffusionConfig::default();
        let mcfg = MpaeConfig { beta: 0.0, ..MpaeConfig::default() };
        let mut client = two_cluster_client(33, 1.0);
        let init = client.params.clone();
        let result = fedmpae_train(&mut client, init, &dcfg, &mcfg, &tcfg).unwrap();
        let first = result.records.first().unwrap().recon_loss;
        let last = result.records.last().unwrap().recon_loss;
        assert!(
            last < first,
            "reconstruction never descended: {} -> {}",
            first,
            last
        );
    }

    #[test]
    fn learnable_mode_keeps_symmetry_and_the_triangle_inequality() {
        let tcfg = TrainConfig { head_epochs: 12, ..quiet_tcfg() };
        let dcfg = DiffusionConfig { alpha: 0.1, k_steps: 4 };
        let mcfg = MpaeConfig {
            recon_mode: ReconMode::LearnableStructure,
            ..MpaeConfig::default()
        };
        let mut client = two_cluster_client(55, 1.0);
        let init = client.params.clone();
        let result = fedmpae_train(&mut client, init, &dcfg, &mcfg, &tcfg).unwrap();

        let st = result.structure.as_ref().expect("learnable mode returns a structure");
        let a = st.materialize().unwrap();
        a.validate().unwrap();

        for rec in &result.records {
            let norms = rec.recon_norms.expect("learnable mode logs norms");
            assert!(
                norms.a_vs_decoded <= norms.a_vs_learned + norms.decoded_vs_learned + 1e-12,
                "triangle inequality violated at epoch {}: {} > {} + {}",
                rec.epoch,
                norms.a_vs_decoded,
                norms.a_vs_learned,
                norms.decoded_vs_learned
            );
            assert!(rec.recon_loss >= norms.a_vs_decoded - 1e-12);
        }
    }

    #[test]
    fn learnable_mode_gradient_matches_finite_differences() {
        use rand::Rng as _;
        let dcfg = DiffusionConfig { alpha: 0.2, k_steps: 3 };
        let mcfg = MpaeConfig {
            recon_mode: ReconMode::LearnableStructure,
            decoder_input: DecoderInput::PreSoftmax,
            ..MpaeConfig::default()
        };
        let model = HeadModel::Mpae(dcfg, mcfg);
        let client = two_cluster_client(71, 1.0);
        let a_bin = client.local_binary_adjacency();
        let structure = LearnedStructure::from_normalized(&client.norm_graph).unwrap();
        let params = client.params.clone();
        let dims = params.layer_dims().to_vec();
        let mlp_len = MlpParams::param_count(&dims);

        let mut flat = params.flatten();
        flat.extend_from_slice(&structure.logits);

        let loss_at = |flat: &[f64]| -> f64 {
            let p = MlpParams::unflatten(&dims, &flat[..mlp_len]).unwrap();
            let mut st = structure.clone();
            st.logits.copy_from_slice(&flat[mlp_len..]);
            let args = HeadLossArgs {
                model: &model,
                features: &client.features,
                labels: &client.labels,
                train_mask: &client.train_mask,
                norm_graph: &client.norm_graph,
                a_bin: Some(&a_bin),
                params: &p,
                structure: Some(&st),
                dropout: 0.0,
                mode: Mode::Eval,
                recon_seed: 0,
            };
            let mut r = rng::seeded(0);
            head_loss_grad(&args, &mut r, false).unwrap().0.total
        };

        let p = MlpParams::unflatten(&dims, &flat[..mlp_len]).unwrap();
        let args = HeadLossArgs {
            model: &model,
            features: &client.features,
            labels: &client.labels,
            train_mask: &client.train_mask,
            norm_graph: &client.norm_graph,
            a_bin: Some(&a_bin),
            params: &p,
            structure: Some(&structure),
            dropout: 0.0,
            mode: Mode::Eval,
            recon_seed: 0,
        };
        let mut r = rng::seeded(0);
        let (_, grad) = head_loss_grad(&args, &mut r, true).unwrap();
        let grad = grad.unwrap();
        assert_eq!(grad.len(), flat.len());

        let mut probe_rng = rng::seeded(99);
        let h = 1e-5;
        for _ in 0..30 {
            let idx = probe_rng.gen_range(0..flat.len());
            let mut plus = flat.clone();
            plus[idx] += h;
            let mut minus = flat.clone();
            minus[idx] -= h;
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
            let rel = (fd - grad[idx]).abs() / fd.abs().max(grad[idx].abs()).max(1e-6);
            assert!(
                rel < 1e-4,
                "param {} ({}): fd {} vs analytic {}",
                idx,
                if idx < mlp_len { "mlp" } else { "logit" },
                fd,
                grad[idx]
            );
        }
    }

    #[test]
    fn node_budget_is_enforced_in_learnable_mode() {
        let tcfg = quiet_tcfg();
        let mcfg = MpaeConfig {
            recon_mode: ReconMode::LearnableStructure,
            node_budget: 5,
            ..MpaeConfig::default()
        };
        let mut client = two_cluster_client(3, 1.0);
        let init = client.params.clone();
        assert!(matches!(
            fedmpae_train(&mut client, init, &DiffusionConfig::default(), &mcfg, &tcfg),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn early_stopping_respects_patience() {
        let tcfg = TrainConfig {
            head_epochs: 500,
            patience: 3,
            optimizer: OptimizerKind::Sgd,
            learning_rate: 1e-9,
            ..quiet_tcfg()
        };
        // A step size this small never improves validation accuracy after
        // the first epoch, so training stops after patience + 1 more epochs.
        let mut client = two_cluster_client(11, 1.0);
        let init = client.params.clone();
        let result = train_head(&mut client, init, &HeadModel::Mlp, &tcfg).unwrap();
        assert!(result.records.len() <= 5, "ran {} epochs", result.records.len());
    }

    #[test]
    fn empty_train_mask_is_rejected() {
        let tcfg = quiet_tcfg();
        let mut client = two_cluster_client(13, 1.0);
        client.train_mask.clear();
        let init = client.params.clone();
        assert!(matches!(
            train_head(&mut client, init, &HeadModel::Mlp, &tcfg),
            Err(Error::EmptyMask(_))
        ));
    }

    #[test]
    fn post_softmax_decoder_input_also_gradchecks() {
        use rand::Rng as _;
        let dcfg = DiffusionConfig { alpha: 0.15, k_steps: 3 };
        let mcfg = MpaeConfig {
            decoder_input: DecoderInput::PostSoftmax,
            ..MpaeConfig::default()
        };
        let model = HeadModel::Mpae(dcfg, mcfg);
        let client = two_cluster_client(91, 1.0);
        let a_bin = client.local_binary_adjacency();
        let params = client.params.clone();
        let dims = params.layer_dims().to_vec();
        let flat = params.flatten();

        let loss_at = |flat: &[f64]| -> f64 {
            let p = MlpParams::unflatten(&dims, flat).unwrap();
            let args = HeadLossArgs {
                model: &model,
                features: &client.features,
                labels: &client.labels,
                train_mask: &client.train_mask,
                norm_graph: &client.norm_graph,
                a_bin: Some(&a_bin),
                params: &p,
                structure: None,
                dropout: 0.0,
                mode: Mode::Eval,
                recon_seed: 0,
            };
            let mut r = rng::seeded(0);
            head_loss_grad(&args, &mut r, false).unwrap().0.total
        };

        let p = MlpParams::unflatten(&dims, &flat).unwrap();
        let args = HeadLossArgs {
            model: &model,
            features: &client.features,
            labels: &client.labels,
            train_mask: &client.train_mask,
            norm_graph: &client.norm_graph,
            a_bin: Some(&a_bin),
            params: &p,
            structure: None,
            dropout: 0.0,
            mode: Mode::Eval,
            recon_seed: 0,
        };
        let mut r = rng::seeded(0);
        let (_, grad) = head_loss_grad(&args, &mut r, true).unwrap();
        let grad = grad.unwrap();

        let mut probe_rng = rng::seeded(5);
        let h = 1e-5;
        for _ in 0..20 {
            let idx = probe_rng.gen_range(0..flat.len());
            let mut plus = flat.clone();
            plus[idx] += h;
            let mut minus = flat.clone();
            minus[idx] -= h;
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
            let rel = (fd - grad[idx]).abs() / fd.abs().max(grad[idx].abs()).max(1e-6);
            assert!(rel < 1e-4, "param {}: fd {} vs analytic {}", idx, fd, grad[idx]);
        }
    }
}
