//! Central-difference verification of every analytic gradient path.

use crate::error::Result;
use crate::graph::{normalize_sym_selfloop, SparseGraph};
use crate::models::heads::{head_loss_grad, HeadLossArgs, HeadModel};
use crate::models::{DecoderInput, DiffusionConfig, MpaeConfig, ReconMode};
use crate::nn::{mlp_forward, rng, DenseMatrix, MlpParams, Mode, Rng};
use rand::Rng as _;

/// Relative-error ceiling for a probe to count as agreeing.
pub const GRADCHECK_TOL: f64 = 1e-4;

const STEP: f64 = 1e-5;
/// Probes are resampled until every pre-activation sits at least this far
/// from the ReLU kink, so the finite-difference stencil stays on one side.
const KINK_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct PathReport {
    pub name: String,
    pub probes: usize,
    pub failures: usize,
    pub max_rel_err: f64,
}

impl PathReport {
    pub fn pass(&self) -> bool {
        self.failures == 0 && self.max_rel_err.is_finite()
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub paths: Vec<PathReport>,
}

impl GradCheckReport {
    pub fn pass(&self) -> bool {
        self.paths.iter().all(|p| p.pass())
    }
}

struct Instance {
    graph: SparseGraph,
    features: DenseMatrix,
    labels: Vec<usize>,
    mask: Vec<usize>,
    a_bin: DenseMatrix,
    params: MlpParams,
}

fn random_instance(seed: u64) -> Result<Instance> {
    let n = 12;
    let d = 5;
    let c = 3;
    let dims = [d, 8, c];
    let mut r = rng::seeded(seed);

    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if r.gen::<f64>() < 0.3 {
                edges.push((u, v));
            }
        }
    }
    let graph = normalize_sym_selfloop(&SparseGraph::from_edges(n, &edges)?)?;
    let mut a_bin = DenseMatrix::zeros(n, n);
    for &(u, v) in &edges {
        a_bin.set(u, v, 1.0);
        a_bin.set(v, u, 1.0);
    }

    let features = DenseMatrix::from_fn(n, d, |_, _| 2.0 * r.gen::<f64>() - 1.0);
    let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..c)).collect();
    let mut mask: Vec<usize> = (0..n).filter(|_| r.gen::<f64>() < 0.5).collect();
    if mask.is_empty() {
        mask.push(0);
    }

    // Resample weights until no pre-activation hugs the ReLU kink; a stencil
    // straddling zero would make the central difference lie.
    let mut params = MlpParams::glorot(&dims, &mut r)?;
    for _ in 0..200 {
        let (_, tape) = mlp_forward(&params, &features, 0.0, Mode::Eval, &mut r)?;
        if tape.min_abs_pre_activation() > KINK_MARGIN {
            break;
        }
        params = MlpParams::glorot(&dims, &mut r)?;
    }

    Ok(Instance { graph, features, labels, mask, a_bin, params })
}

fn loss_at(inst: &Instance, model: &HeadModel, flat: &[f64], dims: &[usize]) -> Result<f64> {
    let p = MlpParams::unflatten(dims, flat)?;
    let args = HeadLossArgs {
        model,
        features: &inst.features,
        labels: &inst.labels,
        train_mask: &inst.mask,
        norm_graph: &inst.graph,
        a_bin: Some(&inst.a_bin),
        params: &p,
        structure: None,
        dropout: 0.0,
        mode: Mode::Eval,
        recon_seed: 0,
    };
    let mut r = rng::seeded(0);
    Ok(head_loss_grad(&args, &mut r, false)?.0.total)
}

fn check_path(
    name: &str,
    model: &HeadModel,
    probes: usize,
    seed: u64,
    probe_rng: &mut Rng,
) -> Result<PathReport> {
    let mut max_rel = 0.0f64;
    let mut failures = 0usize;

    for probe in 0..probes {
        let inst = random_instance(rng::derive_seed(seed, probe as u64))?;
        let dims = inst.params.layer_dims().to_vec();
        let flat = inst.params.flatten();

        let args = HeadLossArgs {
            model,
            features: &inst.features,
            labels: &inst.labels,
            train_mask: &inst.mask,
            norm_graph: &inst.graph,
            a_bin: Some(&inst.a_bin),
            params: &inst.params,
            structure: None,
            dropout: 0.0,
            mode: Mode::Eval,
            recon_seed: 0,
        };
        let mut r = rng::seeded(0);
        let (_, grad) = head_loss_grad(&args, &mut r, true)?;
        let grad = grad.expect("gradient requested");

        let idx = probe_rng.gen_range(0..flat.len());
        let mut plus = flat.clone();
        plus[idx] += STEP;
        let mut minus = flat.clone();
        minus[idx] -= STEP;
        let fd = (loss_at(&inst, model, &plus, &dims)? - loss_at(&inst, model, &minus, &dims)?)
            / (2.0 * STEP);

        let rel = (fd - grad[idx]).abs() / fd.abs().max(grad[idx].abs()).max(1e-6);
        if !rel.is_finite() || rel >= GRADCHECK_TOL {
            failures += 1;
        }
        max_rel = max_rel.max(rel);
    }

    Ok(PathReport { name: name.to_string(), probes, failures, max_rel_err: max_rel })
}

/// Compares analytic and central-difference gradients on three loss paths:
/// classification on raw MLP logits, classification on diffused logits, and
/// the combined classification-plus-reconstruction objective. Dropout is off
/// and instances avoid ReLU kinks, so disagreement means a wrong derivative.
pub fn gradcheck_suite(probes_per_path: usize, seed: u64) -> Result<GradCheckReport> {
    let dcfg = DiffusionConfig { alpha: 0.1, k_steps: 6 };
    let mcfg = MpaeConfig {
        beta: 0.7,
        gamma: 0.3,
        recon_mode: ReconMode::Simplified,
        decoder_input: DecoderInput::PreSoftmax,
        ..MpaeConfig::default()
    };
    let mut probe_rng = rng::seeded(rng::derive_seed(seed, 0x70726f62));

    let paths = vec![
        check_path(
            "ce-mlp",
            &HeadModel::Mlp,
            probes_per_path,
            rng::derive_seed(seed, 1),
            &mut probe_rng,
        )?,
        check_path(
            "ce-diffusion-mlp",
            &HeadModel::Mpa(dcfg),
            probes_per_path,
            rng::derive_seed(seed, 2),
            &mut probe_rng,
        )?,
        check_path(
            "mpae-simplified",
            &HeadModel::Mpae(dcfg, mcfg),
            probes_per_path,
            rng::derive_seed(seed, 3),
            &mut probe_rng,
        )?,
    ];

    Ok(GradCheckReport { paths })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_three_paths_agree_with_finite_differences() {
        let report = gradcheck_suite(25, 7).unwrap();
        assert_eq!(report.paths.len(), 3);
        for path in &report.paths {
            assert!(
                path.pass(),
                "{}: {} failures, max rel err {}",
                path.name,
                path.failures,
                path.max_rel_err
            );
            assert!(path.max_rel_err < GRADCHECK_TOL);
        }
        assert!(report.pass());
    }

    #[test]
    fn deterministic_for_a_fixed_seed() {
        let a = gradcheck_suite(5, 42).unwrap();
        let b = gradcheck_suite(5, 42).unwrap();
        for (x, y) in a.paths.iter().zip(&b.paths) {
            assert_eq!(x.max_rel_err, y.max_rel_err);
            assert_eq!(x.failures, y.failures);
        }
    }
}
