//! Model heads built on the federated MLP: personalized-PageRank style
//! diffusion, the inner-product adjacency decoder, and the learnable local
//! structure.

pub mod gradcheck;
pub mod heads;
pub mod structure;

pub use gradcheck::{gradcheck_suite, GradCheckReport, PathReport, GRADCHECK_TOL};
pub use heads::{
    fedmpa_train, fedmpae_train, head_eval, loc_variants, mpae_loss, train_head, DecoderInput,
    EpochRecord, HeadModel, HeadResult, LocVariant, MpaeConfig, ReconMode, ReconNorms,
};
pub use structure::LearnedStructure;

use crate::error::{Error, Result};
use crate::graph::SparseGraph;
use crate::nn::DenseMatrix;

/// Teleport-style propagation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionConfig {
    /// Fraction of the initial representation re-injected each step.
    pub alpha: f64,
    pub k_steps: usize,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig { alpha: 0.1, k_steps: 10 }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Domain(format!("alpha {} outside (0, 1]", self.alpha)));
        }
        Ok(())
    }
}

fn check_diffuse_shapes(a_norm: &SparseGraph, r0: &DenseMatrix) -> Result<()> {
    if a_norm.n_nodes() != r0.rows() {
        return Err(Error::Shape(format!(
            "graph has {} nodes, representation has {} rows",
            a_norm.n_nodes(),
            r0.rows()
        )));
    }
    Ok(())
}

/// True when the normalized graph is exactly the identity (every node
/// isolated), in which case diffusion is skipped entirely so that the output
/// bit-equals the input.
fn is_identity(a_norm: &SparseGraph) -> bool {
    a_norm.n_entries() == a_norm.n_nodes()
        && a_norm.entries().all(|(i, j, w)| i == j && w == 1.0)
}

pub(crate) fn sparse_dense_mul(a: &SparseGraph, x: &DenseMatrix) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(x.rows(), x.cols());
    for (i, j, w) in a.entries() {
        let src = x.row(j);
        let dst = out.row_mut(i);
        for (d, &s) in dst.iter_mut().zip(src) {
            *d += w * s;
        }
    }
    out
}

/// Runs the propagation recurrence `R(t) = (1-alpha)*A*R(t-1) + alpha*R(0)`
/// for `k_steps` steps. Linear in `r0`; `k_steps = 0` and `alpha = 1` both
/// return `r0` unchanged. The operator is a symmetric polynomial in the
/// symmetric `a_norm`, so this same function is its own adjoint: calling it
/// on an upstream gradient backpropagates through the diffusion.
pub fn diffuse(a_norm: &SparseGraph, r0: &DenseMatrix, cfg: &DiffusionConfig) -> Result<DenseMatrix> {
    cfg.validate()?;
    check_diffuse_shapes(a_norm, r0)?;
    if cfg.k_steps == 0 || cfg.alpha == 1.0 || is_identity(a_norm) {
        return Ok(r0.clone());
    }
    let mut h = r0.clone();
    for _ in 0..cfg.k_steps {
        let mut next = sparse_dense_mul(a_norm, &h);
        next.scale(1.0 - cfg.alpha);
        next.add_scaled(r0, cfg.alpha)?;
        h = next;
    }
    h.check_finite("diffuse")?;
    Ok(h)
}

/// Like `diffuse`, but additionally returns every intermediate step
/// `[R(0), R(1), ..., R(k)]`; the learnable-structure gradient needs them.
pub fn diffuse_recorded(
    a_norm: &SparseGraph,
    r0: &DenseMatrix,
    cfg: &DiffusionConfig,
) -> Result<Vec<DenseMatrix>> {
    cfg.validate()?;
    check_diffuse_shapes(a_norm, r0)?;
    let mut steps = Vec::with_capacity(cfg.k_steps + 1);
    steps.push(r0.clone());
    if cfg.alpha == 1.0 || is_identity(a_norm) {
        for _ in 0..cfg.k_steps {
            steps.push(r0.clone());
        }
        return Ok(steps);
    }
    for t in 0..cfg.k_steps {
        let mut next = sparse_dense_mul(a_norm, &steps[t]);
        next.scale(1.0 - cfg.alpha);
        next.add_scaled(r0, cfg.alpha)?;
        steps.push(next);
    }
    steps.last().unwrap().check_finite("diffuse_recorded")?;
    Ok(steps)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inner-product decoder: `sigmoid(Z * Z^T)`. The upper triangle is computed
/// once and mirrored, so the output is symmetric to the last bit, with
/// entries strictly inside (0, 1).
pub fn decode_adjacency(z: &DenseMatrix) -> DenseMatrix {
    let n = z.rows();
    let mut out = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let dot: f64 = z.row(i).iter().zip(z.row(j)).map(|(a, b)| a * b).sum();
            let v = sigmoid(dot);
            out.set(i, j, v);
            out.set(j, i, v);
        }
    }
    out
}

/// Gradient of a loss through `decode_adjacency`: given `Z`, the decoded
/// matrix, and dL/d(decoded), returns dL/dZ.
pub fn decode_adjacency_backward(
    z: &DenseMatrix,
    decoded: &DenseMatrix,
    grad_decoded: &DenseMatrix,
) -> Result<DenseMatrix> {
    let n = z.rows();
    if decoded.rows() != n || decoded.cols() != n || grad_decoded.rows() != n
        || grad_decoded.cols() != n
    {
        return Err(Error::Shape(format!(
            "decoder backward expects {n}x{n} matrices, got {}x{} and {}x{}",
            decoded.rows(),
            decoded.cols(),
            grad_decoded.rows(),
            grad_decoded.cols()
        )));
    }
    // dL/dS for S = Z Z^T, then dL/dZ = (dL/dS + dL/dS^T) Z.
    let mut grad_s = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let a = decoded.get(i, j);
            grad_s.set(i, j, grad_decoded.get(i, j) * a * (1.0 - a));
        }
    }
    let mut sym = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            sym.set(i, j, grad_s.get(i, j) + grad_s.get(j, i));
        }
    }
    sym.matmul(z)
}
