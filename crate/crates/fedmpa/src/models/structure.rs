//! A client-local adjacency whose edge weights are trainable.
//!
//! The client's normalized graph is augmented with one extra node standing
//! in for everything the client cannot see: it connects to every local node.
//! Each supported entry (existing edges, self-loops, and the extra node's
//! incidences) carries a logit; weights pass through softplus so they stay
//! positive, and the whole matrix is renormalized symmetrically on every
//! materialization, which keeps the spectrum diffusion-safe. The support
//! never changes after construction.

use crate::error::{Error, Result};
use crate::graph::SparseGraph;
use crate::nn::DenseMatrix;

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn softplus_inv(w: f64) -> f64 {
    // Inverse of ln(1 + e^x); callers guarantee w > 0.
    if w > 30.0 {
        w
    } else {
        w.exp_m1().ln()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone)]
pub struct LearnedStructure {
    n_local: usize,
    /// Canonical pairs (p, q) with p <= q over the augmented node set.
    support: Vec<(usize, usize)>,
    pub logits: Vec<f64>,
}

impl LearnedStructure {
    /// Builds the structure from a client's normalized local graph. Logits
    /// start at softplus-inverse of: the normalized entry for local pairs,
    /// 1/N for the appended node's edges, and 1 for its self-loop.
    pub fn from_normalized(norm_local: &SparseGraph) -> Result<Self> {
        let n = norm_local.n_nodes();
        if n == 0 {
            return Err(Error::Domain("cannot augment an empty graph".into()));
        }
        let mut support = Vec::new();
        let mut logits = Vec::new();
        for (i, j, w) in norm_local.entries() {
            if i <= j {
                if w <= 0.0 {
                    return Err(Error::Domain(format!(
                        "entry ({},{}) = {} not positive",
                        i, j, w
                    )));
                }
                support.push((i, j));
                logits.push(softplus_inv(w));
            }
        }
        let super_id = n;
        let super_edge = softplus_inv(1.0 / n as f64);
        for i in 0..n {
            support.push((i, super_id));
            logits.push(super_edge);
        }
        support.push((super_id, super_id));
        logits.push(softplus_inv(1.0));
        Ok(LearnedStructure { n_local: n, support, logits })
    }

    pub fn n_local(&self) -> usize {
        self.n_local
    }

    pub fn n_augmented(&self) -> usize {
        self.n_local + 1
    }

    pub fn super_id(&self) -> usize {
        self.n_local
    }

    pub fn support(&self) -> &[(usize, usize)] {
        &self.support
    }

    pub fn weights(&self) -> Vec<f64> {
        self.logits.iter().map(|&t| softplus(t)).collect()
    }

    fn degrees(&self, weights: &[f64]) -> Vec<f64> {
        let mut d = vec![0.0; self.n_augmented()];
        for (&(p, q), &w) in self.support.iter().zip(weights) {
            d[p] += w;
            if p != q {
                d[q] += w;
            }
        }
        d
    }

    /// The current symmetric normalized adjacency over the augmented nodes.
    pub fn materialize(&self) -> Result<SparseGraph> {
        let weights = self.weights();
        let d = self.degrees(&weights);
        let mut entries = Vec::with_capacity(self.support.len() * 2);
        for (&(p, q), &w) in self.support.iter().zip(&weights) {
            let v = w / (d[p] * d[q]).sqrt();
            entries.push((p, q, v));
            if p != q {
                entries.push((q, p, v));
            }
        }
        SparseGraph::from_entries(self.n_augmented(), entries)
    }

    /// Appends the extra node's representation: the mean of the local rows.
    pub fn augment_rows(&self, r0: &DenseMatrix) -> Result<DenseMatrix> {
        if r0.rows() != self.n_local {
            return Err(Error::Shape(format!(
                "representation has {} rows, structure holds {} local nodes",
                r0.rows(),
                self.n_local
            )));
        }
        let c = r0.cols();
        let mut out = DenseMatrix::zeros(self.n_augmented(), c);
        for i in 0..self.n_local {
            for j in 0..c {
                out.set(i, j, r0.get(i, j));
            }
        }
        let inv_n = 1.0 / self.n_local as f64;
        for j in 0..c {
            let mean = (0..self.n_local).map(|i| r0.get(i, j)).sum::<f64>() * inv_n;
            out.set(self.n_local, j, mean);
        }
        Ok(out)
    }

    /// Adjoint of `augment_rows`: the mean row's gradient spreads back
    /// uniformly over the local rows.
    pub fn reduce_rows_grad(&self, grad_aug: &DenseMatrix) -> Result<DenseMatrix> {
        if grad_aug.rows() != self.n_augmented() {
            return Err(Error::Shape(format!(
                "gradient has {} rows, expected {}",
                grad_aug.rows(),
                self.n_augmented()
            )));
        }
        let c = grad_aug.cols();
        let inv_n = 1.0 / self.n_local as f64;
        let mut out = DenseMatrix::zeros(self.n_local, c);
        for i in 0..self.n_local {
            for j in 0..c {
                out.set(i, j, grad_aug.get(i, j) + inv_n * grad_aug.get(self.n_local, j));
            }
        }
        Ok(out)
    }

    /// Chains dL/d(materialized entries), given densely as `u`, through the
    /// symmetric renormalization and softplus down to the logits.
    pub fn logits_grad(&self, u: &DenseMatrix) -> Result<Vec<f64>> {
        let n = self.n_augmented();
        if u.rows() != n || u.cols() != n {
            return Err(Error::Shape(format!(
                "upstream gradient is {}x{}, expected {}x{}",
                u.rows(),
                u.cols(),
                n,
                n
            )));
        }
        let weights = self.weights();
        let d = self.degrees(&weights);

        // Row and column sums of U .* materialized, restricted to support.
        let mut s_row = vec![0.0; n];
        let mut s_col = vec![0.0; n];
        for (&(p, q), &w) in self.support.iter().zip(&weights) {
            let v = w / (d[p] * d[q]).sqrt();
            s_row[p] += u.get(p, q) * v;
            s_col[q] += u.get(p, q) * v;
            if p != q {
                s_row[q] += u.get(q, p) * v;
                s_col[p] += u.get(q, p) * v;
            }
        }

        let mut grad = Vec::with_capacity(self.logits.len());
        for (&(p, q), &theta) in self.support.iter().zip(&self.logits) {
            let g_weight = if p == q {
                u.get(p, p) / d[p] - 0.5 * (s_row[p] + s_col[p]) / d[p]
            } else {
                (u.get(p, q) + u.get(q, p)) / (d[p] * d[q]).sqrt()
                    - 0.5
                        * ((s_row[p] + s_col[p]) / d[p] + (s_row[q] + s_col[q]) / d[q])
            };
            grad.push(g_weight * sigmoid(theta));
        }
        Ok(grad)
    }

    /// Edge list with the current softplus weights, `u<TAB>v<TAB>w` with the
    /// extra node appearing as id = local node count.
    pub fn dump_tsv(&self) -> String {
        let weights = self.weights();
        let mut out = String::new();
        for (&(p, q), &w) in self.support.iter().zip(&weights) {
            out.push_str(&format!("{}\t{}\t{:.17}\n", p, q, w));
        }
        out
    }
}
