//! Helpers shared by the integration suites: a dense linear solver used as
//! an oracle, random graph builders, and client assembly that mirrors what
//! the harness does internally.

#![allow(dead_code)]

use fedmpa::data::{generate_sbm, Dataset, Splits};
use fedmpa::fed::ClientState;
use fedmpa::graph::{connected_components, partition_louvain_balanced, Partition, SparseGraph};
use fedmpa::nn::rng::{derive_seed, seeded};
use fedmpa::nn::{DenseMatrix, MlpParams, TrainConfig};
use rand::Rng as _;

/// Solves `a * x = b` by Gaussian elimination with partial pivoting.
/// Panics on a singular system; this is a test oracle, not library code.
pub fn solve_dense(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let n = a.rows();
    assert_eq!(a.cols(), n, "coefficient matrix must be square");
    assert_eq!(b.rows(), n, "right-hand side must match");
    let cols = b.cols();

    let mut m = vec![vec![0.0f64; n + cols]; n];
    for i in 0..n {
        for j in 0..n {
            m[i][j] = a.get(i, j);
        }
        for j in 0..cols {
            m[i][n + j] = b.get(i, j);
        }
    }

    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| m[x][col].abs().partial_cmp(&m[y][col].abs()).unwrap())
            .unwrap();
        assert!(m[pivot][col].abs() > 1e-12, "singular system at column {}", col);
        m.swap(col, pivot);
        let diag = m[col][col];
        for j in col..n + cols {
            m[col][j] /= diag;
        }
        for row in 0..n {
            if row == col {
                continue;
            }
            let factor = m[row][col];
            if factor == 0.0 {
                continue;
            }
            for j in col..n + cols {
                m[row][j] -= factor * m[col][j];
            }
        }
    }

    let mut x = DenseMatrix::zeros(n, cols);
    for i in 0..n {
        for j in 0..cols {
            x.set(i, j, m[i][n + j]);
        }
    }
    x
}

/// Dense copy of a sparse matrix.
pub fn dense_from_sparse(g: &SparseGraph) -> DenseMatrix {
    let n = g.n_nodes();
    let mut out = DenseMatrix::zeros(n, n);
    for (i, j, w) in g.entries() {
        out.set(i, j, w);
    }
    out
}

/// Matrix with entries drawn uniformly from [-1, 1].
pub fn uniform_matrix(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let mut rng = seeded(seed);
    let mut m = DenseMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m.set(i, j, rng.gen::<f64>() * 2.0 - 1.0);
        }
    }
    m
}

pub fn is_connected(g: &SparseGraph) -> bool {
    let comp = connected_components(g);
    comp.iter().all(|&c| c == comp.first().copied().unwrap_or(0))
}

/// Connected Erdos-Renyi graph on `n` nodes; bumps the seed until the draw
/// comes out connected so spectra stay well-behaved.
pub fn connected_er_graph(n: usize, p: f64, seed: u64) -> SparseGraph {
    for attempt in 0..64 {
        let ds = generate_sbm(n, 1, p, p, 1, 0.0, derive_seed(seed, attempt))
            .expect("sbm generation");
        if is_connected(&ds.graph) {
            return ds.graph;
        }
    }
    panic!("no connected graph on {} nodes with p = {} after 64 attempts", n, p);
}

/// Splits a dataset across `m` clients and assembles their states exactly
/// as the harness does: one shared weight init, per-client rng streams.
pub fn assemble_clients(
    ds: &Dataset,
    splits: &Splits,
    m: usize,
    seed: u64,
    tcfg: &TrainConfig,
) -> Vec<ClientState> {
    let part = partition_louvain_balanced(&ds.graph, m, seed).expect("partition");
    clients_from_partition(ds, splits, &part, seed, tcfg)
}

/// Same as [`assemble_clients`] but with an explicit node assignment.
pub fn clients_from_assignment(
    ds: &Dataset,
    splits: &Splits,
    assignment: &[usize],
    n_clients: usize,
    seed: u64,
    tcfg: &TrainConfig,
) -> Vec<ClientState> {
    let part = Partition::from_assignment(&ds.graph, assignment, n_clients).expect("partition");
    clients_from_partition(ds, splits, &part, seed, tcfg)
}

fn clients_from_partition(
    ds: &Dataset,
    splits: &Splits,
    part: &Partition,
    seed: u64,
    tcfg: &TrainConfig,
) -> Vec<ClientState> {
    let dims = tcfg.layer_dims(ds.n_features(), ds.n_classes);
    let mut init_rng = seeded(derive_seed(seed, 0x696e_6974));
    let init = MlpParams::glorot(&dims, &mut init_rng).expect("init");
    part.clients
        .iter()
        .enumerate()
        .map(|(c, sub)| {
            ClientState::build(
                c,
                sub,
                &ds.features,
                &ds.labels,
                &splits.train,
                &splits.val,
                &splits.test,
                init.clone(),
                tcfg,
                derive_seed(seed, c as u64),
            )
            .expect("client build")
        })
        .collect()
}

/// Six nodes in two triangles joined by one bridge edge, one feature
/// dimension per class plus a bias-like constant column. The features are
/// deliberately large so a randomly initialized decoder starts saturated
/// rather than at the uniform midpoint. Train nodes 0 and 3, validation 1
/// and 4, test 2 and 5.
pub fn six_node_dataset() -> (Dataset, Splits) {
    let edges = [(0, 1), (0, 2), (1, 2), (3, 4), (3, 5), (4, 5), (2, 3)];
    let graph = SparseGraph::from_edges(6, &edges).expect("graph");
    let mut features = DenseMatrix::zeros(6, 3);
    for node in 0..6 {
        let class = node / 3;
        features.set(node, class, 5.0);
        features.set(node, 2, 2.5);
    }
    let ds = Dataset {
        graph,
        features,
        labels: vec![0, 0, 0, 1, 1, 1],
        n_classes: 2,
        name: "two-triangles".into(),
    };
    ds.validate().expect("fixture dataset");
    let splits = Splits { train: vec![0, 3], val: vec![1, 4], test: vec![2, 5] };
    (ds, splits)
}

pub fn max_abs_diff(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    assert_eq!(a.rows(), b.rows());
    assert_eq!(a.cols(), b.cols());
    let mut worst = 0.0f64;
    for i in 0..a.rows() {
        for j in 0..a.cols() {
            worst = worst.max((a.get(i, j) - b.get(i, j)).abs());
        }
    }
    worst
}

pub fn max_abs_diff_flat(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
