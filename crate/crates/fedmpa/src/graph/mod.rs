//! Undirected graphs in compressed sparse row form, symmetric normalization
//! with self-loops, and subgraph induction.

pub mod partition;

pub use partition::{
    count_dropped_edges, modularity, partition_louvain_balanced, read_partition_tsv,
    ClientSubgraph, Partition,
};

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Immutable undirected adjacency matrix in CSR form. Off-diagonal entries
/// appear in both directions with equal values; self-loops appear once.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGraph {
    n_nodes: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseGraph {
    /// Unweighted graph from an undirected edge list (each edge once).
    /// Duplicate edges are rejected; self-loops are allowed and stored once.
    pub fn from_edges(n_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut entries = Vec::with_capacity(edges.len() * 2);
        for &(u, v) in edges {
            entries.push((u, v, 1.0));
            if u != v {
                entries.push((v, u, 1.0));
            }
        }
        Self::from_entries(n_nodes, entries)
    }

    /// Graph from explicit (row, col, value) entries. The entry set must
    /// already be symmetric; duplicates are rejected.
    pub fn from_entries(n_nodes: usize, mut entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        for &(u, v, w) in &entries {
            if u >= n_nodes || v >= n_nodes {
                return Err(Error::Structure(format!(
                    "entry ({},{}) out of range for {} nodes",
                    u, v, n_nodes
                )));
            }
            if !w.is_finite() {
                return Err(Error::NonFinite(format!("weight at ({},{})", u, v)));
            }
        }
        entries.sort_by_key(|&(u, v, _)| (u, v));
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                return Err(Error::Structure(format!(
                    "duplicate entry ({},{})",
                    w[0].0, w[0].1
                )));
            }
        }
        let mut row_offsets = vec![0usize; n_nodes + 1];
        for &(u, _, _) in &entries {
            row_offsets[u + 1] += 1;
        }
        for i in 0..n_nodes {
            row_offsets[i + 1] += row_offsets[i];
        }
        let col_indices = entries.iter().map(|&(_, v, _)| v).collect();
        let values = entries.iter().map(|&(_, _, w)| w).collect();
        let g = SparseGraph { n_nodes, row_offsets, col_indices, values };
        g.validate()?;
        Ok(g)
    }

    /// Builds directly from CSR arrays without any checking. The caller is
    /// responsible for the type's invariants; `validate` can verify them.
    pub fn from_csr_unchecked(
        n_nodes: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Self {
        SparseGraph { n_nodes, row_offsets, col_indices, values }
    }

    /// Checks the structural invariants: consistent offsets, strictly
    /// increasing in-range columns, finite values, and symmetry.
    pub fn validate(&self) -> Result<()> {
        if self.row_offsets.len() != self.n_nodes + 1
            || self.row_offsets[0] != 0
            || *self.row_offsets.last().unwrap() != self.col_indices.len()
            || self.col_indices.len() != self.values.len()
        {
            return Err(Error::Structure("inconsistent CSR arrays".into()));
        }
        for i in 0..self.n_nodes {
            if self.row_offsets[i] > self.row_offsets[i + 1] {
                return Err(Error::Structure(format!("row {} has negative extent", i)));
            }
            let (cols, vals) = self.neighbors(i);
            for w in cols.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::Structure(format!(
                        "row {} columns not strictly increasing",
                        i
                    )));
                }
            }
            for (&j, &w) in cols.iter().zip(vals) {
                if j >= self.n_nodes {
                    return Err(Error::Structure(format!("column {} out of range", j)));
                }
                if !w.is_finite() {
                    return Err(Error::NonFinite(format!("weight at ({},{})", i, j)));
                }
                match self.value_at(j, i) {
                    Some(back) if back == w => {}
                    _ => {
                        return Err(Error::Structure(format!(
                            "entry ({},{}) = {} has no symmetric twin",
                            i, j, w
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    /// Number of stored entries (directed count).
    pub fn n_entries(&self) -> usize {
        self.col_indices.len()
    }

    /// Number of undirected edges; a self-loop counts as one edge.
    pub fn edge_count(&self) -> usize {
        let self_loops = (0..self.n_nodes)
            .filter(|&i| self.value_at(i, i).is_some())
            .count();
        (self.n_entries() - self_loops) / 2 + self_loops
    }

    /// Structural degree (stored entries in the row).
    pub fn degree(&self, i: usize) -> usize {
        self.row_offsets[i + 1] - self.row_offsets[i]
    }

    pub fn neighbors(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.row_offsets[i];
        let hi = self.row_offsets[i + 1];
        (&self.col_indices[lo..hi], &self.values[lo..hi])
    }

    pub fn value_at(&self, i: usize, j: usize) -> Option<f64> {
        let (cols, vals) = self.neighbors(i);
        cols.binary_search(&j).ok().map(|k| vals[k])
    }

    /// Sum of the stored values of row `i`.
    pub fn weighted_degree(&self, i: usize) -> f64 {
        self.neighbors(i).1.iter().sum()
    }

    /// Iterates all stored entries as (row, col, value).
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_nodes).flat_map(move |i| {
            let (cols, vals) = self.neighbors(i);
            cols.iter().zip(vals).map(move |(&j, &w)| (i, j, w))
        })
    }

    /// Undirected edges with i <= j, in canonical order.
    pub fn canonical_edges(&self) -> Vec<(usize, usize)> {
        self.entries().filter(|&(i, j, _)| i <= j).map(|(i, j, _)| (i, j)).collect()
    }
}

/// Returns the symmetrically normalized adjacency with self-loops: add the
/// identity to the graph, then scale each entry (i,j) by the inverse square
/// roots of the augmented row sums of i and j. Every node ends up with a
/// positive diagonal entry, and the spectrum lies in [-1, 1].
pub fn normalize_sym_selfloop(g: &SparseGraph) -> Result<SparseGraph> {
    g.validate()?;
    if g.values.iter().any(|&w| w < 0.0) {
        return Err(Error::Domain("negative weight in graph to normalize".into()));
    }
    let deg_hat: Vec<f64> = (0..g.n_nodes).map(|i| g.weighted_degree(i) + 1.0).collect();

    let mut entries = Vec::with_capacity(g.n_entries() + g.n_nodes);
    for i in 0..g.n_nodes {
        let (cols, vals) = g.neighbors(i);
        let mut saw_diag = false;
        for (&j, &w) in cols.iter().zip(vals) {
            let aug = if i == j {
                saw_diag = true;
                w + 1.0
            } else {
                w
            };
            entries.push((i, j, aug / (deg_hat[i].sqrt() * deg_hat[j].sqrt())));
        }
        if !saw_diag {
            entries.push((i, i, 1.0 / deg_hat[i]));
        }
    }
    SparseGraph::from_entries(g.n_nodes, entries)
}

/// Index maps produced by `induce_subgraph`; the two directions are mutually
/// inverse.
#[derive(Debug, Clone)]
pub struct IndexMaps {
    pub local_to_global: Vec<usize>,
    pub global_to_local: BTreeMap<usize, usize>,
}

/// Restricts `g` to `ids`: the output keeps exactly the edges with both
/// endpoints in `ids`, renumbered by position in `ids`.
pub fn induce_subgraph(g: &SparseGraph, ids: &[usize]) -> Result<(SparseGraph, IndexMaps)> {
    let mut global_to_local = BTreeMap::new();
    for (local, &global) in ids.iter().enumerate() {
        if global >= g.n_nodes {
            return Err(Error::Domain(format!(
                "node id {} out of range for {} nodes",
                global,
                g.n_nodes()
            )));
        }
        if global_to_local.insert(global, local).is_some() {
            return Err(Error::Domain(format!("duplicate node id {}", global)));
        }
    }
    let mut entries = Vec::new();
    for (local_u, &global_u) in ids.iter().enumerate() {
        let (cols, vals) = g.neighbors(global_u);
        for (&global_v, &w) in cols.iter().zip(vals) {
            if let Some(&local_v) = global_to_local.get(&global_v) {
                entries.push((local_u, local_v, w));
            }
        }
    }
    let sub = SparseGraph::from_entries(ids.len(), entries)?;
    Ok((sub, IndexMaps { local_to_global: ids.to_vec(), global_to_local }))
}

/// Component id per node, numbered by first appearance.
pub fn connected_components(g: &SparseGraph) -> Vec<usize> {
    let mut comp = vec![usize::MAX; g.n_nodes];
    let mut next = 0;
    let mut stack = Vec::new();
    for start in 0..g.n_nodes {
        if comp[start] != usize::MAX {
            continue;
        }
        comp[start] = next;
        stack.push(start);
        while let Some(u) = stack.pop() {
            for &v in g.neighbors(u).0 {
                if comp[v] == usize::MAX {
                    comp[v] = next;
                    stack.push(v);
                }
            }
        }
        next += 1;
    }
    comp
}

/// Reads an undirected edge list: one `u<TAB>v` pair per line, 0-based ids,
/// each edge listed once. Blank lines and `#` comments are skipped.
pub fn read_edge_list(path: &Path) -> Result<Vec<(usize, usize)>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split('\t');
        let parse = |tok: Option<&str>| -> Result<usize> {
            tok.and_then(|t| t.trim().parse().ok()).ok_or_else(|| {
                Error::Data(format!(
                    "{}:{}: expected \"u<TAB>v\", got {:?}",
                    path.display(),
                    lineno + 1,
                    line
                ))
            })
        };
        let u = parse(it.next())?;
        let v = parse(it.next())?;
        if it.next().is_some() {
            return Err(Error::Data(format!(
                "{}:{}: trailing fields in edge line",
                path.display(),
                lineno + 1
            )));
        }
        edges.push((u, v));
    }
    Ok(edges)
}

/// Writes the canonical edge list (i <= j, sorted) of `g`.
pub fn write_edge_list(path: &Path, g: &SparseGraph) -> Result<()> {
    let mut out = String::new();
    for (u, v) in g.canonical_edges() {
        out.push_str(&format!("{}\t{}\n", u, v));
    }
    fs::write(path, out)?;
    Ok(())
}
