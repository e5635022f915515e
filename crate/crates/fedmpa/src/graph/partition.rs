//! Splitting a graph across clients: community detection with a balance
//! constraint, plus bookkeeping for the edges lost at client boundaries.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::graph::{induce_subgraph, SparseGraph};
use crate::nn::rng;

/// One client's share of the global graph.
#[derive(Debug, Clone)]
pub struct ClientSubgraph {
    pub local_graph: SparseGraph,
    pub global_ids: Vec<usize>,
    pub global_to_local: BTreeMap<usize, usize>,
}

/// A complete assignment of nodes to clients together with the induced
/// per-client subgraphs.
#[derive(Debug, Clone)]
pub struct Partition {
    pub n_clients: usize,
    pub assignment: Vec<usize>,
    pub clients: Vec<ClientSubgraph>,
}

impl Partition {
    /// Builds the per-client subgraphs for an explicit assignment. Each
    /// client's nodes keep ascending global order.
    pub fn from_assignment(
        g: &SparseGraph,
        assignment: &[usize],
        n_clients: usize,
    ) -> Result<Self> {
        if assignment.len() != g.n_nodes() {
            return Err(Error::Shape(format!(
                "assignment covers {} nodes, graph has {}",
                assignment.len(),
                g.n_nodes()
            )));
        }
        if n_clients == 0 {
            return Err(Error::Domain("need at least one client".into()));
        }
        let mut ids_per_client = vec![Vec::new(); n_clients];
        for (node, &client) in assignment.iter().enumerate() {
            if client >= n_clients {
                return Err(Error::Domain(format!(
                    "node {} assigned to client {} of {}",
                    node, client, n_clients
                )));
            }
            ids_per_client[client].push(node);
        }
        let mut clients = Vec::with_capacity(n_clients);
        for global_ids in ids_per_client {
            let (local_graph, maps) = induce_subgraph(g, &global_ids)?;
            clients.push(ClientSubgraph {
                local_graph,
                global_ids,
                global_to_local: maps.global_to_local,
            });
        }
        Ok(Partition { n_clients, assignment: assignment.to_vec(), clients })
    }

    pub fn client_sizes(&self) -> Vec<usize> {
        self.clients.iter().map(|c| c.global_ids.len()).collect()
    }

    /// Serializes as `node<TAB>client` lines in node order.
    pub fn dump_tsv(&self) -> String {
        let mut out = String::new();
        for (node, &client) in self.assignment.iter().enumerate() {
            out.push_str(&format!("{}\t{}\n", node, client));
        }
        out
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.dump_tsv())?;
        Ok(())
    }
}

/// Undirected edges whose endpoints land on different clients.
pub fn count_dropped_edges(g: &SparseGraph, assignment: &[usize]) -> usize {
    g.entries()
        .filter(|&(u, v, _)| u < v && assignment[u] != assignment[v])
        .count()
}

/// Newman modularity of an assignment, with edge weights.
pub fn modularity(g: &SparseGraph, assignment: &[usize]) -> f64 {
    let two_m: f64 = (0..g.n_nodes()).map(|i| g.weighted_degree(i)).sum();
    if two_m == 0.0 {
        return 0.0;
    }
    let mut q = 0.0;
    for (i, j, w) in g.entries() {
        if assignment[i] == assignment[j] {
            q += w;
        }
    }
    let n_comms = assignment.iter().copied().max().map_or(0, |m| m + 1);
    let mut comm_deg = vec![0.0; n_comms];
    for i in 0..g.n_nodes() {
        comm_deg[assignment[i]] += g.weighted_degree(i);
    }
    q / two_m - comm_deg.iter().map(|d| (d / two_m).powi(2)).sum::<f64>()
}

/// Partitions the graph into `n_clients` near-equal parts: a seeded
/// local-moving community detection pass groups densely connected nodes,
/// communities are packed largest-first onto the emptiest client, and a final
/// rebalance moves low-degree boundary nodes until sizes differ by at most
/// one (exactly equal when `n_clients` divides the node count). All ties
/// break on the lowest id, so a fixed seed reproduces the same partition.
pub fn partition_louvain_balanced(
    g: &SparseGraph,
    n_clients: usize,
    seed: u64,
) -> Result<Partition> {
    g.validate()?;
    let n = g.n_nodes();
    if n_clients == 0 {
        return Err(Error::Domain("need at least one client".into()));
    }
    if n_clients > n {
        return Err(Error::Domain(format!(
            "cannot split {} nodes across {} clients",
            n, n_clients
        )));
    }
    if n_clients == 1 {
        return Partition::from_assignment(g, &vec![0; n], 1);
    }

    let comm = local_moving_communities(g, seed);
    let mut assignment = pack_communities(&comm, n_clients);
    rebalance(g, &mut assignment, n_clients);
    Partition::from_assignment(g, &assignment, n_clients)
}

/// One-level local-moving modularity optimization. Returns a community id
/// per node, relabeled by first appearance.
fn local_moving_communities(g: &SparseGraph, seed: u64) -> Vec<usize> {
    let n = g.n_nodes();
    let k: Vec<f64> = (0..n).map(|i| g.weighted_degree(i)).collect();
    let two_m: f64 = k.iter().sum();
    let mut comm: Vec<usize> = (0..n).collect();
    let mut comm_tot = k.clone();

    let mut order: Vec<usize> = (0..n).collect();
    let mut r = rng::seeded(rng::derive_seed(seed, 0x7061_7274));
    order.shuffle(&mut r);

    if two_m > 0.0 {
        let mut weight_to: BTreeMap<usize, f64> = BTreeMap::new();
        loop {
            let mut moved = false;
            for &u in &order {
                let own = comm[u];
                comm_tot[own] -= k[u];
                weight_to.clear();
                weight_to.insert(own, 0.0);
                let (cols, vals) = g.neighbors(u);
                for (&v, &w) in cols.iter().zip(vals) {
                    if v != u {
                        *weight_to.entry(comm[v]).or_insert(0.0) += w;
                    }
                }
                let mut best = own;
                let mut best_gain = f64::NEG_INFINITY;
                for (&c, &w_uc) in &weight_to {
                    let gain = w_uc - k[u] * comm_tot[c] / two_m;
                    if gain > best_gain || (gain == best_gain && c < best) {
                        best_gain = gain;
                        best = c;
                    }
                }
                comm[u] = best;
                comm_tot[best] += k[u];
                if best != own {
                    moved = true;
                }
            }
            if !moved {
                break;
            }
        }
    }

    let mut relabel: BTreeMap<usize, usize> = BTreeMap::new();
    comm.iter()
        .map(|&c| {
            let next = relabel.len();
            *relabel.entry(c).or_insert(next)
        })
        .collect()
}

/// Assigns whole communities to clients, largest community first, always onto
/// the currently smallest client.
fn pack_communities(comm: &[usize], n_clients: usize) -> Vec<usize> {
    let n_comms = comm.iter().copied().max().map_or(0, |m| m + 1);
    let mut members = vec![Vec::new(); n_comms];
    for (node, &c) in comm.iter().enumerate() {
        members[c].push(node);
    }
    let mut order: Vec<usize> = (0..n_comms).collect();
    order.sort_by_key(|&c| (std::cmp::Reverse(members[c].len()), members[c][0]));

    let mut assignment = vec![0usize; comm.len()];
    let mut sizes = vec![0usize; n_clients];
    for c in order {
        let target = (0..n_clients).min_by_key(|&cl| (sizes[cl], cl)).unwrap();
        for &node in &members[c] {
            assignment[node] = target;
        }
        sizes[target] += members[c].len();
    }
    assignment
}

/// Moves nodes from the largest client to the smallest until sizes differ by
/// at most the remainder bound. Candidates prefer nodes adjacent to the
/// destination, then boundary nodes, then anything, lowest degree first.
fn rebalance(g: &SparseGraph, assignment: &mut [usize], n_clients: usize) {
    let n = assignment.len();
    let allowed = if n % n_clients == 0 { 0 } else { 1 };
    loop {
        let mut sizes = vec![0usize; n_clients];
        for &c in assignment.iter() {
            sizes[c] += 1;
        }
        let src = (0..n_clients).max_by_key(|&c| (sizes[c], std::cmp::Reverse(c))).unwrap();
        let dst = (0..n_clients).min_by_key(|&c| (sizes[c], c)).unwrap();
        if sizes[src] - sizes[dst] <= allowed {
            break;
        }

        // Rank: adjacency to dst beats boundary beats interior, then degree,
        // then id.
        let mut best: Option<(u8, usize, usize)> = None;
        for u in 0..n {
            if assignment[u] != src {
                continue;
            }
            let mut touches_dst = false;
            let mut touches_out = false;
            for &v in g.neighbors(u).0 {
                if assignment[v] == dst {
                    touches_dst = true;
                }
                if assignment[v] != src {
                    touches_out = true;
                }
            }
            let class = if touches_dst {
                0
            } else if touches_out {
                1
            } else {
                2
            };
            let key = (class, g.degree(u), u);
            if best.map_or(true, |b| key < b) {
                best = Some(key);
            }
        }
        let (_, _, node) = best.expect("non-empty source client");
        assignment[node] = dst;
    }
}

/// Reads a `node<TAB>client` dump, requiring every node exactly once.
pub fn read_partition_tsv(path: &Path, n_nodes: usize) -> Result<Vec<usize>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    let mut assignment = vec![usize::MAX; n_nodes];
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split('\t');
        let bad = || {
            Error::Data(format!(
                "{}:{}: expected \"node<TAB>client\"",
                path.display(),
                lineno + 1
            ))
        };
        let node: usize = it.next().and_then(|t| t.trim().parse().ok()).ok_or_else(bad)?;
        let client: usize = it.next().and_then(|t| t.trim().parse().ok()).ok_or_else(bad)?;
        if node >= n_nodes || it.next().is_some() {
            return Err(bad());
        }
        if assignment[node] != usize::MAX {
            return Err(Error::Data(format!(
                "{}:{}: node {} assigned twice",
                path.display(),
                lineno + 1,
                node
            )));
        }
        assignment[node] = client;
    }
    if let Some(node) = assignment.iter().position(|&c| c == usize::MAX) {
        return Err(Error::Data(format!(
            "{}: node {} missing from partition",
            path.display(),
            node
        )));
    }
    Ok(assignment)
}
