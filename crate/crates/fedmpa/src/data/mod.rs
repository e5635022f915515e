//! Dataset loading, canonical on-disk layout, train/val/test splits, and a
//! stochastic block-model generator for synthetic benchmarks.
//!
//! A dataset directory holds four files:
//!
//! * `manifest.txt` with `name`, `n_nodes`, `n_features`, `n_classes`
//! * `edges.tsv` with one `u\tv` pair per line (undirected, no self-loops)
//! * `features.bin` with row-major little-endian f64 values
//! * `labels.tsv` with one `node\tclass` pair per node

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::graph::{read_edge_list, write_edge_list, SparseGraph};
use crate::nn::{rng, DenseMatrix};

#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: SparseGraph,
    pub features: DenseMatrix,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub name: String,
}

impl Dataset {
    pub fn n_nodes(&self) -> usize {
        self.graph.n_nodes()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn validate(&self) -> Result<()> {
        self.graph.validate()?;
        let n = self.graph.n_nodes();
        if self.features.rows() != n {
            return Err(Error::Shape(format!(
                "{} feature rows for {} nodes",
                self.features.rows(),
                n
            )));
        }
        if self.labels.len() != n {
            return Err(Error::Shape(format!("{} labels for {} nodes", self.labels.len(), n)));
        }
        if self.n_classes == 0 {
            return Err(Error::Data("a dataset needs at least one class".into()));
        }
        let mut seen = vec![false; self.n_classes];
        for (node, &label) in self.labels.iter().enumerate() {
            if label >= self.n_classes {
                return Err(Error::Data(format!(
                    "node {} has label {} but the dataset declares {} classes",
                    node, label, self.n_classes
                )));
            }
            seen[label] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Data(format!("class {} has no nodes", missing)));
        }
        for (i, j, _) in self.graph.entries() {
            if i == j {
                return Err(Error::Data(format!("self-loop on node {}", i)));
            }
        }
        self.features.check_finite("dataset features")?;
        Ok(())
    }
}

fn parse_manifest(path: &Path) -> Result<(String, usize, usize, usize)> {
    let text = fs::read_to_string(path)?;
    let mut fields: BTreeMap<String, String> = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Data(format!("manifest line {}: expected key=value, got {:?}", lineno + 1, raw))
        })?;
        if fields.insert(key.trim().to_string(), value.trim().to_string()).is_some() {
            return Err(Error::Data(format!("manifest repeats key {:?}", key.trim())));
        }
    }
    let take = |key: &str| -> Result<String> {
        fields
            .get(key)
            .cloned()
            .ok_or_else(|| Error::Data(format!("manifest is missing {:?}", key)))
    };
    let parse_count = |key: &str| -> Result<usize> {
        take(key)?
            .parse::<usize>()
            .map_err(|_| Error::Data(format!("manifest {:?} is not a count", key)))
    };
    let name = take("name")?;
    let n_nodes = parse_count("n_nodes")?;
    let n_features = parse_count("n_features")?;
    let n_classes = parse_count("n_classes")?;
    for key in fields.keys() {
        if !matches!(key.as_str(), "name" | "n_nodes" | "n_features" | "n_classes") {
            return Err(Error::Data(format!("manifest has unknown key {:?}", key)));
        }
    }
    Ok((name, n_nodes, n_features, n_classes))
}

fn require_file(dir: &Path, name: &str) -> Result<std::path::PathBuf> {
    let path = dir.join(name);
    if !path.is_file() {
        return Err(Error::MissingFile(path));
    }
    Ok(path)
}

fn read_features(path: &Path, n_nodes: usize, n_features: usize) -> Result<DenseMatrix> {
    let bytes = fs::read(path)?;
    let expected = n_nodes * n_features * 8;
    if bytes.len() != expected {
        return Err(Error::Data(format!(
            "features.bin holds {} bytes, expected {} ({} x {} f64)",
            bytes.len(),
            expected,
            n_nodes,
            n_features
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let m = DenseMatrix::from_vec(n_nodes, n_features, values)?;
    m.check_finite("features.bin")
        .map_err(|_| Error::Data("features.bin contains non-finite values".into()))?;
    Ok(m)
}

fn read_labels(path: &Path, n_nodes: usize, n_classes: usize) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path)?;
    let mut labels = vec![usize::MAX; n_nodes];
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split('\t');
        let parse = |field: Option<&str>| -> Result<usize> {
            field
                .and_then(|f| f.trim().parse::<usize>().ok())
                .ok_or_else(|| Error::Data(format!("labels.tsv line {}: bad entry {:?}", lineno + 1, raw)))
        };
        let node = parse(parts.next())?;
        let label = parse(parts.next())?;
        if parts.next().is_some() {
            return Err(Error::Data(format!("labels.tsv line {}: too many fields", lineno + 1)));
        }
        if node >= n_nodes {
            return Err(Error::Data(format!(
                "labels.tsv line {}: node {} out of range for {} nodes",
                lineno + 1,
                node,
                n_nodes
            )));
        }
        if label >= n_classes {
            return Err(Error::Data(format!(
                "labels.tsv line {}: label {} out of range for {} classes",
                lineno + 1,
                label,
                n_classes
            )));
        }
        if labels[node] != usize::MAX {
            return Err(Error::Data(format!("labels.tsv assigns node {} twice", node)));
        }
        labels[node] = label;
    }
    if let Some(node) = labels.iter().position(|&l| l == usize::MAX) {
        return Err(Error::Data(format!("labels.tsv never assigns node {}", node)));
    }
    Ok(labels)
}

/// Loads a dataset directory, validating shapes, label coverage, and graph
/// structure. Absent files are reported distinctly from malformed ones.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let (name, n_nodes, n_features, n_classes) = parse_manifest(&require_file(dir, "manifest.txt")?)?;
    let edges = read_edge_list(&require_file(dir, "edges.tsv")?)?;
    let graph = SparseGraph::from_edges(n_nodes, &edges)
        .map_err(|e| Error::Data(format!("edges.tsv: {}", e)))?;
    let features = read_features(&require_file(dir, "features.bin")?, n_nodes, n_features)?;
    let labels = read_labels(&require_file(dir, "labels.tsv")?, n_nodes, n_classes)?;
    let ds = Dataset { graph, features, labels, n_classes, name };
    ds.validate()?;
    Ok(ds)
}

/// Writes a dataset in the canonical layout. A round-trip through
/// `load_dataset` reproduces it exactly.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    ds.validate()?;
    fs::create_dir_all(dir)?;
    let manifest = format!(
        "name={}\nn_nodes={}\nn_features={}\nn_classes={}\n",
        ds.name,
        ds.n_nodes(),
        ds.n_features(),
        ds.n_classes
    );
    fs::write(dir.join("manifest.txt"), manifest)?;
    write_edge_list(&dir.join("edges.tsv"), &ds.graph)?;
    let mut bytes = Vec::with_capacity(ds.features.data().len() * 8);
    for v in ds.features.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(dir.join("features.bin"), bytes)?;
    let mut labels = String::new();
    for (node, label) in ds.labels.iter().enumerate() {
        labels.push_str(&format!("{}\t{}\n", node, label));
    }
    fs::write(dir.join("labels.tsv"), labels)?;
    Ok(())
}

/// Scales every feature row to unit L1 norm; zero rows stay zero.
pub fn normalize_rows_l1(features: &mut DenseMatrix) {
    for i in 0..features.rows() {
        let sum: f64 = features.row(i).iter().map(|v| v.abs()).sum();
        if sum > 0.0 {
            for v in features.row_mut(i) {
                *v /= sum;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
    /// When set, training nodes are drawn per class (each class keeps at
    /// least one training node).
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { train_frac: 0.01, val_frac: 0.2, test_frac: 0.2, seed: 0, stratified: true }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("train_frac", self.train_frac),
            ("val_frac", self.val_frac),
            ("test_frac", self.test_frac),
        ] {
            if !(f.is_finite() && (0.0..=1.0).contains(&f)) {
                return Err(Error::Domain(format!("{} = {} must lie in [0, 1]", name, f)));
            }
        }
        if self.train_frac + self.val_frac + self.test_frac > 1.0 + 1e-12 {
            return Err(Error::Domain("split fractions sum past 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

fn round_half_away(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Largest-remainder apportionment of `total` over `weights`, with every
/// positive-weight cell receiving at least one and no cell exceeding its
/// weight.
fn apportion(total: usize, weights: &[usize]) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    let mut quotas = vec![0usize; weights.len()];
    if sum == 0 || total == 0 {
        return quotas;
    }
    let mut remainders: Vec<(usize, f64)> = Vec::new();
    let mut assigned = 0usize;
    for (c, &w) in weights.iter().enumerate() {
        let exact = total as f64 * w as f64 / sum as f64;
        let base = (exact.floor() as usize).min(w);
        quotas[c] = base;
        assigned += base;
        remainders.push((c, exact - base as f64));
    }
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut left = total.saturating_sub(assigned);
    let mut i = 0;
    while left > 0 && i < remainders.len() {
        let c = remainders[i].0;
        if quotas[c] < weights[c] {
            quotas[c] += 1;
            left -= 1;
        }
        i += 1;
        if i == remainders.len() && left > 0 {
            i = 0;
        }
        if quotas.iter().zip(weights).all(|(q, w)| q >= w) {
            break;
        }
    }
    // Guarantee one node per non-empty class by borrowing from the largest
    // quota.
    loop {
        let Some(zero) = quotas
            .iter()
            .zip(weights)
            .position(|(&q, &w)| q == 0 && w > 0)
        else {
            break;
        };
        let donor = (0..quotas.len()).max_by_key(|&c| quotas[c]).unwrap();
        if quotas[donor] <= 1 {
            break;
        }
        quotas[donor] -= 1;
        quotas[zero] += 1;
    }
    quotas
}

/// Splits node ids into train/val/test by the given fractions. Counts use
/// round-half-away rounding; stratified mode requires the training budget to
/// cover every class. Results are sorted, disjoint, and deterministic for a
/// given seed.
pub fn make_splits(ds: &Dataset, spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    let n = ds.n_nodes();
    if n == 0 {
        return Err(Error::Domain("cannot split an empty dataset".into()));
    }
    let n_train = round_half_away(spec.train_frac * n as f64);
    let n_val = round_half_away(spec.val_frac * n as f64);
    let n_test = round_half_away(spec.test_frac * n as f64);
    if n_train + n_val + n_test > n {
        return Err(Error::Domain(format!(
            "rounded split sizes {}+{}+{} exceed {} nodes",
            n_train, n_val, n_test, n
        )));
    }

    let mut train: Vec<usize>;
    if spec.stratified {
        let ceil_train = (spec.train_frac * n as f64).ceil() as usize;
        if ceil_train < ds.n_classes {
            return Err(Error::Domain(format!(
                "stratified split needs a training budget of at least {} (one per class), got {}",
                ds.n_classes, ceil_train
            )));
        }
        let n_train = n_train.max(ds.n_classes);
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.n_classes];
        for (node, &label) in ds.labels.iter().enumerate() {
            by_class[label].push(node);
        }
        let counts: Vec<usize> = by_class.iter().map(|c| c.len()).collect();
        let quotas = apportion(n_train, &counts);
        train = Vec::with_capacity(n_train);
        for (c, members) in by_class.iter_mut().enumerate() {
            let mut r = rng::seeded(rng::derive_seed(spec.seed, 0x7374_7261 + c as u64));
            members.shuffle(&mut r);
            train.extend(members.iter().take(quotas[c]));
        }
    } else {
        let mut nodes: Vec<usize> = (0..n).collect();
        let mut r = rng::seeded(rng::derive_seed(spec.seed, 0x7472_6169));
        nodes.shuffle(&mut r);
        train = nodes.into_iter().take(n_train).collect();
    }

    let in_train: std::collections::BTreeSet<usize> = train.iter().copied().collect();
    let mut rest: Vec<usize> = (0..n).filter(|v| !in_train.contains(v)).collect();
    let mut r = rng::seeded(rng::derive_seed(spec.seed, 0x7265_7374));
    rest.shuffle(&mut r);
    let mut val: Vec<usize> = rest.iter().copied().take(n_val).collect();
    let mut test: Vec<usize> = rest.iter().copied().skip(n_val).take(n_test).collect();

    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(Splits { train, val, test })
}

fn gaussian(r: &mut rng::Rng) -> f64 {
    let u1: f64 = r.gen::<f64>().max(1e-300);
    let u2: f64 = r.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Generates a stochastic block model: contiguous label blocks, edges drawn
/// with probability `p_in` inside a block and `p_out` across blocks, and
/// features placed at well-separated class means plus Gaussian noise.
pub fn generate_sbm(
    n: usize,
    classes: usize,
    p_in: f64,
    p_out: f64,
    d0: usize,
    feature_noise: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes == 0 || n < classes {
        return Err(Error::Domain(format!("{} nodes cannot cover {} classes", n, classes)));
    }
    if d0 == 0 {
        return Err(Error::Domain("need at least one feature dimension".into()));
    }
    for (name, p) in [("p_in", p_in), ("p_out", p_out)] {
        if !(p.is_finite() && (0.0..=1.0).contains(&p)) {
            return Err(Error::Domain(format!("{} = {} must lie in [0, 1]", name, p)));
        }
    }
    if !(feature_noise.is_finite() && feature_noise >= 0.0) {
        return Err(Error::Domain(format!("feature_noise = {} must be >= 0", feature_noise)));
    }

    let base = n / classes;
    let extra = n % classes;
    let mut labels = Vec::with_capacity(n);
    for c in 0..classes {
        let size = base + usize::from(c < extra);
        labels.extend(std::iter::repeat(c).take(size));
    }

    let mut r = rng::seeded(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if labels[u] == labels[v] { p_in } else { p_out };
            if r.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let graph = SparseGraph::from_edges(n, &edges)?;

    let mut means = vec![vec![0.0f64; d0]; classes];
    for (c, mean) in means.iter_mut().enumerate() {
        mean[c % d0] = 3.0 * (1.0 + (c / d0) as f64);
    }
    let mut features = DenseMatrix::zeros(n, d0);
    for i in 0..n {
        for j in 0..d0 {
            let v = means[labels[i]][j] + feature_noise * gaussian(&mut r);
            features.set(i, j, v);
        }
    }

    let ds = Dataset {
        graph,
        features,
        labels,
        n_classes: classes,
        name: format!("sbm-n{}-c{}", n, classes),
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::connected_components;

    fn tiny_dataset() -> Dataset {
        let graph = SparseGraph::from_edges(6, &[(0, 1), (1, 2), (3, 4), (4, 5), (2, 3)]).unwrap();
        let features = DenseMatrix::from_fn(6, 3, |i, j| (i * 3 + j) as f64 * 0.25 - 1.0);
        Dataset {
            graph,
            features,
            labels: vec![0, 0, 0, 1, 1, 1],
            n_classes: 2,
            name: "tiny".into(),
        }
    }

    #[test]
    fn save_then_load_round_trips_exactly() {
        let ds = tiny_dataset();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.name, ds.name);
        assert_eq!(back.n_classes, ds.n_classes);
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.features.data(), ds.features.data());
        let a: Vec<_> = ds.graph.entries().collect();
        let b: Vec<_> = back.graph.entries().collect();
        assert_eq!(a, b);
    }

    #[test]
    fn loader_distinguishes_missing_from_malformed() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(&dir.path().join("nope")), Err(Error::MissingFile(_))));

        let ds = tiny_dataset();
        save_dataset(&ds, dir.path()).unwrap();
        fs::remove_file(dir.path().join("labels.tsv")).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::MissingFile(_))));

        fs::write(dir.path().join("labels.tsv"), "0\t0\n1\t0\n2\t0\n3\t1\n4\t1\n5\t9\n").unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Data(_))));

        fs::write(dir.path().join("labels.tsv"), "0\t0\n1\t0\n2\t0\n3\t1\n4\t1\n").unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Data(_))));

        fs::write(dir.path().join("labels.tsv"), "0\t0\n1\t0\n2\t0\n3\t1\n4\t1\n5\t1\n").unwrap();
        let mut bytes = fs::read(dir.path().join("features.bin")).unwrap();
        bytes.truncate(bytes.len() - 8);
        fs::write(dir.path().join("features.bin"), bytes).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Data(_))));
    }

    #[test]
    fn manifest_rejects_unknown_and_repeated_keys() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&tiny_dataset(), dir.path()).unwrap();
        fs::write(
            dir.path().join("manifest.txt"),
            "name=tiny\nn_nodes=6\nn_features=3\nn_classes=2\nbogus=1\n",
        )
        .unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Data(_))));
    }

    #[test]
    fn hundred_node_percent_splits_come_out_exact() {
        let ds = generate_sbm(100, 2, 0.1, 0.02, 4, 1.0, 3).unwrap();
        let spec = SplitSpec {
            train_frac: 0.01,
            val_frac: 0.2,
            test_frac: 0.2,
            seed: 5,
            stratified: false,
        };
        let splits = make_splits(&ds, &spec).unwrap();
        assert_eq!(splits.train.len(), 1);
        assert_eq!(splits.val.len(), 20);
        assert_eq!(splits.test.len(), 20);

        let mut all: Vec<usize> = splits
            .train
            .iter()
            .chain(&splits.val)
            .chain(&splits.test)
            .copied()
            .collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 41, "splits overlap");
    }

    #[test]
    fn stratified_split_covers_every_class_proportionally() {
        let ds = generate_sbm(90, 3, 0.1, 0.02, 4, 1.0, 9).unwrap();
        let spec = SplitSpec {
            train_frac: 0.1,
            val_frac: 0.2,
            test_frac: 0.2,
            seed: 11,
            stratified: true,
        };
        let splits = make_splits(&ds, &spec).unwrap();
        assert_eq!(splits.train.len(), 9);
        let mut per_class = vec![0usize; 3];
        for &node in &splits.train {
            per_class[ds.labels[node]] += 1;
        }
        for (c, &count) in per_class.iter().enumerate() {
            assert!(count >= 1, "class {} got no training nodes", c);
            assert!((count as i64 - 3).abs() <= 1, "class {} got {}", c, count);
        }
    }

    #[test]
    fn stratified_split_rejects_budgets_below_one_per_class() {
        let ds = generate_sbm(100, 3, 0.1, 0.02, 4, 1.0, 9).unwrap();
        let spec = SplitSpec {
            train_frac: 0.01,
            val_frac: 0.2,
            test_frac: 0.2,
            seed: 1,
            stratified: true,
        };
        assert!(matches!(make_splits(&ds, &spec), Err(Error::Domain(_))));
    }

    #[test]
    fn splits_are_deterministic_per_seed() {
        let ds = generate_sbm(60, 3, 0.15, 0.02, 4, 1.0, 42).unwrap();
        let spec = SplitSpec { train_frac: 0.1, val_frac: 0.2, test_frac: 0.2, seed: 8, stratified: true };
        assert_eq!(make_splits(&ds, &spec).unwrap(), make_splits(&ds, &spec).unwrap());
        let other = SplitSpec { seed: 9, ..spec };
        assert_ne!(make_splits(&ds, &spec).unwrap(), make_splits(&ds, &other).unwrap());
    }

    #[test]
    fn sbm_blocks_stay_pure_when_cross_probability_is_zero() {
        let ds = generate_sbm(90, 3, 0.2, 0.0, 4, 1.0, 17).unwrap();
        let comp = connected_components(&ds.graph);
        let n_comps = comp.iter().max().unwrap() + 1;
        let mut comp_class = vec![usize::MAX; n_comps];
        for (node, &c) in comp.iter().enumerate() {
            if comp_class[c] == usize::MAX {
                comp_class[c] = ds.labels[node];
            }
            assert_eq!(ds.labels[node], comp_class[c], "component {} mixes classes", c);
        }
    }

    #[test]
    fn sbm_edge_mix_tracks_the_probabilities() {
        let ds = generate_sbm(200, 2, 0.2, 0.02, 4, 1.0, 23).unwrap();
        let (mut intra, mut inter) = (0usize, 0usize);
        for (u, v) in ds.graph.canonical_edges() {
            if ds.labels[u] == ds.labels[v] {
                intra += 1;
            } else {
                inter += 1;
            }
        }
        // Expected: intra ~ 2 * C(100,2) * 0.2 = 1980, inter ~ 10000 * 0.02 = 200.
        assert!(intra > 5 * inter, "intra {} inter {}", intra, inter);
        assert!(inter > 0);
    }

    #[test]
    fn noiseless_features_sit_exactly_on_their_class_means() {
        let ds = generate_sbm(30, 3, 0.2, 0.05, 4, 0.0, 31).unwrap();
        for i in 0..30 {
            let c = ds.labels[i];
            for j in 0..4 {
                let expected = if j == c % 4 { 3.0 * (1.0 + (c / 4) as f64) } else { 0.0 };
                assert_eq!(ds.features.get(i, j), expected);
            }
        }
    }

    #[test]
    fn l1_normalization_leaves_unit_rows() {
        let mut m = DenseMatrix::from_fn(3, 3, |i, j| (i as f64 + 1.0) * (j as f64 - 1.0));
        normalize_rows_l1(&mut m);
        for i in 0..3 {
            let sum: f64 = m.row(i).iter().map(|v| v.abs()).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        let mut zero = DenseMatrix::zeros(2, 2);
        normalize_rows_l1(&mut zero);
        assert!(zero.data().iter().all(|&v| v == 0.0));
    }
}
