//! Experiment orchestration: configuration files, run directories, repeats,
//! sweeps, and report aggregation.
//!
//! Configuration files are INI-style: `[section]` headers followed by
//! `key=value` lines, `#` comments allowed. Every key has a default except
//! `model`; the effective configuration is echoed into each run directory
//! and re-parses to the same value.

mod run;

pub use run::{
    cmd_report, cmd_run, cmd_sweep, run_experiment, RepeatOutcome, RunArtifacts, RunReport,
    SWEEP_AXES,
};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::data::SplitSpec;
use crate::error::{Error, Result};
use crate::fed::{AggregationRule, FedAvgConfig, PayloadKind};
use crate::models::{DecoderInput, DiffusionConfig, MpaeConfig, ReconMode};
use crate::nn::TrainConfig;

/// Every trainable pipeline, in the order reports list them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ModelKind {
    FedMlp,
    LocMlp,
    LocMpa,
    FedMpa,
    LocMpae,
    FedMpae,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::FedMlp,
        ModelKind::LocMlp,
        ModelKind::LocMpa,
        ModelKind::FedMpa,
        ModelKind::LocMpae,
        ModelKind::FedMpae,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::FedMlp => "fedmlp",
            ModelKind::LocMlp => "loc-mlp",
            ModelKind::LocMpa => "loc-mpa",
            ModelKind::FedMpa => "fedmpa",
            ModelKind::LocMpae => "loc-mpae",
            ModelKind::FedMpae => "fedmpae",
        }
    }

    pub fn parse(s: &str) -> Option<ModelKind> {
        ModelKind::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn is_federated(&self) -> bool {
        matches!(self, ModelKind::FedMlp | ModelKind::FedMpa | ModelKind::FedMpae)
    }
}

/// Where the graph comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// A dataset directory in the canonical layout.
    Dir(PathBuf),
    /// A freshly generated stochastic block model (one graph per repeat).
    Sbm { n: usize, classes: usize, p_in: f64, p_out: f64, d0: usize, feature_noise: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub model: ModelKind,
    pub repeats: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataSource,
    pub normalize_features: bool,
    /// Fractions and stratification; the split seed is derived per repeat.
    pub split: SplitSpec,
    pub m_clients: usize,
    /// Repartition with the repeat seed instead of the base seed.
    pub partition_per_repeat: bool,
    /// Fixed node-to-client assignment file instead of the built-in
    /// partitioner.
    pub partition_file: Option<PathBuf>,
    pub fed: FedAvgConfig,
    pub train: TrainConfig,
    pub diffusion: DiffusionConfig,
    pub mpae: MpaeConfig,
}

impl ExperimentConfig {
    pub fn with_model(model: ModelKind) -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            model,
            repeats: 1,
            seed: 0,
            out_dir: PathBuf::from("runs").join(model.name()),
            data: DataSource::Sbm {
                n: 300,
                classes: 3,
                p_in: 0.1,
                p_out: 0.01,
                d0: 8,
                feature_noise: 1.0,
            },
            normalize_features: false,
            split: SplitSpec::default(),
            m_clients: 3,
            partition_per_repeat: false,
            partition_file: None,
            fed: FedAvgConfig::default(),
            train: TrainConfig::default(),
            diffusion: DiffusionConfig::default(),
            mpae: MpaeConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::Domain("repeats must be at least 1".into()));
        }
        if self.m_clients == 0 {
            return Err(Error::Domain("m_clients must be at least 1".into()));
        }
        self.split.validate()?;
        self.train.validate()?;
        self.diffusion.validate()?;
        self.mpae.validate()?;
        if let DataSource::Sbm { n, classes, p_in, p_out, d0, feature_noise } = &self.data {
            if *n == 0 || *classes == 0 || *d0 == 0 {
                return Err(Error::Domain("sbm sizes must be positive".into()));
            }
            for p in [p_in, p_out] {
                if !(p.is_finite() && (0.0..=1.0).contains(p)) {
                    return Err(Error::Domain(format!("sbm probability {} out of range", p)));
                }
            }
            if !(feature_noise.is_finite() && *feature_noise >= 0.0) {
                return Err(Error::Domain("sbm feature noise must be >= 0".into()));
            }
        }
        Ok(())
    }

    /// Canonical text form; parsing it yields back an equal config.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        s.push_str("[experiment]\n");
        s.push_str(&format!("name={}\n", self.name));
        s.push_str(&format!("model={}\n", self.model.name()));
        s.push_str(&format!("repeats={}\n", self.repeats));
        s.push_str(&format!("seed={}\n", self.seed));
        s.push_str(&format!("out_dir={}\n", self.out_dir.display()));
        s.push_str("\n[data]\n");
        match &self.data {
            DataSource::Dir(path) => {
                s.push_str("kind=dir\n");
                s.push_str(&format!("path={}\n", path.display()));
            }
            DataSource::Sbm { n, classes, p_in, p_out, d0, feature_noise } => {
                s.push_str("kind=sbm\n");
                s.push_str(&format!("n={}\n", n));
                s.push_str(&format!("classes={}\n", classes));
                s.push_str(&format!("p_in={}\n", p_in));
                s.push_str(&format!("p_out={}\n", p_out));
                s.push_str(&format!("d0={}\n", d0));
                s.push_str(&format!("feature_noise={}\n", feature_noise));
            }
        }
        s.push_str(&format!("normalize_features={}\n", self.normalize_features));
        s.push_str(&format!("label_rate={}\n", self.split.train_frac));
        s.push_str(&format!("val_frac={}\n", self.split.val_frac));
        s.push_str(&format!("test_frac={}\n", self.split.test_frac));
        s.push_str(&format!("stratified={}\n", self.split.stratified));
        s.push_str("\n[partition]\n");
        s.push_str(&format!("m_clients={}\n", self.m_clients));
        s.push_str(&format!("per_repeat={}\n", self.partition_per_repeat));
        if let Some(file) = &self.partition_file {
            s.push_str(&format!("file={}\n", file.display()));
        }
        s.push_str("\n[federation]\n");
        s.push_str(&format!("rounds={}\n", self.fed.rounds));
        s.push_str(&format!("local_epochs={}\n", self.fed.local_epochs));
        let rule = match self.fed.rule {
            AggregationRule::Uniform => "uniform",
            AggregationRule::SampleWeighted => "sample-weighted",
        };
        s.push_str(&format!("rule={}\n", rule));
        let payload = match self.fed.payload {
            PayloadKind::Weights => "weights",
            PayloadKind::Gradients => "gradients",
        };
        s.push_str(&format!("payload={}\n", payload));
        s.push_str(&format!("reset_moments={}\n", self.fed.reset_moments_on_broadcast));
        s.push_str("\n[train]\n");
        s.push_str(&format!("learning_rate={}\n", self.train.learning_rate));
        s.push_str(&format!("dropout={}\n", self.train.dropout_rate));
        s.push_str(&format!("hidden_dim={}\n", self.train.hidden_dim));
        s.push_str(&format!("n_hidden_layers={}\n", self.train.n_hidden_layers));
        s.push_str(&format!("head_epochs={}\n", self.train.head_epochs));
        s.push_str(&format!("patience={}\n", self.train.patience));
        s.push_str(&format!("head_dropout={}\n", self.train.head_dropout));
        s.push_str("\n[diffusion]\n");
        s.push_str(&format!("alpha={}\n", self.diffusion.alpha));
        s.push_str(&format!("k_steps={}\n", self.diffusion.k_steps));
        s.push_str("\n[recon]\n");
        s.push_str(&format!("beta={}\n", self.mpae.beta));
        s.push_str(&format!("gamma={}\n", self.mpae.gamma));
        s.push_str(&format!("a={}\n", self.mpae.a));
        s.push_str(&format!("b={}\n", self.mpae.b));
        let mode = match self.mpae.recon_mode {
            ReconMode::Simplified => "simplified",
            ReconMode::LearnableStructure => "learnable-structure",
        };
        s.push_str(&format!("mode={}\n", mode));
        let dec = match self.mpae.decoder_input {
            DecoderInput::PreSoftmax => "pre-softmax",
            DecoderInput::PostSoftmax => "post-softmax",
        };
        s.push_str(&format!("decoder_input={}\n", dec));
        s.push_str(&format!("node_budget={}\n", self.mpae.node_budget));
        s.push_str(&format!("max_dense_nodes={}\n", self.mpae.max_dense_nodes));
        s
    }
}

struct RawEntry {
    line: usize,
    value: String,
}

fn bad(line: usize, detail: impl Into<String>) -> Error {
    Error::Config { line, detail: detail.into() }
}

fn split_sections(text: &str) -> Result<BTreeMap<String, BTreeMap<String, RawEntry>>> {
    let mut sections: BTreeMap<String, BTreeMap<String, RawEntry>> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| bad(lineno, format!("unterminated section header {:?}", raw)))?
                .trim()
                .to_string();
            if !matches!(
                name.as_str(),
                "experiment" | "data" | "partition" | "federation" | "train" | "diffusion" | "recon"
            ) {
                return Err(bad(lineno, format!("unknown section [{}]", name)));
            }
            sections.entry(name.clone()).or_default();
            current = Some(name);
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(lineno, format!("expected key=value, got {:?}", raw)))?;
        let section = current
            .clone()
            .ok_or_else(|| bad(lineno, "key=value before any [section] header"))?;
        let entry = RawEntry { line: lineno, value: value.trim().to_string() };
        if sections
            .get_mut(&section)
            .unwrap()
            .insert(key.trim().to_string(), entry)
            .is_some()
        {
            return Err(bad(lineno, format!("duplicate key {:?} in [{}]", key.trim(), section)));
        }
    }
    Ok(sections)
}

struct SectionReader {
    name: String,
    entries: BTreeMap<String, RawEntry>,
}

impl SectionReader {
    fn take(&mut self, key: &str) -> Option<RawEntry> {
        self.entries.remove(key)
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, into: &mut T, what: &str) -> Result<()> {
        if let Some(entry) = self.take(key) {
            *into = entry
                .value
                .parse::<T>()
                .map_err(|_| bad(entry.line, format!("{} is not {}", key, what)))?;
        }
        Ok(())
    }

    fn parse_bool(&mut self, key: &str, into: &mut bool) -> Result<()> {
        if let Some(entry) = self.take(key) {
            *into = match entry.value.as_str() {
                "true" => true,
                "false" => false,
                other => return Err(bad(entry.line, format!("{} must be true or false, got {:?}", key, other))),
            };
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        if let Some((key, entry)) = self.entries.into_iter().next() {
            return Err(bad(entry.line, format!("unknown key {:?} in [{}]", key, self.name)));
        }
        Ok(())
    }
}

/// Parses a configuration text. Unknown sections, unknown keys, duplicate
/// keys, and malformed values are all reported with their line number.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut sections = split_sections(text)?;
    let mut reader = |name: &str| SectionReader {
        name: name.to_string(),
        entries: sections.remove(name).unwrap_or_default(),
    };

    let mut exp = reader("experiment");
    let model_entry = exp
        .take("model")
        .ok_or_else(|| bad(0, "[experiment] model was never set"))?;
    let model = ModelKind::parse(&model_entry.value).ok_or_else(|| {
        bad(
            model_entry.line,
            format!(
                "unknown model {:?}; expected one of {}",
                model_entry.value,
                ModelKind::ALL.map(|m| m.name()).join(", ")
            ),
        )
    })?;
    let mut cfg = ExperimentConfig::with_model(model);
    if let Some(entry) = exp.take("name") {
        cfg.name = entry.value;
    }
    exp.parse("repeats", &mut cfg.repeats, "a count")?;
    exp.parse("seed", &mut cfg.seed, "an unsigned integer")?;
    if let Some(entry) = exp.take("out_dir") {
        cfg.out_dir = PathBuf::from(entry.value);
    }
    exp.finish()?;

    let mut data = reader("data");
    let kind = data.take("kind");
    let kind_name = kind.as_ref().map(|e| e.value.clone()).unwrap_or_else(|| "sbm".into());
    match kind_name.as_str() {
        "dir" => {
            let path = data
                .take("path")
                .ok_or_else(|| bad(kind.map(|e| e.line).unwrap_or(0), "[data] kind=dir needs path="))?;
            cfg.data = DataSource::Dir(PathBuf::from(path.value));
        }
        "sbm" => {
            let DataSource::Sbm { mut n, mut classes, mut p_in, mut p_out, mut d0, mut feature_noise } =
                cfg.data.clone()
            else {
                unreachable!("default data source is sbm");
            };
            data.parse("n", &mut n, "a count")?;
            data.parse("classes", &mut classes, "a count")?;
            data.parse("p_in", &mut p_in, "a probability")?;
            data.parse("p_out", &mut p_out, "a probability")?;
            data.parse("d0", &mut d0, "a count")?;
            data.parse("feature_noise", &mut feature_noise, "a number")?;
            cfg.data = DataSource::Sbm { n, classes, p_in, p_out, d0, feature_noise };
        }
        other => {
            return Err(bad(
                kind.map(|e| e.line).unwrap_or(0),
                format!("unknown data kind {:?}; expected dir or sbm", other),
            ))
        }
    }
    data.parse_bool("normalize_features", &mut cfg.normalize_features)?;
    data.parse("label_rate", &mut cfg.split.train_frac, "a fraction")?;
    data.parse("val_frac", &mut cfg.split.val_frac, "a fraction")?;
    data.parse("test_frac", &mut cfg.split.test_frac, "a fraction")?;
    data.parse_bool("stratified", &mut cfg.split.stratified)?;
    data.finish()?;

    let mut part = reader("partition");
    part.parse("m_clients", &mut cfg.m_clients, "a count")?;
    part.parse_bool("per_repeat", &mut cfg.partition_per_repeat)?;
    if let Some(entry) = part.take("file") {
        cfg.partition_file = Some(PathBuf::from(entry.value));
    }
    part.finish()?;

    let mut fed = reader("federation");
    fed.parse("rounds", &mut cfg.fed.rounds, "a count")?;
    fed.parse("local_epochs", &mut cfg.fed.local_epochs, "a count")?;
    if let Some(entry) = fed.take("rule") {
        cfg.fed.rule = match entry.value.as_str() {
            "uniform" => AggregationRule::Uniform,
            "sample-weighted" => AggregationRule::SampleWeighted,
            other => return Err(bad(entry.line, format!("unknown rule {:?}", other))),
        };
    }
    if let Some(entry) = fed.take("payload") {
        cfg.fed.payload = match entry.value.as_str() {
            "weights" => PayloadKind::Weights,
            "gradients" => PayloadKind::Gradients,
            other => return Err(bad(entry.line, format!("unknown payload {:?}", other))),
        };
    }
    fed.parse_bool("reset_moments", &mut cfg.fed.reset_moments_on_broadcast)?;
    fed.finish()?;

    let mut train = reader("train");
    train.parse("learning_rate", &mut cfg.train.learning_rate, "a number")?;
    train.parse("dropout", &mut cfg.train.dropout_rate, "a rate")?;
    train.parse("hidden_dim", &mut cfg.train.hidden_dim, "a count")?;
    train.parse("n_hidden_layers", &mut cfg.train.n_hidden_layers, "a count")?;
    train.parse("head_epochs", &mut cfg.train.head_epochs, "a count")?;
    train.parse("patience", &mut cfg.train.patience, "a count")?;
    train.parse_bool("head_dropout", &mut cfg.train.head_dropout)?;
    train.finish()?;

    let mut diff = reader("diffusion");
    diff.parse("alpha", &mut cfg.diffusion.alpha, "a number in (0, 1]")?;
    diff.parse("k_steps", &mut cfg.diffusion.k_steps, "a count")?;
    diff.finish()?;

    let mut recon = reader("recon");
    recon.parse("beta", &mut cfg.mpae.beta, "a number")?;
    recon.parse("gamma", &mut cfg.mpae.gamma, "a number")?;
    recon.parse("a", &mut cfg.mpae.a, "a number")?;
    recon.parse("b", &mut cfg.mpae.b, "a number")?;
    if let Some(entry) = recon.take("mode") {
        cfg.mpae.recon_mode = match entry.value.as_str() {
            "simplified" => ReconMode::Simplified,
            "learnable-structure" => ReconMode::LearnableStructure,
            other => return Err(bad(entry.line, format!("unknown recon mode {:?}", other))),
        };
    }
    if let Some(entry) = recon.take("decoder_input") {
        cfg.mpae.decoder_input = match entry.value.as_str() {
            "pre-softmax" => DecoderInput::PreSoftmax,
            "post-softmax" => DecoderInput::PostSoftmax,
            other => return Err(bad(entry.line, format!("unknown decoder input {:?}", other))),
        };
    }
    recon.parse("node_budget", &mut cfg.mpae.node_budget, "a count")?;
    recon.parse("max_dense_nodes", &mut cfg.mpae.max_dense_nodes, "a count")?;
    recon.finish()?;

    for (name, entries) in sections {
        if let Some((key, entry)) = entries.into_iter().next() {
            return Err(bad(entry.line, format!("unknown key {:?} in [{}]", key, name)));
        }
    }

    cfg.train.seed = cfg.seed;
    cfg.split.seed = cfg.seed;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads and parses a configuration file.
pub fn parse_config_file(path: &Path) -> Result<ExperimentConfig> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    parse_config(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_echo_reparses_to_the_same_config() {
        let mut cfg = ExperimentConfig::with_model(ModelKind::FedMpae);
        cfg.name = "roundtrip".into();
        cfg.repeats = 4;
        cfg.seed = 99;
        cfg.split.seed = 99;
        cfg.train.seed = 99;
        cfg.mpae.recon_mode = ReconMode::LearnableStructure;
        cfg.mpae.gamma = 0.25;
        cfg.fed.rule = AggregationRule::SampleWeighted;
        cfg.split.train_frac = 0.05;
        cfg.partition_per_repeat = true;
        cfg.validate().unwrap();

        let back = parse_config(&cfg.echo()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn dir_data_source_round_trips() {
        let mut cfg = ExperimentConfig::with_model(ModelKind::LocMpa);
        cfg.data = DataSource::Dir(PathBuf::from("datasets/cora"));
        let back = parse_config(&cfg.echo()).unwrap();
        assert_eq!(back.data, cfg.data);
    }

    #[test]
    fn errors_carry_the_offending_line() {
        let text = "[experiment]\nmodel=fedmpa\n[data]\nkind=sbm\np_in=high\n";
        match parse_config(text) {
            Err(Error::Config { line, detail }) => {
                assert_eq!(line, 5);
                assert!(detail.contains("p_in"), "{}", detail);
            }
            other => panic!("expected a config error, got {:?}", other.map(|_| ())),
        }

        match parse_config("[experiment]\nmodel=fedmpa\nbogus=1\n") {
            Err(Error::Config { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected a config error, got {:?}", other.map(|_| ())),
        }

        match parse_config("[nope]\n") {
            Err(Error::Config { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected a config error, got {:?}", other.map(|_| ())),
        }

        match parse_config("[experiment]\nmodel=resnet\n") {
            Err(Error::Config { line, detail }) => {
                assert_eq!(line, 2);
                assert!(detail.contains("fedmpae"), "{}", detail);
            }
            other => panic!("expected a config error, got {:?}", other.map(|_| ())),
        }

        assert!(matches!(
            parse_config("[data]\nkind=sbm\n"),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        let text = "[experiment]\nmodel=fedmpa\nseed=1\nseed=2\n";
        assert!(matches!(parse_config(text), Err(Error::Config { line: 4, .. })));
    }

    #[test]
    fn model_order_matches_report_layout() {
        let names: Vec<&str> = ModelKind::ALL.iter().map(|m| m.name()).collect();
        assert_eq!(names, ["fedmlp", "loc-mlp", "loc-mpa", "fedmpa", "loc-mpae", "fedmpae"]);
        let mut sorted = ModelKind::ALL;
        sorted.sort();
        assert_eq!(sorted, ModelKind::ALL);
    }
}
