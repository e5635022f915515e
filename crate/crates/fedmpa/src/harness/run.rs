//! Executes experiments described by an `ExperimentConfig`: repeats, model
//! pipelines, artifact directories, parameter sweeps, and cross-run reports.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::data::{generate_sbm, load_dataset, make_splits, normalize_rows_l1, SplitSpec};
use crate::error::{Error, Result};
use crate::fed::{run_fedavg, ClientState, RoundRecord};
use crate::graph::{partition_louvain_balanced, read_partition_tsv, Partition};
use crate::harness::{parse_config_file, DataSource, ExperimentConfig, ModelKind};
use crate::models::{head_eval, loc_variants, train_head, HeadModel, LocVariant};
use crate::nn::{masked_accuracy, mlp_eval, rng, save_checkpoint, MlpParams};

/// Axes `cmd_sweep` understands.
pub const SWEEP_AXES: [&str; 6] =
    ["dropout", "lr", "hidden_dim", "beta_gamma", "label_rate", "m_clients"];

#[derive(Debug, Clone)]
pub struct RepeatOutcome {
    pub repeat: usize,
    pub test_correct: usize,
    pub test_total: usize,
    pub test_accuracy: f64,
    pub best_val_accuracy: f64,
    pub online_ms: f64,
    pub offline_ms: f64,
    /// Clients that had no labeled training nodes and fell back to the
    /// shared (or initial) weights.
    pub skipped_clients: usize,
    pub fed_history: Vec<RoundRecord>,
}

/// Reproducible byproducts of the first repeat, written into the run
/// directory.
pub struct RunArtifacts {
    pub params: Option<MlpParams>,
    /// (client id, edge dump) per learnable structure.
    pub structures: Vec<(usize, String)>,
}

pub struct RunReport {
    pub config: ExperimentConfig,
    pub dataset_name: String,
    pub n_nodes: usize,
    pub n_classes: usize,
    pub repeats: Vec<RepeatOutcome>,
    pub mean_test_accuracy: f64,
    pub std_test_accuracy: f64,
    pub mean_best_val_accuracy: f64,
    pub online_ms: f64,
    pub offline_ms: f64,
}

impl RunReport {
    pub fn skipped_clients_total(&self) -> usize {
        self.repeats.iter().map(|r| r.skipped_clients).sum()
    }
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

struct RepeatRun {
    outcome: RepeatOutcome,
    dataset_name: String,
    n_nodes: usize,
    n_classes: usize,
    params: Option<MlpParams>,
    structures: Vec<(usize, String)>,
}

fn run_repeat(cfg: &ExperimentConfig, repeat: usize) -> Result<RepeatRun> {
    let seed = cfg.seed + repeat as u64;
    let started = Instant::now();

    let mut ds = match &cfg.data {
        DataSource::Dir(path) => load_dataset(path)?,
        DataSource::Sbm { n, classes, p_in, p_out, d0, feature_noise } => {
            generate_sbm(*n, *classes, *p_in, *p_out, *d0, *feature_noise, seed)?
        }
    };
    if cfg.normalize_features {
        normalize_rows_l1(&mut ds.features);
    }

    let splits = make_splits(&ds, &SplitSpec { seed, ..cfg.split })?;

    let partition = if let Some(file) = &cfg.partition_file {
        let assignment = read_partition_tsv(file, ds.n_nodes())?;
        Partition::from_assignment(&ds.graph, &assignment, cfg.m_clients)?
    } else {
        let pseed = if cfg.partition_per_repeat { seed } else { cfg.seed };
        partition_louvain_balanced(&ds.graph, cfg.m_clients, pseed)?
    };

    let mut tcfg = cfg.train.clone();
    tcfg.seed = seed;
    let dims = tcfg.layer_dims(ds.n_features(), ds.n_classes);
    let init = MlpParams::glorot(&dims, &mut rng::seeded(rng::derive_seed(seed, 0x696e_6974)))?;

    let mut clients = Vec::with_capacity(cfg.m_clients);
    for (c, sub) in partition.clients.iter().enumerate() {
        clients.push(ClientState::build(
            c,
            sub,
            &ds.features,
            &ds.labels,
            &splits.train,
            &splits.val,
            &splits.test,
            init.clone(),
            &tcfg,
            rng::derive_seed(seed, c as u64),
        )?);
    }

    let mut online_ms = 0.0;
    let mut test_correct = 0usize;
    let mut test_total = 0usize;
    let mut val_weighted = 0.0;
    let mut val_weight = 0.0;
    let mut skipped = 0usize;
    let mut fed_history = Vec::new();
    let mut params: Option<MlpParams> = None;
    let mut structures = Vec::new();

    match cfg.model {
        ModelKind::FedMlp => {
            let fed = run_fedavg(&mut clients, &cfg.fed, &tcfg)?;
            online_ms = fed.history.iter().map(|r| r.online_ms).sum();
            for client in &clients {
                if client.train_mask.is_empty() {
                    skipped += 1;
                }
                if client.test_mask.is_empty() {
                    continue;
                }
                let logits = mlp_eval(&fed.best_params, &client.features)?;
                let (c, t) = masked_accuracy(&logits, &client.labels, &client.test_mask);
                test_correct += c;
                test_total += t;
            }
            val_weighted = fed.best_val_accuracy;
            val_weight = 1.0;
            fed_history = fed.history;
            params = Some(fed.best_params);
        }
        ModelKind::FedMpa | ModelKind::FedMpae => {
            let fed = run_fedavg(&mut clients, &cfg.fed, &tcfg)?;
            online_ms = fed.history.iter().map(|r| r.online_ms).sum();
            fed_history = fed.history;
            let w0 = fed.final_params;
            let head_model = if cfg.model == ModelKind::FedMpa {
                HeadModel::Mpa(cfg.diffusion)
            } else {
                HeadModel::Mpae(cfg.diffusion, cfg.mpae)
            };
            for client in clients.iter_mut() {
                match train_head(client, w0.clone(), &head_model, &tcfg) {
                    Ok(result) => {
                        test_correct += result.test_correct;
                        test_total += result.test_total;
                        if !client.val_mask.is_empty() {
                            val_weighted +=
                                result.best_val_accuracy * client.val_mask.len() as f64;
                            val_weight += client.val_mask.len() as f64;
                        }
                        if let Some(st) = &result.structure {
                            structures.push((client.client_id, st.dump_tsv()));
                        }
                        if params.is_none() {
                            params = Some(result.best_params);
                        }
                    }
                    Err(Error::EmptyMask(_)) => {
                        skipped += 1;
                        if client.test_mask.is_empty() {
                            continue;
                        }
                        let logits = head_eval(
                            &HeadModel::Mpa(cfg.diffusion),
                            &client.features,
                            &client.norm_graph,
                            &w0,
                            None,
                        )?;
                        let (c, t) = masked_accuracy(&logits, &client.labels, &client.test_mask);
                        test_correct += c;
                        test_total += t;
                    }
                    Err(other) => return Err(other),
                }
            }
            if params.is_none() {
                params = Some(w0);
            }
        }
        ModelKind::LocMlp | ModelKind::LocMpa | ModelKind::LocMpae => {
            let variant = match cfg.model {
                ModelKind::LocMlp => LocVariant::Mlp,
                ModelKind::LocMpa => LocVariant::Mpa,
                _ => LocVariant::Mpae,
            };
            let pretrain_epochs = cfg.fed.rounds * cfg.fed.local_epochs;
            for client in clients.iter_mut() {
                match loc_variants(client, variant, pretrain_epochs, &cfg.diffusion, &cfg.mpae, &tcfg)
                {
                    Ok(result) => {
                        test_correct += result.test_correct;
                        test_total += result.test_total;
                        if !client.val_mask.is_empty() {
                            val_weighted +=
                                result.best_val_accuracy * client.val_mask.len() as f64;
                            val_weight += client.val_mask.len() as f64;
                        }
                        if let Some(st) = &result.structure {
                            structures.push((client.client_id, st.dump_tsv()));
                        }
                        if params.is_none() {
                            params = Some(result.best_params);
                        }
                    }
                    Err(Error::EmptyMask(_)) => {
                        skipped += 1;
                        if client.test_mask.is_empty() {
                            continue;
                        }
                        let eval_model = if variant == LocVariant::Mlp {
                            HeadModel::Mlp
                        } else {
                            HeadModel::Mpa(cfg.diffusion)
                        };
                        let logits = head_eval(
                            &eval_model,
                            &client.features,
                            &client.norm_graph,
                            &client.params,
                            None,
                        )?;
                        let (c, t) = masked_accuracy(&logits, &client.labels, &client.test_mask);
                        test_correct += c;
                        test_total += t;
                    }
                    Err(other) => return Err(other),
                }
            }
            if params.is_none() {
                params = Some(init);
            }
        }
    }

    let elapsed_ms = started.elapsed().as_secs_f64() * 1000.0;
    let outcome = RepeatOutcome {
        repeat,
        test_correct,
        test_total,
        test_accuracy: if test_total == 0 { 0.0 } else { test_correct as f64 / test_total as f64 },
        best_val_accuracy: if val_weight == 0.0 { 0.0 } else { val_weighted / val_weight },
        online_ms,
        offline_ms: (elapsed_ms - online_ms).max(0.0),
        skipped_clients: skipped,
        fed_history,
    };
    Ok(RepeatRun {
        outcome,
        dataset_name: ds.name,
        n_nodes: ds.graph.n_nodes(),
        n_classes: ds.n_classes,
        params,
        structures,
    })
}

/// Runs every repeat of an experiment and aggregates the outcomes. Artifacts
/// come from the first repeat.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(RunReport, RunArtifacts)> {
    cfg.validate()?;
    let mut repeats = Vec::with_capacity(cfg.repeats);
    let mut artifacts = RunArtifacts { params: None, structures: Vec::new() };
    let mut dataset_name = String::new();
    let mut n_nodes = 0;
    let mut n_classes = 0;

    for r in 0..cfg.repeats {
        let run = run_repeat(cfg, r).map_err(|e| Error::Repeat { index: r, source: Box::new(e) })?;
        if r == 0 {
            artifacts.params = run.params;
            artifacts.structures = run.structures;
            dataset_name = run.dataset_name;
            n_nodes = run.n_nodes;
            n_classes = run.n_classes;
        }
        repeats.push(run.outcome);
    }

    let accs: Vec<f64> = repeats.iter().map(|r| r.test_accuracy).collect();
    let (mean, std) = mean_and_std(&accs);
    let vals: Vec<f64> = repeats.iter().map(|r| r.best_val_accuracy).collect();
    let (mean_val, _) = mean_and_std(&vals);
    let report = RunReport {
        config: cfg.clone(),
        dataset_name,
        n_nodes,
        n_classes,
        online_ms: repeats.iter().map(|r| r.online_ms).sum(),
        offline_ms: repeats.iter().map(|r| r.offline_ms).sum(),
        mean_test_accuracy: mean,
        std_test_accuracy: std,
        mean_best_val_accuracy: mean_val,
        repeats,
    };
    Ok((report, artifacts))
}

fn report_text(report: &RunReport) -> String {
    let mut s = String::new();
    s.push_str(&format!("name={}\n", report.config.name));
    s.push_str(&format!("model={}\n", report.config.model.name()));
    s.push_str(&format!("dataset={}\n", report.dataset_name));
    s.push_str(&format!("n_nodes={}\n", report.n_nodes));
    s.push_str(&format!("n_classes={}\n", report.n_classes));
    s.push_str(&format!("m_clients={}\n", report.config.m_clients));
    s.push_str(&format!("repeats={}\n", report.config.repeats));
    s.push_str(&format!("label_rate={}\n", report.config.split.train_frac));
    s.push_str(&format!("mean_test_accuracy={}\n", report.mean_test_accuracy));
    s.push_str(&format!("std_test_accuracy={}\n", report.std_test_accuracy));
    s.push_str(&format!("mean_best_val_accuracy={}\n", report.mean_best_val_accuracy));
    s.push_str(&format!("skipped_clients_total={}\n", report.skipped_clients_total()));
    s
}

/// Online/offline totals and fractions. An all-offline run reports the pair
/// (0, 1) so the fractions always sum to one.
pub fn timing_fractions(online_ms: f64, offline_ms: f64) -> (f64, f64) {
    let total = online_ms + offline_ms;
    if total <= 0.0 {
        (0.0, 1.0)
    } else {
        (online_ms / total, 1.0 - online_ms / total)
    }
}

fn timing_text(report: &RunReport) -> String {
    let (online_frac, offline_frac) = timing_fractions(report.online_ms, report.offline_ms);
    format!(
        "online_ms={}\noffline_ms={}\nonline_fraction={}\noffline_fraction={}\n",
        report.online_ms, report.offline_ms, online_frac, offline_frac
    )
}

fn repeats_csv(report: &RunReport) -> String {
    let mut s =
        String::from("repeat,test_correct,test_total,test_accuracy,best_val_accuracy,skipped_clients\n");
    for r in &report.repeats {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.repeat, r.test_correct, r.test_total, r.test_accuracy, r.best_val_accuracy,
            r.skipped_clients
        ));
    }
    s
}

fn rounds_log(report: &RunReport) -> String {
    let mut s = String::new();
    for rep in &report.repeats {
        for round in &rep.fed_history {
            let mean_loss = if round.client_losses.is_empty() {
                0.0
            } else {
                round.client_losses.iter().sum::<f64>() / round.client_losses.len() as f64
            };
            s.push_str(&format!(
                "repeat={} round={} val_accuracy={} mean_loss={}\n",
                rep.repeat, round.round, round.val_accuracy, mean_loss
            ));
        }
    }
    s
}

/// Writes the artifact set for one finished run: the echoed configuration,
/// the stable report files, timing (kept separate so everything else is
/// byte-reproducible), per-round logs, a parameter checkpoint, and any
/// learned structures.
pub fn write_run_dir(report: &RunReport, artifacts: &RunArtifacts) -> Result<()> {
    let dir = &report.config.out_dir;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.txt"), report.config.echo())?;
    fs::write(dir.join("report.txt"), report_text(report))?;
    fs::write(dir.join("timing.txt"), timing_text(report))?;
    fs::write(dir.join("repeats.csv"), repeats_csv(report))?;
    if report.config.model.is_federated() {
        fs::write(dir.join("rounds.log"), rounds_log(report))?;
    }
    if let Some(params) = &artifacts.params {
        save_checkpoint(&dir.join("params.bin"), params)?;
    }
    for (client, dump) in &artifacts.structures {
        fs::write(dir.join(format!("structure-client-{}.tsv", client)), dump)?;
    }
    Ok(())
}

/// Loads a configuration, runs it, and writes the run directory.
pub fn cmd_run(config_path: &Path, out_override: Option<&Path>) -> Result<RunReport> {
    let mut cfg = parse_config_file(config_path)?;
    if let Some(out) = out_override {
        cfg.out_dir = out.to_path_buf();
    }
    let (report, artifacts) = run_experiment(&cfg)?;
    write_run_dir(&report, &artifacts)?;
    Ok(report)
}

fn apply_axis(cfg: &mut ExperimentConfig, axis: &str, value: &str) -> Result<()> {
    let parse_f64 = |v: &str| {
        v.parse::<f64>()
            .map_err(|_| Error::Usage(format!("sweep value {:?} is not a number", v)))
    };
    let parse_usize = |v: &str| {
        v.parse::<usize>()
            .map_err(|_| Error::Usage(format!("sweep value {:?} is not a count", v)))
    };
    match axis {
        "dropout" => cfg.train.dropout_rate = parse_f64(value)?,
        "lr" => cfg.train.learning_rate = parse_f64(value)?,
        "hidden_dim" => cfg.train.hidden_dim = parse_usize(value)?,
        "label_rate" => cfg.split.train_frac = parse_f64(value)?,
        "m_clients" => cfg.m_clients = parse_usize(value)?,
        "beta_gamma" => {
            let (b, g) = value.split_once(':').ok_or_else(|| {
                Error::Usage(format!("beta_gamma value {:?} must look like beta:gamma", value))
            })?;
            cfg.mpae.beta = parse_f64(b)?;
            cfg.mpae.gamma = parse_f64(g)?;
        }
        other => {
            return Err(Error::Usage(format!(
                "unknown sweep axis {:?}; expected one of {}",
                other,
                SWEEP_AXES.join(", ")
            )))
        }
    }
    Ok(())
}

/// Runs the base configuration once per value along one axis. Each value
/// gets its own run directory under `<out>/sweep-<axis>/`, and a `sweep.csv`
/// summarizing means and deviations is written alongside them.
pub fn cmd_sweep(
    config_path: &Path,
    axis: &str,
    values: &[String],
    out_override: Option<&Path>,
) -> Result<PathBuf> {
    if values.is_empty() {
        return Err(Error::Usage("sweep needs at least one value".into()));
    }
    let base = parse_config_file(config_path)?;
    let root = out_override
        .map(Path::to_path_buf)
        .unwrap_or_else(|| base.out_dir.clone())
        .join(format!("sweep-{}", axis));
    fs::create_dir_all(&root)?;

    let mut csv = String::from("axis,value,mean_test_accuracy,std_test_accuracy\n");
    for value in values {
        let mut cfg = base.clone();
        apply_axis(&mut cfg, axis, value)?;
        let slug: String = value
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
            .collect();
        cfg.name = format!("{}-{}-{}", base.name, axis, slug);
        cfg.out_dir = root.join(&slug);
        cfg.validate()?;
        let (report, artifacts) = run_experiment(&cfg)?;
        write_run_dir(&report, &artifacts)?;
        csv.push_str(&format!(
            "{},{},{},{}\n",
            axis, value, report.mean_test_accuracy, report.std_test_accuracy
        ));
    }
    let csv_path = root.join("sweep.csv");
    fs::write(&csv_path, csv)?;
    Ok(csv_path)
}

fn read_kv(path: &Path) -> Result<BTreeMap<String, String>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut map = BTreeMap::new();
    for line in fs::read_to_string(path)?.lines() {
        if let Some((k, v)) = line.split_once('=') {
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    Ok(map)
}

struct ReportRow {
    model: ModelKind,
    name: String,
    dataset: String,
    m_clients: String,
    repeats: String,
    label_rate: String,
    mean: f64,
    std: f64,
    online_ms: f64,
    offline_ms: f64,
}

fn load_report_row(dir: &Path) -> Result<ReportRow> {
    let report = read_kv(&dir.join("report.txt"))?;
    let timing = read_kv(&dir.join("timing.txt"))?;
    let get = |map: &BTreeMap<String, String>, key: &str| -> Result<String> {
        map.get(key)
            .cloned()
            .ok_or_else(|| Error::Data(format!("{} lacks {:?}", dir.display(), key)))
    };
    let model_name = get(&report, "model")?;
    let model = ModelKind::parse(&model_name)
        .ok_or_else(|| Error::Data(format!("{} names unknown model {:?}", dir.display(), model_name)))?;
    let parse_num = |s: String| -> Result<f64> {
        s.parse::<f64>().map_err(|_| Error::Data(format!("bad number {:?} in {}", s, dir.display())))
    };
    Ok(ReportRow {
        model,
        name: get(&report, "name")?,
        dataset: get(&report, "dataset")?,
        m_clients: get(&report, "m_clients")?,
        repeats: get(&report, "repeats")?,
        label_rate: get(&report, "label_rate")?,
        mean: parse_num(get(&report, "mean_test_accuracy")?)?,
        std: parse_num(get(&report, "std_test_accuracy")?)?,
        online_ms: parse_num(get(&timing, "online_ms")?)?,
        offline_ms: parse_num(get(&timing, "offline_ms")?)?,
    })
}

/// Collects finished run directories into one comparison: an aligned text
/// table (returned, in canonical model order), `comparison.csv`,
/// `timing.csv` with online/offline fractions, and a `labelrate.csv` pivot
/// when the runs span several label rates. Runs over different datasets or
/// client counts are flagged rather than silently mixed.
pub fn cmd_report(dirs: &[PathBuf], out: &Path) -> Result<String> {
    if dirs.is_empty() {
        return Err(Error::Usage("report needs at least one run directory".into()));
    }
    let mut rows = Vec::with_capacity(dirs.len());
    for dir in dirs {
        rows.push(load_report_row(dir)?);
    }
    rows.sort_by(|a, b| {
        a.model
            .cmp(&b.model)
            .then_with(|| a.label_rate.cmp(&b.label_rate))
            .then_with(|| a.name.cmp(&b.name))
    });

    let datasets: std::collections::BTreeSet<&str> =
        rows.iter().map(|r| r.dataset.as_str()).collect();
    let client_counts: std::collections::BTreeSet<&str> =
        rows.iter().map(|r| r.m_clients.as_str()).collect();
    let compatible = datasets.len() == 1 && client_counts.len() == 1;

    let mut table = String::new();
    if !compatible {
        table.push_str(&format!(
            "warning: runs are not directly comparable (datasets: {}; m_clients: {})\n",
            datasets.into_iter().collect::<Vec<_>>().join(", "),
            client_counts.into_iter().collect::<Vec<_>>().join(", ")
        ));
    }
    table.push_str(&format!(
        "{:<10} {:<18} {:>3} {:>7} {:>10} {:>19} {:>8}\n",
        "model", "dataset", "m", "repeats", "label_rate", "test_acc", "online%"
    ));
    let mut csv = String::from(
        "model,name,dataset,m_clients,repeats,label_rate,mean_test_accuracy,std_test_accuracy\n",
    );
    let mut timing_csv =
        String::from("model,name,online_ms,offline_ms,online_fraction,offline_fraction\n");
    for row in &rows {
        let (online_frac, offline_frac) = timing_fractions(row.online_ms, row.offline_ms);
        table.push_str(&format!(
            "{:<10} {:<18} {:>3} {:>7} {:>10} {:>12.4} ± {:.4} {:>7.1}\n",
            row.model.name(),
            row.dataset,
            row.m_clients,
            row.repeats,
            row.label_rate,
            row.mean,
            row.std,
            100.0 * online_frac
        ));
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.model.name(),
            row.name,
            row.dataset,
            row.m_clients,
            row.repeats,
            row.label_rate,
            row.mean,
            row.std
        ));
        timing_csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.model.name(),
            row.name,
            row.online_ms,
            row.offline_ms,
            online_frac,
            offline_frac
        ));
    }

    fs::create_dir_all(out)?;
    fs::write(out.join("comparison.csv"), &csv)?;
    fs::write(out.join("timing.csv"), &timing_csv)?;

    let rates: std::collections::BTreeSet<&str> =
        rows.iter().map(|r| r.label_rate.as_str()).collect();
    if rates.len() > 1 {
        let mut pivot = String::from("label_rate,model,mean_test_accuracy,std_test_accuracy\n");
        for row in &rows {
            pivot.push_str(&format!(
                "{},{},{},{}\n",
                row.label_rate,
                row.model.name(),
                row.mean,
                row.std
            ));
        }
        fs::write(out.join("labelrate.csv"), pivot)?;
    }

    Ok(table)
}
