use std::path::PathBuf;

use clap::{Parser, Subcommand};

use fedmpa::data::load_dataset;
use fedmpa::graph::{count_dropped_edges, modularity, partition_louvain_balanced};
use fedmpa::harness::{cmd_report, cmd_run, cmd_sweep, SWEEP_AXES};
use fedmpa::models::gradcheck_suite;
use fedmpa::{Error, Result};

#[derive(Parser)]
#[command(
    name = "fedmpa",
    version,
    about = "Federated node classification on partitioned graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment described by a configuration file.
    Run {
        /// Configuration file ([section] key=value).
        #[arg(long)]
        config: PathBuf,
        /// Override the run directory from the configuration.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rerun an experiment along one hyperparameter axis.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Axis to vary: dropout, lr, hidden_dim, beta_gamma, label_rate,
        /// or m_clients.
        #[arg(long)]
        axis: String,
        /// Comma-separated values; beta_gamma takes beta:gamma pairs.
        #[arg(long)]
        values: String,
        /// Root for the sweep directories (defaults to the config out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge finished run directories into one comparison table.
    Report {
        /// Run directories holding report.txt and timing.txt.
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Where comparison.csv and timing.csv are written.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Partition a dataset's graph into balanced clients.
    Partition {
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Number of clients.
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output TSV (defaults to <data>/partition-m<m>.tsv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic gradients against central differences.
    Gradcheck {
        /// Probes per loss path.
        #[arg(long, default_value_t = 100)]
        probes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run { config, out } => {
            let report = cmd_run(&config, out.as_deref())?;
            println!(
                "{} on {} ({} repeats, {} clients)",
                report.config.model.name(),
                report.dataset_name,
                report.config.repeats,
                report.config.m_clients
            );
            println!(
                "test accuracy {:.4} ± {:.4}",
                report.mean_test_accuracy, report.std_test_accuracy
            );
            let skipped = report.skipped_clients_total();
            if skipped > 0 {
                println!("note: {} client runs had no labeled training nodes", skipped);
            }
            println!("artifacts in {}", report.config.out_dir.display());
        }
        Command::Sweep { config, axis, values, out } => {
            if !SWEEP_AXES.contains(&axis.as_str()) {
                return Err(Error::Usage(format!(
                    "unknown sweep axis {:?}; expected one of {}",
                    axis,
                    SWEEP_AXES.join(", ")
                )));
            }
            let values: Vec<String> =
                values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
            let csv = cmd_sweep(&config, &axis, &values, out.as_deref())?;
            println!("sweep summary written to {}", csv.display());
        }
        Command::Report { dirs, out } => {
            let table = cmd_report(&dirs, &out)?;
            print!("{}", table);
            println!("csv files written to {}", out.display());
        }
        Command::Partition { data, m, seed, out } => {
            let ds = load_dataset(&data)?;
            let part = partition_louvain_balanced(&ds.graph, m, seed)?;
            let dropped = count_dropped_edges(&ds.graph, &part.assignment);
            let q = modularity(&ds.graph, &part.assignment);
            let out = out.unwrap_or_else(|| data.join(format!("partition-m{}.tsv", m)));
            part.write_tsv(&out)?;
            println!("client sizes: {:?}", part.client_sizes());
            println!(
                "dropped cross-client edges: {} of {}",
                dropped,
                ds.graph.edge_count()
            );
            println!("modularity: {:.4}", q);
            println!("assignment written to {}", out.display());
        }
        Command::Gradcheck { probes, seed } => {
            let report = gradcheck_suite(probes, seed)?;
            for path in &report.paths {
                println!(
                    "{}: {} probes, {} failures, max rel err {:.3e} -> {}",
                    path.name,
                    path.probes,
                    path.failures,
                    path.max_rel_err,
                    if path.pass() { "ok" } else { "FAIL" }
                );
            }
            if !report.pass() {
                return Err(Error::Contract("analytic gradients disagree with finite differences".into()));
            }
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli.command) {
        eprintln!("error: {}", e);
        std::process::exit(e.exit_code());
    }
}
