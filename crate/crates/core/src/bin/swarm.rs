use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use swarmlearn::data::{load_csv, partition, synth_dataset, write_csv, PartitionPlan};
use swarmlearn::harness::{
    compare_report, read_results, render_csv, render_text, run_daemon, run_scenario, Arms,
    DaemonConfig, DatasetSpec, HarnessError, NodeTemplate, ScenarioSpec, SwarmTransport,
    SCHEMA_VERSION,
};
use swarmlearn::net::{SimNetConfig, StaticKeypair};
use swarmlearn::trainer::TrainConfig;

/// Peer-to-peer swarm learning: data tools, nodes, simulations, reports.
#[derive(Parser)]
#[command(name = "swarm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic two-class Gaussian dataset as CSV.
    Synth {
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 0.45)]
        class_sep: f64,
        #[arg(long, default_value_t = 0.5)]
        positive_frac: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a CSV dataset into per-node train/validation CSVs.
    Partition {
        #[arg(long)]
        input: PathBuf,
        /// Comma-separated fractions, one per node.
        #[arg(long, value_delimiter = ',', required = true)]
        fractions: Vec<f64>,
        /// Comma-separated positive rates, one per node.
        #[arg(long, value_delimiter = ',')]
        class_bias: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0.125)]
        val_frac: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one node over TCP from a JSON config file.
    RunNode {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run an N-node simulated swarm with equal shards.
    RunSim {
        #[arg(long, default_value_t = 4)]
        nodes: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        drop_prob: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Execute a scenario file; writes one result file per seed.
    Scenario {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Run the swarm arm over localhost TCP instead of the simulator.
        #[arg(long)]
        real: bool,
    },
    /// Summarize stored results.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Generate a static keypair for encrypted transport.
    Keygen {
        #[arg(long)]
        out: PathBuf,
    },
}

fn write_json(
    path: &Path,
    value: &impl serde::Serialize,
) -> Result<(), Box<dyn std::error::Error>> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn run_sim_spec(nodes: usize, seed: u64, drop_prob: f64) -> ScenarioSpec {
    ScenarioSpec {
        version: SCHEMA_VERSION,
        name: format!("sim_{nodes}nodes"),
        dataset: DatasetSpec {
            samples: 10_000,
            dim: 16,
            class_sep: 0.45,
            positive_frac: 0.5,
            train_frac: 0.7,
            val_frac: 0.1,
        },
        fractions: vec![1.0 / nodes as f64; nodes],
        class_bias: None,
        downsample: Default::default(),
        seeds: vec![seed],
        node: NodeTemplate {
            hidden_dim: 16,
            train: TrainConfig::default(),
            exchange_interval: 3,
            max_epochs: 20,
            gate: Default::default(),
            scheme: swarmlearn::aggregation::MergeScheme::Fedavg,
            collect_window_ms: 1_000,
            ack_timeout_ms: 500,
            node_val_frac: 0.125,
        },
        network: SimNetConfig {
            drop_prob,
            ..SimNetConfig::default()
        },
        arms: Arms {
            centralized: false,
            standalone: false,
            swarm: true,
        },
        behaviors: Default::default(),
    }
}

fn execute(cmd: Command) -> Result<(), Box<dyn std::error::Error>> {
    match cmd {
        Command::Synth {
            samples,
            dim,
            class_sep,
            positive_frac,
            seed,
            out,
        } => {
            let ds = synth_dataset(samples, dim, class_sep, positive_frac, seed)?;
            write_csv(&ds, &out)?;
            println!("wrote {} rows to {}", ds.len(), out.display());
        }
        Command::Partition {
            input,
            fractions,
            class_bias,
            val_frac,
            seed,
            out,
        } => {
            let ds = load_csv(&input)?;
            let plan = PartitionPlan {
                fractions,
                class_bias,
                val_frac,
                seed,
            };
            std::fs::create_dir_all(&out)?;
            for shard in partition(&ds, &plan)? {
                let id = shard.node_id;
                write_csv(&shard.train, out.join(format!("node{id}_train.csv")))?;
                write_csv(&shard.validation, out.join(format!("node{id}_val.csv")))?;
                println!(
                    "node {id}: {} train, {} validation rows",
                    shard.train.len(),
                    shard.validation.len()
                );
            }
        }
        Command::RunNode { config } => {
            let cfg = DaemonConfig::load(&config)?;
            let out = run_daemon(&cfg)?;
            println!(
                "node {} stopped ({:?}) after {} rounds",
                out.node_id,
                out.stop,
                out.rounds.len()
            );
        }
        Command::RunSim {
            nodes,
            seed,
            drop_prob,
            out,
        } => {
            if nodes == 0 {
                return Err(Box::new(HarnessError::InvalidSpec(
                    "--nodes must be at least 1".into(),
                )));
            }
            let spec = run_sim_spec(nodes, seed, drop_prob);
            for r in run_scenario(&spec, Some(&out), SwarmTransport::Sim)? {
                println!("wrote {}", out.join(r.file_name()).display());
            }
        }
        Command::Scenario { spec, out, real } => {
            let spec = ScenarioSpec::load(&spec)?;
            let transport = if real {
                SwarmTransport::Tcp
            } else {
                SwarmTransport::Sim
            };
            let results = run_scenario(&spec, Some(&out), transport)?;
            print!("{}", render_text(&compare_report(&results)?));
        }
        Command::Report { input, format } => {
            let results = read_results(&input)?;
            match format {
                Format::Text => print!("{}", render_text(&compare_report(&results)?)),
                Format::Csv => {
                    if results.is_empty() {
                        return Err(Box::new(HarnessError::NoResults));
                    }
                    print!("{}", render_csv(&results));
                }
            }
        }
        Command::Keygen { out } => {
            let kp = StaticKeypair::generate();
            write_json(&out, &kp)?;
            println!("public key {}", hex::encode(kp.public));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SWARM_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
