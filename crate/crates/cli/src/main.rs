use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use btsred::bench::{make_synthetic_problem, run_experiment, write_results, BenchConfig, ProblemSpec};
use btsred::ExperimentConfig;
use btsred_service::summary::{proposal_view, summarize};
use btsred_service::{ObserveRequest, Store};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "btsred",
    version,
    about = "Batch Thompson sampling with adaptive replication"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Benchmark runs on synthetic or tabulated problems.
    Bench {
        #[command(subcommand)]
        command: BenchCommand,
    },
    /// Serve the session API over HTTP.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Directory holding session event logs and snapshots.
        #[arg(long)]
        data: PathBuf,
    },
    /// Work with sessions stored in a data directory directly.
    Session {
        #[arg(long, global = true, default_value = "sessions")]
        data: PathBuf,
        #[command(subcommand)]
        command: SessionCommand,
    },
    /// Synthetic test problems.
    Problem {
        #[command(subcommand)]
        command: ProblemCommand,
    },
}

#[derive(Subcommand)]
enum BenchCommand {
    Run {
        /// Benchmark file (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated seeds; replaces the file's seed list.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum SessionCommand {
    /// Create a session from an experiment configuration file.
    Create {
        #[arg(long)]
        config: PathBuf,
    },
    /// Propose the next batch.
    Suggest {
        #[arg(long)]
        id: String,
    },
    /// Report replicate outcomes for the outstanding batch.
    Observe {
        #[arg(long)]
        id: String,
        /// JSON with `outcomes` (one list per slot) and an optional `idempotency_key`.
        #[arg(long)]
        file: PathBuf,
    },
    /// Print the session summary.
    Show {
        #[arg(long)]
        id: String,
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// List session ids.
    List,
}

#[derive(Subcommand)]
enum ProblemCommand {
    /// Print a generated problem as JSON.
    Gen {
        #[arg(long)]
        seed: u64,
        /// Problem description (JSON); the standard 1-D problem by default.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn bench_run(config: &Path, seeds: Option<Vec<u64>>, out: &Path) -> Result<()> {
    let mut bench: BenchConfig = read_json(config)?;
    if let Some(seeds) = seeds {
        bench.seeds = seeds;
    }
    if bench.seeds.is_empty() {
        bail!("no seeds given; pass --seeds or list them in the config");
    }
    let results = run_experiment(&bench)?;
    let summary = write_results(&results, out)?;
    for run in &summary.runs {
        println!(
            "{} seed {}: simple regret {:.6}, cumulative regret {:.4}",
            run.label, run.seed, run.final_simple_regret, run.final_cumulative_regret
        );
    }
    println!("determinism hash {}", summary.determinism_hash);
    Ok(())
}

fn session(data: &Path, command: SessionCommand) -> Result<()> {
    let store = Store::open(data)?;
    match command {
        SessionCommand::Create { config } => {
            let config: ExperimentConfig = read_json(&config)?;
            let session = store.create(config)?;
            println!("{}", session.id());
        }
        SessionCommand::Suggest { id } => {
            let session = store.suggest(&id)?;
            let proposal = session.outstanding().context("no outstanding proposal")?;
            print_json(&proposal_view(&session, proposal))?;
        }
        SessionCommand::Observe { id, file } => {
            let request: ObserveRequest = read_json(&file)?;
            let observed = store.observe(&id, request)?;
            if !observed.applied {
                eprintln!("idempotency key already applied; nothing changed");
            }
            print_json(&summarize(&observed.session, None)?)?;
        }
        SessionCommand::Show { id, resolution } => {
            print_json(&summarize(&*store.get(&id)?, resolution)?)?;
        }
        SessionCommand::List => {
            for id in store.ids() {
                println!("{id}");
            }
        }
    }
    Ok(())
}

fn problem_gen(seed: u64, spec: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let spec = match spec {
        Some(path) => ProblemSpec {
            seed,
            ..read_json(&path)?
        },
        None => ProblemSpec::standard_1d(seed),
    };
    let problem = make_synthetic_problem(&spec)?;
    let text = serde_json::to_string(&problem)?;
    match out {
        Some(path) => std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Bench {
            command: BenchCommand::Run { config, seeds, out },
        } => bench_run(&config, seeds, &out),
        Command::Serve { port, host, data } => {
            let addr: SocketAddr = format!("{host}:{port}").parse().context("invalid host or port")?;
            let store = Arc::new(Store::open(&data)?);
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async move {
                let server = btsred_service::serve(store.clone(), addr);
                tokio::select! {
                    r = server => r?,
                    _ = tokio::signal::ctrl_c() => {}
                }
                store.checkpoint()?;
                Ok(())
            })
        }
        Command::Session { data, command } => session(&data, command),
        Command::Problem {
            command: ProblemCommand::Gen { seed, spec, out },
        } => problem_gen(seed, spec, out),
    }
}
