use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use quietlink::sim::{
    compare_runs, evaluate_samples, export_heatmap, load_trace, replay_summary, run, write_run, OperatorMode,
    RunArtifacts, SimConfig,
};
use quietlink::telemetry::{ingest_log_csv, ChannelSchema};
use quietlink_gateway::{serve, Gateway};

#[derive(Parser)]
#[command(name = "quietlink", version, about = "Acoustic-link AUV telemetry simulator")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a simulation from a JSON config.
    Run(RunArgs),
    /// Summarize a recorded trace and check it against the phase graph.
    Replay {
        #[arg(long)]
        trace: PathBuf,
    },
    /// Evaluate compression on a logged CSV series.
    Ingest {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Compare two run directories.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Export a gridded CSV of one sampled channel.
    Heatmap {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        cell: f64,
        #[arg(long, default_value = "temperature")]
        channel: String,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, conflicts_with = "gateway")]
    headless: bool,
    #[arg(long)]
    gateway: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Listen address in gateway mode.
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
}

fn load_config(path: &Path) -> Result<SimConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    SimConfig::from_json(&text).with_context(|| format!("invalid config {}", path.display()))
}

fn run_cmd(args: RunArgs) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.headless {
        cfg.operator = OperatorMode::Headless;
    } else if args.gateway {
        cfg.operator = OperatorMode::Gateway;
    }
    let metrics = match cfg.operator {
        OperatorMode::Headless => run(cfg, args.out.as_deref())?.metrics,
        OperatorMode::Gateway => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(args.bind)
                    .await
                    .with_context(|| format!("binding {}", args.bind))?;
                let (gw, handle) = Gateway::start(cfg, None)?;
                eprintln!("gateway listening on http://{}", listener.local_addr()?);
                tokio::spawn(serve(listener, gw));
                let result = tokio::task::spawn_blocking(move || handle.join())
                    .await?
                    .map_err(|_| anyhow::anyhow!("engine thread panicked"))?;
                if let Some(dir) = &args.out {
                    write_run(dir, &result.trace, &result.metrics)?;
                }
                Ok::<_, anyhow::Error>(result.metrics)
            })?
        }
    };
    println!("{}", metrics.to_json());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Cmd::Run(args) => run_cmd(args)?,
        Cmd::Replay { trace } => {
            let trace = load_trace(&trace).map_err(anyhow::Error::msg)?;
            let summary = replay_summary(&trace);
            println!("{}", serde_json::to_string_pretty(&summary)?);
            if summary.conformance_error.is_some() {
                bail!("trace does not conform to the phase graph");
            }
        }
        Cmd::Ingest { csv, config } => {
            let cfg = load_config(&config)?;
            let reg = cfg.registry();
            let samples = ingest_log_csv(&csv, &ChannelSchema::from_registry(&reg))?;
            let report = evaluate_samples(&samples, &reg, &cfg).map_err(anyhow::Error::msg)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Cmd::Compare { a, b } => {
            let c = compare_runs(&RunArtifacts::load(&a)?, &RunArtifacts::load(&b)?)?;
            print!("{}", c.to_table());
        }
        Cmd::Heatmap { trace, cell, channel } => {
            if !(cell.is_finite() && cell > 0.0) {
                bail!("--cell must be a positive number of meters");
            }
            let trace = load_trace(&trace).map_err(anyhow::Error::msg)?;
            print!("{}", export_heatmap(&trace, cell, &channel));
        }
    }
    Ok(())
}
