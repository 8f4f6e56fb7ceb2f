use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use cohort_cluster::{ClusterConfig, Worker};

/// Runs a worker node that connects to a manager.
#[derive(Parser)]
#[command(name = "cohort-worker", version)]
struct Args {
    /// TOML configuration file.
    #[arg(long, env = "COHORT_CONFIG")]
    config: Option<PathBuf>,
    /// Manager address, overrides the configuration.
    #[arg(long)]
    manager: Option<String>,
    #[arg(long)]
    id: Option<String>,
    #[arg(long)]
    pool_size: Option<usize>,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .init();
    let args = Args::parse();
    let mut config = match ClusterConfig::load(args.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    if let Some(m) = args.manager {
        config.worker.manager = m;
    }
    if args.id.is_some() {
        config.worker.id = args.id;
    }
    if let Some(p) = args.pool_size {
        config.worker.pool_size = p;
    }
    match Worker::from_config(&config.worker) {
        Ok(worker) => {
            worker.join();
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}
