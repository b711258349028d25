use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use polescan_service::{serve_api, ServiceConfig, WatchConfig};
use tracing_subscriber::EnvFilter;

/// Image lifecycle and experiment API server.
#[derive(Debug, Parser)]
#[command(name = "polescan-service", version)]
struct Args {
    /// TOML file with ServiceConfig fields; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base directory for tracker/, blobs/ and results/ when no config is given.
    #[arg(long, default_value = ".")]
    root: PathBuf,
    #[arg(long)]
    bind: Option<SocketAddr>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    blob_root: Option<PathBuf>,
    #[arg(long)]
    results_dir: Option<PathBuf>,
    #[arg(long)]
    static_dir: Option<PathBuf>,
    /// Blob-store prefix to poll for new images.
    #[arg(long)]
    watch: Option<String>,
    #[arg(long, default_value_t = 2000)]
    watch_interval_ms: u64,
}

fn load(args: Args) -> Result<ServiceConfig, String> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => ServiceConfig::rooted(&args.root),
    };
    if let Some(v) = args.bind {
        cfg.bind = v;
    }
    if let Some(v) = args.data_dir {
        cfg.data_dir = v;
    }
    if let Some(v) = args.blob_root {
        cfg.blob_root = v;
    }
    if let Some(v) = args.results_dir {
        cfg.results_dir = v;
    }
    if let Some(v) = args.static_dir {
        cfg.static_dir = Some(v);
    }
    if let Some(prefix) = args.watch {
        cfg.watch = Some(WatchConfig {
            prefix,
            interval_ms: args.watch_interval_ms,
        });
    }
    Ok(cfg)
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let cfg = match load(Args::parse()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    match serve_api(cfg, shutdown).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
