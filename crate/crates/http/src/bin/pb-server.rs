//! Access server: registry, scheduling and artifact storage.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use clap::Parser;
use pb_core::access::{AccessServer, Connector, NodeClient, ServerConfig, StateStore, SystemClock, DEFAULT_ZONE};
use pb_http::client::HttpNode;
use pb_http::server_api::{router, spawn_background};
use pb_http::{parse_duration, DEFAULT_SERVER_PORT};

const ADMIN_TOKEN_FILE: &str = "admin.token";

#[derive(Parser)]
#[command(version, about = "Run the access server")]
struct Args {
    #[arg(long, default_value_t = SocketAddr::from(([127, 0, 0, 1], DEFAULT_SERVER_PORT)))]
    listen: SocketAddr,
    #[arg(long, default_value = DEFAULT_ZONE)]
    zone: String,
    /// Reachability refresh period, e.g. `30m`.
    #[arg(long, default_value = "30m", value_parser = parse_duration)]
    refresh_period: f64,
    /// Scheduler pass interval, e.g. `2s`.
    #[arg(long, default_value = "2s", value_parser = parse_duration)]
    tick: f64,
    #[arg(long, default_value = "pb-state")]
    state_dir: PathBuf,
}

#[tokio::main]
async fn main() -> Result<(), String> {
    pb_http::init_logging();
    let args = Args::parse();
    let store = StateStore::open(&args.state_dir).map_err(|e| e.to_string())?;
    let connector: Connector = Arc::new(|r| Arc::new(HttpNode::new(&r.address)) as Arc<dyn NodeClient>);
    let config = ServerConfig { zone: args.zone.clone(), refresh_period_s: args.refresh_period };
    let mut server = AccessServer::open(config, Arc::new(SystemClock), store, connector).map_err(|e| e.to_string())?;
    if let Ok(token) = server.bootstrap_admin("admin") {
        let path = args.state_dir.join(ADMIN_TOKEN_FILE);
        std::fs::write(&path, format!("{token}\n")).map_err(|e| e.to_string())?;
        tracing::info!(path = %path.display(), "administrator token written");
    }
    let shared = Arc::new(Mutex::new(server));
    spawn_background(shared.clone(), Duration::from_secs_f64(args.tick));
    let listener = tokio::net::TcpListener::bind(args.listen).await.map_err(|e| e.to_string())?;
    tracing::info!(listen = %listener.local_addr().map_err(|e| e.to_string())?, zone = %args.zone, "access server listening");
    axum::serve(listener, router(shared)).await.map_err(|e| e.to_string())
}
