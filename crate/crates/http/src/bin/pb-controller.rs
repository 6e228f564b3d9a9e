//! Vantage-point daemon: simulated devices behind the controller API.

use std::net::SocketAddr;
use std::path::PathBuf;

use clap::Parser;
use pb_core::controller::Controller;
use pb_core::device::{DeviceConfig, DeviceConfigFile};
use pb_core::wpm::{CatalogSpec, SiteCatalog};
use pb_http::client::ServerClient;
use pb_http::controller_api::{router, NodeApp};
use pb_http::server_api::RegisterNode;
use pb_http::DEFAULT_CONTROLLER_PORT;

#[derive(Parser)]
#[command(version, about = "Run a vantage-point controller over simulated devices")]
struct Args {
    #[arg(long, default_value_t = SocketAddr::from(([127, 0, 0, 1], DEFAULT_CONTROLLER_PORT)))]
    listen: SocketAddr,
    #[arg(long, default_value = "vp1")]
    node_id: String,
    /// Device file (`{"devices": [...]}`).
    #[arg(long, conflicts_with = "device")]
    devices: Option<PathBuf>,
    /// `ID=PROFILE`, repeatable. Defaults to one J7DUO with a browser.
    #[arg(long)]
    device: Vec<String>,
    #[arg(long)]
    sample_rate: Option<f64>,
    /// Site catalog JSON for web measurements; the built-in test set otherwise.
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Directory for trace CSVs and sidecars.
    #[arg(long)]
    trace_dir: Option<PathBuf>,
    /// Access server to register with.
    #[arg(long, requires = "credential")]
    server: Option<String>,
    #[arg(long, env = "PB_TOKEN", hide_env_values = true)]
    token: Option<String>,
    #[arg(long, env = "PB_NODE_CREDENTIAL", hide_env_values = true)]
    credential: Option<String>,
    /// Address the server should use to reach this node.
    #[arg(long)]
    advertise: Option<String>,
    #[arg(long, default_value = "")]
    location: String,
    #[arg(long)]
    label: Vec<String>,
}

fn build(args: &Args) -> Result<Controller, String> {
    let devices = if let Some(path) = &args.devices {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        DeviceConfigFile::parse(&text).and_then(|f| f.build()).map_err(|e| e.to_string())?
    } else {
        let specs = if args.device.is_empty() { vec!["d1=J7DUO".to_string()] } else { args.device.clone() };
        let mut out = Vec::new();
        for (i, spec) in specs.iter().enumerate() {
            let (id, profile) = spec.split_once('=').ok_or_else(|| format!("expected ID=PROFILE, got {spec:?}"))?;
            let cfg = DeviceConfig::new(id, profile, 1 + i as u64).with_app("com.brave.browser", true);
            out.push(cfg.build().map_err(|e| e.to_string())?);
        }
        out
    };
    let mut ctl = Controller::with_devices(&args.node_id, devices).map_err(|e| e.to_string())?;
    if let Some(rate) = args.sample_rate {
        ctl.set_sample_rate(rate).map_err(|e| e.to_string())?;
    }
    ctl.set_trace_dir(args.trace_dir.clone());
    let sites = match &args.catalog {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            SiteCatalog::parse(&text).map_err(|e| e.to_string())?
        }
        None => SiteCatalog::synthetic(CatalogSpec::desk()),
    };
    ctl.set_site_catalog(sites);
    Ok(ctl)
}

#[tokio::main]
async fn main() -> Result<(), String> {
    pb_http::init_logging();
    let args = Args::parse();
    let app = NodeApp::new(build(&args)?);
    let listener = tokio::net::TcpListener::bind(args.listen).await.map_err(|e| e.to_string())?;
    let local = listener.local_addr().map_err(|e| e.to_string())?;
    tracing::info!(node = %args.node_id, %local, "controller listening");

    if let (Some(server), Some(token), Some(credential)) = (args.server.clone(), args.token.clone(), args.credential.clone()) {
        let req = RegisterNode {
            id: args.node_id.clone(),
            address: args.advertise.clone().unwrap_or_else(|| format!("http://{local}")),
            credential,
            location: args.location.clone(),
            labels: args.label.clone(),
        };
        // the server probes us during registration, so serve first
        tokio::task::spawn_blocking(move || match ServerClient::new(&server, &token).register_node(&req) {
            Ok(v) => tracing::info!(dns = %v.dns_name, "registered"),
            Err(e) => tracing::error!(error = %e, "registration failed"),
        });
    }
    axum::serve(listener, router(app)).await.map_err(|e| e.to_string())
}
