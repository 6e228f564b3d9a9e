//! Web power measurement through the access server.

use std::path::PathBuf;
use std::time::Duration;

use clap::Parser;
use pb_core::access::{Constraints, JobKind, JobSpec, JobState};
use pb_core::controller::PipelineStep;
use pb_core::trace::{read_csv, PowerTrace, TraceSidecar};
use pb_core::wpm::{self, Automation, CatalogSpec, ReportFormat, SiteCatalog, WpmRequest, WpmResult, BROWSER_SETUP_S, DEFAULT_REPS};
use pb_http::client::ServerClient;
use pb_http::parse_duration;

#[derive(Parser)]
#[command(version, about = "Measure the energy of loading web pages on a remote device")]
struct Args {
    #[arg(long, default_value = "http://127.0.0.1:8080")]
    server: String,
    #[arg(long, env = "PB_TOKEN", hide_env_values = true)]
    token: String,
    #[arg(long)]
    device: String,
    /// File with one URL per line.
    #[arg(long)]
    urls: PathBuf,
    #[arg(long, default_value_t = DEFAULT_REPS)]
    reps: u32,
    #[arg(long, value_enum, default_value = "simple-load")]
    automation: AutomationArg,
    /// Time each page is given to load, e.g. `30s`.
    #[arg(long, default_value = "30s", value_parser = parse_duration)]
    budget: f64,
    /// Fixed slot per page, e.g. `2m`.
    #[arg(long, default_value = "2m", value_parser = parse_duration)]
    slot: f64,
    #[arg(long, default_value = "com.brave.browser")]
    browser: String,
    /// Mirror the screen during the run.
    #[arg(long)]
    visual: bool,
    /// Site catalog used to pre-filter the list; the built-in test set otherwise.
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long, default_value = "json")]
    format: ReportFormat,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum AutomationArg {
    SimpleLoad,
    Interact,
}

fn read(path: &PathBuf) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn main() -> Result<(), String> {
    pb_http::init_logging();
    let args = Args::parse();
    let catalog = match &args.catalog {
        Some(p) => SiteCatalog::parse(&read(p)?).map_err(|e| e.to_string())?,
        None => SiteCatalog::synthetic(CatalogSpec::desk()),
    };
    let listed: Vec<String> = read(&args.urls)?.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).map(String::from).collect();
    let pre = wpm::prefilter(&listed, &catalog);
    eprintln!("prefilter: {:?}", pre.counts());
    if pre.active.is_empty() {
        return Err("no loadable URLs left after pre-filtering".into());
    }

    let automation = match args.automation {
        AutomationArg::SimpleLoad => Automation::SimpleLoad,
        AutomationArg::Interact => Automation::Interact,
    };
    let request = WpmRequest {
        reps: args.reps,
        automation,
        per_page_budget: args.budget,
        page_slot: args.slot,
        visual: args.visual,
        ..WpmRequest::new(&args.device, &args.browser, pre.active.clone())
    };
    request.validate().map_err(|e| e.to_string())?;
    let planned = f64::from(args.reps) * (BROWSER_SETUP_S + pre.active.len() as f64 * args.slot);
    let spec = JobSpec {
        job_id: None,
        kind: JobKind::Experiment,
        constraints: Constraints { device_id: Some(args.device.clone()), ..Default::default() },
        steps: vec![PipelineStep::Wpm { request }],
        max_duration: 2.0 * planned + 600.0,
        owner: String::new(),
    };

    let client = ServerClient::new(&args.server, &args.token);
    let job_id = client.submit(&spec).map_err(|e| e.to_string())?;
    eprintln!("submitted {job_id}");
    let job = client.wait(&job_id, Duration::from_secs(2), Duration::from_secs_f64(spec.max_duration + 3600.0)).map_err(|e| e.to_string())?;
    if job.state != JobState::Succeeded {
        return Err(format!("{job_id} ended {:?}: {}", job.state, job.error.unwrap_or_default()));
    }

    let fetch = |name: &str| client.artifact(&job_id, name).map_err(|e| format!("{name}: {e}"));
    let wpm_name = job.artifacts.iter().find(|a| a.name.starts_with("wpm-")).ok_or("job produced no measurement")?.name.clone();
    let result: WpmResult = serde_json::from_slice(&fetch(&wpm_name)?).map_err(|e| e.to_string())?;
    let mut traces: Vec<PowerTrace> = Vec::new();
    for id in &result.meta.trace_ids {
        let sidecar: TraceSidecar = serde_json::from_slice(&fetch(&format!("trace-{id}.json"))?).map_err(|e| e.to_string())?;
        let csv = fetch(&format!("trace-{id}.csv"))?;
        traces.push(read_csv(csv.as_slice(), sidecar.meta(), Some(sidecar.sample_rate)).map_err(|e| e.to_string())?);
    }
    let refs: Vec<&PowerTrace> = traces.iter().collect();
    let text = wpm::report(&result, &refs, args.format).map_err(|e| e.to_string())?;
    match &args.out {
        Some(p) => std::fs::write(p, text).map_err(|e| format!("{}: {e}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}
