//! `tms`: simulate scenarios, compare deployments, serve the live stack,
//! and inspect twins.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use tms::agent::{AgentConfig, EdgeAgent};
use tms::bus::Bus;
use tms::dispatch::{AnomalyConfig, Dispatcher, DispatcherConfig, SyntheticConfig};
use tms::perf;
use tms::profiles;
use tms::rules::Rule;
use tms::scenario::{run_scenario, ComparatorConfig, ScenarioConfig};
use tms::twin::{self, SigSource, SignatureQuery, TelemetryLog, TwinId, TwinStore};

/// Edge-intelligence traffic monitoring platform.
#[derive(Parser)]
#[command(name = "tms", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a deterministic scenario file and report on it.
    Simulate {
        /// Scenario config (JSON).
        scenario: PathBuf,
        /// Override the scenario's rng seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the full report as JSON to this path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute the edge-vs-cloud deployment comparison.
    Compare(CompareArgs),
    /// Run agents, bus, dispatcher, and the twin HTTP API in one process.
    Serve(ServeArgs),
    /// Inspect or edit the twin store (TMS_DATA_DIR).
    Twin {
        #[command(subcommand)]
        action: TwinAction,
    },
    /// Detector profile information.
    Profiles {
        #[command(subcommand)]
        action: ProfilesAction,
    },
}

#[derive(Args)]
struct CompareArgs {
    /// Frames per second produced by the camera.
    #[arg(long, default_value_t = perf::DEFAULT_FPS)]
    fps: f64,
    /// Bytes per raw video frame (cloud upload unit).
    #[arg(long, default_value_t = perf::DEFAULT_FRAME_BYTES)]
    frame_bytes: u64,
    /// Bytes per inference summary (edge upload unit).
    #[arg(long, default_value_t = perf::DEFAULT_MESSAGE_BYTES)]
    message_bytes: u64,
    /// Uplink bandwidth in Mbit/s.
    #[arg(long, default_value_t = 450.0)]
    bandwidth_mbps: f64,
    /// Multiplicative protocol overhead on serialization time.
    #[arg(long, default_value_t = perf::DEFAULT_OVERHEAD_FACTOR)]
    overhead: f64,
    /// Cloud-side inference latency in ms.
    #[arg(long, default_value_t = perf::DEFAULT_CLOUD_INFERENCE_MS)]
    cloud_infer_ms: f64,
    /// Built-in profile used for the edge deployment.
    #[arg(long, default_value = profiles::MTD)]
    edge_profile: String,
    /// Emit the report as JSON.
    #[arg(long, conflicts_with = "table")]
    json: bool,
    /// Emit the report as a fixed-width table (the default).
    #[arg(long)]
    table: bool,
}

#[derive(Args)]
struct ServeArgs {
    /// Bind address for the twin HTTP API.
    #[arg(long, default_value = "127.0.0.1:8080")]
    twin_api_addr: std::net::SocketAddr,
    /// Agent configs (JSON array).
    #[arg(long)]
    agents: PathBuf,
    /// Rules file (JSON array).
    #[arg(long)]
    rules: Option<PathBuf>,
    /// Agent tick period in wall-clock ms.
    #[arg(long, default_value_t = 250)]
    tick_ms: u64,
}

#[derive(Subcommand)]
enum TwinAction {
    /// Print a twin document.
    Get { id: String },
    /// Set one scalar property leaf.
    Set { id: String, path: String, value: String },
    /// Query the signature log with opportunistic selection.
    Signatures {
        id: String,
        #[arg(long, default_value_t = 0)]
        from: u64,
        #[arg(long)]
        to: Option<u64>,
        /// Comma-separated source names (default: all).
        #[arg(long)]
        sources: Option<String>,
        #[arg(long, default_value_t = 0.0)]
        min_quality: f64,
        #[arg(long, default_value_t = 100)]
        limit: usize,
        /// Recency weight in [0, 1].
        #[arg(long, default_value_t = 0.5)]
        wr: f64,
    },
}

#[derive(Subcommand)]
enum ProfilesAction {
    /// List the built-in detector profiles.
    List,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .expect("clock after epoch")
        .as_millis() as u64
}

fn data_dir() -> PathBuf {
    std::env::var_os("TMS_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("tms-data"))
}

fn run(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Simulate { scenario, seed, out } => simulate(&scenario, seed, out.as_deref()),
        Command::Compare(args) => compare(args),
        Command::Serve(args) => serve(args),
        Command::Twin { action } => twin_command(action),
        Command::Profiles { action: ProfilesAction::List } => profiles_list(),
    }
}

fn simulate(
    scenario: &std::path::Path,
    seed: Option<u64>,
    out: Option<&std::path::Path>,
) -> anyhow::Result<ExitCode> {
    let mut cfg = ScenarioConfig::load(scenario)?;
    if let Some(seed) = seed {
        cfg.rng_seed = seed;
    }
    let report = run_scenario(&cfg)?;
    if let Some(path) = out {
        std::fs::write(path, serde_json::to_vec_pretty(&report)?)
            .with_context(|| format!("writing {}", path.display()))?;
        log::info!("report written to {}", path.display());
    }
    print!("{}", report.to_table());
    if report.invariants.all_ok {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("scenario invariants violated");
        Ok(ExitCode::FAILURE)
    }
}

fn compare(args: CompareArgs) -> anyhow::Result<ExitCode> {
    let comparator = ComparatorConfig {
        fps: Some(args.fps),
        frame_bytes: args.frame_bytes,
        message_bytes: args.message_bytes,
        bandwidth_mbps: args.bandwidth_mbps,
        overhead_factor: args.overhead,
        propagation_ms: 0.0,
        cloud_inference_ms: args.cloud_infer_ms,
        edge_profile: args.edge_profile,
    };
    let (edge, cloud) = comparator.deployment_pair(None)?;
    let report = perf::compare(&edge, &cloud)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", report.to_table());
    }
    Ok(ExitCode::SUCCESS)
}

fn load_agents(path: &std::path::Path) -> anyhow::Result<Vec<AgentConfig>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let agents: Vec<AgentConfig> =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if agents.is_empty() {
        bail!("{}: no agents configured", path.display());
    }
    Ok(agents)
}

fn load_rules(path: Option<&std::path::Path>) -> anyhow::Result<Vec<Rule>> {
    match path {
        None => Ok(Vec::new()),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
        }
    }
}

fn serve(args: ServeArgs) -> anyhow::Result<ExitCode> {
    let agents_cfg = load_agents(&args.agents)?;
    let rules = load_rules(args.rules.as_deref())?;
    let dir = data_dir();
    let store = TwinStore::open(&dir)?;
    let telemetry_log = TelemetryLog::open(&dir);
    let bus = Bus::new();
    let mut dispatcher = Dispatcher::new(
        bus.clone(),
        store.clone(),
        telemetry_log,
        DispatcherConfig {
            rules,
            anomaly: Some(AnomalyConfig::default()),
            synthetic: Some(SyntheticConfig::default()),
        },
    )?;

    let start = now_ms();
    let mut agents = agents_cfg
        .into_iter()
        .map(|cfg| EdgeAgent::new(cfg, start, 0))
        .collect::<Result<Vec<_>, _>>()?;

    let stop = Arc::new(AtomicBool::new(false));

    let agent_bus = bus.clone();
    let agent_stop = stop.clone();
    let tick = Duration::from_millis(args.tick_ms.max(1));
    let agent_thread = std::thread::spawn(move || {
        while !agent_stop.load(Ordering::Relaxed) {
            let now = now_ms();
            for agent in &mut agents {
                for publication in agent.publish_tick(now) {
                    if agent_bus.publish(&publication.topic, publication.payload).is_err() {
                        return;
                    }
                }
            }
            std::thread::sleep(tick);
        }
    });

    let dispatch_stop = stop.clone();
    let dispatch_thread = std::thread::spawn(move || {
        while !dispatch_stop.load(Ordering::Relaxed) {
            if dispatcher.pump().is_empty() {
                std::thread::sleep(Duration::from_millis(20));
            }
        }
        dispatcher.pump();
        dispatcher.stats()
    });

    log::info!(
        "serving twin API on http://{} (data dir {})",
        args.twin_api_addr,
        dir.display()
    );
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        tokio::select! {
            result = twin::http::serve(store.clone(), args.twin_api_addr) => result,
            _ = tokio::signal::ctrl_c() => Ok(()),
        }
    })?;

    log::info!("shutting down");
    stop.store(true, Ordering::Relaxed);
    bus.shutdown();
    agent_thread.join().ok();
    if let Ok(stats) = dispatch_thread.join() {
        log::info!(
            "routed {} inference / {} telemetry events, {} alarms",
            stats.inference_routed,
            stats.telemetry_routed,
            stats.alarms_raised
        );
    }
    store.close()?;
    Ok(ExitCode::SUCCESS)
}

fn twin_command(action: TwinAction) -> anyhow::Result<ExitCode> {
    let store = TwinStore::open(data_dir())?;
    match action {
        TwinAction::Get { id } => {
            let id: TwinId = id.parse()?;
            match store.get_twin(&id) {
                Some(doc) => println!("{}", serde_json::to_string_pretty(&doc)?),
                None => bail!("twin `{id}` not found"),
            }
        }
        TwinAction::Set { id, path, value } => {
            let id: TwinId = id.parse()?;
            store.ensure_twin(&id, now_ms())?;
            // numbers and booleans parse as JSON; anything else is a string
            let value = serde_json::from_str(&value)
                .unwrap_or(serde_json::Value::String(value));
            let revision = store.set_property(&id, &path, value, now_ms())?;
            store.flush()?;
            println!("revision {revision}");
        }
        TwinAction::Signatures {
            id,
            from,
            to,
            sources,
            min_quality,
            limit,
            wr,
        } => {
            let id: TwinId = id.parse()?;
            let mut parsed_sources = BTreeSet::new();
            if let Some(list) = sources {
                for name in list.split(',').filter(|s| !s.is_empty()) {
                    let source: SigSource = name
                        .parse()
                        .map_err(|e| anyhow::anyhow!("{e}"))?;
                    parsed_sources.insert(source);
                }
            }
            let to = to.unwrap_or_else(now_ms);
            let query = SignatureQuery {
                twin_id: id,
                sources: parsed_sources,
                from_ms: from,
                to_ms: to,
                min_quality,
                max_results: limit,
                recency_weight: wr,
                reference_ms: to,
            };
            let records = store.select_signatures(&query)?;
            println!("{}", serde_json::to_string_pretty(&records)?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn profiles_list() -> anyhow::Result<ExitCode> {
    println!(
        "{:<20} {:>12} {:>8}  {}",
        "name", "latency_ms", "mAP", "provenance"
    );
    for builtin in profiles::builtin() {
        let note = match builtin.provenance {
            profiles::Provenance::Reported => "reported",
            profiles::Provenance::MapPlaceholder => "latency reported; mAP placeholder",
        };
        println!(
            "{:<20} {:>12.1} {:>8.3}  {}",
            builtin.profile.name, builtin.profile.inference_latency_ms, builtin.profile.map_score, note
        );
    }
    Ok(ExitCode::SUCCESS)
}
