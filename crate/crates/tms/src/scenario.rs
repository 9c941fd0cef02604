//! Deterministic discrete-event scenario runner.
//!
//! Wires simulated agents through the bus and dispatcher into the twin
//! store over virtual time (a 24-hour scenario runs in seconds), then
//! produces a [`ScenarioReport`]: traffic accounting, alarms, final twin
//! state, the analytic edge-vs-cloud comparison, and a cross-check of the
//! analytic model against the bytes the scenario actually moved.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, AgentError, EdgeAgent};
use crate::bus::{Bus, BusError};
use crate::dispatch::{
    AnomalyConfig, DispatchError, DispatchStats, Dispatcher, DispatcherConfig, Effect,
    SyntheticConfig,
};
use crate::model::NodeId;
use crate::perf::{
    self, ComparisonReport, DeploymentConfig, DeploymentMode, LinkModel, PerfError,
};
use crate::profiles;
use crate::rules::{AlarmEvent, Rule};
use crate::twin::{StoreError, TelemetryLog, TwinDocument, TwinStore};

pub const DEFAULT_START_MS: u64 = 1_700_000_000_000;

const MS_PER_DAY: u64 = 86_400_000;

fn default_start_ms() -> u64 {
    DEFAULT_START_MS
}

/// Inputs to the analytic edge-vs-cloud comparison embedded in every
/// scenario report. Defaults are the published comparison setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComparatorConfig {
    /// Defaults to the agents' frame rate when they all agree.
    pub fps: Option<f64>,
    pub frame_bytes: u64,
    pub message_bytes: u64,
    pub bandwidth_mbps: f64,
    pub overhead_factor: f64,
    pub propagation_ms: f64,
    pub cloud_inference_ms: f64,
    pub edge_profile: String,
}

impl Default for ComparatorConfig {
    fn default() -> Self {
        ComparatorConfig {
            fps: None,
            frame_bytes: perf::DEFAULT_FRAME_BYTES,
            message_bytes: perf::DEFAULT_MESSAGE_BYTES,
            bandwidth_mbps: perf::DEFAULT_BANDWIDTH_BPS / 1e6,
            overhead_factor: perf::DEFAULT_OVERHEAD_FACTOR,
            propagation_ms: 0.0,
            cloud_inference_ms: perf::DEFAULT_CLOUD_INFERENCE_MS,
            edge_profile: profiles::MTD.to_string(),
        }
    }
}

impl ComparatorConfig {
    /// Builds the edge and cloud deployment configs, resolving fps against
    /// the scenario's agents.
    pub fn deployment_pair(
        &self,
        agent_fps: Option<f64>,
    ) -> Result<(DeploymentConfig, DeploymentConfig), ScenarioError> {
        let profile = profiles::by_name(&self.edge_profile)
            .ok_or_else(|| ScenarioError::Config(format!("unknown profile `{}`", self.edge_profile)))?;
        let fps = self.fps.or(agent_fps).unwrap_or(perf::DEFAULT_FPS);
        let uplink = LinkModel {
            bandwidth_bps: self.bandwidth_mbps * 1e6,
            propagation_ms: self.propagation_ms,
            overhead_factor: self.overhead_factor,
        };
        let edge = DeploymentConfig {
            mode: DeploymentMode::Edge,
            fps,
            frame_bytes: self.frame_bytes,
            message_bytes: self.message_bytes,
            edge_profile: profile,
            cloud_inference_ms: self.cloud_inference_ms,
            uplink,
        };
        let mut cloud = edge.clone();
        cloud.mode = DeploymentMode::Cloud;
        edge.validate().map_err(ScenarioError::Perf)?;
        Ok((edge, cloud))
    }
}

/// The scenario file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub duration_ms: u64,
    #[serde(default = "default_start_ms")]
    pub start_ms: u64,
    #[serde(default)]
    pub rng_seed: u64,
    pub agents: Vec<AgentConfig>,
    /// Path to a JSON array of rules.
    #[serde(default)]
    pub rules_file: Option<PathBuf>,
    #[serde(default)]
    pub comparator: ComparatorConfig,
    #[serde(default)]
    pub synthetic: Option<SyntheticConfig>,
    #[serde(default)]
    pub anomaly: Option<AnomalyConfig>,
    /// Twin/telemetry store directory; in-memory when absent.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.duration_ms == 0 {
            return Err(ScenarioError::Config("duration_ms must be positive".into()));
        }
        if self.start_ms == 0 {
            return Err(ScenarioError::Config("start_ms must be positive".into()));
        }
        if self.agents.is_empty() {
            return Err(ScenarioError::Config("at least one agent required".into()));
        }
        let mut nodes: Vec<NodeId> = self.agents.iter().map(|a| a.node).collect();
        nodes.sort();
        nodes.dedup();
        if nodes.len() != self.agents.len() {
            return Err(ScenarioError::Config("agent node ids must be unique".into()));
        }
        Ok(())
    }

    /// The agents' common frame rate, when they agree.
    pub fn uniform_fps(&self) -> Option<f64> {
        let first = self.agents.first()?.traffic.fps;
        self.agents
            .iter()
            .all(|a| a.traffic.fps == first)
            .then_some(first)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| ScenarioError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Perf(#[from] PerfError),
}

/// Per-node published message and byte totals, by topic class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeTraffic {
    pub telemetry_msgs: u64,
    pub telemetry_bytes: u64,
    pub inference_msgs: u64,
    pub inference_bytes: u64,
}

/// Bus-level accounting: published vs delivered per topic class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BusTotals {
    pub telemetry_published: u64,
    pub telemetry_delivered: u64,
    pub inference_published: u64,
    pub inference_delivered: u64,
}

/// Scenario-measured edge traffic next to the analytic model's prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCheck {
    pub measured_inference_bytes: u64,
    pub scenario_ms: u64,
    pub extrapolated_bytes_per_day: u64,
    pub analytic_bytes_per_day: u64,
    pub relative_error: f64,
    /// False when the comparator fps or message size differs from what the
    /// scenario actually ran, making the comparison apples-to-oranges.
    pub applicable: bool,
    pub ok: bool,
}

/// Invariants checked at the end of every run; `simulate` exits non-zero
/// unless all hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvariantReport {
    /// published = routed + dead-lettered, per topic class.
    pub conservation_ok: bool,
    /// No effect carried a timestamp earlier than its cause.
    pub time_monotone_ok: bool,
    /// Analytic/measured agreement (None when not applicable).
    pub cross_check_ok: Option<bool>,
    pub all_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub start_ms: u64,
    pub duration_ms: u64,
    pub rng_seed: u64,
    pub per_node: BTreeMap<String, NodeTraffic>,
    pub bus: BusTotals,
    pub dispatch: DispatchStats,
    pub alarms: Vec<AlarmEvent>,
    pub final_twins: BTreeMap<String, TwinDocument>,
    pub comparison: ComparisonReport,
    pub cross_check: CrossCheck,
    pub invariants: InvariantReport,
    /// Wall-clock runtime; excluded from determinism comparisons.
    pub wall_clock_ms: u64,
}

impl ScenarioReport {
    /// Short fixed-width summary for terminals.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "scenario: {} ms virtual, seed {}\n",
            self.duration_ms, self.rng_seed
        ));
        out.push_str(&format!(
            "{:<40} {:>12} {:>14} {:>12} {:>14}\n",
            "node", "inf msgs", "inf bytes", "tele msgs", "tele bytes"
        ));
        for (node, t) in &self.per_node {
            out.push_str(&format!(
                "{:<40} {:>12} {:>14} {:>12} {:>14}\n",
                node, t.inference_msgs, t.inference_bytes, t.telemetry_msgs, t.telemetry_bytes
            ));
        }
        out.push_str(&format!(
            "alarms: {}   anomalies: {}   estimates: {}   dead letters: {}\n",
            self.dispatch.alarms_raised,
            self.dispatch.anomalies_flagged,
            self.dispatch.estimates_emitted,
            self.dispatch.inference_dead_lettered + self.dispatch.telemetry_dead_lettered,
        ));
        out.push_str(&format!(
            "invariants: conservation={} time_monotone={} cross_check={:?} => {}\n",
            self.invariants.conservation_ok,
            self.invariants.time_monotone_ok,
            self.invariants.cross_check_ok,
            if self.invariants.all_ok { "OK" } else { "VIOLATED" },
        ));
        out.push('\n');
        out.push_str(&self.comparison.to_table());
        out
    }
}

fn load_rules(cfg: &ScenarioConfig) -> Result<Vec<Rule>, ScenarioError> {
    match &cfg.rules_file {
        None => Ok(Vec::new()),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ScenarioError::Config(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| ScenarioError::Config(format!("{}: {e}", path.display())))
        }
    }
}

/// Runs a scenario to completion. Fully deterministic for a given config:
/// two runs produce identical reports up to `wall_clock_ms`.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioReport, ScenarioError> {
    cfg.validate()?;
    let rules = load_rules(cfg)?;
    let started = Instant::now();

    let (store, telemetry_log) = match &cfg.data_dir {
        Some(dir) => (TwinStore::open(dir)?, TelemetryLog::open(dir)),
        None => (TwinStore::in_memory(), TelemetryLog::in_memory()),
    };
    let bus = Bus::new();
    let mut dispatcher = Dispatcher::new(
        bus.clone(),
        store.clone(),
        telemetry_log,
        DispatcherConfig {
            rules,
            anomaly: cfg.anomaly,
            synthetic: cfg.synthetic.clone(),
        },
    )?;

    let mut agents: Vec<EdgeAgent> = cfg
        .agents
        .iter()
        .map(|a| EdgeAgent::new(a.clone(), cfg.start_ms, cfg.rng_seed))
        .collect::<Result<_, _>>()?;

    let end_ms = cfg.start_ms + cfg.duration_ms;
    let mut per_node: BTreeMap<String, NodeTraffic> = BTreeMap::new();
    let mut bus_totals = BusTotals::default();
    let mut alarms: Vec<AlarmEvent> = Vec::new();
    let mut last_event_ms = 0u64;
    let mut time_monotone_ok = true;

    loop {
        // next event across agents, ordered by (virtual time, node id)
        let Some((due, _, idx)) = agents
            .iter()
            .enumerate()
            .map(|(i, a)| (a.next_due_ms(), a.node(), i))
            .filter(|(due, _, _)| *due < end_ms)
            .min()
        else {
            break;
        };
        if due < last_event_ms {
            time_monotone_ok = false;
        }
        last_event_ms = due;

        let agent = &mut agents[idx];
        let key = format!("{}/{}", agent.site(), agent.node());
        let publications = agent.publish_tick(due);
        for publication in publications {
            let traffic = per_node.entry(key.clone()).or_default();
            let bytes = publication.payload.len() as u64;
            if publication.topic.ends_with("/inference") {
                traffic.inference_msgs += 1;
                traffic.inference_bytes += bytes;
                bus_totals.inference_published += 1;
                bus_totals.inference_delivered +=
                    bus.publish(&publication.topic, publication.payload)? as u64;
            } else {
                traffic.telemetry_msgs += 1;
                traffic.telemetry_bytes += bytes;
                bus_totals.telemetry_published += 1;
                bus_totals.telemetry_delivered +=
                    bus.publish(&publication.topic, publication.payload)? as u64;
            }
        }
        for effect in dispatcher.pump() {
            if let Effect::Alarm(alarm) = effect {
                alarms.push(alarm);
            }
        }
    }
    for effect in dispatcher.pump() {
        if let Effect::Alarm(alarm) = effect {
            alarms.push(alarm);
        }
    }
    store.flush()?;

    let stats = dispatcher.stats();
    let conservation_ok = bus_totals.inference_published
        == stats.inference_routed + stats.inference_dead_lettered
        && bus_totals.telemetry_published
            == stats.telemetry_routed + stats.telemetry_dead_lettered;

    let measured_inference_bytes: u64 = per_node.values().map(|t| t.inference_bytes).sum();
    let (comparison, cross_check) = emit_comparison(cfg, measured_inference_bytes)?;

    let invariants = InvariantReport {
        conservation_ok,
        time_monotone_ok,
        cross_check_ok: cross_check.applicable.then_some(cross_check.ok),
        all_ok: conservation_ok
            && time_monotone_ok
            && (!cross_check.applicable || cross_check.ok),
    };

    let final_twins: BTreeMap<String, TwinDocument> = store
        .list_twins()
        .into_iter()
        .filter_map(|id| store.get_twin(&id).map(|doc| (id.to_string(), doc)))
        .collect();

    Ok(ScenarioReport {
        start_ms: cfg.start_ms,
        duration_ms: cfg.duration_ms,
        rng_seed: cfg.rng_seed,
        per_node,
        bus: bus_totals,
        dispatch: stats,
        alarms,
        final_twins,
        comparison,
        cross_check,
        invariants,
        wall_clock_ms: started.elapsed().as_millis() as u64,
    })
}

/// Builds the analytic comparison and checks it against what the scenario
/// actually put on the wire: measured edge bytes, linearly extrapolated to
/// one day, must sit within 0.1% of the analytic daily volume whenever the
/// comparator models the same fps and message size the scenario ran.
pub fn emit_comparison(
    cfg: &ScenarioConfig,
    measured_inference_bytes: u64,
) -> Result<(ComparisonReport, CrossCheck), ScenarioError> {
    let agent_fps = cfg.uniform_fps();
    let (edge, cloud) = cfg.comparator.deployment_pair(agent_fps)?;
    let comparison = perf::compare(&edge, &cloud)?;

    let extrapolated =
        (measured_inference_bytes as u128 * MS_PER_DAY as u128 / cfg.duration_ms as u128) as u64;
    let analytic = comparison.edge.bytes_per_day;
    let relative_error = if analytic == 0 {
        f64::INFINITY
    } else {
        (extrapolated as f64 - analytic as f64).abs() / analytic as f64
    };
    let applicable = agent_fps == Some(edge.fps)
        && edge.message_bytes == crate::codec::INFERENCE_WIRE_LEN as u64;
    let cross_check = CrossCheck {
        measured_inference_bytes,
        scenario_ms: cfg.duration_ms,
        extrapolated_bytes_per_day: extrapolated,
        analytic_bytes_per_day: analytic,
        relative_error,
        applicable,
        ok: relative_error <= 0.001,
    };
    Ok((comparison, cross_check))
}
