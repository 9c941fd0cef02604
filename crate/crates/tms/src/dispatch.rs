//! The fog dispatcher: consumes inference and telemetry events off the bus,
//! maintains twins and logs, evaluates rules, and derives synthetic
//! estimates.
//!
//! Undecodable payloads are never dropped silently; they are quarantined on
//! `tms/$deadletter` with a reason. Alarms and anomalies go to
//! `tms/$alarms`; traffic estimates go back out on the node's own
//! `synthetic/traffic_level` topic.

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::bus::{topic_levels, Bus, BusError, Subscriber};
use crate::codec::{decode_inference, parse_telemetry_line};
use crate::model::Source;
use crate::rules::{AlarmEvent, Rule, RuleEngine, RuleError, RuleOutcome};
use crate::synth::{
    detect_anomaly, estimate_traffic_level, NormalizationWindow, TrafficEstimate,
    DEFAULT_WINDOW_MS, MIN_ANOMALY_SERIES,
};
use crate::twin::{
    InferenceSummary, SigSource, SignatureQuery, SignatureValue, StoreError, TelemetryLog,
    TwinId, TwinStore,
};

/// Topic carrying alarms and anomaly flags.
pub const ALARM_TOPIC: &str = "tms/$alarms";
/// Quarantine topic for undecodable or unroutable events.
pub const DEAD_LETTER_TOPIC: &str = "tms/$deadletter";

/// Anomaly detection settings for the dispatcher's telemetry stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnomalyConfig {
    /// Series length fed to the detector (>= 10).
    pub window: usize,
    /// Flag threshold in standard deviations.
    pub k_sigma: f64,
}

impl Default for AnomalyConfig {
    fn default() -> Self {
        AnomalyConfig {
            window: 30,
            k_sigma: 5.0,
        }
    }
}

/// Synthetic traffic-level estimation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    /// Minimum virtual-time gap between estimates per twin.
    pub period_ms: u64,
    /// Per-source blend weights, summing to 1.
    pub weights: BTreeMap<Source, f64>,
    pub recency_weight: f64,
    pub min_quality: f64,
    /// Signature selection and normalization window.
    pub window_ms: u64,
    pub max_selected: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            period_ms: 60_000,
            weights: crate::synth::default_weights(),
            recency_weight: 0.5,
            min_quality: 0.0,
            window_ms: DEFAULT_WINDOW_MS,
            max_selected: 64,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DispatcherConfig {
    #[serde(default)]
    pub rules: Vec<Rule>,
    #[serde(default)]
    pub anomaly: Option<AnomalyConfig>,
    #[serde(default)]
    pub synthetic: Option<SyntheticConfig>,
}

/// What one dispatched event caused.
#[derive(Debug, Clone, PartialEq)]
pub enum Effect {
    /// The event's twin document was updated to this revision.
    TwinUpdated { twin: TwinId, revision: u64 },
    SignatureAppended { twin: TwinId, sequence: u64 },
    TelemetryLogged { twin: TwinId },
    Alarm(AlarmEvent),
    /// A rule action wrote this twin property.
    PropertySet { twin: TwinId, path: String },
    Estimate(TrafficEstimate),
    Anomaly { twin: TwinId, source: Source, z_score: f64 },
    DeadLetter { topic: String, reason: String },
}

/// Routed/quarantined counters per topic class, the basis for conservation
/// checks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatchStats {
    pub inference_routed: u64,
    pub inference_dead_lettered: u64,
    pub telemetry_routed: u64,
    pub telemetry_dead_lettered: u64,
    pub alarms_raised: u64,
    pub anomalies_flagged: u64,
    pub estimates_emitted: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum DispatchError {
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// The single logical consumer between the bus and the twin store.
pub struct Dispatcher {
    bus: Bus,
    store: TwinStore,
    telemetry_log: TelemetryLog,
    engine: RuleEngine,
    anomaly: Option<AnomalyConfig>,
    synthetic: Option<SyntheticConfig>,
    subscriber: Subscriber,
    windows: HashMap<(TwinId, Source), NormalizationWindow>,
    series: HashMap<(TwinId, Source), VecDeque<f64>>,
    cumulative_totals: HashMap<TwinId, u64>,
    last_estimate_ms: HashMap<TwinId, u64>,
    stats: DispatchStats,
}

impl Dispatcher {
    /// Subscribes to all inference and telemetry topics on the bus.
    pub fn new(
        bus: Bus,
        store: TwinStore,
        telemetry_log: TelemetryLog,
        config: DispatcherConfig,
    ) -> Result<Self, DispatchError> {
        let engine = RuleEngine::new(config.rules)?;
        let subscriber = bus.subscribe("tms/+/+/inference")?;
        subscriber.add_filter("tms/+/+/telemetry/+")?;
        Ok(Dispatcher {
            bus,
            store,
            telemetry_log,
            engine,
            anomaly: config.anomaly,
            synthetic: config.synthetic,
            subscriber,
            windows: HashMap::new(),
            series: HashMap::new(),
            cumulative_totals: HashMap::new(),
            last_estimate_ms: HashMap::new(),
            stats: DispatchStats::default(),
        })
    }

    pub fn stats(&self) -> DispatchStats {
        self.stats
    }

    pub fn store(&self) -> &TwinStore {
        &self.store
    }

    pub fn telemetry_log(&self) -> &TelemetryLog {
        &self.telemetry_log
    }

    /// Drains everything queued on the dispatcher's subscriptions.
    pub fn pump(&mut self) -> Vec<Effect> {
        let mut effects = Vec::new();
        while let Some(message) = self.subscriber.try_recv() {
            effects.extend(self.dispatch(&message.topic, &message.payload));
        }
        effects
    }

    /// Routes one event. Never returns an error to the publisher: anything
    /// undecodable becomes a dead letter.
    pub fn dispatch(&mut self, topic: &str, payload: &[u8]) -> Vec<Effect> {
        let levels = topic_levels(topic);
        match levels.as_slice() {
            ["tms", site, node, "inference"] => self.dispatch_inference(topic, site, node, payload),
            ["tms", site, node, "telemetry", source] => {
                self.dispatch_telemetry(topic, site, node, source, payload)
            }
            ["tms", rest @ ..] if rest.first().is_some_and(|l| l.starts_with('$')) => {
                // our own alarm/dead-letter traffic; nothing to route
                Vec::new()
            }
            _ => vec![self.dead_letter(topic, "unroutable topic".to_string())],
        }
    }

    fn dead_letter(&mut self, topic: &str, reason: String) -> Effect {
        let body = json!({ "topic": topic, "reason": reason }).to_string();
        let _ = self.bus.publish(DEAD_LETTER_TOPIC, body.into_bytes());
        Effect::DeadLetter {
            topic: topic.to_string(),
            reason,
        }
    }

    fn twin_for(&self, site: &str, node: &str) -> Result<TwinId, String> {
        let node = crate::model::NodeId::parse_simple_hex(node)
            .map_err(|e| format!("bad node level: {e}"))?;
        TwinId::new(site, node).map_err(|e| format!("bad site level: {e}"))
    }

    fn dispatch_inference(
        &mut self,
        topic: &str,
        site: &str,
        node: &str,
        payload: &[u8],
    ) -> Vec<Effect> {
        let twin = match self.twin_for(site, node) {
            Ok(t) => t,
            Err(reason) => {
                self.stats.inference_dead_lettered += 1;
                return vec![self.dead_letter(topic, reason)];
            }
        };
        let msg = match decode_inference(payload) {
            Ok(m) => m,
            Err(e) => {
                self.stats.inference_dead_lettered += 1;
                return vec![self.dead_letter(topic, e.to_string())];
            }
        };
        if msg.node != twin.node {
            self.stats.inference_dead_lettered += 1;
            return vec![self.dead_letter(topic, "node id disagrees with topic".to_string())];
        }

        let now = msg.timestamp_ms;
        let mut effects = Vec::new();
        if let Err(e) = self.store.ensure_twin(&twin, now) {
            log::error!("twin create failed for {twin}: {e}");
            return effects;
        }
        let cumulative = self.cumulative_totals.entry(twin.clone()).or_insert(0);
        *cumulative += u64::from(msg.total_count);
        let cumulative = *cumulative;
        let sets: Vec<(String, serde_json::Value)> = {
            let mut v = vec![
                ("features/traffic/properties/last_total".to_string(), json!(msg.total_count)),
                (
                    "features/traffic/properties/last_latency_us".to_string(),
                    json!(msg.infer_latency_us),
                ),
                (
                    "features/traffic/properties/last_frame_seq".to_string(),
                    json!(msg.frame_seq),
                ),
                (
                    "features/traffic/properties/cumulative_total".to_string(),
                    json!(cumulative),
                ),
            ];
            for (i, label) in crate::model::VEHICLE_CLASSES.iter().enumerate() {
                v.push((
                    format!("features/traffic/properties/classes/{label}"),
                    json!(msg.class_counts[i]),
                ));
            }
            v
        };
        let mut last_revision = 0;
        for (path, value) in sets {
            match self.store.set_property(&twin, &path, value, now) {
                Ok(rev) => last_revision = rev,
                Err(e) => log::error!("twin update failed for {twin} at {path}: {e}"),
            }
        }
        effects.push(Effect::TwinUpdated {
            twin: twin.clone(),
            revision: last_revision,
        });

        match self.store.append_signature(
            &twin,
            SigSource::Inference,
            SignatureValue::Inference(InferenceSummary {
                frame_seq: msg.frame_seq,
                total: msg.total_count,
                latency_us: msg.infer_latency_us,
            }),
            now,
            f64::from(msg.mean_conf_milli) / 1000.0,
        ) {
            Ok(sequence) => effects.push(Effect::SignatureAppended {
                twin: twin.clone(),
                sequence,
            }),
            Err(e) => log::error!("signature append failed for {twin}: {e}"),
        }

        self.stats.inference_routed += 1;
        effects
    }

    fn dispatch_telemetry(
        &mut self,
        topic: &str,
        site: &str,
        node: &str,
        source_level: &str,
        payload: &[u8],
    ) -> Vec<Effect> {
        let twin = match self.twin_for(site, node) {
            Ok(t) => t,
            Err(reason) => {
                self.stats.telemetry_dead_lettered += 1;
                return vec![self.dead_letter(topic, reason)];
            }
        };
        let line = match std::str::from_utf8(payload) {
            Ok(s) => s,
            Err(_) => {
                self.stats.telemetry_dead_lettered += 1;
                return vec![self.dead_letter(topic, "payload is not utf-8".to_string())];
            }
        };
        let reading = match parse_telemetry_line(line) {
            Ok(r) => r,
            Err(e) => {
                self.stats.telemetry_dead_lettered += 1;
                return vec![self.dead_letter(topic, e.to_string())];
            }
        };
        if reading.node != twin.node || reading.source.as_str() != source_level {
            self.stats.telemetry_dead_lettered += 1;
            return vec![self.dead_letter(topic, "line disagrees with topic".to_string())];
        }

        let now = reading.timestamp_ms;
        let mut effects = Vec::new();
        if let Err(e) = self.store.ensure_twin(&twin, now) {
            log::error!("twin create failed for {twin}: {e}");
            return effects;
        }

        if let Err(e) = self.telemetry_log.append(&twin, line) {
            log::error!("telemetry log append failed for {twin}: {e}");
        } else {
            effects.push(Effect::TelemetryLogged { twin: twin.clone() });
        }

        match self.store.append_signature(
            &twin,
            SigSource::Telemetry(reading.source),
            SignatureValue::Scalar(reading.value),
            now,
            reading.quality,
        ) {
            Ok(sequence) => effects.push(Effect::SignatureAppended {
                twin: twin.clone(),
                sequence,
            }),
            Err(e) => log::error!("signature append failed for {twin}: {e}"),
        }

        // latest-value twin property per source
        let path = format!("features/telemetry/properties/{}", reading.source);
        match self
            .store
            .set_property(&twin, &path, json!(reading.value), now)
        {
            Ok(revision) => effects.push(Effect::TwinUpdated {
                twin: twin.clone(),
                revision,
            }),
            Err(e) => log::error!("twin update failed for {twin}: {e}"),
        }

        let window_ms = self
            .synthetic
            .as_ref()
            .map_or(DEFAULT_WINDOW_MS, |s| s.window_ms);
        self.windows
            .entry((twin.clone(), reading.source))
            .or_insert_with(|| NormalizationWindow::new(window_ms))
            .push(now, reading.value);

        for outcome in self.engine.evaluate(topic, &twin, &reading) {
            match outcome {
                RuleOutcome::Alarm(alarm) => {
                    self.stats.alarms_raised += 1;
                    let mut body = serde_json::to_value(&alarm).expect("alarm serializes");
                    body["kind"] = json!("alarm");
                    let _ = self.bus.publish(ALARM_TOPIC, body.to_string().into_bytes());
                    effects.push(Effect::Alarm(alarm));
                }
                RuleOutcome::SetProperty { path, value } => {
                    match self.store.set_property(&twin, &path, json!(value), now) {
                        Ok(_) => effects.push(Effect::PropertySet {
                            twin: twin.clone(),
                            path,
                        }),
                        Err(e) => log::error!("rule property write failed at {path}: {e}"),
                    }
                }
            }
        }

        if let Some(anomaly_cfg) = self.anomaly {
            let series = self
                .series
                .entry((twin.clone(), reading.source))
                .or_default();
            series.push_back(reading.value);
            while series.len() > anomaly_cfg.window.max(MIN_ANOMALY_SERIES) {
                series.pop_front();
            }
            if series.len() >= anomaly_cfg.window.max(MIN_ANOMALY_SERIES) {
                let values: Vec<f64> = series.iter().copied().collect();
                if let Ok(verdict) = detect_anomaly(&values, anomaly_cfg.k_sigma) {
                    if verdict.flagged {
                        self.stats.anomalies_flagged += 1;
                        let body = json!({
                            "kind": "anomaly",
                            "twin_id": twin.to_string(),
                            "source": reading.source,
                            "z_score": verdict.z_score,
                            "value": reading.value,
                            "timestamp_ms": now,
                        });
                        let _ = self.bus.publish(ALARM_TOPIC, body.to_string().into_bytes());
                        effects.push(Effect::Anomaly {
                            twin: twin.clone(),
                            source: reading.source,
                            z_score: verdict.z_score,
                        });
                    }
                }
            }
        }

        if let Some(effect) = self.maybe_estimate(&twin, now) {
            effects.push(effect);
        }

        self.stats.telemetry_routed += 1;
        effects
    }

    fn maybe_estimate(&mut self, twin: &TwinId, now: u64) -> Option<Effect> {
        let cfg = self.synthetic.clone()?;
        if let Some(last) = self.last_estimate_ms.get(twin) {
            if now < last + cfg.period_ms {
                return None;
            }
        }
        let query = SignatureQuery {
            twin_id: twin.clone(),
            sources: cfg
                .weights
                .keys()
                .map(|s| SigSource::Telemetry(*s))
                .collect(),
            from_ms: now.saturating_sub(cfg.window_ms),
            to_ms: now,
            min_quality: cfg.min_quality,
            max_results: cfg.max_selected,
            recency_weight: cfg.recency_weight,
            reference_ms: now,
        };
        let selected = match self.store.select_signatures(&query) {
            Ok(s) => s,
            Err(e) => {
                log::error!("signature selection failed for {twin}: {e}");
                return None;
            }
        };
        let mut windows = BTreeMap::new();
        for source in cfg.weights.keys() {
            if let Some(w) = self.windows.get(&(twin.clone(), *source)) {
                windows.insert(*source, w.clone());
            }
        }
        let estimate =
            estimate_traffic_level(twin, &selected, &windows, &cfg.weights, now).ok()?;
        self.last_estimate_ms.insert(twin.clone(), now);
        self.stats.estimates_emitted += 1;
        if let Err(e) = self.store.set_property(
            twin,
            "features/synthetic/properties/traffic_level",
            json!(estimate.level),
            now,
        ) {
            log::error!("estimate write failed for {twin}: {e}");
        }
        let topic = format!("tms/{}/{}/synthetic/traffic_level", twin.site, twin.node);
        let body = serde_json::to_string(&estimate).expect("estimate serializes");
        let _ = self.bus.publish(&topic, body.into_bytes());
        Some(Effect::Estimate(estimate))
    }
}
