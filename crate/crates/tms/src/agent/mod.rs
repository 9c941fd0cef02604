//! Simulated edge node: telemetry sampling, frame ground truth, a
//! profile-driven detector, the vehicle counter, and publication of
//! telemetry lines plus 67-byte inference messages.
//!
//! One agent is single-threaded and tick-driven; every published byte is a
//! deterministic function of its configuration and seed.

pub mod counter;
pub mod detector;
pub mod sensor;
pub mod traffic;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::codec::{self, InferenceMessage, FLAG_DETECTIONS_PRESENT};
use crate::model::{DetectorProfile, NodeId, Source};
use crate::profiles;

pub use counter::{CounterError, CounterState};
pub use detector::run_detector;
pub use sensor::{sample_telemetry, QualityModel, SensorChannelConfig, SensorConfigError};
pub use traffic::{TrafficConfigError, TrafficSim, TrafficSimConfig};

/// splitmix64 finalizer over three mixed words; used to derive independent
/// rng streams from one seed.
pub(crate) fn mix64(seed: u64, stream: u64, t: u64) -> u64 {
    let mut z = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.rotate_left(17))
        .wrapping_add(t.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One message ready for the bus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Publication {
    pub topic: String,
    pub payload: Vec<u8>,
}

/// Full configuration of one edge node (the agent config file format).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub node: NodeId,
    pub site: String,
    #[serde(default)]
    pub sensors: BTreeMap<Source, SensorChannelConfig>,
    pub traffic: TrafficSimConfig,
    /// Name of a built-in detector profile.
    pub profile: String,
    /// Optional gaussian jitter added to the reported inference latency.
    #[serde(default)]
    pub latency_jitter_ms: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AgentError {
    #[error("invalid site `{0}`: must be a single non-wildcard topic level")]
    BadSite(String),
    #[error("unknown profile `{0}`")]
    UnknownProfile(String),
    #[error(transparent)]
    Sensor(#[from] SensorConfigError),
    #[error(transparent)]
    Traffic(#[from] TrafficConfigError),
    #[error("class_mix assigns weight to class {0} beyond the profile's {1} classes")]
    MixBeyondClasses(u8, usize),
    #[error("latency_jitter_ms must be finite and non-negative")]
    BadJitter,
}

/// A topic level must be non-empty, wildcard-free, and not system-reserved.
pub fn validate_site(site: &str) -> Result<(), AgentError> {
    let ok = !site.is_empty()
        && !site.starts_with('$')
        && site
            .chars()
            .all(|c| c != '/' && c != '+' && c != '#' && !c.is_whitespace());
    if ok {
        Ok(())
    } else {
        Err(AgentError::BadSite(site.to_string()))
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<DetectorProfile, AgentError> {
        validate_site(&self.site)?;
        for (source, cfg) in &self.sensors {
            cfg.validate(*source)?;
        }
        self.traffic.validate()?;
        if !self.latency_jitter_ms.is_finite() || self.latency_jitter_ms < 0.0 {
            return Err(AgentError::BadJitter);
        }
        let profile = profiles::by_name(&self.profile)
            .ok_or_else(|| AgentError::UnknownProfile(self.profile.clone()))?;
        for (i, p) in self.traffic.class_mix.iter().enumerate() {
            if *p > 0.0 && i >= profile.classes.len() {
                return Err(AgentError::MixBeyondClasses(i as u8, profile.classes.len()));
            }
        }
        Ok(profile)
    }

    pub fn telemetry_topic(&self, source: Source) -> String {
        format!("tms/{}/{}/telemetry/{}", self.site, self.node, source)
    }

    pub fn inference_topic(&self) -> String {
        format!("tms/{}/{}/inference", self.site, self.node)
    }
}

#[derive(Debug)]
enum DueEvent {
    Telemetry(Source),
    Frame,
}

/// A running edge node over virtual or real time.
#[derive(Debug)]
pub struct EdgeAgent {
    cfg: AgentConfig,
    profile: DetectorProfile,
    seed: u64,
    traffic: TrafficSim,
    counter: CounterState,
    det_rng: ChaCha8Rng,
    sensor_due: BTreeMap<Source, u64>,
    start_ms: u64,
    frame_interval_ms: f64,
    frame_index: u64,
    next_packet_id: u32,
}

impl EdgeAgent {
    /// Builds an agent starting its schedules at `start_ms` (> 0).
    /// `seed_mix` lets a scenario derive distinct streams per run; pass 0
    /// to use the agent's own seed unchanged.
    pub fn new(cfg: AgentConfig, start_ms: u64, seed_mix: u64) -> Result<Self, AgentError> {
        let profile = cfg.validate()?;
        let seed = mix64(cfg.traffic.rng_seed, seed_mix, cfg.node.as_u128() as u64);
        let mut traffic_cfg = cfg.traffic.clone();
        traffic_cfg.rng_seed = seed;
        let traffic = TrafficSim::new(traffic_cfg)?;
        let det_rng = ChaCha8Rng::seed_from_u64(mix64(seed, 0x6465_7463, 0));
        let sensor_due = cfg.sensors.keys().map(|s| (*s, start_ms)).collect();
        let frame_interval_ms = 1000.0 / cfg.traffic.fps;
        Ok(EdgeAgent {
            cfg,
            profile,
            seed,
            traffic,
            counter: CounterState::new(),
            det_rng,
            sensor_due,
            start_ms,
            frame_interval_ms,
            frame_index: 0,
            next_packet_id: 0,
        })
    }

    pub fn node(&self) -> NodeId {
        self.cfg.node
    }

    pub fn site(&self) -> &str {
        &self.cfg.site
    }

    pub fn counter(&self) -> &CounterState {
        &self.counter
    }

    pub fn profile(&self) -> &DetectorProfile {
        &self.profile
    }

    fn frame_due_ms(&self) -> u64 {
        (self.start_ms as f64 + self.frame_index as f64 * self.frame_interval_ms).floor() as u64
    }

    /// Virtual time of the agent's next pending event.
    pub fn next_due_ms(&self) -> u64 {
        let sensors = self.sensor_due.values().copied().min();
        let frame = self.frame_due_ms();
        sensors.map_or(frame, |s| s.min(frame))
    }

    fn pop_due(&mut self, now_ms: u64) -> Option<(u64, DueEvent)> {
        let mut best: Option<(u64, DueEvent)> = None;
        for (source, due) in &self.sensor_due {
            if *due <= now_ms && best.as_ref().is_none_or(|(t, _)| *due < *t) {
                best = Some((*due, DueEvent::Telemetry(*source)));
            }
        }
        let frame_due = self.frame_due_ms();
        if frame_due <= now_ms {
            // telemetry sorts before frames at the same instant
            if best.as_ref().is_none_or(|(t, _)| frame_due < *t) {
                best = Some((frame_due, DueEvent::Frame));
            }
        }
        best
    }

    /// Processes every event due at or before `now_ms`, in
    /// (time, telemetry-before-frame, source) order, and returns the
    /// resulting publications. Packet ids on inference messages increase by
    /// exactly one per frame.
    pub fn publish_tick(&mut self, now_ms: u64) -> Vec<Publication> {
        let mut out = Vec::new();
        while let Some((due, event)) = self.pop_due(now_ms) {
            match event {
                DueEvent::Telemetry(source) => {
                    let channel = self.cfg.sensors[&source];
                    let reading =
                        sample_telemetry(&channel, self.cfg.node, source, due, self.seed);
                    let line = codec::encode_telemetry_line(&reading)
                        .expect("simulated readings satisfy their invariants");
                    out.push(Publication {
                        topic: self.cfg.telemetry_topic(source),
                        payload: line.into_bytes(),
                    });
                    self.sensor_due
                        .insert(source, due + channel.sample_period_ms);
                }
                DueEvent::Frame => {
                    let frame = self.traffic.next_frame_truth(due);
                    let mut det = run_detector(&self.profile, &frame, &mut self.det_rng);
                    if self.cfg.latency_jitter_ms > 0.0 {
                        let jitter = Normal::new(0.0, self.cfg.latency_jitter_ms)
                            .expect("validated jitter")
                            .sample(&mut self.det_rng);
                        det.measured_latency_ms = (det.measured_latency_ms + jitter).max(0.001);
                    }
                    self.counter
                        .update(&frame, &det, &mut self.det_rng)
                        .expect("detection derives from this frame");
                    let msg = InferenceMessage {
                        packet_id: self.next_packet_id,
                        node: self.cfg.node,
                        timestamp_ms: due,
                        frame_seq: frame.frame_seq,
                        infer_latency_us: (det.measured_latency_ms * 1000.0).round() as u32,
                        total_count: det.total,
                        class_counts: det.per_class_counts,
                        mean_conf_milli: (det.mean_confidence * 1000.0).round() as u16,
                        flags: if det.total > 0 {
                            FLAG_DETECTIONS_PRESENT
                        } else {
                            0
                        },
                    };
                    self.next_packet_id += 1;
                    self.frame_index += 1;
                    let payload = codec::encode_inference(&msg)
                        .expect("message built from a valid detection");
                    out.push(Publication {
                        topic: self.cfg.inference_topic(),
                        payload: payload.to_vec(),
                    });
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::decode_inference;

    fn config() -> AgentConfig {
        let mut sensors = BTreeMap::new();
        sensors.insert(
            Source::Co2Ppm,
            SensorChannelConfig {
                baseline: 420.0,
                diurnal_amplitude: 40.0,
                noise_stddev: 5.0,
                sample_period_ms: 1000,
                quality: QualityModel::Constant(0.9),
            },
        );
        AgentConfig {
            node: NodeId::from_u128(0xabc1).unwrap(),
            site: "siteA".to_string(),
            sensors,
            traffic: TrafficSimConfig {
                fps: 20.0,
                mean_vehicles_per_frame: 3.0,
                track_persistence_frames: 10,
                rng_seed: 5,
                ..TrafficSimConfig::default()
            },
            profile: "mtd".to_string(),
            latency_jitter_ms: 0.0,
        }
    }

    const START: u64 = 1_700_000_000_000;

    #[test]
    fn one_frame_yields_one_67_byte_payload() {
        let mut cfg = config();
        cfg.sensors.clear();
        let mut agent = EdgeAgent::new(cfg, START, 0).unwrap();
        let pubs = agent.publish_tick(START); // first frame due at start
        assert_eq!(pubs.len(), 1);
        assert_eq!(pubs[0].payload.len(), 67);
        assert!(pubs[0].topic.ends_with("/inference"));
        let msg = decode_inference(&pubs[0].payload).unwrap();
        assert_eq!(msg.packet_id, 0);
        assert_eq!(msg.timestamp_ms, START);
    }

    #[test]
    fn nothing_due_yields_nothing() {
        let mut agent = EdgeAgent::new(config(), START, 0).unwrap();
        agent.publish_tick(START); // consume everything due at start
        assert!(agent.publish_tick(START).is_empty());
    }

    #[test]
    fn packet_ids_increase_by_one() {
        let mut cfg = config();
        cfg.sensors.clear();
        let mut agent = EdgeAgent::new(cfg, START, 0).unwrap();
        let mut expected = 0u32;
        for tick in 1..=1000u64 {
            for publication in agent.publish_tick(START + tick * 50) {
                let msg = decode_inference(&publication.payload).unwrap();
                assert_eq!(msg.packet_id, expected);
                expected += 1;
            }
        }
        assert_eq!(expected, 1001); // frame at START plus one per 50 ms
    }

    #[test]
    fn telemetry_and_inference_interleave_deterministically() {
        let make = || EdgeAgent::new(config(), START, 7).unwrap();
        let mut a = make();
        let mut b = make();
        for tick in 0..200u64 {
            let now = START + tick * 100;
            assert_eq!(a.publish_tick(now), b.publish_tick(now));
        }
    }

    #[test]
    fn emitted_totals_match_decodes() {
        let mut agent = EdgeAgent::new(config(), START, 0).unwrap();
        for tick in 0..100u64 {
            for publication in agent.publish_tick(START + tick * 50) {
                if publication.topic.ends_with("/inference") {
                    let msg = decode_inference(&publication.payload).unwrap();
                    let sum: u32 = msg.class_counts.iter().map(|&c| u32::from(c)).sum();
                    assert_eq!(sum, u32::from(msg.total_count));
                }
            }
        }
    }

    #[test]
    fn twenty_fps_for_ten_seconds_is_200_frames() {
        let mut cfg = config();
        cfg.sensors.clear();
        let mut agent = EdgeAgent::new(cfg, START, 0).unwrap();
        let mut frames = 0;
        // events in [START, START + 10s)
        for tick in 0..200u64 {
            frames += agent.publish_tick(START + tick * 50).len();
        }
        assert_eq!(frames, 200);
    }

    #[test]
    fn bad_configs_rejected() {
        let mut cfg = config();
        cfg.site = "a/b".into();
        assert!(matches!(cfg.validate(), Err(AgentError::BadSite(_))));

        let mut cfg = config();
        cfg.profile = "nope".into();
        assert!(matches!(cfg.validate(), Err(AgentError::UnknownProfile(_))));
    }
}
