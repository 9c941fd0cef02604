//! Shared domain vocabulary: node identities, telemetry readings, detector
//! profiles, and frame ground truth.
//!
//! Everything here is an immutable value object, safe to copy between threads.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use uuid::Uuid;

/// Milliseconds in one day; the period of the diurnal telemetry cycle.
pub const DAY_MS: u64 = 86_400_000;

/// Fixed vehicle class vocabulary. Wire formats and counters are sized to
/// exactly six classes.
pub const VEHICLE_CLASSES: [&str; 6] = ["car", "bus", "truck", "motorcycle", "bicycle", "other"];

/// Number of vehicle classes carried by every counter and wire message.
pub const CLASS_COUNT: usize = VEHICLE_CLASSES.len();

/// Identifier of one edge node, stable for the node's lifetime.
///
/// The textual form is the 32-digit lowercase hex of the underlying UUID;
/// parsing also accepts the conventional hyphenated form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(Uuid);

impl NodeId {
    /// Creates a node id, rejecting the all-zero UUID.
    pub fn new(uuid: Uuid) -> Result<Self, ModelError> {
        if uuid.is_nil() {
            return Err(ModelError::NilNodeId);
        }
        Ok(NodeId(uuid))
    }

    pub fn from_u128(v: u128) -> Result<Self, ModelError> {
        Self::new(Uuid::from_u128(v))
    }

    pub fn from_bytes(bytes: [u8; 16]) -> Result<Self, ModelError> {
        Self::new(Uuid::from_bytes(bytes))
    }

    pub fn as_bytes(&self) -> &[u8; 16] {
        self.0.as_bytes()
    }

    pub fn as_u128(&self) -> u128 {
        self.0.as_u128()
    }

    /// Strict parse of the 32-digit hex form used in wire payloads and topics.
    pub fn parse_simple_hex(s: &str) -> Result<Self, ModelError> {
        if s.len() != 32 || !s.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(ModelError::BadNodeId(s.to_string()));
        }
        let v = u128::from_str_radix(s, 16).map_err(|_| ModelError::BadNodeId(s.to_string()))?;
        Self::from_u128(v)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.simple())
    }
}

impl FromStr for NodeId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let uuid = Uuid::parse_str(s).map_err(|_| ModelError::BadNodeId(s.to_string()))?;
        Self::new(uuid)
    }
}

impl Serialize for NodeId {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The telemetry quantities an edge node samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    TemperatureC,
    HumidityPct,
    PressureHpa,
    Co2Ppm,
    No2Ppb,
    Pm25Ugm3,
    NoiseDb,
}

impl Source {
    pub const ALL: [Source; 7] = [
        Source::TemperatureC,
        Source::HumidityPct,
        Source::PressureHpa,
        Source::Co2Ppm,
        Source::No2Ppb,
        Source::Pm25Ugm3,
        Source::NoiseDb,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Source::TemperatureC => "temperature_c",
            Source::HumidityPct => "humidity_pct",
            Source::PressureHpa => "pressure_hpa",
            Source::Co2Ppm => "co2_ppm",
            Source::No2Ppb => "no2_ppb",
            Source::Pm25Ugm3 => "pm25_ugm3",
            Source::NoiseDb => "noise_db",
        }
    }

    /// Hard validity bounds for a value of this source, in the source's unit.
    /// Unbounded ends are infinite.
    pub fn valid_range(&self) -> (f64, f64) {
        match self {
            Source::HumidityPct => (0.0, 100.0),
            Source::Co2Ppm | Source::NoiseDb => (0.0, f64::INFINITY),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Source::ALL
            .iter()
            .copied()
            .find(|src| src.as_str() == s)
            .ok_or_else(|| ModelError::UnknownSource(s.to_string()))
    }
}

/// One timestamped sensor sample from a node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TelemetryReading {
    pub node: NodeId,
    pub source: Source,
    pub value: f64,
    pub timestamp_ms: u64,
    /// Self-assessed sample quality in `[0, 1]`; feeds opportunistic
    /// signature selection downstream.
    pub quality: f64,
}

impl TelemetryReading {
    /// Checks every reading invariant, naming the first violated one.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.timestamp_ms == 0 {
            return Err(ModelError::ZeroTimestamp);
        }
        if !self.value.is_finite() {
            return Err(ModelError::NonFinite);
        }
        if !self.quality.is_finite() || !(0.0..=1.0).contains(&self.quality) {
            return Err(ModelError::QualityOutOfRange(self.quality));
        }
        let (lo, hi) = self.source.valid_range();
        if self.value < lo || self.value > hi {
            return Err(ModelError::ValueOutOfRange(self.source, self.value));
        }
        Ok(())
    }
}

/// Validates a reading against all of its invariants.
pub fn validate_reading(r: &TelemetryReading) -> Result<(), ModelError> {
    r.validate()
}

/// A named detection model's latency/accuracy operating point, used to
/// simulate on-device inference without running a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorProfile {
    pub name: String,
    pub inference_latency_ms: f64,
    /// Mean average precision in `[0, 1]`. The simulation reinterprets this
    /// as a per-object detection probability.
    pub map_score: f64,
    pub classes: Vec<String>,
}

impl DetectorProfile {
    pub fn new(
        name: impl Into<String>,
        inference_latency_ms: f64,
        map_score: f64,
        classes: Vec<String>,
    ) -> Result<Self, ModelError> {
        let profile = DetectorProfile {
            name: name.into(),
            inference_latency_ms,
            map_score,
            classes,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.inference_latency_ms.is_finite() || self.inference_latency_ms <= 0.0 {
            return Err(ModelError::BadProfile("inference_latency_ms must be positive"));
        }
        if !self.map_score.is_finite() || !(0.0..=1.0).contains(&self.map_score) {
            return Err(ModelError::BadProfile("map_score must be in [0, 1]"));
        }
        if self.classes.is_empty() || self.classes.len() > CLASS_COUNT {
            return Err(ModelError::BadProfile("classes must hold 1..=6 labels"));
        }
        Ok(())
    }
}

/// One tracked object present in a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackedObject {
    pub track_id: u64,
    pub class_index: u8,
}

/// Ground truth for one simulated video frame: which tracked vehicles are
/// visible. Frames carry no pixels, only metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTruth {
    pub frame_seq: u64,
    pub objects: Vec<TrackedObject>,
    pub timestamp_ms: u64,
}

impl FrameTruth {
    /// Track ids must be unique within the frame and class indices must fall
    /// inside the fixed class vocabulary.
    pub fn validate(&self) -> Result<(), ModelError> {
        let mut seen = std::collections::HashSet::with_capacity(self.objects.len());
        for obj in &self.objects {
            if !seen.insert(obj.track_id) {
                return Err(ModelError::DuplicateTrack(obj.track_id));
            }
            if usize::from(obj.class_index) >= CLASS_COUNT {
                return Err(ModelError::BadClassIndex(obj.class_index));
            }
        }
        Ok(())
    }
}

/// Output of one simulated inference over a frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub frame_seq: u64,
    pub per_class_counts: [u16; CLASS_COUNT],
    pub total: u16,
    pub mean_confidence: f64,
    pub measured_latency_ms: f64,
}

impl DetectionResult {
    pub fn validate(&self) -> Result<(), ModelError> {
        let sum: u32 = self.per_class_counts.iter().map(|&c| u32::from(c)).sum();
        if sum != u32::from(self.total) {
            return Err(ModelError::CountMismatch {
                total: self.total,
                sum,
            });
        }
        if !(0.0..=1.0).contains(&self.mean_confidence) {
            return Err(ModelError::BadProfile("mean_confidence must be in [0, 1]"));
        }
        if !self.measured_latency_ms.is_finite() || self.measured_latency_ms <= 0.0 {
            return Err(ModelError::BadProfile("measured_latency_ms must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("nil node id")]
    NilNodeId,
    #[error("invalid node id `{0}`")]
    BadNodeId(String),
    #[error("unknown source `{0}`")]
    UnknownSource(String),
    #[error("zero timestamp")]
    ZeroTimestamp,
    #[error("non-finite value")]
    NonFinite,
    #[error("quality out of range: {0}")]
    QualityOutOfRange(f64),
    #[error("{label} out of range: {value}", label = .0.range_label(), value = .1)]
    ValueOutOfRange(Source, f64),
    #[error("duplicate track id {0}")]
    DuplicateTrack(u64),
    #[error("class index {0} out of range")]
    BadClassIndex(u8),
    #[error("invalid detector profile: {0}")]
    BadProfile(&'static str),
    #[error("count mismatch: total {total} vs sum {sum}")]
    CountMismatch { total: u16, sum: u32 },
}

impl Source {
    /// Short noun used in range-violation messages ("humidity out of range").
    fn range_label(&self) -> &'static str {
        match self {
            Source::TemperatureC => "temperature",
            Source::HumidityPct => "humidity",
            Source::PressureHpa => "pressure",
            Source::Co2Ppm => "co2",
            Source::No2Ppb => "no2",
            Source::Pm25Ugm3 => "pm25",
            Source::NoiseDb => "noise",
        }
    }
}
