//! Binary codec for the 67-byte edge-to-fog inference message and the
//! textual telemetry line format.
//!
//! The inference frame is fixed-layout, big-endian:
//!
//! ```text
//! offset  len  field
//! 0       2    magic 0x45 0x49
//! 2       1    version (1)
//! 3       1    msg_type (1 = inference)
//! 4       4    packet_id              u32
//! 8       16   node uuid
//! 24      8    timestamp_ms           u64
//! 32      8    frame_seq              u64
//! 40      4    infer_latency_us       u32
//! 44      2    total_count            u16
//! 46      12   class_counts           6 x u16
//! 58      2    mean_conf_milli        u16
//! 60      1    flags
//! 61      2    reserved (0x0000)
//! 63      4    crc32 of bytes 0..63   u32
//! ```
//!
//! CRC32 is the IEEE polynomial, reflected, init `0xFFFFFFFF` (the zlib
//! convention). Encoding is deterministic: equal messages produce bytewise
//! equal frames.

use serde::{Deserialize, Serialize};

use crate::model::{ModelError, NodeId, Source, TelemetryReading, CLASS_COUNT};

/// Exact size of an encoded inference message.
pub const INFERENCE_WIRE_LEN: usize = 67;

/// Frame preamble: `EI` in ASCII.
pub const MAGIC: [u8; 2] = [0x45, 0x49];

/// Current wire format version.
pub const WIRE_VERSION: u8 = 1;

/// Message type tag for inference summaries.
pub const MSG_TYPE_INFERENCE: u8 = 1;

/// Flag bit set when the frame carried at least one detection.
pub const FLAG_DETECTIONS_PRESENT: u8 = 0x01;

const CRC_OFFSET: usize = INFERENCE_WIRE_LEN - 4;

/// The fixed edge-to-fog detection summary: per-frame vehicle counts plus
/// the measured inference latency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceMessage {
    pub packet_id: u32,
    pub node: NodeId,
    pub timestamp_ms: u64,
    pub frame_seq: u64,
    pub infer_latency_us: u32,
    pub total_count: u16,
    pub class_counts: [u16; CLASS_COUNT],
    /// Mean detection confidence scaled by 1000; at most 1000.
    pub mean_conf_milli: u16,
    pub flags: u8,
}

impl InferenceMessage {
    pub fn validate(&self) -> Result<(), EncodeError> {
        let sum: u32 = self.class_counts.iter().map(|&c| u32::from(c)).sum();
        if sum != u32::from(self.total_count) {
            return Err(EncodeError::CountMismatch {
                total: self.total_count,
                sum,
            });
        }
        if self.mean_conf_milli > 1000 {
            return Err(EncodeError::ConfidenceOutOfRange(self.mean_conf_milli));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EncodeError {
    #[error("count mismatch: total {total} vs class sum {sum}")]
    CountMismatch { total: u16, sum: u32 },
    #[error("mean_conf_milli {0} exceeds 1000")]
    ConfidenceOutOfRange(u16),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("length: expected {INFERENCE_WIRE_LEN} bytes, got {0}")]
    Length(usize),
    #[error("magic: bad frame preamble")]
    Magic,
    #[error("version: unsupported version {0}")]
    Version(u8),
    #[error("msg_type: unknown message type {0}")]
    MsgType(u8),
    #[error("crc: stored {stored:#010x} vs computed {computed:#010x}")]
    Crc { stored: u32, computed: u32 },
    #[error("count mismatch: total {total} vs class sum {sum}")]
    CountMismatch { total: u16, sum: u32 },
    #[error("field: invalid {0}")]
    Field(&'static str),
}

/// Encodes a valid message into exactly 67 bytes.
pub fn encode_inference(m: &InferenceMessage) -> Result<[u8; INFERENCE_WIRE_LEN], EncodeError> {
    m.validate()?;
    let mut buf = [0u8; INFERENCE_WIRE_LEN];
    buf[0..2].copy_from_slice(&MAGIC);
    buf[2] = WIRE_VERSION;
    buf[3] = MSG_TYPE_INFERENCE;
    buf[4..8].copy_from_slice(&m.packet_id.to_be_bytes());
    buf[8..24].copy_from_slice(m.node.as_bytes());
    buf[24..32].copy_from_slice(&m.timestamp_ms.to_be_bytes());
    buf[32..40].copy_from_slice(&m.frame_seq.to_be_bytes());
    buf[40..44].copy_from_slice(&m.infer_latency_us.to_be_bytes());
    buf[44..46].copy_from_slice(&m.total_count.to_be_bytes());
    for (i, count) in m.class_counts.iter().enumerate() {
        let at = 46 + 2 * i;
        buf[at..at + 2].copy_from_slice(&count.to_be_bytes());
    }
    buf[58..60].copy_from_slice(&m.mean_conf_milli.to_be_bytes());
    buf[60] = m.flags;
    // bytes 61..63 stay zero (reserved)
    let crc = crc32fast::hash(&buf[..CRC_OFFSET]);
    buf[CRC_OFFSET..].copy_from_slice(&crc.to_be_bytes());
    Ok(buf)
}

/// Decodes and verifies a frame; inverse of [`encode_inference`] on its image.
pub fn decode_inference(bytes: &[u8]) -> Result<InferenceMessage, DecodeError> {
    if bytes.len() != INFERENCE_WIRE_LEN {
        return Err(DecodeError::Length(bytes.len()));
    }
    if bytes[0..2] != MAGIC {
        return Err(DecodeError::Magic);
    }
    if bytes[2] != WIRE_VERSION {
        return Err(DecodeError::Version(bytes[2]));
    }
    if bytes[3] != MSG_TYPE_INFERENCE {
        return Err(DecodeError::MsgType(bytes[3]));
    }
    let stored = u32::from_be_bytes(bytes[CRC_OFFSET..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..CRC_OFFSET]);
    if stored != computed {
        return Err(DecodeError::Crc { stored, computed });
    }
    if bytes[61..63] != [0, 0] {
        return Err(DecodeError::Field("reserved"));
    }
    let node_bytes: [u8; 16] = bytes[8..24].try_into().unwrap();
    let node = NodeId::from_bytes(node_bytes).map_err(|_| DecodeError::Field("node"))?;
    let mut class_counts = [0u16; CLASS_COUNT];
    for (i, count) in class_counts.iter_mut().enumerate() {
        let at = 46 + 2 * i;
        *count = u16::from_be_bytes(bytes[at..at + 2].try_into().unwrap());
    }
    let total_count = u16::from_be_bytes(bytes[44..46].try_into().unwrap());
    let sum: u32 = class_counts.iter().map(|&c| u32::from(c)).sum();
    if sum != u32::from(total_count) {
        return Err(DecodeError::CountMismatch {
            total: total_count,
            sum,
        });
    }
    let mean_conf_milli = u16::from_be_bytes(bytes[58..60].try_into().unwrap());
    if mean_conf_milli > 1000 {
        return Err(DecodeError::Field("mean_conf_milli"));
    }
    Ok(InferenceMessage {
        packet_id: u32::from_be_bytes(bytes[4..8].try_into().unwrap()),
        node,
        timestamp_ms: u64::from_be_bytes(bytes[24..32].try_into().unwrap()),
        frame_seq: u64::from_be_bytes(bytes[32..40].try_into().unwrap()),
        infer_latency_us: u32::from_be_bytes(bytes[40..44].try_into().unwrap()),
        total_count,
        class_counts,
        mean_conf_milli,
        flags: bytes[60],
    })
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LineError {
    #[error("syntax: {0}")]
    Syntax(&'static str),
    #[error("unknown source `{0}`")]
    UnknownSource(String),
    #[error("range: {0}")]
    Range(ModelError),
}

/// Formats a valid reading as one telemetry line:
///
/// `<source>,node=<uuid-hex> value=<decimal>,quality=<decimal> <timestamp_ms>`
///
/// Decimals are printed in Rust's shortest round-trip form, so
/// [`parse_telemetry_line`] recovers the exact `f64` bits.
pub fn encode_telemetry_line(r: &TelemetryReading) -> Result<String, ModelError> {
    r.validate()?;
    Ok(format!(
        "{},node={} value={},quality={} {}",
        r.source, r.node, r.value, r.quality, r.timestamp_ms
    ))
}

/// Parses a telemetry line; inverse of [`encode_telemetry_line`] on its image.
pub fn parse_telemetry_line(line: &str) -> Result<TelemetryReading, LineError> {
    let mut parts = line.split(' ');
    let head = parts.next().filter(|s| !s.is_empty()).ok_or(LineError::Syntax("empty line"))?;
    let fields = parts.next().ok_or(LineError::Syntax("missing fields"))?;
    let ts = parts.next().ok_or(LineError::Syntax("missing timestamp"))?;
    if parts.next().is_some() {
        return Err(LineError::Syntax("trailing data"));
    }

    let (source_str, node_tag) = head
        .split_once(',')
        .ok_or(LineError::Syntax("missing node tag"))?;
    let source: Source = source_str
        .parse()
        .map_err(|_| LineError::UnknownSource(source_str.to_string()))?;
    let node_hex = node_tag
        .strip_prefix("node=")
        .ok_or(LineError::Syntax("expected node="))?;
    let node =
        NodeId::parse_simple_hex(node_hex).map_err(|_| LineError::Syntax("bad node id"))?;

    let (value_field, quality_field) = fields
        .split_once(',')
        .ok_or(LineError::Syntax("missing quality field"))?;
    let value = parse_field(value_field, "value=")?;
    let quality = parse_field(quality_field, "quality=")?;

    let timestamp_ms: u64 = ts
        .parse()
        .map_err(|_| LineError::Syntax("bad timestamp"))?;

    let reading = TelemetryReading {
        node,
        source,
        value,
        timestamp_ms,
        quality,
    };
    reading.validate().map_err(LineError::Range)?;
    Ok(reading)
}

fn parse_field(field: &str, key: &'static str) -> Result<f64, LineError> {
    let raw = field
        .strip_prefix(key)
        .ok_or(LineError::Syntax("unexpected field key"))?;
    if raw.is_empty() {
        return Err(LineError::Syntax("empty field value"));
    }
    raw.parse().map_err(|_| LineError::Syntax("bad decimal"))
}
