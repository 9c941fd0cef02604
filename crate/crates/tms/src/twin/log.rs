//! Signature records and their on-disk line format, plus the raw telemetry
//! append log.
//!
//! Both logs are append-only text files, one record per line, in the
//! telemetry line format; signature lines carry a leading sequence number.
//! That keeps stores inspectable with ordinary text tools and recoverable
//! by a straight scan.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::codec::{encode_telemetry_line, parse_telemetry_line};
use crate::model::{NodeId, Source, TelemetryReading};

use super::{StoreError, TwinId};

/// What produced a signature: one of the telemetry sources, or the
/// inference pipeline. Serializes as its plain name (`co2_ppm`,
/// `inference`, ...).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SigSource {
    Telemetry(Source),
    Inference,
}

impl Serialize for SigSource {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SigSource {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for SigSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SigSource::Telemetry(s) => write!(f, "{s}"),
            SigSource::Inference => f.write_str("inference"),
        }
    }
}

impl FromStr for SigSource {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "inference" {
            return Ok(SigSource::Inference);
        }
        s.parse::<Source>()
            .map(SigSource::Telemetry)
            .map_err(|_| StoreError::Corrupt(format!("unknown signature source `{s}`")))
    }
}

/// Compact summary of one inference message inside a signature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceSummary {
    pub frame_seq: u64,
    pub total: u16,
    pub latency_us: u32,
}

/// A signature's observed value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignatureValue {
    Scalar(f64),
    Inference(InferenceSummary),
}

impl SignatureValue {
    /// Scalar view used by scoring and post-processing; an inference
    /// signature contributes its vehicle total.
    pub fn as_scalar(&self) -> f64 {
        match self {
            SignatureValue::Scalar(v) => *v,
            SignatureValue::Inference(s) => f64::from(s.total),
        }
    }
}

/// One entry of a twin's append-only observation log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureRecord {
    pub twin_id: TwinId,
    pub source: SigSource,
    pub value: SignatureValue,
    pub timestamp_ms: u64,
    pub quality: f64,
    pub sequence: u64,
}

/// Record fields without the twin id; what the store keeps per twin.
#[derive(Debug, Clone, PartialEq)]
pub(super) struct StoredSignature {
    pub source: SigSource,
    pub value: SignatureValue,
    pub timestamp_ms: u64,
    pub quality: f64,
    pub sequence: u64,
}

impl StoredSignature {
    pub fn with_twin(&self, twin_id: &TwinId) -> SignatureRecord {
        SignatureRecord {
            twin_id: twin_id.clone(),
            source: self.source,
            value: self.value,
            timestamp_ms: self.timestamp_ms,
            quality: self.quality,
            sequence: self.sequence,
        }
    }
}

/// Formats one signature log line: sequence prefix plus a telemetry-format
/// record.
pub(super) fn encode_signature_line(node: NodeId, rec: &StoredSignature) -> String {
    match (&rec.source, &rec.value) {
        (SigSource::Telemetry(source), SignatureValue::Scalar(v)) => {
            let reading = TelemetryReading {
                node,
                source: *source,
                value: *v,
                timestamp_ms: rec.timestamp_ms,
                quality: rec.quality,
            };
            let line = encode_telemetry_line(&reading)
                .expect("stored telemetry signatures are valid readings");
            format!("{} {line}", rec.sequence)
        }
        (SigSource::Inference, SignatureValue::Inference(s)) => format!(
            "{} inference,node={} value={},frame={},latency_us={},quality={} {}",
            rec.sequence, node, s.total, s.frame_seq, s.latency_us, rec.quality, rec.timestamp_ms
        ),
        _ => unreachable!("source kind and value kind always agree"),
    }
}

pub(super) fn parse_signature_line(line: &str) -> Result<StoredSignature, StoreError> {
    let (seq_str, rest) = line
        .split_once(' ')
        .ok_or_else(|| StoreError::Corrupt(format!("no sequence prefix: `{line}`")))?;
    let sequence: u64 = seq_str
        .parse()
        .map_err(|_| StoreError::Corrupt(format!("bad sequence: `{line}`")))?;
    if let Some(body) = rest.strip_prefix("inference,") {
        return parse_inference_body(body, sequence, line);
    }
    let reading =
        parse_telemetry_line(rest).map_err(|e| StoreError::Corrupt(format!("{e}: `{line}`")))?;
    Ok(StoredSignature {
        source: SigSource::Telemetry(reading.source),
        value: SignatureValue::Scalar(reading.value),
        timestamp_ms: reading.timestamp_ms,
        quality: reading.quality,
        sequence,
    })
}

fn parse_inference_body(
    body: &str,
    sequence: u64,
    line: &str,
) -> Result<StoredSignature, StoreError> {
    let corrupt = || StoreError::Corrupt(format!("bad inference signature: `{line}`"));
    let mut parts = body.split(' ');
    let node_tag = parts.next().ok_or_else(corrupt)?;
    let field_list = parts.next().ok_or_else(corrupt)?;
    let ts_str = parts.next().ok_or_else(corrupt)?;
    if parts.next().is_some() {
        return Err(corrupt());
    }
    let _node = node_tag.strip_prefix("node=").ok_or_else(corrupt)?;
    let fields = field_list.split(',');
    let mut total = None;
    let mut frame = None;
    let mut latency_us = None;
    let mut quality = None;
    for field in fields {
        let (key, value) = field.split_once('=').ok_or_else(corrupt)?;
        match key {
            "value" => total = Some(value.parse::<u16>().map_err(|_| corrupt())?),
            "frame" => frame = Some(value.parse::<u64>().map_err(|_| corrupt())?),
            "latency_us" => latency_us = Some(value.parse::<u32>().map_err(|_| corrupt())?),
            "quality" => quality = Some(value.parse::<f64>().map_err(|_| corrupt())?),
            _ => return Err(corrupt()),
        }
    }
    Ok(StoredSignature {
        source: SigSource::Inference,
        value: SignatureValue::Inference(InferenceSummary {
            frame_seq: frame.ok_or_else(corrupt)?,
            total: total.ok_or_else(corrupt)?,
            latency_us: latency_us.ok_or_else(corrupt)?,
        }),
        timestamp_ms: ts_str.parse().map_err(|_| corrupt())?,
        quality: quality.ok_or_else(corrupt)?,
        sequence,
    })
}

/// Append-only store of raw telemetry lines (the platform's time-series
/// log). Directory-backed or purely in memory.
pub struct TelemetryLog {
    dir: Option<std::path::PathBuf>,
    inner: std::sync::Mutex<TelemetryLogInner>,
}

#[derive(Default)]
struct TelemetryLogInner {
    files: std::collections::HashMap<TwinId, std::io::BufWriter<std::fs::File>>,
    memory: std::collections::HashMap<TwinId, Vec<String>>,
    lines_appended: u64,
}

impl TelemetryLog {
    pub fn in_memory() -> Self {
        TelemetryLog {
            dir: None,
            inner: Default::default(),
        }
    }

    pub fn open(dir: impl Into<std::path::PathBuf>) -> Self {
        TelemetryLog {
            dir: Some(dir.into()),
            inner: Default::default(),
        }
    }

    pub fn append(&self, twin: &TwinId, line: &str) -> Result<(), StoreError> {
        use std::io::Write;
        let mut inner = self.inner.lock().expect("telemetry log lock");
        inner.lines_appended += 1;
        match &self.dir {
            None => {
                inner
                    .memory
                    .entry(twin.clone())
                    .or_default()
                    .push(line.to_string());
                Ok(())
            }
            Some(dir) => {
                if !inner.files.contains_key(twin) {
                    let path = dir
                        .join("telemetry")
                        .join(&twin.site)
                        .join(format!("{}.log", twin.node));
                    if let Some(parent) = path.parent() {
                        std::fs::create_dir_all(parent)?;
                    }
                    let file = std::fs::OpenOptions::new()
                        .create(true)
                        .append(true)
                        .open(path)?;
                    inner
                        .files
                        .insert(twin.clone(), std::io::BufWriter::new(file));
                }
                let writer = inner.files.get_mut(twin).expect("just inserted");
                writeln!(writer, "{line}")?;
                Ok(())
            }
        }
    }

    pub fn lines_appended(&self) -> u64 {
        self.inner.lock().expect("telemetry log lock").lines_appended
    }

    /// Reads back one twin's lines (from memory or disk).
    pub fn lines(&self, twin: &TwinId) -> Result<Vec<String>, StoreError> {
        let mut inner = self.inner.lock().expect("telemetry log lock");
        match &self.dir {
            None => Ok(inner.memory.get(twin).cloned().unwrap_or_default()),
            Some(dir) => {
                use std::io::Write;
                if let Some(w) = inner.files.get_mut(twin) {
                    w.flush()?;
                }
                let path = dir
                    .join("telemetry")
                    .join(&twin.site)
                    .join(format!("{}.log", twin.node));
                if !path.exists() {
                    return Ok(Vec::new());
                }
                let text = std::fs::read_to_string(path)?;
                Ok(text.lines().map(str::to_string).collect())
            }
        }
    }

    pub fn flush(&self) -> Result<(), StoreError> {
        use std::io::Write;
        let mut inner = self.inner.lock().expect("telemetry log lock");
        for writer in inner.files.values_mut() {
            writer.flush()?;
        }
        Ok(())
    }
}
