//! Digital-twin document store plus the per-twin append-only signature
//! repository with opportunistic selection.
//!
//! Twins are JSON documents (attributes plus feature property trees) with a
//! revision that grows by exactly one per successful write. Signatures are
//! append-only, sequence-numbered observations from heterogeneous sources.
//! Persistence is one JSON file per twin and one log file per twin,
//! diff-able and recoverable by scan; an in-memory mode backs simulations.

pub mod http;
pub mod log;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::model::NodeId;

pub use log::{
    InferenceSummary, SigSource, SignatureRecord, SignatureValue, TelemetryLog,
};
use log::{encode_signature_line, parse_signature_line, StoredSignature};

/// Maximum property path depth, counting every `/`-separated segment.
pub const MAX_PATH_DEPTH: usize = 8;

/// Identity of one twin: `<site>/<node>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TwinId {
    pub site: String,
    pub node: NodeId,
}

impl TwinId {
    pub fn new(site: impl Into<String>, node: NodeId) -> Result<Self, StoreError> {
        let site = site.into();
        let ok = !site.is_empty()
            && site != "."
            && site != ".."
            && !site.starts_with('$')
            && site
                .chars()
                .all(|c| c != '/' && c != '+' && c != '#' && !c.is_whitespace());
        if !ok {
            return Err(StoreError::BadTwinId(site));
        }
        Ok(TwinId { site, node })
    }
}

impl fmt::Display for TwinId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.site, self.node)
    }
}

impl FromStr for TwinId {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (site, node) = s
            .split_once('/')
            .ok_or_else(|| StoreError::BadTwinId(s.to_string()))?;
        let node: NodeId = node
            .parse()
            .map_err(|_| StoreError::BadTwinId(s.to_string()))?;
        TwinId::new(site, node)
    }
}

impl Serialize for TwinId {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TwinId {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One named feature: a tree of scalar property leaves.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Feature {
    #[serde(default)]
    pub properties: Map<String, Value>,
}

/// Writable twin content: everything except identity and bookkeeping.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TwinContent {
    #[serde(default)]
    pub attributes: Map<String, Value>,
    #[serde(default)]
    pub features: BTreeMap<String, Feature>,
}

/// A twin document as stored and served.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinDocument {
    pub twin_id: TwinId,
    pub attributes: Map<String, Value>,
    pub features: BTreeMap<String, Feature>,
    /// Grows by exactly 1 per successful write; 0 means the twin exists
    /// only as a signature holder and has never been written.
    pub revision: u64,
    pub modified_ms: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("invalid twin id `{0}`")]
    BadTwinId(String),
    #[error("twin `{0}` not found")]
    NotFound(String),
    #[error("malformed path `{0}`")]
    MalformedPath(String),
    #[error("path `{0}` exceeds depth {MAX_PATH_DEPTH}")]
    DepthExceeded(String),
    #[error("value at `{0}` must be a scalar (string, number, or bool)")]
    NotScalar(String),
    #[error("quality {0} outside [0, 1]")]
    BadQuality(f64),
    #[error("invalid query: {0}")]
    BadQuery(&'static str),
    #[error("corrupt store data: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn is_scalar(v: &Value) -> bool {
    matches!(v, Value::String(_) | Value::Number(_) | Value::Bool(_))
}

fn validate_content(content: &TwinContent) -> Result<(), StoreError> {
    for (key, value) in &content.attributes {
        if !is_scalar(value) {
            return Err(StoreError::NotScalar(format!("attributes/{key}")));
        }
    }
    for (name, feature) in &content.features {
        // depth so far: features/<name>/properties
        validate_property_tree(
            &feature.properties,
            3,
            &format!("features/{name}/properties"),
        )?;
    }
    Ok(())
}

fn validate_property_tree(
    map: &Map<String, Value>,
    depth: usize,
    at: &str,
) -> Result<(), StoreError> {
    for (key, value) in map {
        let path = format!("{at}/{key}");
        if depth + 1 > MAX_PATH_DEPTH {
            return Err(StoreError::DepthExceeded(path));
        }
        match value {
            Value::Object(inner) => validate_property_tree(inner, depth + 1, &path)?,
            v if is_scalar(v) => {}
            _ => return Err(StoreError::NotScalar(path)),
        }
    }
    Ok(())
}

fn split_path(path: &str) -> Result<Vec<&str>, StoreError> {
    let segments: Vec<&str> = path.split('/').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(StoreError::MalformedPath(path.to_string()));
    }
    if segments.len() > MAX_PATH_DEPTH {
        return Err(StoreError::DepthExceeded(path.to_string()));
    }
    Ok(segments)
}

/// Parameters of one opportunistic signature selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureQuery {
    pub twin_id: TwinId,
    /// Empty means all sources.
    #[serde(default)]
    pub sources: BTreeSet<SigSource>,
    pub from_ms: u64,
    pub to_ms: u64,
    pub min_quality: f64,
    pub max_results: usize,
    /// Weight of recency in the score; quality gets `1 - recency_weight`.
    pub recency_weight: f64,
    /// The "now" recency is measured against.
    pub reference_ms: u64,
}

impl SignatureQuery {
    pub fn validate(&self) -> Result<(), StoreError> {
        if self.from_ms > self.to_ms {
            return Err(StoreError::BadQuery("from_ms must not exceed to_ms"));
        }
        if self.max_results == 0 {
            return Err(StoreError::BadQuery("max_results must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.min_quality) {
            return Err(StoreError::BadQuery("min_quality must be in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.recency_weight) {
            return Err(StoreError::BadQuery("recency_weight must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Selection score: `w_r * recency + (1 - w_r) * quality`, where recency
/// falls linearly from 1 at `reference_ms` to 0 at `from_ms` (clamped). A
/// degenerate window (`reference_ms <= from_ms`) makes every candidate
/// maximally recent.
pub fn signature_score(q: &SignatureQuery, timestamp_ms: u64, quality: f64) -> f64 {
    let recency = if q.reference_ms <= q.from_ms {
        1.0
    } else {
        let span = (q.reference_ms - q.from_ms) as f64;
        let age = q.reference_ms as f64 - timestamp_ms as f64;
        (1.0 - age / span).clamp(0.0, 1.0)
    };
    q.recency_weight * recency + (1.0 - q.recency_weight) * quality
}

struct TwinSlot {
    doc: TwinDocument,
    doc_dirty: bool,
    records: Vec<StoredSignature>,
    by_source: HashMap<SigSource, Vec<u32>>,
    writer: Option<std::io::BufWriter<std::fs::File>>,
    next_seq: u64,
}

impl TwinSlot {
    fn empty(id: &TwinId) -> Self {
        TwinSlot {
            doc: TwinDocument {
                twin_id: id.clone(),
                attributes: Map::new(),
                features: BTreeMap::new(),
                revision: 0,
                modified_ms: 0,
            },
            doc_dirty: false,
            records: Vec::new(),
            by_source: HashMap::new(),
            writer: None,
            next_seq: 1,
        }
    }

    fn push_record(&mut self, rec: StoredSignature) {
        self.by_source
            .entry(rec.source)
            .or_default()
            .push(self.records.len() as u32);
        self.next_seq = rec.sequence + 1;
        self.records.push(rec);
    }
}

struct StoreInner {
    dir: Option<PathBuf>,
    twins: RwLock<HashMap<TwinId, Arc<Mutex<TwinSlot>>>>,
}

/// The twin store. Clones share the same underlying store.
///
/// Reads run concurrently; writes are serialized per twin, so concurrent
/// writers never lose revision increments.
#[derive(Clone)]
pub struct TwinStore {
    inner: Arc<StoreInner>,
}

impl TwinStore {
    /// A store that never touches disk.
    pub fn in_memory() -> Self {
        TwinStore {
            inner: Arc::new(StoreInner {
                dir: None,
                twins: RwLock::new(HashMap::new()),
            }),
        }
    }

    /// Opens (or initializes) a directory-backed store, loading every twin
    /// document and signature log found under it.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        std::fs::create_dir_all(dir.join("twins"))?;
        std::fs::create_dir_all(dir.join("signatures"))?;
        let store = TwinStore {
            inner: Arc::new(StoreInner {
                dir: Some(dir.clone()),
                twins: RwLock::new(HashMap::new()),
            }),
        };
        store.load_docs(&dir)?;
        store.load_signatures(&dir)?;
        Ok(store)
    }

    fn load_docs(&self, dir: &std::path::Path) -> Result<(), StoreError> {
        let mut twins = self.inner.twins.write().expect("twins lock");
        for site_entry in read_dir_if_exists(&dir.join("twins"))? {
            for file in read_dir_if_exists(&site_entry)? {
                if file.extension().is_none_or(|e| e != "json") {
                    continue;
                }
                let text = std::fs::read_to_string(&file)?;
                let doc: TwinDocument = serde_json::from_str(&text)
                    .map_err(|e| StoreError::Corrupt(format!("{}: {e}", file.display())))?;
                let mut slot = TwinSlot::empty(&doc.twin_id);
                let id = doc.twin_id.clone();
                slot.doc = doc;
                twins.insert(id, Arc::new(Mutex::new(slot)));
            }
        }
        Ok(())
    }

    fn load_signatures(&self, dir: &std::path::Path) -> Result<(), StoreError> {
        let mut twins = self.inner.twins.write().expect("twins lock");
        for site_entry in read_dir_if_exists(&dir.join("signatures"))? {
            let site = site_entry
                .file_name()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            for file in read_dir_if_exists(&site_entry)? {
                if file.extension().is_none_or(|e| e != "log") {
                    continue;
                }
                let node_hex = file
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or_default();
                let node = NodeId::parse_simple_hex(node_hex)
                    .map_err(|_| StoreError::Corrupt(format!("{}", file.display())))?;
                let id = TwinId::new(site.clone(), node)?;
                let slot = twins
                    .entry(id.clone())
                    .or_insert_with(|| Arc::new(Mutex::new(TwinSlot::empty(&id))));
                let mut slot = slot.lock().expect("twin slot lock");
                let text = std::fs::read_to_string(&file)?;
                for line in text.lines() {
                    let rec = parse_signature_line(line)?;
                    slot.push_record(rec);
                }
            }
        }
        Ok(())
    }

    fn slot(&self, id: &TwinId) -> Option<Arc<Mutex<TwinSlot>>> {
        self.inner.twins.read().expect("twins lock").get(id).cloned()
    }

    fn slot_or_create(&self, id: &TwinId) -> Arc<Mutex<TwinSlot>> {
        if let Some(slot) = self.slot(id) {
            return slot;
        }
        let mut twins = self.inner.twins.write().expect("twins lock");
        twins
            .entry(id.clone())
            .or_insert_with(|| Arc::new(Mutex::new(TwinSlot::empty(id))))
            .clone()
    }

    /// Creates or replaces a twin's content. Returns the new revision
    /// (1 on first write).
    pub fn upsert_twin(
        &self,
        id: &TwinId,
        content: TwinContent,
        now_ms: u64,
    ) -> Result<u64, StoreError> {
        validate_content(&content)?;
        let slot = self.slot_or_create(id);
        let mut slot = slot.lock().expect("twin slot lock");
        slot.doc.attributes = content.attributes;
        slot.doc.features = content.features;
        slot.doc.revision += 1;
        slot.doc.modified_ms = now_ms;
        slot.doc_dirty = true;
        let revision = slot.doc.revision;
        drop(slot);
        self.persist_doc(id)?;
        Ok(revision)
    }

    /// Creates an empty twin if absent; returns true when created.
    pub fn ensure_twin(&self, id: &TwinId, now_ms: u64) -> Result<bool, StoreError> {
        if self.slot(id).is_some() {
            return Ok(false);
        }
        self.upsert_twin(id, TwinContent::default(), now_ms)?;
        Ok(true)
    }

    /// Latest committed document.
    pub fn get_twin(&self, id: &TwinId) -> Option<TwinDocument> {
        self.slot(id)
            .map(|slot| slot.lock().expect("twin slot lock").doc.clone())
    }

    /// All twin ids, sorted.
    pub fn list_twins(&self) -> Vec<TwinId> {
        let mut ids: Vec<TwinId> = self
            .inner
            .twins
            .read()
            .expect("twins lock")
            .keys()
            .cloned()
            .collect();
        ids.sort();
        ids
    }

    /// Sets one scalar leaf, creating intermediate objects as needed.
    /// Other leaves are untouched; the revision grows by one.
    pub fn set_property(
        &self,
        id: &TwinId,
        path: &str,
        value: Value,
        now_ms: u64,
    ) -> Result<u64, StoreError> {
        let segments = split_path(path)?;
        if !is_scalar(&value) {
            return Err(StoreError::NotScalar(path.to_string()));
        }
        let slot = self
            .slot(id)
            .ok_or_else(|| StoreError::NotFound(id.to_string()))?;
        let mut slot = slot.lock().expect("twin slot lock");
        match segments.as_slice() {
            ["attributes", key] => {
                slot.doc.attributes.insert((*key).to_string(), value);
            }
            ["features", name, "properties", leaf @ ..] if !leaf.is_empty() => {
                let feature = slot.doc.features.entry((*name).to_string()).or_default();
                let mut map = &mut feature.properties;
                for segment in &leaf[..leaf.len() - 1] {
                    let entry = map
                        .entry((*segment).to_string())
                        .or_insert_with(|| Value::Object(Map::new()));
                    if !entry.is_object() {
                        *entry = Value::Object(Map::new());
                    }
                    map = entry.as_object_mut().expect("just ensured object");
                }
                map.insert(leaf[leaf.len() - 1].to_string(), value);
            }
            _ => return Err(StoreError::MalformedPath(path.to_string())),
        }
        slot.doc.revision += 1;
        slot.doc.modified_ms = now_ms;
        slot.doc_dirty = true;
        let revision = slot.doc.revision;
        drop(slot);
        Ok(revision)
    }

    /// Appends one observation to a twin's signature log and returns its
    /// sequence number. Timestamps need not be monotone (late data is
    /// allowed); sequences are.
    pub fn append_signature(
        &self,
        id: &TwinId,
        source: SigSource,
        value: SignatureValue,
        timestamp_ms: u64,
        quality: f64,
    ) -> Result<u64, StoreError> {
        if !quality.is_finite() || !(0.0..=1.0).contains(&quality) {
            return Err(StoreError::BadQuality(quality));
        }
        let slot = self.slot_or_create(id);
        let mut slot = slot.lock().expect("twin slot lock");
        let rec = StoredSignature {
            source,
            value,
            timestamp_ms,
            quality,
            sequence: slot.next_seq,
        };
        if let Some(dir) = &self.inner.dir {
            if slot.writer.is_none() {
                let path = dir
                    .join("signatures")
                    .join(&id.site)
                    .join(format!("{}.log", id.node));
                if let Some(parent) = path.parent() {
                    std::fs::create_dir_all(parent)?;
                }
                let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
                slot.writer = Some(std::io::BufWriter::new(file));
            }
            let line = encode_signature_line(id.node, &rec);
            let writer = slot.writer.as_mut().expect("just opened");
            writeln!(writer, "{line}")?;
        }
        let sequence = rec.sequence;
        slot.push_record(rec);
        Ok(sequence)
    }

    /// Full signature log of one twin, in append order.
    pub fn signatures(&self, id: &TwinId) -> Vec<SignatureRecord> {
        match self.slot(id) {
            None => Vec::new(),
            Some(slot) => {
                let slot = slot.lock().expect("twin slot lock");
                slot.records.iter().map(|r| r.with_twin(id)).collect()
            }
        }
    }

    pub fn signature_count(&self, id: &TwinId) -> u64 {
        self.slot(id)
            .map(|slot| slot.lock().expect("twin slot lock").records.len() as u64)
            .unwrap_or(0)
    }

    /// Opportunistic selection: candidates matching twin, sources, window,
    /// and quality floor, ranked by `signature_score`, ties broken toward
    /// the higher sequence. A pure function of the log contents and query.
    pub fn select_signatures(&self, q: &SignatureQuery) -> Result<Vec<SignatureRecord>, StoreError> {
        q.validate()?;
        let Some(slot) = self.slot(&q.twin_id) else {
            return Ok(Vec::new());
        };
        let slot = slot.lock().expect("twin slot lock");
        let mut scored: Vec<(f64, u64, u32)> = Vec::new();
        let mut consider = |idx: u32, rec: &StoredSignature| {
            if rec.timestamp_ms < q.from_ms || rec.timestamp_ms > q.to_ms {
                return;
            }
            if rec.quality < q.min_quality {
                return;
            }
            let score = signature_score(q, rec.timestamp_ms, rec.quality);
            scored.push((score, rec.sequence, idx));
        };
        if q.sources.is_empty() {
            for (idx, rec) in slot.records.iter().enumerate() {
                consider(idx as u32, rec);
            }
        } else {
            for source in &q.sources {
                if let Some(idxs) = slot.by_source.get(source) {
                    for &idx in idxs {
                        consider(idx, &slot.records[idx as usize]);
                    }
                }
            }
        }
        scored.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .expect("scores are finite")
                .then_with(|| b.1.cmp(&a.1))
        });
        scored.truncate(q.max_results);
        Ok(scored
            .into_iter()
            .map(|(_, _, idx)| slot.records[idx as usize].with_twin(&q.twin_id))
            .collect())
    }

    fn persist_doc(&self, id: &TwinId) -> Result<(), StoreError> {
        let Some(dir) = &self.inner.dir else {
            return Ok(());
        };
        let Some(slot) = self.slot(id) else {
            return Ok(());
        };
        let mut slot = slot.lock().expect("twin slot lock");
        if !slot.doc_dirty {
            return Ok(());
        }
        let path = dir
            .join("twins")
            .join(&id.site)
            .join(format!("{}.json", id.node));
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(&slot.doc).expect("doc serializes"))?;
        std::fs::rename(&tmp, &path)?;
        slot.doc_dirty = false;
        Ok(())
    }

    /// Writes out every dirty document and flushes every log writer.
    pub fn flush(&self) -> Result<(), StoreError> {
        let ids = self.list_twins();
        for id in &ids {
            self.persist_doc(id)?;
            if let Some(slot) = self.slot(id) {
                let mut slot = slot.lock().expect("twin slot lock");
                if let Some(writer) = slot.writer.as_mut() {
                    writer.flush()?;
                }
            }
        }
        Ok(())
    }

    /// Flushes and drops the store handle.
    pub fn close(self) -> Result<(), StoreError> {
        self.flush()
    }
}

fn read_dir_if_exists(path: &std::path::Path) -> Result<Vec<PathBuf>, StoreError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut entries: Vec<PathBuf> = std::fs::read_dir(path)?
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .map(|e| e.path())
        .collect();
    entries.sort();
    Ok(entries)
}
