//! Synthetic sensing: knowledge the platform derives rather than measures.
//!
//! Two derivations ship: a traffic-level estimate blended from normalized
//! noise and pollution signatures, and a z-score anomaly detector for
//! sudden changes in a telemetry series.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::model::{Source, DAY_MS};
use crate::twin::{SignatureRecord, TwinId};

/// Default blend weights: noise dominates, pollution splits the rest.
pub fn default_weights() -> BTreeMap<Source, f64> {
    [
        (Source::NoiseDb, 0.4),
        (Source::Co2Ppm, 0.2),
        (Source::No2Ppb, 0.2),
        (Source::Pm25Ugm3, 0.2),
    ]
    .into_iter()
    .collect()
}

/// Default sliding normalization window: one diurnal period.
pub const DEFAULT_WINDOW_MS: u64 = DAY_MS;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("empty normalization window")]
    EmptyWindow,
    #[error("no usable signatures for any weighted source")]
    NoUsableSignatures,
    #[error("weights must be non-negative and sum to 1")]
    BadWeights,
    #[error("insufficient data: need at least {need} readings, have {have}")]
    InsufficientData { need: usize, have: usize },
    #[error("anomaly threshold must be non-negative")]
    BadThreshold,
}

/// Sliding min/max window over one source's recent values, the basis for
/// normalizing raw readings into `[0, 1]`.
#[derive(Debug, Clone, Default)]
pub struct NormalizationWindow {
    window_ms: u64,
    samples: VecDeque<(u64, f64)>,
}

impl NormalizationWindow {
    pub fn new(window_ms: u64) -> Self {
        NormalizationWindow {
            window_ms,
            samples: VecDeque::new(),
        }
    }

    /// Inserts a sample and drops everything older than the window,
    /// measured from the newest timestamp seen.
    pub fn push(&mut self, timestamp_ms: u64, value: f64) {
        self.samples.push_back((timestamp_ms, value));
        let newest = self.samples.iter().map(|(t, _)| *t).max().unwrap_or(0);
        let cutoff = newest.saturating_sub(self.window_ms);
        while let Some((t, _)) = self.samples.front() {
            if *t < cutoff {
                self.samples.pop_front();
            } else {
                break;
            }
        }
    }

    pub fn count(&self) -> usize {
        self.samples.len()
    }

    pub fn min(&self) -> Option<f64> {
        self.samples.iter().map(|(_, v)| *v).reduce(f64::min)
    }

    pub fn max(&self) -> Option<f64> {
        self.samples.iter().map(|(_, v)| *v).reduce(f64::max)
    }

    /// `(value - min) / (max - min)` clamped to `[0, 1]`; a constant window
    /// maps everything to 0.5.
    pub fn normalize(&self, value: f64) -> Result<f64, SynthError> {
        let (min, max) = match (self.min(), self.max()) {
            (Some(min), Some(max)) => (min, max),
            _ => return Err(SynthError::EmptyWindow),
        };
        if max == min {
            return Ok(0.5);
        }
        Ok(((value - min) / (max - min)).clamp(0.0, 1.0))
    }
}

/// Normalizes a value against a window.
pub fn normalize(value: f64, window: &NormalizationWindow) -> Result<f64, SynthError> {
    window.normalize(value)
}

/// A derived traffic level in `[0, 1]` and the signatures that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficEstimate {
    pub twin_id: TwinId,
    pub level: f64,
    /// Sequence numbers of the signatures that fed the blend.
    pub contributing: Vec<u64>,
    pub computed_ms: u64,
}

/// Blends the latest selected signature of each weighted source into one
/// traffic level.
///
/// For each source with positive weight, the latest selected record (by
/// timestamp, ties to the higher sequence) is normalized against that
/// source's window; the level is the weight-renormalized sum over sources
/// that actually contributed. Sources with no usable signature or window
/// are dropped and the remaining weights rescaled.
pub fn estimate_traffic_level(
    twin_id: &TwinId,
    selected: &[SignatureRecord],
    windows: &BTreeMap<Source, NormalizationWindow>,
    weights: &BTreeMap<Source, f64>,
    computed_ms: u64,
) -> Result<TrafficEstimate, SynthError> {
    if weights.values().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(SynthError::BadWeights);
    }
    let total: f64 = weights.values().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(SynthError::BadWeights);
    }

    struct Contribution {
        weight: f64,
        normalized: f64,
        sequence: u64,
    }
    let mut contributions = Vec::new();
    for (source, weight) in weights {
        if *weight == 0.0 {
            continue;
        }
        let latest = selected
            .iter()
            .filter(|r| r.source == crate::twin::SigSource::Telemetry(*source))
            .max_by_key(|r| (r.timestamp_ms, r.sequence));
        let (Some(record), Some(window)) = (latest, windows.get(source)) else {
            continue;
        };
        let Ok(normalized) = window.normalize(record.value.as_scalar()) else {
            continue;
        };
        contributions.push(Contribution {
            weight: *weight,
            normalized,
            sequence: record.sequence,
        });
    }
    if contributions.is_empty() {
        return Err(SynthError::NoUsableSignatures);
    }
    let weight_sum: f64 = contributions.iter().map(|c| c.weight).sum();
    let level: f64 = contributions
        .iter()
        .map(|c| c.weight / weight_sum * c.normalized)
        .sum();
    let mut contributing: Vec<u64> = contributions.iter().map(|c| c.sequence).collect();
    contributing.sort_unstable();
    Ok(TrafficEstimate {
        twin_id: twin_id.clone(),
        level: level.clamp(0.0, 1.0),
        contributing,
        computed_ms,
    })
}

/// Result of one anomaly check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalyVerdict {
    pub flagged: bool,
    /// Z-score of the latest value against the prior window; infinite when
    /// the prior window has zero variance and the value moved.
    pub z_score: f64,
}

/// Minimum series length for [`detect_anomaly`].
pub const MIN_ANOMALY_SERIES: usize = 10;

/// Flags the latest value of a series as anomalous when it sits at least
/// `k` sample standard deviations from the mean of the preceding values.
///
/// The verdict is invariant under affine transforms `x -> a*x + b`
/// (`a != 0`) of the whole series.
pub fn detect_anomaly(series: &[f64], k: f64) -> Result<AnomalyVerdict, SynthError> {
    if !k.is_finite() || k < 0.0 {
        return Err(SynthError::BadThreshold);
    }
    if series.len() < MIN_ANOMALY_SERIES {
        return Err(SynthError::InsufficientData {
            need: MIN_ANOMALY_SERIES,
            have: series.len(),
        });
    }
    let (prior, latest) = series.split_at(series.len() - 1);
    let latest = latest[0];
    let n = prior.len() as f64;
    let mean = prior.iter().sum::<f64>() / n;
    let var = prior.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    if std == 0.0 {
        let moved = latest != mean;
        return Ok(AnomalyVerdict {
            flagged: moved,
            z_score: if moved {
                f64::INFINITY * (latest - mean).signum()
            } else {
                0.0
            },
        });
    }
    let z = (latest - mean) / std;
    Ok(AnomalyVerdict {
        flagged: z.abs() >= k,
        z_score: z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NodeId;
    use crate::twin::{SigSource, SignatureValue};

    fn twin() -> TwinId {
        TwinId::new("s", NodeId::from_u128(1).unwrap()).unwrap()
    }

    fn record(source: Source, value: f64, ts: u64, seq: u64) -> SignatureRecord {
        SignatureRecord {
            twin_id: twin(),
            source: SigSource::Telemetry(source),
            value: SignatureValue::Scalar(value),
            timestamp_ms: ts,
            quality: 1.0,
            sequence: seq,
        }
    }

    fn window(values: &[f64]) -> NormalizationWindow {
        let mut w = NormalizationWindow::new(DEFAULT_WINDOW_MS);
        for (i, v) in values.iter().enumerate() {
            w.push(1 + i as u64, *v);
        }
        w
    }

    #[test]
    fn normalize_bounds_and_degenerate_case() {
        let w = window(&[10.0, 20.0, 30.0]);
        assert_eq!(w.normalize(10.0).unwrap(), 0.0);
        assert_eq!(w.normalize(30.0).unwrap(), 1.0);
        assert_eq!(w.normalize(20.0).unwrap(), 0.5);
        assert_eq!(w.normalize(99.0).unwrap(), 1.0, "clamped above");

        let constant = window(&[5.0, 5.0, 5.0]);
        assert_eq!(constant.normalize(123.0).unwrap(), 0.5);

        let empty = NormalizationWindow::new(DEFAULT_WINDOW_MS);
        assert_eq!(empty.normalize(1.0), Err(SynthError::EmptyWindow));
    }

    #[test]
    fn window_slides() {
        let mut w = NormalizationWindow::new(1000);
        w.push(1, 100.0);
        w.push(500, 50.0);
        w.push(2000, 10.0); // pushes cutoff to 1000, dropping both earlier samples
        assert_eq!(w.count(), 1);
        assert_eq!(w.min(), Some(10.0));
    }

    #[test]
    fn estimate_hits_bounds_at_window_extremes() {
        let mut windows = BTreeMap::new();
        for source in [Source::NoiseDb, Source::Co2Ppm, Source::No2Ppb, Source::Pm25Ugm3] {
            windows.insert(source, window(&[0.0, 100.0]));
        }
        let at = |v: f64| {
            vec![
                record(Source::NoiseDb, v, 10, 1),
                record(Source::Co2Ppm, v, 10, 2),
                record(Source::No2Ppb, v, 10, 3),
                record(Source::Pm25Ugm3, v, 10, 4),
            ]
        };
        let low = estimate_traffic_level(&twin(), &at(0.0), &windows, &default_weights(), 11)
            .unwrap();
        assert_eq!(low.level, 0.0);
        let high = estimate_traffic_level(&twin(), &at(100.0), &windows, &default_weights(), 11)
            .unwrap();
        assert_eq!(high.level, 1.0);
        assert_eq!(high.contributing, vec![1, 2, 3, 4]);
    }

    #[test]
    fn absent_sources_renormalize_weights() {
        // noise at max (w 0.4 -> 0.5), co2 at min (w 0.2 -> ... )
        let mut windows = BTreeMap::new();
        windows.insert(Source::NoiseDb, window(&[0.0, 100.0]));
        windows.insert(Source::Co2Ppm, window(&[0.0, 100.0]));
        let selected = vec![
            record(Source::NoiseDb, 100.0, 10, 1),
            record(Source::Co2Ppm, 0.0, 10, 2),
        ];
        let mut weights = BTreeMap::new();
        weights.insert(Source::NoiseDb, 0.5);
        weights.insert(Source::Co2Ppm, 0.5);
        let est =
            estimate_traffic_level(&twin(), &selected, &windows, &weights, 11).unwrap();
        assert!((est.level - 0.5).abs() < 1e-12);

        // drop co2 entirely: only noise contributes, renormalized to 1
        let noise_only = vec![record(Source::NoiseDb, 100.0, 10, 1)];
        let est =
            estimate_traffic_level(&twin(), &noise_only, &windows, &weights, 11).unwrap();
        assert_eq!(est.level, 1.0);
        assert_eq!(est.contributing, vec![1]);
    }

    #[test]
    fn no_usable_sources_is_an_error() {
        let windows = BTreeMap::new();
        let est = estimate_traffic_level(&twin(), &[], &windows, &default_weights(), 1);
        assert_eq!(est.unwrap_err(), SynthError::NoUsableSignatures);
    }

    #[test]
    fn bad_weights_rejected() {
        let mut weights = BTreeMap::new();
        weights.insert(Source::NoiseDb, 0.7);
        let est = estimate_traffic_level(&twin(), &[], &BTreeMap::new(), &weights, 1);
        assert_eq!(est.unwrap_err(), SynthError::BadWeights);
    }

    #[test]
    fn constant_series_never_flags() {
        let series = [7.0; 12];
        let verdict = detect_anomaly(&series, 3.0).unwrap();
        assert!(!verdict.flagged);
        assert_eq!(verdict.z_score, 0.0);
    }

    #[test]
    fn extreme_jump_flags() {
        // unit-variance prior, final value 10 sigma away
        let mut series: Vec<f64> = vec![
            -0.8, 0.3, 1.2, -0.5, 0.1, -1.1, 0.7, 0.9, -0.2, 0.4, -0.6,
        ];
        series.push(10.0);
        let verdict = detect_anomaly(&series, 5.0).unwrap();
        assert!(verdict.flagged);
        assert!(verdict.z_score > 5.0);
    }

    #[test]
    fn short_series_is_an_error() {
        let series = [1.0; 9];
        assert!(matches!(
            detect_anomaly(&series, 3.0),
            Err(SynthError::InsufficientData { need: 10, have: 9 })
        ));
    }

    #[test]
    fn zero_variance_with_moved_value_flags() {
        let mut series = vec![2.0; 11];
        series.push(2.5);
        let verdict = detect_anomaly(&series[1..], 3.0).unwrap();
        assert!(verdict.flagged);
        assert!(verdict.z_score.is_infinite());
    }

    #[test]
    fn anomaly_flag_is_affine_invariant() {
        let base: Vec<f64> = vec![
            3.0, 3.5, 2.8, 3.2, 3.1, 2.9, 3.3, 3.0, 3.4, 2.7, 3.1, 6.5,
        ];
        let flag = detect_anomaly(&base, 3.0).unwrap().flagged;
        for (a, b) in [(2.0, 5.0), (-1.0, 0.0), (0.001, -40.0)] {
            let transformed: Vec<f64> = base.iter().map(|x| a * x + b).collect();
            assert_eq!(
                detect_anomaly(&transformed, 3.0).unwrap().flagged,
                flag,
                "a={a} b={b}"
            );
        }
    }
}
