//! Telemetry generation: a diurnal sinusoid plus gaussian noise per source.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::model::{NodeId, Source, TelemetryReading, DAY_MS};

use super::mix64;

/// How a channel assigns the per-sample quality score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityModel {
    /// Every sample gets this quality.
    Constant(f64),
    /// Quality drawn uniformly from `[min, 1]`.
    UniformMin(f64),
}

impl Default for QualityModel {
    fn default() -> Self {
        QualityModel::Constant(1.0)
    }
}

/// Simulation parameters for one telemetry source on one node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorChannelConfig {
    pub baseline: f64,
    #[serde(default)]
    pub diurnal_amplitude: f64,
    #[serde(default)]
    pub noise_stddev: f64,
    pub sample_period_ms: u64,
    #[serde(default)]
    pub quality: QualityModel,
}

impl SensorChannelConfig {
    pub fn validate(&self, source: Source) -> Result<(), SensorConfigError> {
        if self.sample_period_ms == 0 {
            return Err(SensorConfigError::ZeroPeriod(source));
        }
        if !self.noise_stddev.is_finite() || self.noise_stddev < 0.0 {
            return Err(SensorConfigError::BadStddev(source));
        }
        if !self.baseline.is_finite() || !self.diurnal_amplitude.is_finite() {
            return Err(SensorConfigError::NonFinite(source));
        }
        let (lo, hi) = source.valid_range();
        if self.baseline < lo || self.baseline > hi {
            return Err(SensorConfigError::BaselineOutOfRange(source));
        }
        let q = match self.quality {
            QualityModel::Constant(q) | QualityModel::UniformMin(q) => q,
        };
        if !q.is_finite() || !(0.0..=1.0).contains(&q) {
            return Err(SensorConfigError::BadQuality(source));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum SensorConfigError {
    #[error("{0}: sample_period_ms must be positive")]
    ZeroPeriod(Source),
    #[error("{0}: noise_stddev must be finite and non-negative")]
    BadStddev(Source),
    #[error("{0}: baseline/amplitude must be finite")]
    NonFinite(Source),
    #[error("{0}: baseline outside the source's valid range")]
    BaselineOutOfRange(Source),
    #[error("{0}: quality parameter must be in [0, 1]")]
    BadQuality(Source),
}

/// Samples one reading at `t_ms`.
///
/// `value = baseline + amplitude * sin(2π (t mod day) / day) + N(0, stddev)`,
/// clamped to the source's valid range. The draw is keyed on
/// `(seed, source, t_ms)`, so the same instant always produces the same
/// sample regardless of call order.
pub fn sample_telemetry(
    cfg: &SensorChannelConfig,
    node: NodeId,
    source: Source,
    t_ms: u64,
    seed: u64,
) -> TelemetryReading {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed, source as u64 + 1, t_ms));
    let phase = (t_ms % DAY_MS) as f64 / DAY_MS as f64;
    let diurnal = cfg.diurnal_amplitude * (2.0 * std::f64::consts::PI * phase).sin();
    let noise = if cfg.noise_stddev > 0.0 {
        Normal::new(0.0, cfg.noise_stddev)
            .expect("validated stddev")
            .sample(&mut rng)
    } else {
        0.0
    };
    let (lo, hi) = source.valid_range();
    let value = (cfg.baseline + diurnal + noise).clamp(lo, hi);
    let quality = match cfg.quality {
        QualityModel::Constant(q) => q,
        QualityModel::UniformMin(min) => {
            if min >= 1.0 {
                1.0
            } else {
                rng.random_range(min..=1.0)
            }
        }
    };
    TelemetryReading {
        node,
        source,
        value,
        timestamp_ms: t_ms,
        quality,
    }
}
