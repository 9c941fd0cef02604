//! Ground-truth vehicle traffic: Poisson track arrivals with fixed
//! per-track persistence.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::model::{FrameTruth, TrackedObject, CLASS_COUNT};

use super::mix64;

/// Parameters of the simulated vehicle stream on one monitored road.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficSimConfig {
    pub fps: f64,
    /// Steady-state mean number of vehicles visible per frame.
    pub mean_vehicles_per_frame: f64,
    /// Probability of each vehicle class, summing to 1.
    pub class_mix: [f64; CLASS_COUNT],
    /// How many consecutive frames a track stays in view.
    pub track_persistence_frames: u32,
    pub rng_seed: u64,
}

impl Default for TrafficSimConfig {
    fn default() -> Self {
        TrafficSimConfig {
            fps: 20.0,
            mean_vehicles_per_frame: 4.0,
            class_mix: [0.55, 0.1, 0.15, 0.1, 0.05, 0.05],
            track_persistence_frames: 20,
            rng_seed: 0,
        }
    }
}

impl TrafficSimConfig {
    pub fn validate(&self) -> Result<(), TrafficConfigError> {
        if !self.fps.is_finite() || self.fps <= 0.0 {
            return Err(TrafficConfigError::BadFps);
        }
        if !self.mean_vehicles_per_frame.is_finite()
            || !(0.0..=10_000.0).contains(&self.mean_vehicles_per_frame)
        {
            return Err(TrafficConfigError::BadRate);
        }
        if self.track_persistence_frames == 0 {
            return Err(TrafficConfigError::ZeroPersistence);
        }
        if self.class_mix.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(TrafficConfigError::NegativeMix);
        }
        let sum: f64 = self.class_mix.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(TrafficConfigError::MixSum(sum));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum TrafficConfigError {
    #[error("fps must be positive")]
    BadFps,
    #[error("mean_vehicles_per_frame must be in [0, 10000]")]
    BadRate,
    #[error("track_persistence_frames must be positive")]
    ZeroPersistence,
    #[error("class_mix probabilities must be non-negative")]
    NegativeMix,
    #[error("class_mix sums to {0}, expected 1")]
    MixSum(f64),
}

#[derive(Debug, Clone)]
struct OpenTrack {
    track_id: u64,
    class_index: u8,
    expires_at_frame: u64,
}

/// Deterministic track generator. Tracks arrive
/// `Poisson(mean / persistence)` per frame and each stays visible for
/// exactly `persistence` frames, so the steady-state mean per frame is
/// `mean_vehicles_per_frame`.
#[derive(Debug)]
pub struct TrafficSim {
    cfg: TrafficSimConfig,
    rng: ChaCha8Rng,
    arrivals: Option<Poisson<f64>>,
    open: VecDeque<OpenTrack>,
    next_track_id: u64,
    frame_seq: u64,
    tracks_created: u64,
}

impl TrafficSim {
    pub fn new(cfg: TrafficSimConfig) -> Result<Self, TrafficConfigError> {
        cfg.validate()?;
        let rate = cfg.mean_vehicles_per_frame / f64::from(cfg.track_persistence_frames);
        let arrivals = if rate > 0.0 {
            Some(Poisson::new(rate).expect("validated rate"))
        } else {
            None
        };
        let rng = ChaCha8Rng::seed_from_u64(mix64(cfg.rng_seed, 0x7261_6666, 0));
        Ok(TrafficSim {
            cfg,
            rng,
            arrivals,
            open: VecDeque::new(),
            next_track_id: 0,
            frame_seq: 0,
            tracks_created: 0,
        })
    }

    pub fn config(&self) -> &TrafficSimConfig {
        &self.cfg
    }

    /// Total tracks ever spawned; denominator for counting-rate checks.
    pub fn tracks_created(&self) -> u64 {
        self.tracks_created
    }

    fn draw_class(&mut self) -> u8 {
        let u: f64 = self.rng.random();
        let mut acc = 0.0;
        for (i, p) in self.cfg.class_mix.iter().enumerate() {
            acc += p;
            if u < acc {
                return i as u8;
            }
        }
        (CLASS_COUNT - 1) as u8
    }

    /// Produces the next frame's ground truth.
    pub fn next_frame_truth(&mut self, timestamp_ms: u64) -> FrameTruth {
        let frame = self.frame_seq;
        while let Some(front) = self.open.front() {
            if front.expires_at_frame <= frame {
                self.open.pop_front();
            } else {
                break;
            }
        }
        let n_new = match &self.arrivals {
            Some(dist) => dist.sample(&mut self.rng) as u64,
            None => 0,
        };
        for _ in 0..n_new {
            let class_index = self.draw_class();
            let track_id = self.next_track_id;
            self.next_track_id += 1;
            self.tracks_created += 1;
            self.open.push_back(OpenTrack {
                track_id,
                class_index,
                expires_at_frame: frame + u64::from(self.cfg.track_persistence_frames),
            });
        }
        let objects: Vec<TrackedObject> = self
            .open
            .iter()
            .map(|t| TrackedObject {
                track_id: t.track_id,
                class_index: t.class_index,
            })
            .collect();
        self.frame_seq += 1;
        FrameTruth {
            frame_seq: frame,
            objects,
            timestamp_ms,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rate_means_empty_frames() {
        let cfg = TrafficSimConfig {
            mean_vehicles_per_frame: 0.0,
            ..TrafficSimConfig::default()
        };
        let mut sim = TrafficSim::new(cfg).unwrap();
        for t in 1..100 {
            assert!(sim.next_frame_truth(t).objects.is_empty());
        }
    }

    #[test]
    fn mean_objects_per_frame_tracks_the_rate() {
        let lambda = 4.0;
        let cfg = TrafficSimConfig {
            mean_vehicles_per_frame: lambda,
            track_persistence_frames: 1,
            rng_seed: 17,
            ..TrafficSimConfig::default()
        };
        let mut sim = TrafficSim::new(cfg).unwrap();
        let frames = 100_000u64;
        let total: u64 = (0..frames)
            .map(|t| sim.next_frame_truth(t + 1).objects.len() as u64)
            .sum();
        let mean = total as f64 / frames as f64;
        assert!(
            (mean - lambda).abs() / lambda < 0.02,
            "mean {mean} vs lambda {lambda}"
        );
    }

    #[test]
    fn same_seed_same_sequence() {
        let cfg = TrafficSimConfig {
            rng_seed: 123,
            ..TrafficSimConfig::default()
        };
        let mut a = TrafficSim::new(cfg.clone()).unwrap();
        let mut b = TrafficSim::new(cfg).unwrap();
        for t in 1..500 {
            assert_eq!(a.next_frame_truth(t), b.next_frame_truth(t));
        }
    }

    #[test]
    fn frames_are_valid_and_tracks_persist() {
        let cfg = TrafficSimConfig {
            mean_vehicles_per_frame: 6.0,
            track_persistence_frames: 5,
            rng_seed: 1,
            ..TrafficSimConfig::default()
        };
        let mut sim = TrafficSim::new(cfg).unwrap();
        let mut last_ids: Vec<u64> = Vec::new();
        let mut lifetimes: std::collections::HashMap<u64, u64> = Default::default();
        for t in 1..=2000 {
            let frame = sim.next_frame_truth(t);
            frame.validate().unwrap();
            for obj in &frame.objects {
                *lifetimes.entry(obj.track_id).or_default() += 1;
            }
            last_ids = frame.objects.iter().map(|o| o.track_id).collect();
        }
        // every completed track was visible exactly `persistence` frames
        for (id, frames_seen) in lifetimes {
            if !last_ids.contains(&id) {
                assert_eq!(frames_seen, 5, "track {id}");
            }
        }
    }

    #[test]
    fn mix_must_sum_to_one() {
        let cfg = TrafficSimConfig {
            class_mix: [0.5, 0.1, 0.1, 0.1, 0.1, 0.2],
            ..TrafficSimConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(TrafficConfigError::MixSum(_))));
    }
}
