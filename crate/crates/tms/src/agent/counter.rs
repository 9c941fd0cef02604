//! The vehicle counter: each distinct track is counted exactly once, on its
//! first detection.

use std::collections::HashSet;

use rand::Rng;

use crate::model::{DetectionResult, FrameTruth, CLASS_COUNT};

/// Cumulative per-class counts of distinct tracks ever detected, plus the
/// set of tracks currently in view.
#[derive(Debug, Clone, Default)]
pub struct CounterState {
    per_class: [u64; CLASS_COUNT],
    counted: HashSet<u64>,
    open: HashSet<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum CounterError {
    #[error("frame_seq mismatch: frame {frame} vs detection {detection}")]
    FrameSeqMismatch { frame: u64, detection: u64 },
    #[error("class {class} detections exceed objects in frame")]
    CountExceedsObjects { class: u8 },
}

impl CounterState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Cumulative count per vehicle class.
    pub fn per_class(&self) -> &[u64; CLASS_COUNT] {
        &self.per_class
    }

    /// Total distinct tracks ever counted.
    pub fn total(&self) -> u64 {
        self.per_class.iter().sum()
    }

    pub fn open_tracks(&self) -> &HashSet<u64> {
        &self.open
    }

    /// Folds one frame's detection into the counter.
    ///
    /// The detection only carries counts, not identities, so which tracks
    /// were detected is reconstructed by drawing, per class, a uniform
    /// subset of that class's objects of the detected size. Conditioned on
    /// the count, this matches the per-object Bernoulli process that
    /// produced it.
    pub fn update(
        &mut self,
        frame: &FrameTruth,
        det: &DetectionResult,
        rng: &mut impl Rng,
    ) -> Result<(), CounterError> {
        if frame.frame_seq != det.frame_seq {
            return Err(CounterError::FrameSeqMismatch {
                frame: frame.frame_seq,
                detection: det.frame_seq,
            });
        }
        let mut by_class: [Vec<u64>; CLASS_COUNT] = Default::default();
        for obj in &frame.objects {
            by_class[usize::from(obj.class_index)].push(obj.track_id);
        }
        for (class, ids) in by_class.iter_mut().enumerate() {
            let k = usize::from(det.per_class_counts[class]);
            if k > ids.len() {
                return Err(CounterError::CountExceedsObjects { class: class as u8 });
            }
            // partial Fisher-Yates: the first k entries become the sample
            for i in 0..k {
                let j = rng.random_range(i..ids.len());
                ids.swap(i, j);
            }
            for &id in &ids[..k] {
                if self.counted.insert(id) {
                    self.per_class[class] += 1;
                }
            }
        }
        self.open = frame.objects.iter().map(|o| o.track_id).collect();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::detector::run_detector;
    use crate::agent::traffic::{TrafficSim, TrafficSimConfig};
    use crate::model::{DetectorProfile, TrackedObject};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn frame_with(ids: &[u64], frame_seq: u64) -> FrameTruth {
        FrameTruth {
            frame_seq,
            objects: ids
                .iter()
                .map(|&track_id| TrackedObject {
                    track_id,
                    class_index: 0,
                })
                .collect(),
            timestamp_ms: 1,
        }
    }

    fn full_detection(frame: &FrameTruth) -> DetectionResult {
        let mut per_class_counts = [0u16; CLASS_COUNT];
        for obj in &frame.objects {
            per_class_counts[usize::from(obj.class_index)] += 1;
        }
        DetectionResult {
            frame_seq: frame.frame_seq,
            per_class_counts,
            total: per_class_counts.iter().sum(),
            mean_confidence: 0.9,
            measured_latency_ms: 1.0,
        }
    }

    #[test]
    fn repeated_detections_count_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counter = CounterState::new();
        for seq in 0..5 {
            let frame = frame_with(&[7], seq);
            let det = full_detection(&frame);
            counter.update(&frame, &det, &mut rng).unwrap();
        }
        assert_eq!(counter.total(), 1);
    }

    #[test]
    fn distinct_tracks_both_counted() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counter = CounterState::new();
        let frame = frame_with(&[1, 2], 0);
        let det = full_detection(&frame);
        counter.update(&frame, &det, &mut rng).unwrap();
        assert_eq!(counter.total(), 2);
        assert_eq!(counter.open_tracks().len(), 2);
    }

    #[test]
    fn frame_seq_mismatch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counter = CounterState::new();
        let frame = frame_with(&[1], 0);
        let mut det = full_detection(&frame);
        det.frame_seq = 5;
        assert!(matches!(
            counter.update(&frame, &det, &mut rng),
            Err(CounterError::FrameSeqMismatch { .. })
        ));
    }

    #[test]
    fn overcount_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counter = CounterState::new();
        let frame = frame_with(&[1], 0);
        let mut det = full_detection(&frame);
        det.per_class_counts[0] = 2;
        det.total = 2;
        assert!(matches!(
            counter.update(&frame, &det, &mut rng),
            Err(CounterError::CountExceedsObjects { class: 0 })
        ));
    }

    #[test]
    fn counts_never_decrease() {
        let cfg = TrafficSimConfig {
            mean_vehicles_per_frame: 5.0,
            track_persistence_frames: 4,
            rng_seed: 3,
            ..TrafficSimConfig::default()
        };
        let mut sim = TrafficSim::new(cfg).unwrap();
        let profile = DetectorProfile::new("p", 5.0, 0.7, vec!["car".into()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut counter = CounterState::new();
        let mut last = 0;
        for t in 1..=2000 {
            let frame = sim.next_frame_truth(t);
            let det = run_detector(&profile, &frame, &mut rng);
            counter.update(&frame, &det, &mut rng).unwrap();
            assert!(counter.total() >= last);
            last = counter.total();
        }
    }

    #[test]
    fn fraction_counted_matches_analytic_rate() {
        // P(track ever detected) = 1 - (1 - m)^persistence
        let m = 0.2f64;
        let persistence = 10u32;
        let expected = 1.0 - (1.0 - m).powi(persistence as i32);
        let cfg = TrafficSimConfig {
            mean_vehicles_per_frame: 5.0,
            track_persistence_frames: persistence,
            rng_seed: 21,
            ..TrafficSimConfig::default()
        };
        let mut sim = TrafficSim::new(cfg).unwrap();
        let profile = DetectorProfile::new("p", 5.0, m, vec!["car".into()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut counter = CounterState::new();
        for t in 1..=100_000u64 {
            let frame = sim.next_frame_truth(t);
            let det = run_detector(&profile, &frame, &mut rng);
            counter.update(&frame, &det, &mut rng).unwrap();
        }
        let fraction = counter.total() as f64 / sim.tracks_created() as f64;
        assert!(
            (fraction - expected).abs() / expected < 0.02,
            "fraction {fraction} vs analytic {expected}"
        );
    }
}
