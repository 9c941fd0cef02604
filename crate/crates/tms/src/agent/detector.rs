//! Profile-driven simulated inference.
//!
//! The profile's mAP is used as a per-object detection probability. That is
//! a proxy: mAP is an aggregate ranking metric, not a detection rate, but it
//! is the only accuracy figure a profile carries, and keeping the proxy
//! behind [`DetectorProfile`] means a real detector can replace this
//! function without touching callers.

use rand::Rng;

use crate::model::{DetectionResult, DetectorProfile, FrameTruth, CLASS_COUNT};

/// Runs one simulated inference over a frame's ground truth.
///
/// Each object is detected independently with probability
/// `profile.map_score`; the reported latency is the profile's fixed
/// per-inference latency; mean confidence is drawn uniformly from
/// `[0.9 * map, min(1, 1.1 * map)]`.
pub fn run_detector(
    profile: &DetectorProfile,
    frame: &FrameTruth,
    rng: &mut impl Rng,
) -> DetectionResult {
    debug_assert!(frame.validate().is_ok());
    let mut per_class_counts = [0u16; CLASS_COUNT];
    let mut total = 0u16;
    for obj in &frame.objects {
        if rng.random::<f64>() < profile.map_score {
            per_class_counts[usize::from(obj.class_index)] += 1;
            total += 1;
        }
    }
    let lo = profile.map_score * 0.9;
    let hi = (profile.map_score * 1.1).min(1.0);
    let mean_confidence = if hi > lo { rng.random_range(lo..hi) } else { lo };
    DetectionResult {
        frame_seq: frame.frame_seq,
        per_class_counts,
        total,
        mean_confidence,
        measured_latency_ms: profile.inference_latency_ms,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TrackedObject;
    use crate::profiles;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn frame(n: usize) -> FrameTruth {
        FrameTruth {
            frame_seq: 3,
            objects: (0..n)
                .map(|i| TrackedObject {
                    track_id: i as u64,
                    class_index: (i % CLASS_COUNT) as u8,
                })
                .collect(),
            timestamp_ms: 1,
        }
    }

    fn with_map(map: f64) -> DetectorProfile {
        DetectorProfile::new("test", 10.0, map, vec!["car".into()]).unwrap()
    }

    #[test]
    fn perfect_detector_sees_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let det = run_detector(&with_map(1.0), &frame(25), &mut rng);
        assert_eq!(det.total, 25);
        det.validate().unwrap();
    }

    #[test]
    fn blind_detector_sees_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let det = run_detector(&with_map(0.0), &frame(25), &mut rng);
        assert_eq!(det.total, 0);
        assert_eq!(det.per_class_counts, [0; CLASS_COUNT]);
    }

    #[test]
    fn detection_rate_approaches_map_score() {
        let mtd = profiles::by_name(profiles::MTD).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut seen = 0u64;
        let mut objects = 0u64;
        while objects < 100_000 {
            let f = frame(50);
            let det = run_detector(&mtd, &f, &mut rng);
            seen += u64::from(det.total);
            objects += f.objects.len() as u64;
        }
        let rate = seen as f64 / objects as f64;
        assert!(
            (rate - 0.858).abs() <= 0.01,
            "detection rate {rate} vs map 0.858"
        );
    }

    #[test]
    fn latency_is_the_profile_latency() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let det = run_detector(&with_map(0.5), &frame(3), &mut rng);
        assert_eq!(det.measured_latency_ms, 10.0);
    }

    #[test]
    fn confidence_stays_near_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let det = run_detector(&with_map(0.858), &frame(5), &mut rng);
            assert!(det.mean_confidence >= 0.858 * 0.9);
            assert!(det.mean_confidence <= 1.0);
        }
        // map 1.0 squeezes the interval's upper end to 1.0
        let det = run_detector(&with_map(1.0), &frame(5), &mut rng);
        assert!(det.mean_confidence >= 0.9 && det.mean_confidence <= 1.0);
    }
}
