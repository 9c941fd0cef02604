//! Built-in detector profiles.
//!
//! Latency figures for all five models and the MTD mAP come from the
//! published evaluation of this system. The other mAP values were never
//! published numerically; the placeholders below keep the pre-trained models
//! usable in simulations and are clearly marked as such.

use crate::model::{DetectorProfile, VEHICLE_CLASSES};

pub const SSD_MOBILENET_V1: &str = "ssd_mobilenet_v1";
pub const SSD_MOBILENET_V2: &str = "ssd_mobilenet_v2";
pub const SSDLITE_MOBILEDET: &str = "ssdlite_mobiledet";
/// Transfer-learned EfficientDet on the Mini Traffic Detection dataset;
/// the profile the platform defaults to.
pub const MTD: &str = "mtd";
/// Transfer-learned EfficientDet on the Traffic Images dataset.
pub const TI: &str = "ti";

/// Whether a profile's numbers are published measurements or stand-ins.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Both latency and mAP are published values.
    Reported,
    /// Latency is published; the mAP is a placeholder, not a measurement.
    MapPlaceholder,
}

pub struct BuiltinProfile {
    pub profile: DetectorProfile,
    pub provenance: Provenance,
}

fn classes() -> Vec<String> {
    VEHICLE_CLASSES.iter().map(|s| s.to_string()).collect()
}

/// All shipped profiles, in display order.
pub fn builtin() -> Vec<BuiltinProfile> {
    let mk = |name: &str, latency_ms: f64, map: f64, provenance| BuiltinProfile {
        profile: DetectorProfile::new(name, latency_ms, map, classes())
            .expect("builtin profile is valid"),
        provenance,
    };
    vec![
        mk(SSD_MOBILENET_V1, 12.6, 0.40, Provenance::MapPlaceholder),
        mk(SSD_MOBILENET_V2, 25.0, 0.45, Provenance::MapPlaceholder),
        mk(SSDLITE_MOBILEDET, 28.0, 0.48, Provenance::MapPlaceholder),
        mk(MTD, 70.0, 0.858, Provenance::Reported),
        mk(TI, 70.0, 0.80, Provenance::MapPlaceholder),
    ]
}

/// Looks up a built-in profile by name.
pub fn by_name(name: &str) -> Option<DetectorProfile> {
    builtin()
        .into_iter()
        .find(|b| b.profile.name == name)
        .map(|b| b.profile)
}
