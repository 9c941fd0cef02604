//! Edge-intelligence traffic monitoring platform.
//!
//! Simulated edge nodes produce telemetry and detector inferences, a fog
//! dispatcher routes them over an in-process MQTT-style bus into a
//! digital-twin store with opportunistic signature selection and synthetic
//! sensing, and a deployment comparator works out the edge-vs-cloud latency
//! and bandwidth arithmetic.
//!
//! The guide under `book/` walks through every subsystem; its code snippets
//! compile against this crate and run as doc-tests.

pub mod agent;
pub mod bus;
pub mod codec;
pub mod dispatch;
pub mod model;
pub mod perf;
pub mod profiles;
pub mod rules;
pub mod scenario;
pub mod synth;
pub mod twin;

pub use model::{DetectorProfile, NodeId, Source, TelemetryReading};
