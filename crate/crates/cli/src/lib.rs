//! Operator tooling for the caster platform: casting simulator, conformance probes and CSV export.

pub mod client;
pub mod conformance;
pub mod export;
pub mod scenario;
pub mod simulate;

pub use client::{Client, ClientError};
pub use conformance::ConformanceReport;
pub use scenario::CastingScenario;
