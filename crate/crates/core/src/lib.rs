//! Core of the caster timeseries platform.
//!
//! Modules map onto the platform's building blocks:
//!
//! - [`model`]: assets, series schemas, references, metadata and layered policies
//! - [`store`]: columnar storage with range queries, paging and aggregation
//! - [`rollup`]: rollup generation, retention and the aggregation-level planner
//! - [`views`]: time-to-position re-indexing of casting data into product tables
//! - [`connectors`]: federation of external datastores behind one logical series
//! - [`platform`]: the facade tying the above together
//! - [`exec`]: data-parallel helpers with a sequential fallback

pub mod connectors;
pub mod exec;
pub mod model;
pub mod platform;
pub mod rollup;
pub mod store;
pub mod views;

pub use platform::{Platform, PlatformError};
