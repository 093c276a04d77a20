//! Asset and series metamodel: identifiers, schemas, references, metadata and the layered
//! policy table.

mod ids;
mod metadata;
mod policy;
mod range;
mod registry;
mod schema;
mod value;

use thiserror::Error;

pub use ids::{AssetId, SeriesId, ViewId};
pub use metadata::{overlay, MetadataScope, MetadataSegment};
pub use policy::{
    rollup_series_id, PolicyKind, PolicyLevel, PolicySet, PolicySetting, PolicyValue, Retention, RollupRule,
    NANOS_PER_SECOND,
};
pub use range::IndexRange;
pub use registry::{Registry, RegistrySnapshot, ResolvedReference};
pub use schema::{Asset, Channel, IndexKind, SeriesKind, SeriesReference, SeriesSchema};
pub use value::{Scalar, ValueType};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{0} must not be empty")]
    InvalidId(&'static str),
    #[error("id {0} already exists with a different definition")]
    DuplicateId(String),
    #[error("invalid asset: {0}")]
    InvalidAsset(String),
    #[error("series needs at least one channel")]
    EmptyChannelList,
    #[error("duplicate channel name {0}")]
    DuplicateChannelName(String),
    #[error("invalid channel: {0}")]
    InvalidChannel(String),
    #[error("unknown asset {0}")]
    UnknownAsset(AssetId),
    #[error("unknown series {0}")]
    UnknownSeries(SeriesId),
    #[error("invalid range: start {start} must be below end {end}")]
    InvalidRange { start: i64, end: i64 },
    #[error("metadata segment {new:?} overlaps existing segment {existing:?}")]
    OverlappingSegment { existing: IndexRange, new: IndexRange },
    #[error("metadata keys must not be empty")]
    InvalidMetadataKey,
    #[error("resolution must be positive, got {0}")]
    InvalidResolution(i64),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
}
