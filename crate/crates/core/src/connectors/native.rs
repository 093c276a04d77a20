use std::sync::Arc;

use super::{Capabilities, Connector, ConnectorError};
use crate::model::{IndexRange, SeriesId};
use crate::store::{BucketAcc, Frame, QuerySpec, Store};

/// The local store as a segment backend. Data lives in the store series of the same id.
pub struct NativeConnector {
    store: Arc<Store>,
    series: SeriesId,
}

impl NativeConnector {
    pub fn new(store: Arc<Store>, series: SeriesId) -> Self {
        NativeConnector { store, series }
    }
}

fn src(e: impl std::fmt::Display) -> ConnectorError {
    ConnectorError::Source(e.to_string())
}

impl Connector for NativeConnector {
    fn kind(&self) -> &str {
        "native"
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { aggregation: true, paging: true }
    }

    fn range_query(&self, range: IndexRange, channels: &[String]) -> Result<Frame, ConnectorError> {
        let spec = QuerySpec { range, channels: Some(channels.to_vec()), ..Default::default() };
        Ok(self.store.query(&self.series, &spec).map_err(src)?.frame)
    }

    fn range_query_page(&self, range: IndexRange, channels: &[String], limit: usize) -> Result<Frame, ConnectorError> {
        let spec = QuerySpec { range, channels: Some(channels.to_vec()), ..Default::default() }.with_limit(limit, None);
        Ok(self.store.query(&self.series, &spec).map_err(src)?.frame)
    }

    fn aggregate(
        &self,
        range: IndexRange,
        resolution: i64,
        channels: &[String],
    ) -> Result<Vec<BucketAcc>, ConnectorError> {
        let (_, buckets) =
            self.store.aggregate_buckets(&self.series, range, resolution, Some(channels)).map_err(src)?;
        Ok(buckets)
    }
}
