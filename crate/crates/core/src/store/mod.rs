//! Append-optimized columnar storage for multivariate series.
//!
//! Each series holds one shared index column and one column per channel, split into
//! segments of bounded size. Writes are logged to a per-series append log before they are
//! applied; segments are copy-on-write so readers work on stable snapshots.

mod aggregate;
mod column;
mod persist;
mod segment;
mod series;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use aggregate::{bucket_start, bucketize, merge_buckets, Accumulator, AggregateFunction, BucketAcc, Stat};
pub use column::Column;
pub use segment::Segment;
pub use series::{Rows, SeriesSnapshot};

use crate::model::{IndexRange, ModelError, Scalar, SeriesId, SeriesSchema, ValueType};
use series::SeriesData;

pub const MAX_PAGE_LIMIT: usize = 100_000;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown series {0}")]
    UnknownSeries(SeriesId),
    #[error("series {0} already exists with a different schema")]
    SchemaConflict(SeriesId),
    #[error("unknown channel {0}")]
    UnknownChannel(String),
    #[error("type mismatch on channel {channel}: expected {expected}, got {found}")]
    TypeMismatch { channel: String, expected: ValueType, found: ValueType },
    #[error("batch indices must be strictly ascending (violation at position {position})")]
    UnsortedBatch { position: usize },
    #[error("point at index {index} carries no values")]
    EmptyPoint { index: i64 },
    #[error("point at index {index} has {found} values for {expected} channels")]
    ArityMismatch { index: i64, expected: usize, found: usize },
    #[error("invalid cursor")]
    InvalidCursor,
    #[error(transparent)]
    InvalidRange(#[from] ModelError),
    #[error("resolution must be positive, got {0}")]
    InvalidResolution(i64),
    #[error("page limit must be within 1..={MAX_PAGE_LIMIT}, got {0}")]
    InvalidLimit(usize),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt storage: {0}")]
    Corrupt(String),
}

/// One row: an index and one optional value per channel of the enclosing frame or batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub index: i64,
    pub values: Vec<Option<Scalar>>,
}

impl DataPoint {
    pub fn new(index: i64, values: Vec<Option<Scalar>>) -> Self {
        DataPoint { index, values }
    }

    pub fn bit_eq(&self, other: &DataPoint) -> bool {
        self.index == other.index
            && self.values.len() == other.values.len()
            && self.values.iter().zip(&other.values).all(|(a, b)| match (a, b) {
                (Some(a), Some(b)) => a.bit_eq(b),
                (None, None) => true,
                _ => false,
            })
    }
}

/// Points for a named list of channels.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Frame {
    pub channels: Vec<String>,
    pub points: Vec<DataPoint>,
}

impl Frame {
    pub fn new(channels: Vec<String>) -> Self {
        Frame { channels, points: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bit_eq(&self, other: &Frame) -> bool {
        self.channels == other.channels
            && self.points.len() == other.points.len()
            && self.points.iter().zip(&other.points).all(|(a, b)| a.bit_eq(b))
    }

    pub fn indices(&self) -> Vec<i64> {
        self.points.iter().map(|p| p.index).collect()
    }
}

/// Points to append to one series; values align with `channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataBatch {
    pub series_id: SeriesId,
    pub channels: Vec<String>,
    pub points: Vec<DataPoint>,
}

impl DataBatch {
    pub fn new(series_id: SeriesId, channels: Vec<String>, points: Vec<DataPoint>) -> Self {
        DataBatch { series_id, channels, points }
    }
}

/// Opaque paging token; resumes strictly after the last returned index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Cursor(String);

impl Cursor {
    pub fn after(index: i64) -> Self {
        Cursor(format!("c{:016x}", index as u64))
    }

    /// Wrap a token without checking it; whoever resumes from it validates.
    pub fn from_raw(token: impl Into<String>) -> Self {
        Cursor(token.into())
    }

    pub fn parse(token: &str) -> Result<Self, StoreError> {
        let c = Cursor(token.to_string());
        c.last_index()?;
        Ok(c)
    }

    pub fn last_index(&self) -> Result<i64, StoreError> {
        let hex = self.0.strip_prefix('c').filter(|h| h.len() == 16).ok_or(StoreError::InvalidCursor)?;
        u64::from_str_radix(hex, 16).map(|v| v as i64).map_err(|_| StoreError::InvalidCursor)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Page {
    pub limit: usize,
    pub cursor: Option<Cursor>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregation {
    pub function: AggregateFunction,
    pub resolution: i64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QuerySpec {
    pub range: IndexRange,
    pub channels: Option<Vec<String>>,
    pub page: Option<Page>,
    pub aggregation: Option<Aggregation>,
}

impl QuerySpec {
    pub fn range(range: IndexRange) -> Self {
        QuerySpec { range, ..Default::default() }
    }

    pub fn with_channels(mut self, channels: &[&str]) -> Self {
        self.channels = Some(channels.iter().map(|s| s.to_string()).collect());
        self
    }

    pub fn with_limit(mut self, limit: usize, cursor: Option<Cursor>) -> Self {
        self.page = Some(Page { limit, cursor });
        self
    }

    pub fn with_aggregation(mut self, function: AggregateFunction, resolution: i64) -> Self {
        self.aggregation = Some(Aggregation { function, resolution });
        self
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        self.range.validate()?;
        if let Some(p) = &self.page {
            if p.limit == 0 || p.limit > MAX_PAGE_LIMIT {
                return Err(StoreError::InvalidLimit(p.limit));
            }
        }
        if let Some(a) = &self.aggregation {
            if a.resolution <= 0 {
                return Err(StoreError::InvalidResolution(a.resolution));
            }
        }
        Ok(())
    }

    /// Range that remains after applying the cursor.
    pub fn resume_range(&self) -> Result<IndexRange, StoreError> {
        let cursor = self.page.as_ref().and_then(|p| p.cursor.as_ref());
        let Some(c) = cursor else { return Ok(self.range) };
        let last = c.last_index()?;
        let step = self.aggregation.map_or(1, |a| a.resolution);
        let next = last.checked_add(step).ok_or(StoreError::InvalidCursor)?;
        Ok(self.range.intersect(&IndexRange::from(next)))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QueryResult {
    pub frame: Frame,
    pub next_cursor: Option<Cursor>,
}

#[derive(Debug, Clone, Copy)]
pub struct StoreOptions {
    /// Points per sealed segment.
    pub seal_points: usize,
    /// fsync the append log on every write.
    pub sync: bool,
    /// Fold the append log into segment files once it grows past this many bytes.
    pub checkpoint_bytes: u64,
}

impl Default for StoreOptions {
    fn default() -> Self {
        StoreOptions { seal_points: 4096, sync: true, checkpoint_bytes: 8 << 20 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct StoreStats {
    pub series: usize,
    pub points: usize,
    pub heap_bytes: usize,
}

/// Physical layout of one series.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SeriesLayout {
    pub segments: usize,
    pub points: usize,
    /// Index columns per segment; always one, shared by all channels.
    pub index_columns_per_segment: usize,
    /// Total stored index entries across segments.
    pub index_entries: usize,
    pub value_columns: usize,
}

type Handle = Arc<RwLock<SeriesData>>;

pub struct Store {
    series: RwLock<HashMap<SeriesId, Handle>>,
    options: StoreOptions,
    root: Option<PathBuf>,
}

impl Store {
    pub fn in_memory() -> Self {
        Self::in_memory_with(StoreOptions::default())
    }

    pub fn in_memory_with(options: StoreOptions) -> Self {
        Store { series: RwLock::new(HashMap::new()), options, root: None }
    }

    /// Open (or create) a store below `root`, recovering every persisted series.
    pub fn open(root: impl AsRef<Path>, options: StoreOptions) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        std::fs::create_dir_all(&root)?;
        let recovered = persist::recover_all(&root, options.seal_points, options.sync, options.checkpoint_bytes)?;
        let map = recovered.into_iter().map(|d| (d.schema.id.clone(), Arc::new(RwLock::new(d)))).collect();
        Ok(Store { series: RwLock::new(map), options, root: Some(root) })
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    /// Register a series. Files are created on first write. Re-creating with the same
    /// structure is a no-op.
    pub fn create_series(&self, schema: &SeriesSchema) -> Result<(), StoreError> {
        let mut map = self.series.write();
        if let Some(existing) = map.get(&schema.id) {
            return if existing.read().schema.same_structure(schema) {
                Ok(())
            } else {
                Err(StoreError::SchemaConflict(schema.id.clone()))
            };
        }
        let data = SeriesData::new(Arc::new(schema.clone()), self.options.seal_points);
        map.insert(schema.id.clone(), Arc::new(RwLock::new(data)));
        Ok(())
    }

    pub fn contains(&self, id: &SeriesId) -> bool {
        self.series.read().contains_key(id)
    }

    pub fn series_ids(&self) -> Vec<SeriesId> {
        let mut ids: Vec<_> = self.series.read().keys().cloned().collect();
        ids.sort();
        ids
    }

    fn handle(&self, id: &SeriesId) -> Result<Handle, StoreError> {
        self.series.read().get(id).cloned().ok_or_else(|| StoreError::UnknownSeries(id.clone()))
    }

    pub fn schema(&self, id: &SeriesId) -> Result<Arc<SeriesSchema>, StoreError> {
        Ok(self.handle(id)?.read().schema.clone())
    }

    fn ensure_disk(&self, data: &mut SeriesData) -> Result<(), StoreError> {
        if data.disk.is_none() {
            if let Some(root) = &self.root {
                data.disk = Some(persist::SeriesFiles::create(
                    root,
                    &data.schema,
                    self.options.sync,
                    self.options.checkpoint_bytes,
                )?);
            }
        }
        Ok(())
    }

    /// Validate a batch against the schema and widen it to full-width rows.
    fn full_rows(schema: &SeriesSchema, batch: &DataBatch) -> Result<Vec<(i64, Vec<Option<Scalar>>)>, StoreError> {
        let positions = batch
            .channels
            .iter()
            .map(|c| schema.channel_position(c).ok_or_else(|| StoreError::UnknownChannel(c.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        let mut rows = Vec::with_capacity(batch.points.len());
        for (i, p) in batch.points.iter().enumerate() {
            if i > 0 && batch.points[i - 1].index >= p.index {
                return Err(StoreError::UnsortedBatch { position: i });
            }
            if p.values.len() != positions.len() {
                return Err(StoreError::ArityMismatch {
                    index: p.index,
                    expected: positions.len(),
                    found: p.values.len(),
                });
            }
            let mut row = vec![None; schema.channels.len()];
            let mut any = false;
            for (v, &pos) in p.values.iter().zip(&positions) {
                if let Some(v) = v {
                    let ch = &schema.channels[pos];
                    if v.value_type() != ch.value_type {
                        return Err(StoreError::TypeMismatch {
                            channel: ch.name.clone(),
                            expected: ch.value_type,
                            found: v.value_type(),
                        });
                    }
                    row[pos] = Some(v.clone());
                    any = true;
                }
            }
            if !any {
                return Err(StoreError::EmptyPoint { index: p.index });
            }
            rows.push((p.index, row));
        }
        Ok(rows)
    }

    /// Check a batch against the series schema without writing it.
    pub fn validate_batch(&self, batch: &DataBatch) -> Result<(), StoreError> {
        let schema = self.schema(&batch.series_id)?;
        Self::full_rows(&schema, batch).map(|_| ())
    }

    /// Append a sorted batch. Existing points with the same index are replaced.
    pub fn append(&self, batch: &DataBatch) -> Result<usize, StoreError> {
        let handle = self.handle(&batch.series_id)?;
        let mut data = handle.write();
        let rows = Self::full_rows(&data.schema, batch)?;
        let n = rows.len();
        if n == 0 {
            return Ok(0);
        }
        self.ensure_disk(&mut data)?;
        data.write_rows(rows, false)?;
        Ok(n)
    }

    /// Upsert a single channel value, keeping the other channels of an existing point.
    pub fn merge_value(&self, id: &SeriesId, index: i64, channel: &str, value: Scalar) -> Result<(), StoreError> {
        let handle = self.handle(id)?;
        let mut data = handle.write();
        let batch =
            DataBatch::new(id.clone(), vec![channel.to_string()], vec![DataPoint::new(index, vec![Some(value)])]);
        let rows = Self::full_rows(&data.schema, &batch)?;
        self.ensure_disk(&mut data)?;
        data.write_rows(rows, true)
    }

    pub fn snapshot(&self, id: &SeriesId) -> Result<SeriesSnapshot, StoreError> {
        Ok(self.handle(id)?.read().snapshot())
    }

    /// Channel positions for an optional projection; `None` selects all channels.
    pub fn positions(
        schema: &SeriesSchema,
        channels: Option<&[String]>,
    ) -> Result<(Vec<String>, Vec<usize>), StoreError> {
        match channels {
            None => Ok((schema.channel_names(), (0..schema.channels.len()).collect())),
            Some(names) => {
                let pos = names
                    .iter()
                    .map(|c| schema.channel_position(c).ok_or_else(|| StoreError::UnknownChannel(c.clone())))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok((names.to_vec(), pos))
            }
        }
    }

    pub fn query(&self, id: &SeriesId, spec: &QuerySpec) -> Result<QueryResult, StoreError> {
        spec.validate()?;
        let snap = self.snapshot(id)?;
        query_snapshot(&snap, spec)
    }

    /// Per-bucket accumulators over `range` for the selected channels.
    pub fn aggregate_buckets(
        &self,
        id: &SeriesId,
        range: IndexRange,
        resolution: i64,
        channels: Option<&[String]>,
    ) -> Result<(Vec<String>, Vec<BucketAcc>), StoreError> {
        if resolution <= 0 {
            return Err(StoreError::InvalidResolution(resolution));
        }
        range.validate()?;
        let snap = self.snapshot(id)?;
        let (names, positions) = Self::positions(&snap.schema, channels)?;
        Ok((names, buckets_of(&snap, range, resolution, &positions)))
    }

    /// Epoch-aligned bucketed aggregate; empty buckets are omitted and nulls skipped.
    pub fn aggregate_query(
        &self,
        id: &SeriesId,
        range: IndexRange,
        resolution: i64,
        function: AggregateFunction,
        channels: Option<&[String]>,
    ) -> Result<Frame, StoreError> {
        let (names, buckets) = self.aggregate_buckets(id, range, resolution, channels)?;
        Ok(finish_buckets(names, &buckets, function))
    }

    pub fn delete_range(&self, id: &SeriesId, range: IndexRange) -> Result<usize, StoreError> {
        range.validate()?;
        let handle = self.handle(id)?;
        let mut data = handle.write();
        if range.is_empty() {
            return Ok(0);
        }
        self.ensure_disk(&mut data)?;
        data.delete_range(range)
    }

    /// Clear one channel in `range`; rows left empty are removed. Returns (cleared, removed).
    pub fn clear_channel(&self, id: &SeriesId, channel: &str, range: IndexRange) -> Result<(usize, usize), StoreError> {
        let handle = self.handle(id)?;
        let mut data = handle.write();
        let pos = data.schema.channel_position(channel).ok_or_else(|| StoreError::UnknownChannel(channel.into()))?;
        self.ensure_disk(&mut data)?;
        data.clear_channel(pos, range)
    }

    /// Raise the series watermark. Queries never return points below it.
    pub fn raise_watermark(&self, id: &SeriesId, value: i64) -> Result<bool, StoreError> {
        let handle = self.handle(id)?;
        let mut data = handle.write();
        self.ensure_disk(&mut data)?;
        data.raise_watermark(None, value)
    }

    pub fn raise_channel_watermark(&self, id: &SeriesId, channel: &str, value: i64) -> Result<bool, StoreError> {
        let handle = self.handle(id)?;
        let mut data = handle.write();
        let pos = data.schema.channel_position(channel).ok_or_else(|| StoreError::UnknownChannel(channel.into()))?;
        self.ensure_disk(&mut data)?;
        data.raise_watermark(Some(pos), value)
    }

    pub fn watermark(&self, id: &SeriesId) -> Result<Option<i64>, StoreError> {
        Ok(self.handle(id)?.read().watermark)
    }

    pub fn channel_watermark(&self, id: &SeriesId, channel: &str) -> Result<Option<i64>, StoreError> {
        let handle = self.handle(id)?;
        let data = handle.read();
        let pos = data.schema.channel_position(channel).ok_or_else(|| StoreError::UnknownChannel(channel.into()))?;
        Ok(match (data.watermark, data.channel_watermarks[pos]) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        })
    }

    pub fn version(&self, id: &SeriesId) -> Result<u64, StoreError> {
        Ok(self.handle(id)?.read().version)
    }

    /// Union of index ranges written after `version`, if any. Bounds are inclusive.
    pub fn changes_since(&self, id: &SeriesId, version: u64) -> Result<Option<(i64, i64)>, StoreError> {
        Ok(self.handle(id)?.read().changes_since(version, u64::MAX))
    }

    /// Like [`Store::changes_since`], limited to writes that may have touched `channels`.
    pub fn channel_changes_since(
        &self,
        id: &SeriesId,
        version: u64,
        channels: &[&str],
    ) -> Result<Option<(i64, i64)>, StoreError> {
        let handle = self.handle(id)?;
        let data = handle.read();
        let mut mask = 0;
        for c in channels {
            let p = data.schema.channel_position(c).ok_or_else(|| StoreError::UnknownChannel((*c).into()))?;
            mask |= series::channel_bit(p);
        }
        Ok(data.changes_since(version, mask))
    }

    pub fn layout(&self, id: &SeriesId) -> Result<SeriesLayout, StoreError> {
        let handle = self.handle(id)?;
        let data = handle.read();
        let points = data.len();
        Ok(SeriesLayout {
            segments: data.segments.len(),
            points,
            index_columns_per_segment: 1,
            index_entries: data.segments.iter().map(|s| s.index().len()).sum(),
            value_columns: data.schema.channels.len(),
        })
    }

    pub fn stats(&self) -> StoreStats {
        let map = self.series.read();
        let mut stats = StoreStats { series: map.len(), ..Default::default() };
        for h in map.values() {
            let d = h.read();
            stats.points += d.len();
            stats.heap_bytes += d.segments.iter().map(|s| s.heap_bytes()).sum::<usize>();
        }
        stats
    }

    /// Fold every append log into segment files.
    pub fn checkpoint(&self) -> Result<(), StoreError> {
        let handles: Vec<Handle> = self.series.read().values().cloned().collect();
        for h in handles {
            h.write().checkpoint()?;
        }
        Ok(())
    }
}

pub(crate) fn buckets_of(
    snap: &SeriesSnapshot,
    range: IndexRange,
    resolution: i64,
    positions: &[usize],
) -> Vec<BucketAcc> {
    let mut out: Vec<BucketAcc> = Vec::new();
    for (seg, i) in snap.rows(range) {
        let b = bucket_start(seg.index()[i], resolution);
        if out.last().is_none_or(|last| last.start != b) {
            if out.last().is_some_and(|l| !l.has_values()) {
                out.pop();
            }
            out.push(BucketAcc { start: b, accs: vec![Accumulator::default(); positions.len()] });
        }
        let bucket = out.last_mut().expect("bucket pushed above");
        for (acc, &p) in bucket.accs.iter_mut().zip(positions) {
            if let Some(v) = seg.column(p).get(i) {
                acc.add(&v);
            }
        }
    }
    if out.last().is_some_and(|l| !l.has_values()) {
        out.pop();
    }
    out
}

pub fn finish_buckets(channels: Vec<String>, buckets: &[BucketAcc], function: AggregateFunction) -> Frame {
    Frame {
        channels,
        points: buckets
            .iter()
            .filter(|b| b.has_values())
            .map(|b| DataPoint::new(b.start, b.accs.iter().map(|a| a.finish(function)).collect()))
            .collect(),
    }
}

/// Query a snapshot: range filter, projection, optional aggregation and paging.
pub fn query_snapshot(snap: &SeriesSnapshot, spec: &QuerySpec) -> Result<QueryResult, StoreError> {
    spec.validate()?;
    let (names, positions) = Store::positions(&snap.schema, spec.channels.as_deref())?;
    let range = spec.resume_range()?;
    let limit = spec.page.as_ref().map(|p| p.limit);
    if range.is_empty() {
        return Ok(QueryResult { frame: Frame::new(names), next_cursor: None });
    }
    let mut points: Vec<DataPoint> = match spec.aggregation {
        Some(agg) => {
            let buckets = buckets_of(snap, range, agg.resolution, &positions);
            let take = limit.map_or(buckets.len(), |l| (l + 1).min(buckets.len()));
            finish_buckets(names.clone(), &buckets[..take], agg.function).points
        }
        None => {
            let it = snap.points(range, &positions);
            match limit {
                Some(l) => it.take(l + 1).collect(),
                None => it.collect(),
            }
        }
    };
    let mut next_cursor = None;
    if let Some(l) = limit {
        if points.len() > l {
            points.truncate(l);
            next_cursor = points.last().map(|p| Cursor::after(p.index));
        }
    }
    Ok(QueryResult { frame: Frame { channels: names, points }, next_cursor })
}
