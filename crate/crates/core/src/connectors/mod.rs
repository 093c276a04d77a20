//! Federation of external datastores.
//!
//! A logical series can be bound to an ordered list of disjoint index segments, each
//! served by a connector. Queries are split along the segments and stitched back
//! together so the result matches what one store holding all the data would return.

pub mod csv;
mod native;

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::csv::CsvConnector;
pub use native::NativeConnector;

use crate::model::{IndexRange, Scalar, SeriesId, SeriesSchema};
use crate::store::{
    bucket_start, bucketize, finish_buckets, merge_buckets, BucketAcc, Cursor, DataPoint, Frame, QueryResult,
    QuerySpec, Store, StoreError,
};

pub const NATIVE: &str = "native";
pub const CSV_FILE: &str = "csv-file";

#[derive(Debug, Error)]
pub enum ConnectorError {
    #[error("connector kind {0} is already registered")]
    DuplicateKind(String),
    #[error("unknown connector kind {0}")]
    UnknownKind(String),
    #[error("segments {first:?} and {second:?} overlap")]
    OverlappingSegments { first: IndexRange, second: IndexRange },
    #[error("invalid segment binding: {0}")]
    InvalidSegment(String),
    #[error("connector {kind} failed to initialise: {reason}")]
    InitFailure { kind: String, reason: String },
    #[error("unknown series {0}")]
    UnknownSeries(SeriesId),
    #[error("series {0} has no segment binding")]
    NotBound(SeriesId),
    #[error("segment {segment} ({kind}) unavailable: {reason}")]
    SegmentUnavailable { segment: usize, kind: String, reason: String },
    #[error("index {index} of {series} is not in a native segment")]
    WriteOutsideNative { series: SeriesId, index: i64 },
    #[error("source error: {0}")]
    Source(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Capabilities {
    pub aggregation: bool,
    pub paging: bool,
}

/// A read-only timeseries backend.
///
/// Results must be ascending, restricted to the half-open range, and use the requested
/// channel order. Rows whose requested channels are all null are returned as long as the
/// row has some value.
pub trait Connector: Send + Sync {
    fn kind(&self) -> &str;

    fn capabilities(&self) -> Capabilities;

    fn range_query(&self, range: IndexRange, channels: &[String]) -> Result<Frame, ConnectorError>;

    /// First `limit` points of the range. Only called when `paging` is advertised.
    fn range_query_page(&self, range: IndexRange, channels: &[String], limit: usize) -> Result<Frame, ConnectorError> {
        let mut f = self.range_query(range, channels)?;
        f.points.truncate(limit);
        Ok(f)
    }

    /// Epoch-aligned bucket accumulators. Only called when `aggregation` is advertised.
    fn aggregate(
        &self,
        range: IndexRange,
        resolution: i64,
        channels: &[String],
    ) -> Result<Vec<BucketAcc>, ConnectorError> {
        let f = self.range_query(range, channels)?;
        Ok(bucketize(f.points.iter().map(|p| (p.index, p.values.as_slice())), resolution, channels.len()))
    }
}

/// What a factory gets to build a connector for one segment.
pub struct ConnectorContext {
    pub store: Arc<Store>,
    pub schema: Arc<SeriesSchema>,
    /// Relative file paths in connector configs resolve against this directory.
    pub base_dir: PathBuf,
}

pub type Factory =
    Arc<dyn Fn(&ConnectorContext, &BTreeMap<String, String>) -> Result<Box<dyn Connector>, String> + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub range: IndexRange,
    pub kind: String,
    #[serde(default)]
    pub config: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BindingSpec {
    pub series: SeriesId,
    pub segments: Vec<SegmentSpec>,
}

struct Bound {
    range: IndexRange,
    kind: String,
    connector: Box<dyn Connector>,
}

struct Binding {
    spec: BindingSpec,
    schema: Arc<SeriesSchema>,
    segments: Vec<Bound>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FederatedResult {
    pub result: QueryResult,
    /// Connector calls issued for this request.
    pub subqueries: usize,
}

pub struct Federation {
    store: Arc<Store>,
    base_dir: PathBuf,
    kinds: RwLock<BTreeMap<String, Factory>>,
    bindings: RwLock<HashMap<SeriesId, Arc<Binding>>>,
}

impl Federation {
    /// A federation with the built-in `native` and `csv-file` kinds.
    pub fn new(store: Arc<Store>, base_dir: impl Into<PathBuf>) -> Self {
        let fed = Federation {
            store,
            base_dir: base_dir.into(),
            kinds: RwLock::new(BTreeMap::new()),
            bindings: RwLock::new(HashMap::new()),
        };
        let native: Factory =
            Arc::new(|ctx, _| Ok(Box::new(NativeConnector::new(ctx.store.clone(), ctx.schema.id.clone()))));
        let csv: Factory = Arc::new(|ctx, config| {
            let path = config.get("path").ok_or("missing `path`")?;
            let path = ctx.base_dir.join(path);
            CsvConnector::open(path, (*ctx.schema).clone()).map(|c| Box::new(c) as Box<dyn Connector>).map_err(|e| {
                match e {
                    ConnectorError::InitFailure { reason, .. } => reason,
                    other => other.to_string(),
                }
            })
        });
        fed.register_kind(NATIVE, native).expect("fresh registry");
        fed.register_kind(CSV_FILE, csv).expect("fresh registry");
        fed
    }

    pub fn register_kind(&self, name: &str, factory: Factory) -> Result<(), ConnectorError> {
        let mut kinds = self.kinds.write();
        if kinds.contains_key(name) {
            return Err(ConnectorError::DuplicateKind(name.into()));
        }
        kinds.insert(name.into(), factory);
        Ok(())
    }

    pub fn kinds(&self) -> Vec<String> {
        self.kinds.read().keys().cloned().collect()
    }

    /// Bind a series to segments, replacing any previous binding.
    pub fn bind(&self, spec: BindingSpec) -> Result<(), ConnectorError> {
        let schema = self.store.schema(&spec.series).map_err(|_| ConnectorError::UnknownSeries(spec.series.clone()))?;
        if spec.segments.is_empty() {
            return Err(ConnectorError::InvalidSegment("no segments".into()));
        }
        let mut segs = spec.segments.clone();
        for s in &segs {
            s.range.validate().map_err(|e| ConnectorError::InvalidSegment(e.to_string()))?;
        }
        segs.sort_by_key(|s| (s.range.start.is_some(), s.range.lower()));
        for w in segs.windows(2) {
            if w[0].range.overlaps(&w[1].range) || w[0].range.end.is_none() {
                return Err(ConnectorError::OverlappingSegments { first: w[0].range, second: w[1].range });
            }
        }
        let factories: Vec<Factory> = {
            let kinds = self.kinds.read();
            segs.iter()
                .map(|s| kinds.get(&s.kind).cloned().ok_or_else(|| ConnectorError::UnknownKind(s.kind.clone())))
                .collect::<Result<_, _>>()?
        };
        let ctx =
            ConnectorContext { store: self.store.clone(), schema: schema.clone(), base_dir: self.base_dir.clone() };
        let mut bound = Vec::with_capacity(segs.len());
        for (s, f) in segs.iter().zip(factories) {
            let connector =
                f(&ctx, &s.config).map_err(|reason| ConnectorError::InitFailure { kind: s.kind.clone(), reason })?;
            bound.push(Bound { range: s.range, kind: s.kind.clone(), connector });
        }
        let binding =
            Binding { spec: BindingSpec { series: spec.series.clone(), segments: segs }, schema, segments: bound };
        self.bindings.write().insert(spec.series, Arc::new(binding));
        Ok(())
    }

    pub fn unbind(&self, series: &SeriesId) -> bool {
        self.bindings.write().remove(series).is_some()
    }

    pub fn is_bound(&self, series: &SeriesId) -> bool {
        self.bindings.read().contains_key(series)
    }

    pub fn binding(&self, series: &SeriesId) -> Option<BindingSpec> {
        self.bindings.read().get(series).map(|b| b.spec.clone())
    }

    pub fn bindings(&self) -> Vec<BindingSpec> {
        let mut out: Vec<_> = self.bindings.read().values().map(|b| b.spec.clone()).collect();
        out.sort_by(|a, b| a.series.cmp(&b.series));
        out
    }

    /// Native writes to a bound series may only land in native segments.
    pub fn check_write(&self, series: &SeriesId, indices: impl IntoIterator<Item = i64>) -> Result<(), ConnectorError> {
        let Some(b) = self.bindings.read().get(series).cloned() else { return Ok(()) };
        for index in indices {
            if !b.segments.iter().any(|s| s.kind == NATIVE && s.range.contains(index)) {
                return Err(ConnectorError::WriteOutsideNative { series: series.clone(), index });
            }
        }
        Ok(())
    }

    pub fn query(&self, series: &SeriesId, spec: &QuerySpec) -> Result<FederatedResult, ConnectorError> {
        let b = self.bindings.read().get(series).cloned().ok_or_else(|| ConnectorError::NotBound(series.clone()))?;
        spec.validate()?;
        let (names, _) = Store::positions(&b.schema, spec.channels.as_deref())?;
        let cursor = match spec.page.as_ref().and_then(|p| p.cursor.as_ref()) {
            Some(c) => Some(parse_cursor(c, b.segments.len())?),
            None => None,
        };
        let mut range = spec.range;
        if let Some((_, last)) = cursor {
            let step = spec.aggregation.map_or(1, |a| a.resolution);
            let next = last.checked_add(step).ok_or(StoreError::InvalidCursor)?;
            range = range.intersect(&IndexRange::from(next));
        }
        let limit = spec.page.as_ref().map(|p| p.limit);
        if range.is_empty() {
            return Ok(FederatedResult {
                result: QueryResult { frame: Frame::new(names), ..Default::default() },
                subqueries: 0,
            });
        }
        match spec.aggregation {
            None => b.raw(range, names, limit, cursor.map_or(0, |c| c.0)),
            Some(agg) => {
                let (buckets, subqueries) = b.buckets(range, agg.resolution, &names)?;
                let take = limit.map_or(buckets.len(), |l| (l + 1).min(buckets.len()));
                let mut frame = finish_buckets(names, &buckets[..take], agg.function);
                let mut next_cursor = None;
                if let Some(l) = limit {
                    if frame.points.len() > l {
                        frame.points.truncate(l);
                        next_cursor = frame.points.last().map(|p| {
                            let seg = b.segments.iter().position(|s| s.range.upper() > p.index).unwrap_or(0);
                            make_cursor(seg, p.index)
                        });
                    }
                }
                Ok(FederatedResult { result: QueryResult { frame, next_cursor }, subqueries })
            }
        }
    }
}

impl Binding {
    fn unavailable(&self, segment: usize) -> impl Fn(ConnectorError) -> ConnectorError + '_ {
        move |e| ConnectorError::SegmentUnavailable {
            segment,
            kind: self.segments[segment].kind.clone(),
            reason: match e {
                ConnectorError::Source(r) => r,
                other => other.to_string(),
            },
        }
    }

    fn fetch(
        &self,
        segment: usize,
        range: IndexRange,
        names: &[String],
        limit: Option<usize>,
    ) -> Result<Frame, ConnectorError> {
        let s = &self.segments[segment];
        let frame = match limit {
            Some(l) if s.connector.capabilities().paging => s.connector.range_query_page(range, names, l),
            _ => s.connector.range_query(range, names),
        }
        .map_err(self.unavailable(segment))?;
        let mut prev = None;
        for p in &frame.points {
            if !range.contains(p.index) || prev.is_some_and(|q| q >= p.index) || p.values.len() != names.len() {
                return Err(self.unavailable(segment)(ConnectorError::Source(format!(
                    "out-of-contract row at index {}",
                    p.index
                ))));
            }
            prev = Some(p.index);
        }
        Ok(frame)
    }

    fn raw(
        &self,
        range: IndexRange,
        names: Vec<String>,
        limit: Option<usize>,
        first: usize,
    ) -> Result<FederatedResult, ConnectorError> {
        let want = limit.map(|l| l + 1);
        let mut points: Vec<DataPoint> = Vec::new();
        let mut origin: Vec<usize> = Vec::new();
        let mut subqueries = 0;
        for (i, seg) in self.segments.iter().enumerate().skip(first) {
            if want.is_some_and(|w| points.len() >= w) {
                break;
            }
            let sub = range.intersect(&seg.range);
            if sub.is_empty() {
                continue;
            }
            let frame = self.fetch(i, sub, &names, want.map(|w| w - points.len()))?;
            subqueries += 1;
            for p in frame.points {
                points.push(p);
                origin.push(i);
                if want.is_some_and(|w| points.len() >= w) {
                    break;
                }
            }
        }
        let mut next_cursor = None;
        if let Some(l) = limit {
            if points.len() > l {
                points.truncate(l);
                next_cursor = points.last().map(|p| make_cursor(origin[l - 1], p.index));
            }
        }
        Ok(FederatedResult {
            result: QueryResult { frame: Frame { channels: names, points }, next_cursor },
            subqueries,
        })
    }

    /// Buckets wholly inside one segment are aggregated there; buckets crossing a segment
    /// boundary are rebuilt from raw points so values accumulate in the same order as in a
    /// single store.
    fn buckets(
        &self,
        range: IndexRange,
        resolution: i64,
        names: &[String],
    ) -> Result<(Vec<BucketAcc>, usize), ConnectorError> {
        let mut interior: Vec<BucketAcc> = Vec::new();
        let mut edge_rows: Vec<(i64, Vec<Option<Scalar>>)> = Vec::new();
        let mut subqueries = 0;
        for (i, seg) in self.segments.iter().enumerate() {
            let sub = range.intersect(&seg.range);
            if sub.is_empty() {
                continue;
            }
            let (inner, edges) = split(seg.range, sub, resolution);
            if let Some(r) = inner {
                let s = &seg.connector;
                let buckets = if s.capabilities().aggregation {
                    s.aggregate(r, resolution, names).map_err(self.unavailable(i))?
                } else {
                    let f = self.fetch(i, r, names, None)?;
                    bucketize(f.points.iter().map(|p| (p.index, p.values.as_slice())), resolution, names.len())
                };
                subqueries += 1;
                interior = merge_buckets(interior, buckets);
            }
            for e in edges {
                let f = self.fetch(i, e, names, None)?;
                subqueries += 1;
                edge_rows.extend(f.points.into_iter().map(|p| (p.index, p.values)));
            }
        }
        let straddling = bucketize(edge_rows.iter().map(|(i, v)| (*i, v.as_slice())), resolution, names.len());
        Ok((merge_buckets(interior, straddling), subqueries))
    }
}

/// Split `sub` (a part of `seg`) into the range covered by buckets lying wholly inside
/// `seg` and the leftover pieces belonging to buckets that cross a segment bound.
fn split(seg: IndexRange, sub: IndexRange, resolution: i64) -> (Option<IndexRange>, Vec<IndexRange>) {
    let lo_cut = seg.start.map(|s| {
        let b = bucket_start(s, resolution);
        if b == s {
            s
        } else {
            b.saturating_add(resolution)
        }
    });
    let hi_cut = seg.end.map(|e| bucket_start(e, resolution));
    let interior = IndexRange { start: lo_cut, end: hi_cut };
    if interior.validate().is_err() {
        return (None, vec![sub]);
    }
    let inner = sub.intersect(&interior);
    let mut edges = Vec::new();
    if let Some(c) = lo_cut {
        let left = sub.intersect(&IndexRange::until(c));
        if !left.is_empty() {
            edges.push(left);
        }
    }
    if let Some(c) = hi_cut {
        let right = sub.intersect(&IndexRange::from(c));
        if !right.is_empty() {
            edges.push(right);
        }
    }
    ((!inner.is_empty()).then_some(inner), edges)
}

fn make_cursor(segment: usize, index: i64) -> Cursor {
    Cursor::from_raw(format!("s{segment}.{}", Cursor::after(index).as_str()))
}

fn parse_cursor(c: &Cursor, segments: usize) -> Result<(usize, i64), StoreError> {
    let (seg, inner) = c.as_str().strip_prefix('s').and_then(|s| s.split_once('.')).ok_or(StoreError::InvalidCursor)?;
    let seg: usize = seg.parse().map_err(|_| StoreError::InvalidCursor)?;
    if seg >= segments {
        return Err(StoreError::InvalidCursor);
    }
    Ok((seg, Cursor::parse(inner)?.last_index()?))
}
