//! Paged production of NDJSON streams.
//!
//! Pages are fetched only when the HTTP body asks for the next chunk, so at most one batch of
//! records is materialized per stream at any time. Every stream is tracked in a
//! [`StreamMonitor`] so that buffering can be observed from outside.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;

use axum::body::{Body, Bytes};
use caster_core::model::{AssetId, ResolvedReference, SeriesId};
use caster_core::platform::{ErrorClass, QueryOutcome};
use caster_core::store::{Cursor, DataPoint, Page, QuerySpec};
use caster_core::views::ProductRow;
use caster_core::{Platform, PlatformError};
use parking_lot::Mutex;
use serde::Serialize;

use crate::wire::{ErrorDetail, Footer, Header, PlanEcho, Status};

const KEEP_FINISHED: usize = 256;

/// Counters of one stream.
#[derive(Debug, Default)]
pub struct StreamStats {
    pub id: u64,
    records: AtomicU64,
    batches: AtomicU64,
    buffered: AtomicUsize,
    peak_buffered: AtomicUsize,
    finished: AtomicBool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct StreamSnapshot {
    pub id: u64,
    /// Records written to the body so far.
    pub records: u64,
    /// Chunks handed to the HTTP layer.
    pub batches: u64,
    /// Records currently held by the producer.
    pub buffered: usize,
    #[serde(rename = "peakBuffered")]
    pub peak_buffered: usize,
    /// The footer has been produced.
    pub finished: bool,
}

impl StreamStats {
    fn hold(&self, n: usize) {
        let now = self.buffered.fetch_add(n, Ordering::SeqCst) + n;
        self.peak_buffered.fetch_max(now, Ordering::SeqCst);
    }

    fn release(&self, n: usize) {
        self.buffered.fetch_sub(n, Ordering::SeqCst);
        self.records.fetch_add(n as u64, Ordering::SeqCst);
    }

    fn flushed(&self) {
        self.batches.fetch_add(1, Ordering::SeqCst);
    }

    pub fn snapshot(&self) -> StreamSnapshot {
        StreamSnapshot {
            id: self.id,
            records: self.records.load(Ordering::SeqCst),
            batches: self.batches.load(Ordering::SeqCst),
            buffered: self.buffered.load(Ordering::SeqCst),
            peak_buffered: self.peak_buffered.load(Ordering::SeqCst),
            finished: self.finished.load(Ordering::SeqCst),
        }
    }
}

/// Registry of live and recently finished streams.
#[derive(Debug, Default)]
pub struct StreamMonitor {
    next: AtomicU64,
    streams: Mutex<VecDeque<Arc<StreamStats>>>,
}

impl StreamMonitor {
    pub fn open(&self) -> Arc<StreamStats> {
        let id = self.next.fetch_add(1, Ordering::SeqCst) + 1;
        let s = Arc::new(StreamStats { id, ..Default::default() });
        let mut list = self.streams.lock();
        list.push_back(s.clone());
        while list.len() > KEEP_FINISHED {
            match list.iter().position(|x| x.finished.load(Ordering::SeqCst)) {
                Some(p) => {
                    list.remove(p);
                }
                None => break,
            }
        }
        s
    }

    pub fn get(&self, id: u64) -> Option<StreamSnapshot> {
        self.streams.lock().iter().find(|s| s.id == id).map(|s| s.snapshot())
    }

    pub fn all(&self) -> Vec<StreamSnapshot> {
        self.streams.lock().iter().map(|s| s.snapshot()).collect()
    }
}

pub fn class_name(c: ErrorClass) -> &'static str {
    match c {
        ErrorClass::NotFound => "notFound",
        ErrorClass::Invalid => "invalid",
        ErrorClass::Conflict => "conflict",
        ErrorClass::Unanswerable => "unanswerable",
        ErrorClass::Unavailable => "unavailable",
        ErrorClass::Disabled => "disabled",
        ErrorClass::Internal => "internal",
    }
}

pub fn detail(e: &PlatformError) -> ErrorDetail {
    ErrorDetail { class: class_name(e.class()).into(), message: e.to_string() }
}

#[derive(Serialize)]
struct DataRef<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    index: i64,
    values: &'a [Option<caster_core::model::Scalar>],
}

#[derive(Serialize)]
struct Tagged<'a, T: Serialize> {
    #[serde(rename = "type")]
    kind: &'static str,
    #[serde(flatten)]
    body: &'a T,
}

fn push_line<T: Serialize>(buf: &mut Vec<u8>, value: &T) {
    serde_json::to_writer(&mut *buf, value).expect("records serialize");
    buf.push(b'\n');
}

pub fn encode_header(buf: &mut Vec<u8>, h: &Header) {
    push_line(buf, &Tagged { kind: "header", body: h });
}

pub fn encode_footer(buf: &mut Vec<u8>, f: &Footer) {
    push_line(buf, &Tagged { kind: "footer", body: f });
}

pub fn encode_points(buf: &mut Vec<u8>, points: &[DataPoint]) {
    for p in points {
        push_line(buf, &DataRef { kind: "data", index: p.index, values: &p.values });
    }
}

pub fn encode_rows(buf: &mut Vec<u8>, rows: &[ProductRow]) {
    for r in rows {
        push_line(buf, &Tagged { kind: "row", body: r });
    }
}

#[derive(Debug, Clone)]
pub enum Target {
    Series(SeriesId),
    Asset { asset: AssetId, role: Option<String> },
}

/// Result of one page request.
pub struct Fetched {
    pub points: Vec<DataPoint>,
    pub columns: Vec<String>,
    pub outcome_plan: Option<PlanEcho>,
    pub reference: Option<ResolvedReference>,
    /// When set, the stream is over with this footer status.
    pub end: Option<(Status, Option<Cursor>)>,
}

/// Walks a query page by page.
pub struct Pager {
    platform: Arc<Platform>,
    target: Target,
    spec: QuerySpec,
    cursor: Option<Cursor>,
    remaining: Option<usize>,
    batch: usize,
    pub emitted: u64,
}

fn plan_echo(o: &QueryOutcome) -> Option<PlanEcho> {
    match &o.plan {
        Some(p) => Some(PlanEcho { level: p.level.label(), reason: p.reason.clone() }),
        None if o.subqueries > 0 => {
            Some(PlanEcho { level: "federated".into(), reason: format!("{} connector calls", o.subqueries) })
        }
        None => None,
    }
}

impl Pager {
    pub fn new(
        platform: Arc<Platform>,
        target: Target,
        spec: QuerySpec,
        cursor: Option<Cursor>,
        limit: Option<usize>,
        batch: usize,
    ) -> Self {
        Pager { platform, target, spec, cursor, remaining: limit, batch, emitted: 0 }
    }

    pub fn fetch(&mut self) -> Result<Fetched, PlatformError> {
        let want = self.remaining.map_or(self.batch, |r| r.min(self.batch));
        let spec = QuerySpec { page: Some(Page { limit: want, cursor: self.cursor.clone() }), ..self.spec.clone() };
        let (outcome, reference) = match &self.target {
            Target::Series(id) => (self.platform.query(id, &spec)?, None),
            Target::Asset { asset, role } => {
                let (r, o) = self.platform.query_asset(asset, role.as_deref(), &spec)?;
                (o, Some(r))
            }
        };
        let outcome_plan = plan_echo(&outcome);
        let frame = outcome.result.frame;
        let next = outcome.result.next_cursor;
        let n = frame.points.len();
        self.emitted += n as u64;
        if let Some(r) = &mut self.remaining {
            *r -= n.min(*r);
        }
        let end = match next {
            None => Some((Status::Complete, None)),
            Some(c) if self.remaining == Some(0) => Some((Status::Truncated, Some(c))),
            Some(c) => {
                self.cursor = Some(c);
                None
            }
        };
        Ok(Fetched { points: frame.points, columns: frame.channels, outcome_plan, reference, end })
    }
}

fn footer(count: u64, end: (Status, Option<Cursor>)) -> Footer {
    Footer { count, status: end.0, error: None, next_cursor: end.1.map(|c| c.as_str().to_string()) }
}

enum Phase {
    Next(Pager),
    Done,
}

/// Body for a series stream whose first page has already been fetched.
pub fn series_body(mut header: Header, first: Fetched, pager: Pager, stats: Arc<StreamStats>) -> Body {
    header.stream = Some(stats.id);
    let mut buf = Vec::with_capacity(256 + first.points.len() * 48);
    encode_header(&mut buf, &header);
    stats.hold(first.points.len());
    encode_points(&mut buf, &first.points);
    stats.release(first.points.len());
    drop(first.points);
    let phase = match first.end {
        Some(end) => {
            encode_footer(&mut buf, &footer(pager.emitted, end));
            stats.finished.store(true, Ordering::SeqCst);
            Phase::Done
        }
        None => Phase::Next(pager),
    };
    stats.flushed();
    let first_chunk = Bytes::from(buf);
    let rest = futures::stream::unfold((phase, stats), |(phase, stats)| async move {
        let Phase::Next(mut pager) = phase else { return None };
        let s2 = stats.clone();
        let joined = tokio::task::spawn_blocking(move || {
            let r = pager.fetch();
            if let Ok(f) = &r {
                s2.hold(f.points.len());
            }
            (pager, r)
        })
        .await;
        let mut buf = Vec::new();
        let next = match joined {
            Ok((pager, Ok(f))) => {
                encode_points(&mut buf, &f.points);
                stats.release(f.points.len());
                match f.end {
                    Some(end) => {
                        encode_footer(&mut buf, &footer(pager.emitted, end));
                        Phase::Done
                    }
                    None => Phase::Next(pager),
                }
            }
            Ok((pager, Err(e))) => {
                let f =
                    Footer { count: pager.emitted, status: Status::Error, error: Some(detail(&e)), next_cursor: None };
                encode_footer(&mut buf, &f);
                Phase::Done
            }
            Err(join) => {
                let f = Footer {
                    count: stats.snapshot().records,
                    status: Status::Error,
                    error: Some(ErrorDetail { class: "internal".into(), message: join.to_string() }),
                    next_cursor: None,
                };
                encode_footer(&mut buf, &f);
                Phase::Done
            }
        };
        if matches!(next, Phase::Done) {
            stats.finished.store(true, Ordering::SeqCst);
        }
        stats.flushed();
        Some((Ok::<_, std::convert::Infallible>(Bytes::from(buf)), (next, stats)))
    });
    let head = futures::stream::once(async move { Ok::<_, std::convert::Infallible>(first_chunk) });
    Body::from_stream(futures::StreamExt::chain(head, rest))
}

/// Body for product rows, emitted in chunks of `batch` rows.
pub fn rows_body(mut header: Header, rows: Vec<ProductRow>, batch: usize, stats: Arc<StreamStats>) -> Body {
    header.stream = Some(stats.id);
    let total = rows.len() as u64;
    stats.hold(rows.len());
    let mut chunks: Vec<Bytes> = Vec::new();
    let mut buf = Vec::new();
    encode_header(&mut buf, &header);
    let mut it = rows.chunks(batch.max(1)).peekable();
    if it.peek().is_none() {
        encode_footer(&mut buf, &Footer { count: 0, status: Status::Complete, error: None, next_cursor: None });
    }
    while let Some(c) = it.next() {
        encode_rows(&mut buf, c);
        if it.peek().is_none() {
            encode_footer(&mut buf, &Footer { count: total, status: Status::Complete, error: None, next_cursor: None });
        }
        chunks.push(Bytes::from(std::mem::take(&mut buf)));
    }
    if !buf.is_empty() {
        chunks.push(Bytes::from(buf));
    }
    stats.release(rows.len());
    stats.batches.fetch_add(chunks.len() as u64, Ordering::SeqCst);
    stats.finished.store(true, Ordering::SeqCst);
    Body::from_stream(futures::stream::iter(chunks.into_iter().map(Ok::<_, std::convert::Infallible>)))
}
