//! Live conformance probes for the ten timeseries requirements R1 to R10.
//!
//! Every probe works on its own `conformance.*` series, so it can run against a live
//! deployment repeatedly. Two probes also inspect the simulated demo data (billet
//! assets and the demo view). The federation probe needs the `conformance.r10`
//! binding that ships in `config/demo.toml`.

use std::collections::BTreeMap;
use std::fmt;

use caster_core::model::{AssetId, SeriesId, ViewId};
use caster_core::model::{Channel, IndexKind, IndexRange, Scalar, SeriesKind, SeriesSchema};
use caster_core::store::{DataPoint, Frame};
use caster_core::views::{
    CutEvent, CutSource, IndexMode, Materialization, ProductSlice, ProductTable, SensorOffset, ViewDefinition,
};
use caster_service::wire::{Record, Status as StreamStatus};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::client::{encode, Client, ClientError};

const SEC: i64 = 1_000_000_000;
const MIN: i64 = 60 * SEC;
const HOUR: i64 = 60 * MIN;
const DAY: i64 = 24 * HOUR;

/// Points streamed by the R2 probe; several times what socket buffers can hold.
pub const STREAM_POINTS: i64 = 400_000;
/// Federated probe series and its split between the native store and the CSV file.
pub const FEDERATED_SERIES: &str = "conformance.r10";
pub const FEDERATED_SPLIT_MIN: i64 = 240;
pub const FEDERATED_END_MIN: i64 = 480;

/// Value of the federated probe series at minute `i`; the bundled CSV holds the same numbers.
pub fn federated_value(i: i64) -> f64 {
    ((i * 7) % 23) as f64 * 0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Fulfilled,
    Partial,
    Missing,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Fulfilled => "fulfilled",
            Status::Partial => "partial",
            Status::Missing => "missing",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub id: String,
    pub passed: bool,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Requirement {
    pub id: &'static str,
    pub title: &'static str,
    pub status: Status,
    /// Checks executed for this requirement.
    pub evidence: Vec<Check>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConformanceReport {
    pub url: String,
    pub requirements: Vec<Requirement>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub connectivity: Option<String>,
}

impl ConformanceReport {
    pub fn fulfilled(&self) -> usize {
        self.requirements.iter().filter(|r| r.status == Status::Fulfilled).count()
    }

    pub fn status(&self, id: &str) -> Option<Status> {
        self.requirements.iter().find(|r| r.id == id).map(|r| r.status)
    }
}

impl fmt::Display for ConformanceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "conformance of {}", self.url)?;
        if let Some(note) = &self.connectivity {
            writeln!(f, "connectivity: {note}")?;
        }
        writeln!(f, "{:<4} {:<10} {:>6}  requirement", "id", "status", "checks")?;
        for r in &self.requirements {
            let passed = r.evidence.iter().filter(|c| c.passed).count();
            writeln!(
                f,
                "{:<4} {:<10} {:>6}  {}",
                r.id,
                r.status.to_string(),
                format!("{passed}/{}", r.evidence.len()),
                r.title
            )?;
        }
        let failed: Vec<_> = self.requirements.iter().flat_map(|r| r.evidence.iter().filter(|c| !c.passed)).collect();
        if !failed.is_empty() {
            writeln!(f, "failed checks:")?;
            for c in failed {
                writeln!(f, "  {}: {}", c.id, c.detail)?;
            }
        }
        write!(f, "{}/{} fulfilled", self.fulfilled(), self.requirements.len())
    }
}

const REQUIREMENTS: [(&str, &str); 10] = [
    ("R1", "store, discover and query asset data with range filters, paging and aggregation"),
    ("R2", "stream large results with a verifiable end"),
    ("R3", "multivariate series sharing one index"),
    ("R4", "automatic historization with layered settings"),
    ("R5", "rollups, retention and aggregation-level selection"),
    ("R6", "static and segmented metadata"),
    ("R7", "schedule, forecast and length-indexed series"),
    ("R8", "assets referring to sub-ranges of one series"),
    ("R9", "position-indexed product views"),
    ("R10", "federation of external datastores"),
];

fn status_of(checks: &[Check]) -> Status {
    let passed = checks.iter().filter(|c| c.passed).count();
    if !checks.is_empty() && passed == checks.len() {
        Status::Fulfilled
    } else if passed > 0 {
        Status::Partial
    } else {
        Status::Missing
    }
}

type Outcome = Result<(), String>;

impl From<ClientError> for String {
    fn from(e: ClientError) -> String {
        e.to_string()
    }
}

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn check(id: &str, f: impl FnOnce() -> Outcome) -> Check {
    match f() {
        Ok(()) => Check { id: id.into(), passed: true, detail: String::new() },
        Err(detail) => Check { id: id.into(), passed: false, detail },
    }
}

/// Run every probe against `url`. Probe failures downgrade statuses; nothing aborts the report.
pub fn run(url: &str) -> ConformanceReport {
    let c = Client::new(url);
    let mut report = ConformanceReport { url: url.into(), requirements: Vec::new(), connectivity: None };
    if let Err(e) = c.health() {
        report.connectivity = Some(e.to_string());
        for (id, title) in REQUIREMENTS {
            report.requirements.push(Requirement { id, title, status: Status::Missing, evidence: Vec::new() });
        }
        return report;
    }
    let probes: [fn(&Client) -> Vec<Check>; 10] = [r1, r2, r3, r4, r5, r6, r7, r8, r9, r10];
    for ((id, title), probe) in REQUIREMENTS.into_iter().zip(probes) {
        let evidence = probe(&c);
        report.requirements.push(Requirement { id, title, status: status_of(&evidence), evidence });
    }
    report
}

// helpers

fn sid(s: &str) -> SeriesId {
    SeriesId::new(s).expect("literal id")
}

fn define(c: &Client, schema: &SeriesSchema) -> Outcome {
    c.post("/series", &serde_json::to_value(schema).expect("serializable"))?;
    Ok(())
}

fn floats_schema(id: &str, channels: &[&str]) -> SeriesSchema {
    SeriesSchema::new(
        sid(id),
        channels.iter().map(|n| Channel::float(*n, "")).collect(),
        IndexKind::Time,
        SeriesKind::Historical,
    )
}

fn float_rows(rows: &[(i64, Vec<f64>)]) -> Vec<DataPoint> {
    rows.iter().map(|(i, v)| DataPoint::new(*i, v.iter().map(|x| Some(Scalar::Float(*x))).collect())).collect()
}

/// POST points in chunks; returns the last ingest report.
fn ingest(c: &Client, series: &str, channels: &[&str], points: &[DataPoint]) -> Result<Value, String> {
    let mut last = Value::Null;
    for chunk in points.chunks(25_000) {
        let pts: Vec<Value> = chunk.iter().map(|p| json!({"index": p.index, "values": p.values})).collect();
        last = c.post(&format!("/series/{}/data", encode(series)), &json!({"channels": channels, "points": pts}))?;
    }
    Ok(last)
}

fn data_path(series: &str, query: &str) -> String {
    if query.is_empty() {
        format!("/series/{}/data", encode(series))
    } else {
        format!("/series/{}/data?{query}", encode(series))
    }
}

fn frame(c: &Client, path: &str) -> Result<Frame, String> {
    let d = c.stream(path)?;
    ensure!(d.footer.status == StreamStatus::Complete, "{path}: footer status {:?}", d.footer.status);
    Ok(d.frame())
}

fn same(label: &str, got: &Frame, want: &Frame) -> Outcome {
    ensure!(
        got.bit_eq(want),
        "{label}: got {} points, expected {} (first difference at {:?})",
        got.len(),
        want.len(),
        first_diff(got, want)
    );
    Ok(())
}

fn first_diff(a: &Frame, b: &Frame) -> Option<usize> {
    if a.channels != b.channels {
        return Some(0);
    }
    (0..a.len().max(b.len())).find(|&i| match (a.points.get(i), b.points.get(i)) {
        (Some(x), Some(y)) => !Frame { channels: a.channels.clone(), points: vec![x.clone()] }
            .bit_eq(&Frame { channels: b.channels.clone(), points: vec![y.clone()] }),
        _ => true,
    })
}

fn sub(f: &Frame, range: IndexRange) -> Frame {
    Frame {
        channels: f.channels.clone(),
        points: f.points.iter().filter(|p| range.contains(p.index)).cloned().collect(),
    }
}

/// Follow cursors with page size `limit` and concatenate.
fn pages(c: &Client, series: &str, query: &str, limit: usize) -> Result<Frame, String> {
    let sep = if query.is_empty() { "" } else { "&" };
    let mut out: Option<Frame> = None;
    let mut cursor: Option<String> = None;
    for _ in 0..100_000 {
        let q = match &cursor {
            None => format!("{query}{sep}limit={limit}"),
            Some(k) => format!("{query}{sep}limit={limit}&cursor={}", encode(k)),
        };
        let d = c.stream(&data_path(series, &q))?;
        let page = d.frame();
        ensure!(page.len() <= limit, "page of {} exceeds limit {limit}", page.len());
        match out.as_mut() {
            None => out = Some(page),
            Some(f) => f.points.extend(page.points),
        }
        match (d.footer.status, d.footer.next_cursor) {
            (StreamStatus::Truncated, Some(k)) => cursor = Some(k),
            (StreamStatus::Complete, None) => return Ok(out.expect("set")),
            (s, k) => return Err(format!("unexpected footer {s:?} with cursor {k:?}")),
        }
    }
    Err("paging did not terminate".into())
}

fn plan_level(c: &Client, path: &str) -> Result<(String, Frame), String> {
    let d = c.stream(path)?;
    let level = d.header.plan.as_ref().map(|p| p.level.clone()).ok_or_else(|| format!("{path}: no plan in header"))?;
    Ok((level, d.frame()))
}

fn values(f: &Frame, channel: usize) -> Vec<(i64, f64)> {
    f.points.iter().filter_map(|p| p.values[channel].as_ref().and_then(Scalar::as_f64).map(|v| (p.index, v))).collect()
}

/// Brute-force bucket means of `(index, value)` pairs.
fn bucket_means(raw: &[(i64, f64)], resolution: i64) -> Vec<(i64, f64)> {
    let mut acc: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
    for (i, v) in raw {
        let e = acc.entry(i.div_euclid(resolution) * resolution).or_default();
        e.0 += v;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

fn close_series(label: &str, got: &[(i64, f64)], want: &[(i64, f64)], rel: f64) -> Outcome {
    ensure!(got.len() == want.len(), "{label}: {} buckets, expected {}", got.len(), want.len());
    for ((gi, gv), (wi, wv)) in got.iter().zip(want) {
        ensure!(gi == wi, "{label}: bucket at {gi}, expected {wi}");
        ensure!((gv - wv).abs() <= rel * wv.abs().max(1.0), "{label}: bucket {gi}: {gv} vs {wv}");
    }
    Ok(())
}

fn stats(c: &Client) -> Result<Value, String> {
    Ok(c.get::<Value>("/stats")?)
}

fn now_ns() -> i64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_nanos() as i64).unwrap_or(0)
}

// probes

fn r1(c: &Client) -> Vec<Check> {
    const S: &str = "conformance.r1";
    let rows: Vec<(i64, Vec<f64>)> = (0..200).map(|i| (i * SEC, vec![i as f64, (i % 7) as f64 * 0.5])).collect();
    let want = Frame { channels: vec!["x".into(), "y".into()], points: float_rows(&rows) };
    let setup =
        define(c, &floats_schema(S, &["x", "y"])).and_then(|_| ingest(c, S, &["x", "y"], &want.points).map(|_| ()));
    let mut out = vec![check("r1.store-and-read", || {
        setup.clone()?;
        same("full read", &frame(c, &data_path(S, ""))?, &want)
    })];
    out.push(check("r1.time-range-filter", || {
        let got = frame(c, &data_path(S, &format!("from={}&to={}", 50 * SEC, 120 * SEC)))?;
        let w = sub(&want, IndexRange { start: Some(50 * SEC), end: Some(120 * SEC) });
        ensure!(w.len() == 70, "expected 70 points in range");
        same("range", &got, &w)
    }));
    out.push(check("r1.paging", || {
        for limit in [7, 64] {
            same(&format!("pages of {limit}"), &pages(c, S, "", limit)?, &want)?;
        }
        Ok(())
    }));
    out.push(check("r1.aggregation", || {
        let got = frame(c, &data_path(S, "channels=x&agg=mean&resolution=10s"))?;
        let expect: Vec<(i64, f64)> = (0..20).map(|g| (g * 10 * SEC, g as f64 * 10.0 + 4.5)).collect();
        close_series("mean", &values(&got, 0), &expect, 0.0)
    }));
    out.push(check("r1.asset-discovery", || {
        c.post("/assets", &json!({"id": "conformance.r1-asset", "type": "probe"}))?;
        c.post("/references", &json!({"assetId": "conformance.r1-asset", "seriesId": S, "role": "process"}))?;
        let assets: Vec<Value> = c.get("/assets")?;
        ensure!(assets.iter().any(|a| a["id"] == "conformance.r1-asset"), "asset not listed");
        let series: Vec<Value> = c.get("/assets/conformance.r1-asset/series")?;
        ensure!(series.iter().any(|s| s["seriesId"] == S), "asset does not list its series: {series:?}");
        let via_asset = frame(c, "/assets/conformance.r1-asset/data?role=process")?;
        same("asset data", &via_asset, &want)
    }));
    out
}

fn r2(c: &Client) -> Vec<Check> {
    const S: &str = "conformance.r2";
    let setup = (|| -> Outcome {
        define(c, &floats_schema(S, &["x"]))?;
        let layout: Value = c.get(&format!("/series/{S}/layout"))?;
        if layout["points"].as_i64() != Some(STREAM_POINTS) {
            let rows: Vec<(i64, Vec<f64>)> = (0..STREAM_POINTS).map(|i| (i * SEC, vec![i as f64])).collect();
            ingest(c, S, &["x"], &float_rows(&rows))?;
        }
        Ok(())
    })();
    let batch = stats(c).ok().and_then(|s| s["batchSize"].as_u64()).unwrap_or(1000);
    let mut stream_id = None;
    let mut seen = 0u64;
    let mut footer = None;
    let first = check("r2.first-record-before-finish", || {
        setup.clone()?;
        let mut reader = c.open_stream(&data_path(S, ""))?;
        let id = reader.header().stream.ok_or("header has no stream id")?;
        stream_id = Some(id);
        match reader.next_item().map_err(|e| e.to_string())? {
            Ok(Record::Data(_)) => seen = 1,
            other => return Err(format!("first item is not a data record: {other:?}")),
        }
        let snap: Value = c.get(&format!("/streams/{id}"))?;
        let early = snap["finished"] == false && snap["records"].as_u64().is_some_and(|r| r < STREAM_POINTS as u64);
        loop {
            match reader.next_item().map_err(|e| e.to_string())? {
                Ok(Record::Data(_)) => seen += 1,
                Ok(r) => return Err(format!("unexpected record {r:?}")),
                Err(f) => {
                    footer = Some(f);
                    break;
                }
            }
        }
        ensure!(early, "producer had already finished when the first record arrived: {snap}");
        Ok(())
    });
    let mut out = vec![first];
    out.push(check("r2.footer-count-matches", || {
        let f = footer.as_ref().ok_or("stream ended without a footer")?;
        ensure!(f.status == StreamStatus::Complete, "footer status {:?}", f.status);
        ensure!(f.count == seen && seen == STREAM_POINTS as u64, "footer count {} vs {seen} records", f.count);
        Ok(())
    }));
    out.push(check("r2.bounded-buffering", || {
        let id = stream_id.ok_or("no stream")?;
        let snap: Value = c.get(&format!("/streams/{id}"))?;
        let peak = snap["peakBuffered"].as_u64().ok_or("no peakBuffered")?;
        ensure!(snap["finished"] == true, "stream not finished: {snap}");
        ensure!(peak <= batch && peak > 0, "peak buffering {peak} records, batch {batch}");
        Ok(())
    }));
    out.push(check("r2.document-format", || {
        let doc: Value = c.get(&data_path(S, "format=document&limit=10"))?;
        ensure!(doc["records"].as_array().map(Vec::len) == Some(10), "document records");
        ensure!(doc["footer"]["status"] == "truncated" && doc["footer"]["count"] == 10, "footer {}", doc["footer"]);
        ensure!(doc["footer"]["nextCursor"].is_string(), "no cursor in truncated document");
        Ok(())
    }));
    out
}

fn r3(c: &Client) -> Vec<Check> {
    const S: &str = "conformance.r3";
    let chans = ["v_c", "T_l", "T_s", "Q_w"];
    let rows: Vec<(i64, Vec<f64>)> = (0..60)
        .map(|i| (i * SEC, vec![2.5, 1530.0 - i as f64 * 0.25, 1260.0 - i as f64 * 0.5, 810.0 + i as f64]))
        .collect();
    let want = Frame { channels: chans.map(String::from).to_vec(), points: float_rows(&rows) };
    let setup = define(c, &floats_schema(S, &chans)).and_then(|_| ingest(c, S, &chans, &want.points).map(|_| ()));
    vec![
        check("r3.shared-timestamp-rows", || {
            setup.clone()?;
            same("multivariate read", &frame(c, &data_path(S, ""))?, &want)
        }),
        check("r3.channel-selection", || {
            let got = frame(c, &data_path(S, "channels=T_s,v_c"))?;
            ensure!(got.channels == ["T_s", "v_c"], "columns {:?}", got.channels);
            let w = float_rows(&rows.iter().map(|(i, v)| (*i, vec![v[2], v[0]])).collect::<Vec<_>>());
            same("selection", &got, &Frame { channels: got.channels.clone(), points: w })
        }),
        check("r3.single-index-column", || {
            let l: Value = c.get(&format!("/series/{S}/layout"))?;
            ensure!(l["index_columns_per_segment"] == 1, "layout {l}");
            ensure!(l["index_entries"] == 60 && l["points"] == 60 && l["value_columns"] == 4, "layout {l}");
            Ok(())
        }),
    ]
}

fn r4(c: &Client) -> Vec<Check> {
    // (series, entity type, type-level setting, attribute settings, expected effective values)
    let cases = [
        ("conformance.r4a", "conformance-r4-off", false, [("a", Some(true)), ("c", None)], [true, false]),
        ("conformance.r4b", "conformance-r4-on", true, [("a", Some(false)), ("c", None)], [false, true]),
    ];
    let setup = (|| -> Outcome {
        let mut settings = Vec::new();
        for (s, ty, on, attrs, _) in &cases {
            let mut schema = floats_schema(s, &["a", "c"]);
            schema.entity_type = Some(ty.to_string());
            define(c, &schema)?;
            settings.push(json!({"level": "type", "assetType": ty, "kind": "historization", "value": on}));
            for (ch, v) in attrs {
                if let Some(v) = v {
                    settings.push(
                        json!({"level": "attribute", "series": s, "channel": ch, "kind": "historization", "value": v}),
                    );
                }
            }
        }
        c.put("/policies", &Value::Array(settings))?;
        Ok(())
    })();
    vec![
        check("r4.precedence", || {
            setup.clone()?;
            for (s, _, _, attrs, expect) in &cases {
                for ((ch, _), want) in attrs.iter().zip(expect) {
                    let v: Value = c.get(&format!("/policies/effective?series={s}&channel={ch}&kind=historization"))?;
                    ensure!(v["value"] == *want, "{s}/{ch}: effective {v}, expected {want}");
                }
            }
            Ok(())
        }),
        check("r4.historize-iff-effective", || {
            setup.clone()?;
            for (s, _, _, attrs, expect) in &cases {
                let report = ingest(c, s, &["a", "c"], &float_rows(&[(SEC, vec![1.0, 2.0])]))?;
                let skipped: Vec<&str> =
                    report["notHistorized"].as_array().into_iter().flatten().filter_map(Value::as_str).collect();
                let got = frame(c, &data_path(s, ""))?;
                for (i, ((ch, _), on)) in attrs.iter().zip(expect).enumerate() {
                    ensure!(skipped.contains(ch) != *on, "{s}/{ch}: ingest report {report}");
                    let stored = got.points.iter().any(|p| p.values[i].is_some());
                    ensure!(stored == *on, "{s}/{ch}: stored={stored}, policy on={on}");
                }
            }
            Ok(())
        }),
    ]
}

fn r5(c: &Client) -> Vec<Check> {
    const S: &str = "conformance.r5";
    // Four days of per-minute data ending at today's midnight, kept raw for two days.
    let base = now_ns().div_euclid(DAY) * DAY - 4 * DAY;
    let raw: Vec<(i64, f64)> = (0..4 * 1440).map(|m| (base + m * MIN, (m % 97) as f64)).collect();
    let setup = (|| -> Outcome {
        define(c, &floats_schema(S, &["x"]))?;
        c.put(
            "/policies",
            &json!([
                {"level": "attribute", "series": S, "channel": "x", "kind": "rollup", "value": [
                    {"resolution_s": 3600, "functions": ["mean", "sum", "count"]},
                    {"resolution_s": 86400, "functions": ["mean", "sum", "count"]}]},
                {"level": "attribute", "series": S, "channel": "x", "kind": "retention", "value": 2 * 86400},
            ]),
        )?;
        let rows: Vec<(i64, Vec<f64>)> = raw.iter().map(|(i, v)| (*i, vec![*v])).collect();
        ingest(c, S, &["x"], &float_rows(&rows))?;
        c.post("/maintenance/run", &json!({}))?;
        Ok(())
    })();
    let range = |from: i64, to: i64| format!("from={}&to={}", base + from, base + to);
    vec![
        check("r5.rollup-generation", || {
            setup.clone()?;
            let (level, got) = plan_level(c, &data_path(S, &format!("{}&agg=sum&resolution=1d", range(0, 4 * DAY))))?;
            ensure!(level == "daily", "plan {level}");
            let mut want: Vec<(i64, f64)> = Vec::new();
            for d in 0..4 {
                let sum: f64 = raw.iter().filter(|(i, _)| (i - base) / DAY == d).map(|(_, v)| v).sum();
                want.push((base + d * DAY, sum));
            }
            close_series("daily sums", &values(&got, 0), &want, 0.0)
        }),
        check("r5.planner-selects-daily", || {
            setup.clone()?;
            let (level, got) = plan_level(c, &data_path(S, &format!("{}&agg=mean&resolution=2d", range(0, 4 * DAY))))?;
            ensure!(level == "daily", "plan {level}");
            close_series("two-day means", &values(&got, 0), &bucket_means(&raw, 2 * DAY), 1e-12)
        }),
        check("r5.planner-falls-back-to-raw", || {
            setup.clone()?;
            let q = format!("{}&agg=mean&resolution=45m", range(3 * DAY, 4 * DAY));
            let (level, got) = plan_level(c, &data_path(S, &q))?;
            ensure!(level == "raw", "plan {level}");
            let span: Vec<(i64, f64)> = raw.iter().filter(|(i, _)| *i >= base + 3 * DAY).copied().collect();
            close_series("45 min means", &values(&got, 0), &bucket_means(&span, 45 * MIN), 1e-12)
        }),
        check("r5.retention-cleanup", || {
            setup.clone()?;
            let (status, body) = c.raw("GET", &data_path(S, &range(0, DAY)), None)?;
            ensure!(status == 422, "raw query on purged range answered {status}: {body}");
            let recent = frame(c, &data_path(S, &range(3 * DAY, 4 * DAY)))?;
            ensure!(recent.len() == 1440, "{} raw points kept in the last day", recent.len());
            Ok(())
        }),
    ]
}

fn r6(c: &Client) -> Vec<Check> {
    const S: &str = "conformance.r6";
    let setup = (|| -> Outcome {
        define(c, &floats_schema(S, &["x"]))?;
        c.put(
            &format!("/series/{S}/metadata"),
            &json!({"scope": "static", "entries": {"unit": "degC", "semantic": "historical"}}),
        )?;
        c.put(
            &format!("/series/{S}/metadata"),
            &json!({"scope": "segment", "range": {"start": 0, "end": 100 * SEC}, "entries": {"quality": "suspect", "unit": "K"}}),
        )?;
        Ok(())
    })();
    let md = |at: i64| -> Result<Value, String> { Ok(c.get::<Value>(&format!("/series/{S}/metadata?at={at}"))?) };
    vec![
        check("r6.static-metadata", || {
            setup.clone()?;
            let m = md(500 * SEC)?;
            ensure!(m == json!({"unit": "degC", "semantic": "historical"}), "metadata outside segment {m}");
            Ok(())
        }),
        check("r6.segment-metadata", || {
            setup.clone()?;
            let m = md(50 * SEC)?;
            ensure!(
                m == json!({"unit": "K", "semantic": "historical", "quality": "suspect"}),
                "metadata in segment {m}"
            );
            Ok(())
        }),
        check("r6.no-per-point-replication", || {
            setup.clone()?;
            let rows: Vec<(i64, Vec<f64>)> = (0..1000).map(|i| (i * SEC, vec![i as f64])).collect();
            let pts = float_rows(&rows);
            ingest(c, S, &["x"], &pts[..100])?;
            let before = stats(c)?["metadataBytes"].clone();
            ingest(c, S, &["x"], &pts[100..])?;
            let after = stats(c)?["metadataBytes"].clone();
            let l: Value = c.get(&format!("/series/{S}/layout"))?;
            ensure!(l["points"] == 1000, "layout {l}");
            ensure!(before == after && before.is_u64(), "metadata bytes changed from {before} to {after}");
            Ok(())
        }),
    ]
}

fn r7(c: &Client) -> Vec<Check> {
    let future = 1_893_456_000 * SEC; // 2030-01-01T00:00:00Z
    let probe = |id: &'static str, kind: SeriesKind, index: IndexKind, rows: Vec<(i64, Vec<f64>)>| {
        move || -> Outcome {
            let schema = SeriesSchema::new(sid(id), vec![Channel::float("x", "")], index, kind);
            define(c, &schema)?;
            let want = Frame { channels: vec!["x".into()], points: float_rows(&rows) };
            ingest(c, id, &["x"], &want.points)?;
            let meta: Value = c.get(&format!("/series/{id}"))?;
            let expect = serde_json::to_value(kind).expect("serializable");
            ensure!(meta["seriesKind"] == expect, "series kind {}", meta["seriesKind"]);
            ensure!(
                meta["indexKind"] == serde_json::to_value(index).expect("serializable"),
                "index kind {}",
                meta["indexKind"]
            );
            same(id, &frame(c, &data_path(id, ""))?, &want)
        }
    };
    let hourly = |base: i64| (0..24).map(|h| (base + h * HOUR, vec![1000.0 + h as f64])).collect::<Vec<_>>();
    vec![
        check(
            "r7.schedule-series",
            probe("conformance.r7.schedule", SeriesKind::Schedule, IndexKind::Time, hourly(future)),
        ),
        check(
            "r7.forecast-series",
            probe("conformance.r7.forecast", SeriesKind::Forecast, IndexKind::Time, hourly(future)),
        ),
        check(
            "r7.length-indexed-series",
            probe(
                "conformance.r7.length",
                SeriesKind::Derived,
                IndexKind::Length,
                (0..20).map(|k| (k * 500, vec![900.0 - k as f64])).collect(),
            ),
        ),
    ]
}

fn r8(c: &Client) -> Vec<Check> {
    const S: &str = "conformance.r8";
    let rows: Vec<(i64, Vec<f64>)> = (0..500).map(|i| (i * SEC, vec![i as f64])).collect();
    let full = Frame { channels: vec!["x".into()], points: float_rows(&rows) };
    let nested = [
        ("conformance.r8-heat", "heat", IndexRange::UNBOUNDED),
        ("conformance.r8-billet", "billet", IndexRange { start: Some(100 * SEC), end: Some(400 * SEC) }),
        ("conformance.r8-bar", "bar", IndexRange { start: Some(100 * SEC), end: Some(200 * SEC) }),
    ];
    let setup = (|| -> Outcome {
        define(c, &floats_schema(S, &["x"]))?;
        ingest(c, S, &["x"], &full.points)?;
        for (id, ty, range) in &nested {
            c.post("/assets", &json!({"id": id, "type": ty}))?;
            let mut r = json!({"assetId": id, "seriesId": S, "role": "process"});
            if *range != IndexRange::UNBOUNDED {
                r["subrange"] = serde_json::to_value(range).expect("serializable");
            }
            c.post("/references", &r)?;
        }
        Ok(())
    })();
    let filters = [
        IndexRange::UNBOUNDED,
        IndexRange { start: Some(150 * SEC), end: None },
        IndexRange { start: Some(150 * SEC), end: Some(350 * SEC) },
    ];
    let query = |r: &IndexRange| {
        let mut q = vec!["role=process".to_string()];
        q.extend(r.start.map(|s| format!("from={s}")));
        q.extend(r.end.map(|e| format!("to={e}")));
        q.join("&")
    };
    vec![
        check("r8.nested-references", || {
            setup.clone()?;
            for (id, _, range) in &nested {
                let listed: Vec<Value> = c.get(&format!("/assets/{id}/series"))?;
                let entry = listed.iter().find(|e| e["seriesId"] == S).ok_or(format!("{id} lists no reference"))?;
                let want = serde_json::to_value(range).expect("serializable");
                ensure!(entry["range"] == want, "{id}: range {} instead of {want}", entry["range"]);
            }
            Ok(())
        }),
        check("r8.asset-query-equals-clamped", || {
            setup.clone()?;
            for (id, _, range) in &nested {
                for f in &filters {
                    let got = frame(c, &format!("/assets/{id}/data?{}", query(f)))?;
                    same(&format!("{id} {f:?}"), &got, &sub(&sub(&full, *range), *f))?;
                }
            }
            Ok(())
        }),
        check("r8.no-duplication", || {
            setup.clone()?;
            let before = stats(c)?;
            for (id, _, _) in &nested {
                frame(c, &format!("/assets/{id}/data?role=process"))?;
            }
            let after = stats(c)?;
            ensure!(
                before["points"] == after["points"] && before["series"] == after["series"],
                "store grew: {before} -> {after}"
            );
            let l: Value = c.get(&format!("/series/{S}/layout"))?;
            ensure!(l["points"] == 500, "one stored copy expected, layout {l}");
            Ok(())
        }),
        check("r8.demo-billets", || {
            let assets: Vec<Value> = c.get("/assets")?;
            let billets: Vec<&str> = assets
                .iter()
                .filter(|a| a["type"] == "billet")
                .filter_map(|a| a["id"].as_str())
                .filter(|id| !id.starts_with("conformance."))
                .collect();
            ensure!(!billets.is_empty(), "no billet assets; run simulate first");
            for id in billets.iter().take(3) {
                let listed: Vec<Value> = c.get(&format!("/assets/{}/series", encode(id)))?;
                let entry = listed.first().ok_or(format!("{id} has no series"))?;
                let series = entry["seriesId"].as_str().ok_or("no series id")?;
                let range: IndexRange = serde_json::from_value(entry["range"].clone()).map_err(|e| e.to_string())?;
                ensure!(range.start.is_some() && range.end.is_some(), "{id}: billet reference is not a sub-range");
                let role = entry["role"].as_str().unwrap_or_default();
                let got = frame(c, &format!("/assets/{}/data?role={}", encode(id), encode(role)))?;
                let want =
                    frame(c, &data_path(series, &format!("from={}&to={}", range.start.unwrap(), range.end.unwrap())))?;
                ensure!(!got.points.is_empty(), "{id}: no data");
                same(id, &got, &want)?;
            }
            Ok(())
        }),
    ]
}

fn table(c: &Client, view: &str, product: &str, extra: &str) -> Result<(String, ProductTable), String> {
    let d = c.stream(&format!("/views/{}/products/{}{extra}", encode(view), encode(product)))?;
    let source = d.header.product.as_ref().map(|p| p.source.clone()).unwrap_or_default();
    Ok((source, d.product_table().ok_or("no product table in stream")?))
}

fn put_view(c: &Client, def: &ViewDefinition) -> Outcome {
    c.put("/views", &serde_json::to_value(def).expect("serializable"))?;
    Ok(())
}

fn r9(c: &Client) -> Vec<Check> {
    let mut out = vec![check("r9.reindex-oracle", || {
        const S: &str = "conformance.r9.oracle";
        define(c, &floats_schema(S, &["v_c", "T_s"]))?;
        let rows: Vec<(i64, Vec<f64>)> = (0..=30).map(|m| (m * MIN, vec![1.0, 900.0 - m as f64])).collect();
        ingest(c, S, &["v_c", "T_s"], &float_rows(&rows))?;
        let def = ViewDefinition {
            id: ViewId::new(S).expect("literal"),
            source: sid(S),
            speed_channel: Some("v_c".into()),
            length_channel: None,
            offsets: vec![SensorOffset::new("T_s", 5000)],
            cut_source: CutSource::Static(vec![CutEvent::new(
                AssetId::new("conformance.r9-b1").expect("literal"),
                0,
                10_000,
            )]),
            step: 2000,
            index_mode: IndexMode::Position,
            materialization: Materialization::OnDemand,
        };
        put_view(c, &def)?;
        let (_, t) = table(c, S, "conformance.r9-b1", "")?;
        let got: Vec<(i64, f64, i64)> =
            t.rows.iter().filter_map(|r| r.cells[0].map(|cell| (r.position, cell.value, cell.source_time))).collect();
        let want: Vec<(i64, f64, i64)> =
            (0..5).map(|k| (k * 2000, 895.0 - 2.0 * k as f64, (5 + 2 * k) * MIN)).collect();
        ensure!(got == want, "table {got:?}");
        Ok(())
    })];

    let (defs, cuts) = random_views();
    let setup = (|| -> Outcome {
        const S: &str = "conformance.r9.random";
        define(c, &floats_schema(S, &["v_c", "T"]))?;
        ingest(c, S, &["v_c", "T"], &random_strand())?;
        for d in &defs {
            put_view(c, d)?;
        }
        Ok(())
    })();
    let products = |view: &ViewDefinition| -> Result<Vec<ProductSlice>, String> {
        Ok(c.get(&format!("/views/{}/products", encode(view.id.as_str())))?)
    };
    out.push(check("r9.product-slicing", || {
        setup.clone()?;
        let listed = products(&defs[0])?;
        ensure!(listed.len() == cuts.len(), "{} products listed, {} cuts", listed.len(), cuts.len());
        for (p, cut) in listed.iter().zip(&cuts) {
            ensure!(
                p.product_id == cut.product_id && p.start == cut.start && p.end == cut.end,
                "slice {p:?} vs {cut:?}"
            );
        }
        Ok(())
    }));
    out.push(check("r9.materialized-equals-on-demand", || {
        setup.clone()?;
        let mut compared = 0;
        for p in products(&defs[0])?.iter().filter(|p| p.usable.is_some()) {
            let (src, m) = table(c, defs[0].id.as_str(), p.product_id.as_str(), "")?;
            let (_, o) = table(c, defs[1].id.as_str(), p.product_id.as_str(), "")?;
            ensure!(src == "stored", "materialized view answered from {src}");
            ensure!(m.bit_eq(&o), "{}: materialized and on-demand tables differ", p.product_id);
            compared += 1;
        }
        ensure!(compared > 0, "no covered products to compare");
        Ok(())
    }));
    out.push(check("r9.auxiliary-timestamp", || {
        setup.clone()?;
        let p = products(&defs[2])?.into_iter().find(|p| p.usable.is_some()).ok_or("no covered product")?;
        let (_, t) = table(c, defs[2].id.as_str(), p.product_id.as_str(), "")?;
        let aux: Vec<i64> = t.rows.iter().map(|r| r.aux_time.ok_or("row without auxTime")).collect::<Result<_, _>>()?;
        ensure!(!aux.is_empty() && aux.windows(2).all(|w| w[0] <= w[1]), "auxiliary timestamps not ordered: {aux:?}");
        ensure!(t.index_mode == IndexMode::AuxiliaryTimestamp, "index mode {:?}", t.index_mode);
        Ok(())
    }));
    out.push(check("r9.demo-view", || {
        let views: Vec<ViewDefinition> = c.get("/views")?;
        let demo: Vec<_> = views.iter().filter(|v| !v.id.as_str().starts_with("conformance.")).collect();
        ensure!(!demo.is_empty(), "no demo view defined; run simulate first");
        let mut compared = 0;
        for v in demo {
            for p in products(v)?.iter().filter(|p| p.usable.is_some()) {
                let (_, stored) = table(c, v.id.as_str(), p.product_id.as_str(), "")?;
                let (src, computed) = table(c, v.id.as_str(), p.product_id.as_str(), "?source=computed")?;
                ensure!(src == "computed", "source {src}");
                ensure!(stored.bit_eq(&computed), "{}/{}: served table differs from recomputation", v.id, p.product_id);
                compared += 1;
            }
        }
        ensure!(compared > 0, "demo views have no products");
        Ok(())
    }));
    out
}

const R9_SEED: u64 = 9;

/// Random speed profile with stoppages, plus a temperature trace.
fn random_strand() -> Vec<DataPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(R9_SEED);
    let mut v: f64 = 1.5;
    (0..600)
        .map(|i| {
            v = if rng.random_bool(0.03) { 0.0 } else { (v + rng.random_range(-0.3..0.3)).clamp(0.2, 3.0) };
            DataPoint::new(
                i * 10 * SEC,
                vec![
                    Some(Scalar::Float(v)),
                    Some(Scalar::Float(1200.0 - i as f64 * 0.1 + rng.random_range(-1.0..1.0))),
                ],
            )
        })
        .collect()
}

fn random_views() -> (Vec<ViewDefinition>, Vec<CutEvent>) {
    let mut rng = ChaCha8Rng::seed_from_u64(R9_SEED + 1);
    let mut cuts = Vec::new();
    let mut at = rng.random_range(0..3000);
    while at < 120_000 {
        let len = rng.random_range(2000..8000);
        cuts.push(CutEvent::new(
            AssetId::new(format!("conformance.r9-p{}", cuts.len() + 1)).expect("id"),
            at,
            at + len,
        ));
        at += len + rng.random_range(0..500);
    }
    let offset = rng.random_range(0..3000);
    let step = rng.random_range(250..1000);
    let def = |name: &str, m, mode| ViewDefinition {
        id: ViewId::new(name).expect("literal"),
        source: sid("conformance.r9.random"),
        speed_channel: Some("v_c".into()),
        length_channel: None,
        offsets: vec![SensorOffset::new("T", offset)],
        cut_source: CutSource::Static(cuts.clone()),
        step,
        index_mode: mode,
        materialization: m,
    };
    let defs = vec![
        def("conformance.r9.materialized", Materialization::Materialized, IndexMode::Position),
        def("conformance.r9.ondemand", Materialization::OnDemand, IndexMode::Position),
        def("conformance.r9.aux", Materialization::OnDemand, IndexMode::AuxiliaryTimestamp),
    ];
    (defs, cuts)
}

fn r10(c: &Client) -> Vec<Check> {
    const S: &str = FEDERATED_SERIES;
    let at = |i: i64| i * MIN;
    let want = Frame {
        channels: vec!["x".into()],
        points: float_rows(&(0..FEDERATED_END_MIN).map(|i| (at(i), vec![federated_value(i)])).collect::<Vec<_>>()),
    };
    let setup = (|| -> Outcome {
        let bindings: Vec<Value> = c.get("/bindings")?;
        let b = bindings
            .iter()
            .find(|b| b["series"] == S)
            .ok_or(format!("{S} is not bound; start the service with config/demo.toml"))?;
        let kinds: Vec<&str> =
            b["segments"].as_array().into_iter().flatten().filter_map(|s| s["kind"].as_str()).collect();
        ensure!(kinds.contains(&"native") && kinds.iter().any(|k| *k != "native"), "binding has segments {kinds:?}");
        ingest(c, S, &["x"], &want.points[..FEDERATED_SPLIT_MIN as usize])?;
        Ok(())
    })();
    vec![
        check("r10.binding-registered", || setup.clone()),
        check("r10.transparent-query", || {
            setup.clone()?;
            let (level, got) = plan_level(c, &data_path(S, ""))?;
            ensure!(level == "federated", "plan {level}");
            same("federated read", &got, &want)
        }),
        check("r10.paging-across-segments", || {
            setup.clone()?;
            let range = IndexRange { start: Some(at(200)), end: Some(at(300)) };
            let got = pages(c, S, &format!("from={}&to={}", at(200), at(300)), 13)?;
            same("pages", &got, &sub(&want, range))
        }),
        check("r10.aggregate-across-segments", || {
            setup.clone()?;
            let got = frame(c, &data_path(S, "agg=mean&resolution=1h"))?;
            let raw: Vec<(i64, f64)> = values(&want, 0);
            close_series("hourly means", &values(&got, 0), &bucket_means(&raw, HOUR), 1e-12)
        }),
    ]
}
