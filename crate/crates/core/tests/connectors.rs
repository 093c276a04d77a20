use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use caster_core::connectors::csv::write_csv;
use caster_core::connectors::{
    BindingSpec, Capabilities, Connector, ConnectorError, Factory, Federation, SegmentSpec, CSV_FILE, NATIVE,
};
use caster_core::model::{Channel, IndexKind, IndexRange, Scalar, SeriesId, SeriesKind, SeriesSchema};
use caster_core::store::{AggregateFunction, Cursor, DataBatch, DataPoint, Frame, QuerySpec, Store};
use proptest::prelude::*;

const SEC: i64 = 1_000_000_000;
const HOUR: i64 = 3600 * SEC;

fn sid(s: &str) -> SeriesId {
    SeriesId::new(s).unwrap()
}

fn schema() -> SeriesSchema {
    SeriesSchema::new(
        sid("S"),
        vec![Channel::float("a", ""), Channel::float("b", "")],
        IndexKind::Time,
        SeriesKind::Historical,
    )
}

fn names() -> Vec<String> {
    vec!["a".into(), "b".into()]
}

type Row = (i64, Vec<Option<f64>>);

fn to_points(rows: &[Row]) -> Vec<DataPoint> {
    rows.iter().map(|(i, v)| DataPoint::new(*i, v.iter().map(|x| x.map(Scalar::Float)).collect())).collect()
}

fn load(store: &Store, rows: &[Row]) {
    if !rows.is_empty() {
        store.append(&DataBatch::new(sid("S"), names(), to_points(rows))).unwrap();
    }
}

fn write_file(path: &Path, rows: &[Row]) {
    let f = std::fs::File::create(path).unwrap();
    write_csv(f, &names(), &to_points(rows)).unwrap();
}

fn seg(range: IndexRange, kind: &str, path: Option<&str>) -> SegmentSpec {
    let mut config = BTreeMap::new();
    if let Some(p) = path {
        config.insert("path".to_string(), p.to_string());
    }
    SegmentSpec { range, kind: kind.into(), config }
}

/// Reference store with every row, and a federation of csv (<t1), native [t1, t2), csv (>=t2).
struct Split {
    _dir: tempfile::TempDir,
    reference: Store,
    native: Arc<Store>,
    fed: Federation,
}

fn split(rows: &[Row], t1: i64, t2: Option<i64>) -> Split {
    let dir = tempfile::tempdir().unwrap();
    let reference = Store::in_memory();
    reference.create_series(&schema()).unwrap();
    load(&reference, rows);
    let native = Arc::new(Store::in_memory());
    native.create_series(&schema()).unwrap();
    let t2v = t2.unwrap_or(i64::MAX);
    let old: Vec<Row> = rows.iter().filter(|r| r.0 < t1).cloned().collect();
    let mid: Vec<Row> = rows.iter().filter(|r| r.0 >= t1 && r.0 < t2v).cloned().collect();
    let new: Vec<Row> = rows.iter().filter(|r| r.0 >= t2v).cloned().collect();
    write_file(&dir.path().join("old.csv"), &old);
    load(&native, &mid);
    let mut segments = vec![seg(IndexRange::until(t1), CSV_FILE, Some("old.csv"))];
    match t2 {
        Some(t2) => {
            write_file(&dir.path().join("new.csv"), &new);
            segments.push(seg(IndexRange::new(t1, t2).unwrap(), NATIVE, None));
            segments.push(seg(IndexRange::from(t2), CSV_FILE, Some("new.csv")));
        }
        None => segments.push(seg(IndexRange::from(t1), NATIVE, None)),
    }
    let fed = Federation::new(native.clone(), dir.path());
    fed.bind(BindingSpec { series: sid("S"), segments }).unwrap();
    Split { _dir: dir, reference, native, fed }
}

fn minute_rows(n: i64) -> Vec<Row> {
    (0..n)
        .map(|i| (i * 60 * SEC, vec![Some(i as f64 * 0.1 + 20.0), (i % 3 != 0).then(|| (i * i) as f64 / 7.0)]))
        .collect()
}

#[test]
fn hundred_points_split_in_half_match_one_store() {
    let rows = minute_rows(100);
    let t1 = rows[50].0;
    let s = split(&rows, t1, None);
    let spec = QuerySpec::default();
    let fed = s.fed.query(&sid("S"), &spec).unwrap();
    let single = s.reference.query(&sid("S"), &spec).unwrap();
    assert_eq!(fed.result.frame.len(), 100);
    assert!(fed.result.frame.bit_eq(&single.frame));
    assert_eq!(fed.subqueries, 2);
}

#[test]
fn query_inside_one_segment_issues_one_subquery() {
    let rows = minute_rows(100);
    let s = split(&rows, rows[50].0, None);
    for range in [IndexRange::new(0, rows[10].0).unwrap(), IndexRange::new(rows[60].0, rows[70].0).unwrap()] {
        let r = s.fed.query(&sid("S"), &QuerySpec::range(range)).unwrap();
        assert_eq!(r.subqueries, 1);
        assert_eq!(r.result.frame.len(), 10);
    }
}

#[test]
fn straddling_hourly_mean_equals_single_store() {
    let rows = minute_rows(180);
    // boundary at 1h30m sits inside the second hourly bucket
    let t1 = HOUR + 30 * 60 * SEC;
    let s = split(&rows, t1, None);
    let spec = QuerySpec::default().with_aggregation(AggregateFunction::Mean, HOUR);
    let fed = s.fed.query(&sid("S"), &spec).unwrap();
    let single = s.reference.query(&sid("S"), &spec).unwrap();
    assert_eq!(fed.result.frame.len(), 3);
    assert!(fed.result.frame.bit_eq(&single.frame), "{:?}\n{:?}", fed.result.frame, single.frame);
    let v = |f: &Frame| f.points[1].values[0].clone();
    assert_eq!(v(&fed.result.frame), v(&single.frame));
}

#[test]
fn kind_errors() {
    let store = Arc::new(Store::in_memory());
    store.create_series(&schema()).unwrap();
    let fed = Federation::new(store, ".");
    let dummy: Factory = Arc::new(|_, _| Err("never".into()));
    assert!(
        matches!(fed.register_kind(CSV_FILE, dummy.clone()), Err(ConnectorError::DuplicateKind(k)) if k == CSV_FILE)
    );
    fed.register_kind("other", dummy).unwrap();
    assert_eq!(fed.kinds(), vec!["csv-file", "native", "other"]);
    let bind = |segments| fed.bind(BindingSpec { series: sid("S"), segments });
    assert!(matches!(
        bind(vec![seg(IndexRange::UNBOUNDED, "parquet", None)]),
        Err(ConnectorError::UnknownKind(k)) if k == "parquet"
    ));
    assert!(matches!(
        bind(vec![
            seg(IndexRange::new(0, 10).unwrap(), NATIVE, None),
            seg(IndexRange::new(5, 20).unwrap(), NATIVE, None)
        ]),
        Err(ConnectorError::OverlappingSegments { .. })
    ));
    assert!(matches!(
        bind(vec![seg(IndexRange::from(0), NATIVE, None), seg(IndexRange::from(50), NATIVE, None)]),
        Err(ConnectorError::OverlappingSegments { .. })
    ));
    assert!(matches!(
        bind(vec![seg(IndexRange::until(0), CSV_FILE, Some("/nonexistent/legacy.csv"))]),
        Err(ConnectorError::InitFailure { kind, .. }) if kind == CSV_FILE
    ));
    assert!(matches!(bind(vec![seg(IndexRange::until(0), CSV_FILE, None)]), Err(ConnectorError::InitFailure { .. })));
    assert!(matches!(bind(vec![]), Err(ConnectorError::InvalidSegment(_))));
    assert!(matches!(bind(vec![seg(IndexRange::UNBOUNDED, "other", None)]), Err(ConnectorError::InitFailure { .. })));
    assert!(matches!(
        fed.bind(BindingSpec { series: sid("missing"), segments: vec![seg(IndexRange::UNBOUNDED, NATIVE, None)] }),
        Err(ConnectorError::UnknownSeries(_))
    ));
    assert!(!fed.is_bound(&sid("S")));
    assert!(matches!(fed.query(&sid("S"), &QuerySpec::default()), Err(ConnectorError::NotBound(_))));
}

#[test]
fn unparseable_legacy_rows_fail_binding() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.csv"), "index,a\n0,1.5\n60,oops\n").unwrap();
    let store = Arc::new(Store::in_memory());
    store.create_series(&schema()).unwrap();
    let fed = Federation::new(store, dir.path());
    let err = fed
        .bind(BindingSpec { series: sid("S"), segments: vec![seg(IndexRange::UNBOUNDED, CSV_FILE, Some("bad.csv"))] })
        .unwrap_err();
    assert!(err.to_string().contains("line 3"), "{err}");
}

#[test]
fn iso_timestamps_in_csv() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("iso.csv"),
        "index,b\n1970-01-01T00:00:00Z,1\n1970-01-01T00:01:00Z,\n1970-01-01T00:02:00.5Z,3\n",
    )
    .unwrap();
    let store = Arc::new(Store::in_memory());
    store.create_series(&schema()).unwrap();
    let fed = Federation::new(store, dir.path());
    fed.bind(BindingSpec { series: sid("S"), segments: vec![seg(IndexRange::UNBOUNDED, CSV_FILE, Some("iso.csv"))] })
        .unwrap();
    let r = fed.query(&sid("S"), &QuerySpec::default()).unwrap().result.frame;
    // the all-empty row is not a point
    assert_eq!(r.indices(), vec![0, 120 * SEC + SEC / 2]);
    assert_eq!(r.points[0].values, vec![None, Some(Scalar::Float(1.0))]);
}

#[test]
fn binding_csv_does_not_copy() {
    let rows = minute_rows(100);
    let t1 = rows[50].0;
    let s = split(&rows, t1, None);
    let before = s.native.stats();
    assert_eq!(before.points, 50);
    s.fed.query(&sid("S"), &QuerySpec::default()).unwrap();
    s.fed.query(&sid("S"), &QuerySpec::default().with_aggregation(AggregateFunction::Max, HOUR)).unwrap();
    assert_eq!(s.native.stats(), before);
}

#[test]
fn native_writes_are_limited_to_native_segments() {
    let rows = minute_rows(10);
    let s = split(&rows, 5 * 60 * SEC, Some(8 * 60 * SEC));
    assert!(s.fed.check_write(&sid("S"), [5 * 60 * SEC, 8 * 60 * SEC - 1]).is_ok());
    assert!(matches!(
        s.fed.check_write(&sid("S"), [6 * 60 * SEC, 0]),
        Err(ConnectorError::WriteOutsideNative { index: 0, .. })
    ));
    assert!(s.fed.check_write(&sid("S"), [8 * 60 * SEC]).is_err());
    assert!(s.fed.check_write(&sid("other"), [0]).is_ok());
}

#[test]
fn federated_cursor_names_the_segment() {
    let rows = minute_rows(10);
    let s = split(&rows, 5 * 60 * SEC, None);
    let r = s.fed.query(&sid("S"), &QuerySpec::default().with_limit(7, None)).unwrap();
    let c = r.result.next_cursor.unwrap();
    assert!(c.as_str().starts_with("s1."), "{}", c.as_str());
    let rest = s.fed.query(&sid("S"), &QuerySpec::default().with_limit(7, Some(c))).unwrap();
    assert_eq!(rest.result.frame.len(), 3);
    assert_eq!(rest.subqueries, 1);
    assert!(rest.result.next_cursor.is_none());
    let bad = QuerySpec::default().with_limit(7, Some(Cursor::from_raw("s9.c0000000000000000")));
    assert!(s.fed.query(&sid("S"), &bad).is_err());
}

struct Failing;

impl Connector for Failing {
    fn kind(&self) -> &str {
        "failing"
    }
    fn capabilities(&self) -> Capabilities {
        Capabilities { aggregation: false, paging: false }
    }
    fn range_query(&self, _: IndexRange, _: &[String]) -> Result<Frame, ConnectorError> {
        Err(ConnectorError::Source("link down".into()))
    }
}

#[test]
fn connector_errors_carry_segment_identity() {
    let store = Arc::new(Store::in_memory());
    store.create_series(&schema()).unwrap();
    load(&store, &minute_rows(3));
    let fed = Federation::new(store, ".");
    fed.register_kind("failing", Arc::new(|_, _| Ok(Box::new(Failing)))).unwrap();
    fed.bind(BindingSpec {
        series: sid("S"),
        segments: vec![seg(IndexRange::from(HOUR), "failing", None), seg(IndexRange::until(HOUR), NATIVE, None)],
    })
    .unwrap();
    assert_eq!(fed.binding(&sid("S")).unwrap().segments[0].kind, NATIVE);
    assert_eq!(fed.query(&sid("S"), &QuerySpec::range(IndexRange::until(HOUR))).unwrap().result.frame.len(), 3);
    match fed.query(&sid("S"), &QuerySpec::default()) {
        Err(ConnectorError::SegmentUnavailable { segment: 1, kind, reason }) => {
            assert_eq!(kind, "failing");
            assert_eq!(reason, "link down");
        }
        other => panic!("{other:?}"),
    }
}

fn arb_rows() -> impl Strategy<Value = Vec<Row>> {
    prop::collection::btree_map(
        -50i64..400,
        (prop::option::of(-1e3f64..1e3), prop::option::weighted(0.7, -50i64..50)),
        1..80,
    )
    .prop_map(|m| {
        m.into_iter()
            .filter(|(_, (a, b))| a.is_some() || b.is_some())
            .map(|(i, (a, b))| (i * 7 * SEC, vec![a, b.map(|x| x as f64 * 0.25)]))
            .collect()
    })
}

fn arb_function() -> impl Strategy<Value = AggregateFunction> {
    prop::sample::select(AggregateFunction::ALL.to_vec())
}

fn collect_pages(fed: &Federation, spec: &QuerySpec, limit: usize) -> Vec<DataPoint> {
    let mut out = Vec::new();
    let mut cursor = None;
    loop {
        let page = fed.query(&sid("S"), &spec.clone().with_limit(limit, cursor)).unwrap().result;
        assert!(page.frame.len() <= limit);
        out.extend(page.frame.points);
        match page.next_cursor {
            Some(c) => cursor = Some(c),
            None => return out,
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn federation_is_transparent(
        rows in arb_rows(),
        t1 in -60i64..420,
        gap in prop::option::of(1i64..200),
        lo in prop::option::of(-400i64..3000),
        span in 1i64..3000,
        resolution in prop::sample::select(vec![7i64, 60, 100, 300, 3600]),
        function in arb_function(),
        limit in 1usize..12,
        proj in prop::sample::select(vec![None, Some(vec!["a"]), Some(vec!["b", "a"])]),
    ) {
        let t1 = t1 * 7 * SEC;
        let s = split(&rows, t1, gap.map(|g| t1 + g * 7 * SEC));
        let range = match lo {
            Some(lo) => IndexRange::new(lo * SEC, (lo + span) * SEC).unwrap(),
            None => IndexRange::UNBOUNDED,
        };
        let mut spec = QuerySpec::range(range);
        if let Some(p) = &proj {
            spec = spec.with_channels(p);
        }
        let single = s.reference.query(&sid("S"), &spec).unwrap();
        let fed = s.fed.query(&sid("S"), &spec).unwrap();
        prop_assert!(fed.result.frame.bit_eq(&single.frame));
        prop_assert!(fed.result.frame.indices().windows(2).all(|w| w[0] < w[1]));
        let pages = collect_pages(&s.fed, &spec, limit);
        let paged = Frame { channels: single.frame.channels.clone(), points: pages };
        prop_assert!(paged.bit_eq(&single.frame));

        let agg = spec.clone().with_aggregation(function, resolution * SEC);
        let single = s.reference.query(&sid("S"), &agg).unwrap();
        let fed = s.fed.query(&sid("S"), &agg).unwrap();
        prop_assert!(fed.result.frame.bit_eq(&single.frame), "{:?}\n{:?}", fed.result.frame, single.frame);
        let pages = collect_pages(&s.fed, &agg, limit);
        let paged = Frame { channels: single.frame.channels.clone(), points: pages };
        prop_assert!(paged.bit_eq(&single.frame));
    }
}
