use caster_core::model::{Channel, IndexKind, IndexRange, Scalar, SeriesId, SeriesKind, SeriesSchema, ValueType};
use caster_core::store::{AggregateFunction, Cursor, DataBatch, DataPoint, QuerySpec, Store, StoreError, StoreOptions};
use proptest::prelude::*;

const SEC: i64 = 1_000_000_000;

fn sid(s: &str) -> SeriesId {
    SeriesId::new(s).unwrap()
}

fn casting_schema() -> SeriesSchema {
    SeriesSchema::new(
        sid("S"),
        ["v_c", "T_l", "T_s", "Q_w"].iter().map(|c| Channel::float(*c, "")).collect(),
        IndexKind::Time,
        SeriesKind::Historical,
    )
}

fn float_batch(series: &str, channels: &[&str], rows: &[(i64, Vec<f64>)]) -> DataBatch {
    DataBatch::new(
        sid(series),
        channels.iter().map(|c| c.to_string()).collect(),
        rows.iter().map(|(i, v)| DataPoint::new(*i, v.iter().map(|x| Some(Scalar::Float(*x))).collect())).collect(),
    )
}

fn store_with_casting() -> Store {
    let store = Store::in_memory_with(StoreOptions { seal_points: 8, ..Default::default() });
    store.create_series(&casting_schema()).unwrap();
    store
}

#[test]
fn append_then_query_round_trip() {
    let store = store_with_casting();
    let rows = [(0, vec![1.0]), (60 * SEC, vec![2.0]), (120 * SEC, vec![3.0])];
    assert_eq!(store.append(&float_batch("S", &["v_c"], &rows)).unwrap(), 3);
    let r = store.query(&sid("S"), &QuerySpec::default().with_channels(&["v_c"])).unwrap();
    assert_eq!(r.frame.indices(), vec![0, 60 * SEC, 120 * SEC]);
    assert_eq!(r.frame.points[1].values, vec![Some(Scalar::Float(2.0))]);
    assert!(r.next_cursor.is_none());
}

#[test]
fn reappending_an_index_replaces_the_point() {
    let store = store_with_casting();
    store.append(&float_batch("S", &["v_c"], &[(0, vec![1.0]), (60 * SEC, vec![2.0])])).unwrap();
    assert_eq!(store.append(&float_batch("S", &["v_c"], &[(60 * SEC, vec![9.5])])).unwrap(), 1);
    let r = store.query(&sid("S"), &QuerySpec::range(IndexRange::new(60 * SEC, 61 * SEC).unwrap())).unwrap();
    assert_eq!(r.frame.len(), 1);
    assert_eq!(r.frame.points[0].values[0], Some(Scalar::Float(9.5)));
}

#[test]
fn batch_validation_errors() {
    let store = store_with_casting();
    let err = store.append(&float_batch("S", &["v_c"], &[(10, vec![1.0]), (5, vec![1.0])])).unwrap_err();
    assert!(matches!(err, StoreError::UnsortedBatch { position: 1 }));
    let bad_type =
        DataBatch::new(sid("S"), vec!["v_c".into()], vec![DataPoint::new(1, vec![Some(Scalar::Text("abc".into()))])]);
    assert!(matches!(store.append(&bad_type), Err(StoreError::TypeMismatch { .. })));
    let empty = DataBatch::new(sid("S"), vec!["v_c".into()], vec![DataPoint::new(1, vec![None])]);
    assert!(matches!(store.append(&empty), Err(StoreError::EmptyPoint { index: 1 })));
    assert!(matches!(
        store.append(&float_batch("nope", &["v_c"], &[(1, vec![1.0])])),
        Err(StoreError::UnknownSeries(_))
    ));
    assert!(matches!(store.append(&float_batch("S", &["zz"], &[(1, vec![1.0])])), Err(StoreError::UnknownChannel(_))));
}

#[test]
fn paging_five_points_by_two() {
    let store = store_with_casting();
    let rows: Vec<_> = (0..5).map(|i| (i * SEC, vec![i as f64])).collect();
    store.append(&float_batch("S", &["v_c"], &rows)).unwrap();
    let full = store.query(&sid("S"), &QuerySpec::default()).unwrap().frame;
    let mut pages = Vec::new();
    let mut seen = Vec::new();
    let mut cursor = None;
    loop {
        let r = store.query(&sid("S"), &QuerySpec::default().with_limit(2, cursor)).unwrap();
        pages.push(r.frame.len());
        seen.extend(r.frame.points);
        cursor = r.next_cursor;
        if cursor.is_none() {
            break;
        }
    }
    assert_eq!(pages, vec![2, 2, 1]);
    assert_eq!(seen, full.points);
}

#[test]
fn empty_range_and_projection() {
    let store = store_with_casting();
    store.append(&float_batch("S", &["v_c", "T_l", "T_s", "Q_w"], &[(0, vec![2.5, 1530.0, 1100.0, 120.0])])).unwrap();
    let r = store.query(&sid("S"), &QuerySpec::range(IndexRange::new(10, 20).unwrap()).with_limit(5, None)).unwrap();
    assert!(r.frame.is_empty());
    assert!(r.next_cursor.is_none());
    let r = store.query(&sid("S"), &QuerySpec::default().with_channels(&["T_s"])).unwrap();
    assert_eq!(r.frame.channels, vec!["T_s".to_string()]);
    assert_eq!(r.frame.points[0].values, vec![Some(Scalar::Float(1100.0))]);
}

#[test]
fn invalid_queries() {
    let store = store_with_casting();
    let bad_range = QuerySpec::range(IndexRange { start: Some(5), end: Some(5) });
    assert!(matches!(store.query(&sid("S"), &bad_range), Err(StoreError::InvalidRange(_))));
    let bad_cursor = QuerySpec::default().with_limit(2, Some(serde_json::from_str::<Cursor>("\"xyz\"").unwrap()));
    assert!(matches!(store.query(&sid("S"), &bad_cursor), Err(StoreError::InvalidCursor)));
    assert!(matches!(
        store.query(&sid("S"), &QuerySpec::default().with_limit(100_001, None)),
        Err(StoreError::InvalidLimit(_))
    ));
    assert!(matches!(
        store.aggregate_query(&sid("S"), IndexRange::UNBOUNDED, 0, AggregateFunction::Mean, None),
        Err(StoreError::InvalidResolution(0))
    ));
}

#[test]
fn aggregates_over_one_hour() {
    let store = store_with_casting();
    store
        .append(&float_batch("S", &["v_c"], &[(0, vec![1.0]), (60 * SEC, vec![2.0]), (120 * SEC, vec![3.0])]))
        .unwrap();
    let mean = store
        .aggregate_query(
            &sid("S"),
            IndexRange::UNBOUNDED,
            3600 * SEC,
            AggregateFunction::Mean,
            Some(&["v_c".to_string()]),
        )
        .unwrap();
    assert_eq!(mean.len(), 1);
    assert_eq!(mean.points[0].values[0], Some(Scalar::Float(2.0)));
    let count = store
        .aggregate_query(
            &sid("S"),
            IndexRange::UNBOUNDED,
            3600 * SEC,
            AggregateFunction::Count,
            Some(&["v_c".to_string()]),
        )
        .unwrap();
    assert_eq!(count.points[0].values[0], Some(Scalar::Int(3)));
}

#[test]
fn hourly_means_of_120_minutes_match_brute_force() {
    let store = store_with_casting();
    let values: Vec<f64> = (0..120).map(|i| ((i * 37) % 101) as f64 * 0.25).collect();
    let rows: Vec<_> = values.iter().enumerate().map(|(i, v)| (i as i64 * 60 * SEC, vec![*v])).collect();
    store.append(&float_batch("S", &["v_c"], &rows)).unwrap();
    let out = store
        .aggregate_query(
            &sid("S"),
            IndexRange::UNBOUNDED,
            3600 * SEC,
            AggregateFunction::Mean,
            Some(&["v_c".to_string()]),
        )
        .unwrap();
    // brute-force oracle: arithmetic mean of each 60-value half
    let oracle: Vec<f64> = values.chunks(60).map(|c| c.iter().sum::<f64>() / 60.0).collect();
    assert_eq!(out.indices(), vec![0, 3600 * SEC]);
    for (p, want) in out.points.iter().zip(oracle) {
        let got = p.values[0].as_ref().unwrap().as_f64().unwrap();
        assert!((got - want).abs() <= 1e-12 * want.abs());
    }
}

#[test]
fn delete_half_of_hundred_points() {
    let store = store_with_casting();
    let rows: Vec<_> = (0..100).map(|i| (i * SEC, vec![i as f64])).collect();
    store.append(&float_batch("S", &["v_c"], &rows)).unwrap();
    let t_mid = 50 * SEC;
    assert_eq!(store.delete_range(&sid("S"), IndexRange::new(0, t_mid).unwrap()).unwrap(), 50);
    assert_eq!(store.query(&sid("S"), &QuerySpec::default()).unwrap().frame.len(), 50);
    assert_eq!(store.delete_range(&sid("S"), IndexRange::new(0, t_mid).unwrap()).unwrap(), 0);
    assert_eq!(store.delete_range(&sid("S"), IndexRange::UNBOUNDED).unwrap(), 50);
    assert_eq!(store.delete_range(&sid("S"), IndexRange::UNBOUNDED).unwrap(), 0);
}

#[test]
fn one_index_column_regardless_of_channel_count() {
    let store = store_with_casting();
    let rows: Vec<_> = (0..20).map(|i| (i, vec![1.0, 2.0, 3.0, 4.0])).collect();
    store.append(&float_batch("S", &["v_c", "T_l", "T_s", "Q_w"], &rows)).unwrap();
    let layout = store.layout(&sid("S")).unwrap();
    assert_eq!(layout.index_columns_per_segment, 1);
    assert_eq!(layout.index_entries, 20);
    assert_eq!(layout.value_columns, 4);
}

#[test]
fn merge_value_keeps_other_channels() {
    let store = store_with_casting();
    store.append(&float_batch("S", &["v_c", "T_s"], &[(5, vec![2.0, 900.0])])).unwrap();
    store.merge_value(&sid("S"), 5, "T_s", Scalar::Float(901.0)).unwrap();
    let r = store.query(&sid("S"), &QuerySpec::default().with_channels(&["v_c", "T_s"])).unwrap();
    assert_eq!(r.frame.points[0].values, vec![Some(Scalar::Float(2.0)), Some(Scalar::Float(901.0))]);
}

#[test]
fn watermark_hides_older_points() {
    let store = store_with_casting();
    let rows: Vec<_> = (0..10).map(|i| (i, vec![i as f64])).collect();
    store.append(&float_batch("S", &["v_c"], &rows)).unwrap();
    store.raise_watermark(&sid("S"), 4).unwrap();
    assert!(!store.raise_watermark(&sid("S"), 2).unwrap());
    assert_eq!(store.watermark(&sid("S")).unwrap(), Some(4));
    let r = store.query(&sid("S"), &QuerySpec::default()).unwrap();
    assert_eq!(r.frame.indices(), (4..10).collect::<Vec<_>>());
}

#[test]
fn recovery_after_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let opts = StoreOptions { seal_points: 16, sync: false, checkpoint_bytes: 2048 };
    let schema = SeriesSchema::new(
        sid("mixed/series"),
        vec![Channel::float("f", ""), Channel::new("i", "", ValueType::Int64), Channel::new("t", "", ValueType::Text)],
        IndexKind::Time,
        SeriesKind::Historical,
    );
    let expected = {
        let store = Store::open(dir.path(), opts).unwrap();
        store.create_series(&schema).unwrap();
        for chunk in 0..10 {
            let pts = (0..20)
                .map(|k| {
                    let i = chunk * 20 + k;
                    DataPoint::new(
                        i * 7,
                        vec![
                            Some(Scalar::Float(i as f64 / 3.0)),
                            Some(Scalar::Int(-i)),
                            (i % 3 == 0).then(|| Scalar::Text(format!("x{i}"))),
                        ],
                    )
                })
                .collect();
            store.append(&DataBatch::new(schema.id.clone(), vec!["f".into(), "i".into(), "t".into()], pts)).unwrap();
        }
        store.delete_range(&schema.id, IndexRange::new(70, 140).unwrap()).unwrap();
        store.merge_value(&schema.id, 7 * 150, "t", Scalar::Text("late".into())).unwrap();
        store.raise_watermark(&schema.id, 21).unwrap();
        store.query(&schema.id, &QuerySpec::default()).unwrap().frame
    };
    let reopened = Store::open(dir.path(), opts).unwrap();
    let got = reopened.query(&schema.id, &QuerySpec::default()).unwrap().frame;
    assert!(got.bit_eq(&expected));
    assert_eq!(reopened.watermark(&schema.id).unwrap(), Some(21));
    assert!(reopened.schema(&schema.id).unwrap().same_structure(&schema));
}

#[test]
fn torn_log_tail_is_ignored() {
    let dir = tempfile::tempdir().unwrap();
    let opts = StoreOptions { seal_points: 16, sync: false, checkpoint_bytes: u64::MAX };
    {
        let store = Store::open(dir.path(), opts).unwrap();
        store.create_series(&casting_schema()).unwrap();
        store.append(&float_batch("S", &["v_c"], &[(1, vec![1.0]), (2, vec![2.0])])).unwrap();
        store.append(&float_batch("S", &["v_c"], &[(3, vec![3.0])])).unwrap();
    }
    let wal = dir.path().join("series").join("s-S").join("wal.bin");
    let len = std::fs::metadata(&wal).unwrap().len();
    let f = std::fs::OpenOptions::new().write(true).open(&wal).unwrap();
    f.set_len(len - 3).unwrap();
    let store = Store::open(dir.path(), opts).unwrap();
    assert_eq!(store.query(&sid("S"), &QuerySpec::default()).unwrap().frame.indices(), vec![1, 2]);
    store.append(&float_batch("S", &["v_c"], &[(4, vec![4.0])])).unwrap();
    drop(store);
    let store = Store::open(dir.path(), opts).unwrap();
    assert_eq!(store.query(&sid("S"), &QuerySpec::default()).unwrap().frame.indices(), vec![1, 2, 4]);
}

fn sorted_rows() -> impl Strategy<Value = Vec<(i64, Option<f64>, Option<i64>)>> {
    proptest::collection::btree_map(
        -5_000i64..5_000,
        (proptest::option::of(-1e6f64..1e6), proptest::option::of(-1000i64..1000)),
        0..200,
    )
    .prop_map(|m| m.into_iter().map(|(k, (a, b))| (k, a, b)).filter(|(_, a, b)| a.is_some() || b.is_some()).collect())
}

fn mixed_store(rows: &[(i64, Option<f64>, Option<i64>)], seal: usize) -> Store {
    let store = Store::in_memory_with(StoreOptions { seal_points: seal, ..Default::default() });
    store
        .create_series(&SeriesSchema::new(
            sid("m"),
            vec![Channel::float("f", ""), Channel::new("i", "", ValueType::Int64)],
            IndexKind::Time,
            SeriesKind::Historical,
        ))
        .unwrap();
    let pts = rows.iter().map(|(k, a, b)| DataPoint::new(*k, vec![a.map(Scalar::Float), b.map(Scalar::Int)])).collect();
    store.append(&DataBatch::new(sid("m"), vec!["f".into(), "i".into()], pts)).unwrap();
    store
}

proptest! {
    #[test]
    fn round_trip_is_bit_identical(rows in sorted_rows(), seal in 1usize..40) {
        let store = mixed_store(&rows, seal);
        let got = store.query(&sid("m"), &QuerySpec::default()).unwrap().frame;
        prop_assert_eq!(got.len(), rows.len());
        for (p, (k, a, b)) in got.points.iter().zip(&rows) {
            let want = DataPoint::new(*k, vec![a.map(Scalar::Float), b.map(Scalar::Int)]);
            prop_assert!(p.bit_eq(&want));
        }
    }

    #[test]
    fn pages_concatenate_to_unpaged(rows in sorted_rows(), limit in 1usize..50, lo in -6_000i64..6_000, width in 1i64..12_000) {
        let store = mixed_store(&rows, 7);
        let range = IndexRange::new(lo, lo + width).unwrap();
        let full = store.query(&sid("m"), &QuerySpec::range(range)).unwrap().frame;
        let mut concat = Vec::new();
        let mut cursor = None;
        loop {
            let r = store.query(&sid("m"), &QuerySpec::range(range).with_limit(limit, cursor)).unwrap();
            prop_assert!(r.frame.len() <= limit);
            concat.extend(r.frame.points);
            cursor = r.next_cursor;
            if cursor.is_none() { break; }
        }
        prop_assert_eq!(concat, full.points);
    }

    #[test]
    fn aggregates_match_naive_recomputation(rows in sorted_rows(), res in 1i64..700) {
        let store = mixed_store(&rows, 5);
        for func in AggregateFunction::ALL {
            let got = store.aggregate_query(&sid("m"), IndexRange::UNBOUNDED, res, func, None).unwrap();
            // naive oracle: group by floor(index / res), recompute directly
            let mut groups: std::collections::BTreeMap<i64, (Vec<f64>, Vec<i64>)> = Default::default();
            for (k, a, b) in &rows {
                let g = groups.entry(k.div_euclid(res) * res).or_default();
                if let Some(a) = a { g.0.push(*a); }
                if let Some(b) = b { g.1.push(*b); }
            }
            prop_assert_eq!(got.indices(), groups.keys().copied().collect::<Vec<_>>());
            for (p, (fs, is)) in got.points.iter().zip(groups.values()) {
                let fv = p.values[0].as_ref();
                let iv = p.values[1].as_ref();
                match func {
                    AggregateFunction::Count => {
                        prop_assert_eq!(fv, Some(&Scalar::Int(fs.len() as i64)));
                        prop_assert_eq!(iv, Some(&Scalar::Int(is.len() as i64)));
                    }
                    AggregateFunction::Sum => {
                        prop_assert_eq!(iv.cloned(), (!is.is_empty()).then(|| Scalar::Int(is.iter().sum())));
                        if !fs.is_empty() {
                            let want: f64 = fs.iter().sum();
                            prop_assert_eq!(fv.unwrap().as_f64().unwrap().to_bits(), want.to_bits());
                        }
                    }
                    AggregateFunction::Min => prop_assert_eq!(iv.cloned(), is.iter().min().map(|v| Scalar::Int(*v))),
                    AggregateFunction::Max => prop_assert_eq!(iv.cloned(), is.iter().max().map(|v| Scalar::Int(*v))),
                    AggregateFunction::First => prop_assert_eq!(iv.cloned(), is.first().map(|v| Scalar::Int(*v))),
                    AggregateFunction::Last => prop_assert_eq!(iv.cloned(), is.last().map(|v| Scalar::Int(*v))),
                    AggregateFunction::Mean => {
                        if !fs.is_empty() {
                            let want = fs.iter().sum::<f64>() / fs.len() as f64;
                            let got = fv.unwrap().as_f64().unwrap();
                            prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1e-300));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn equal_indices_upsert_to_one_point(idx in -100i64..100, a in -10.0f64..10.0, b in -10.0f64..10.0) {
        let store = mixed_store(&[], 4);
        store.append(&float_batch("m", &["f"], &[(idx, vec![a])])).unwrap();
        store.append(&float_batch("m", &["f"], &[(idx, vec![b])])).unwrap();
        let r = store.query(&sid("m"), &QuerySpec::default()).unwrap().frame;
        prop_assert_eq!(r.len(), 1);
        prop_assert_eq!(r.points[0].values[0].clone(), Some(Scalar::Float(b)));
    }

    #[test]
    fn out_of_order_batches_end_up_sorted(batches in proptest::collection::vec(proptest::collection::btree_set(-1000i64..1000, 1..30), 1..8), seal in 1usize..10) {
        let store = mixed_store(&[], seal);
        let mut all = std::collections::BTreeSet::new();
        for b in &batches {
            let rows: Vec<_> = b.iter().map(|k| (*k, vec![*k as f64])).collect();
            store.append(&float_batch("m", &["f"], &rows)).unwrap();
            all.extend(b.iter().copied());
        }
        let got = store.query(&sid("m"), &QuerySpec::default()).unwrap().frame;
        prop_assert_eq!(got.indices(), all.into_iter().collect::<Vec<_>>());
    }
}
