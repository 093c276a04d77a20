use std::collections::BTreeMap;

use caster_core::model::{
    Channel, IndexKind, IndexRange, PolicyKind, PolicyLevel, PolicyValue, Registry, Retention, RollupRule, Scalar,
    SeriesId, SeriesKind, SeriesSchema,
};
use caster_core::rollup::{define_rollup, effective_levels, execute_aggregate, PlanLevel, RollupEngine, RollupError};
use caster_core::store::{AggregateFunction as F, DataBatch, DataPoint, QuerySpec, Store, StoreOptions};
use proptest::prelude::*;

const MIN: i64 = 60_000_000_000;
const HOUR: i64 = 60 * MIN;
const DAY: i64 = 24 * HOUR;

fn sid(s: &str) -> SeriesId {
    SeriesId::new(s).unwrap()
}

fn setup(channels: &[&str]) -> (Registry, Store) {
    let mut reg = Registry::new();
    let schema = SeriesSchema::new(
        sid("S"),
        channels.iter().map(|c| Channel::float(*c, "")).collect(),
        IndexKind::Time,
        SeriesKind::Historical,
    )
    .with_entity_type("machine");
    reg.define_series(schema.clone()).unwrap();
    let store = Store::in_memory_with(StoreOptions { seal_points: 256, ..Default::default() });
    store.create_series(&schema).unwrap();
    (reg, store)
}

fn append(store: &Store, channel: &str, rows: &[(i64, f64)]) {
    let pts = rows.iter().map(|(i, v)| DataPoint::new(*i, vec![Some(Scalar::Float(*v))])).collect();
    store.append(&DataBatch::new(sid("S"), vec![channel.into()], pts)).unwrap();
}

fn rule(res: i64, fs: &[F], retention: Retention) -> RollupRule {
    RollupRule::new(res, fs.iter().copied(), retention).unwrap()
}

fn minute_values(n: i64) -> Vec<(i64, f64)> {
    (0..n).map(|i| (i * MIN, ((i * 7919) % 1000) as f64)).collect()
}

#[test]
fn hourly_mean_of_two_closed_hours() {
    let (mut reg, store) = setup(&["v"]);
    define_rollup(&mut reg, PolicyLevel::Global, rule(HOUR, &[F::Mean], Retention::Forever)).unwrap();
    let data = minute_values(120);
    append(&store, "v", &data);
    let engine = RollupEngine::new();
    assert_eq!(engine.run_rollup(&reg, &store, 2 * HOUR).buckets_written, 2);
    assert_eq!(engine.run_rollup(&reg, &store, 2 * HOUR).buckets_written, 0);
    let target = sid("S.rollup-3600s");
    let frame = store.query(&target, &QuerySpec::default().with_channels(&["v.sum", "v.count"])).unwrap().frame;
    assert_eq!(frame.indices(), vec![0, HOUR]);
    for (p, chunk) in frame.points.iter().zip(data.chunks(60)) {
        let sum = p.values[0].as_ref().unwrap().as_f64().unwrap();
        let count = p.values[1].as_ref().unwrap().as_f64().unwrap();
        let brute = chunk.iter().map(|(_, v)| v).sum::<f64>() / 60.0;
        assert_eq!(sum / count, brute);
    }
}

#[test]
fn open_bucket_is_not_rolled_up() {
    let (mut reg, store) = setup(&["v"]);
    define_rollup(&mut reg, PolicyLevel::Global, rule(HOUR, &[F::Sum], Retention::Forever)).unwrap();
    append(&store, "v", &minute_values(90));
    let engine = RollupEngine::new();
    assert_eq!(engine.run_rollup(&reg, &store, 90 * MIN).buckets_written, 1);
    assert_eq!(engine.run_rollup(&reg, &store, 2 * HOUR).buckets_written, 1);
    assert_eq!(engine.run_rollup(&reg, &store, 3 * HOUR).buckets_written, 0);
}

#[test]
fn late_data_recomputes_closed_bucket() {
    let (mut reg, store) = setup(&["v"]);
    define_rollup(&mut reg, PolicyLevel::Global, rule(HOUR, &[F::Sum, F::Count], Retention::Forever)).unwrap();
    append(&store, "v", &minute_values(120));
    let engine = RollupEngine::new();
    engine.run_rollup(&reg, &store, 3 * HOUR);
    append(&store, "v", &[(30 * MIN + 1, 1000.0)]);
    assert_eq!(engine.run_rollup(&reg, &store, 3 * HOUR).buckets_written, 1);
    let f = store.query(&sid("S.rollup-3600s"), &QuerySpec::default().with_channels(&["v.count"])).unwrap().frame;
    assert_eq!(f.points[0].values[0], Some(Scalar::Int(61)));
}

#[test]
fn no_rules_writes_nothing() {
    let (reg, store) = setup(&["v"]);
    append(&store, "v", &minute_values(120));
    assert_eq!(RollupEngine::new().run_rollup(&reg, &store, 10 * HOUR).buckets_written, 0);
}

#[test]
fn zero_resolution_rejected() {
    let (mut reg, _) = setup(&["v"]);
    let bad = RollupRule { resolution: 0, functions: [F::Mean].into_iter().collect(), retention: Retention::Forever };
    assert!(matches!(define_rollup(&mut reg, PolicyLevel::Global, bad), Err(RollupError::InvalidResolution(0))));
    assert!(RollupRule::new(0, [F::Mean], Retention::Forever).is_err());
}

#[test]
fn attribute_rule_overrides_type_rule() {
    let (mut reg, _) = setup(&["T_l", "T_s"]);
    define_rollup(
        &mut reg,
        PolicyLevel::per_type("machine"),
        rule(HOUR, &[F::Mean, F::Min, F::Max], Retention::days(365)),
    )
    .unwrap();
    define_rollup(
        &mut reg,
        PolicyLevel::per_attribute(sid("S"), "T_s"),
        rule(10 * MIN, &[F::Mean], Retention::Forever),
    )
    .unwrap();
    let levels = effective_levels(reg.policies(), reg.series(&sid("S")).unwrap());
    assert_eq!(levels.len(), 2);
    assert_eq!(levels[0].resolution, 10 * MIN);
    assert_eq!(levels[0].channels.iter().map(|c| c.position).collect::<Vec<_>>(), vec![1]);
    assert_eq!(levels[1].resolution, HOUR);
    assert_eq!(levels[1].channels.iter().map(|c| c.position).collect::<Vec<_>>(), vec![0]);
    assert_eq!(levels[1].channels[0].retention, Retention::days(365));
}

#[test]
fn retention_counts_and_is_idempotent() {
    let (mut reg, store) = setup(&["v"]);
    let per_day: i64 = 24 * 60;
    append(&store, "v", &minute_values(10 * per_day));
    let engine = RollupEngine::new();
    assert_eq!(engine.run_retention(&reg, &store, 10 * DAY).points_deleted, 0);
    reg.set_policy(PolicyLevel::Global, PolicyValue::Retention(Retention::days(7))).unwrap();
    // counting oracle: indices strictly below now - 7d
    let expected = (0..10 * per_day).filter(|i| i * MIN < 3 * DAY).count();
    assert_eq!(engine.run_retention(&reg, &store, 10 * DAY).points_deleted, expected);
    assert_eq!(engine.run_retention(&reg, &store, 10 * DAY).points_deleted, 0);
    assert_eq!(store.watermark(&sid("S")).unwrap(), Some(3 * DAY));
    let first = store.query(&sid("S"), &QuerySpec::default().with_limit(1, None)).unwrap().frame;
    assert_eq!(first.indices(), vec![3 * DAY]);
}

#[test]
fn per_channel_retention_clears_values() {
    let (mut reg, store) = setup(&["a", "b"]);
    let rows: Vec<DataPoint> =
        (0..10).map(|d| DataPoint::new(d * DAY, vec![Some(Scalar::Float(1.0)), Some(Scalar::Float(2.0))])).collect();
    store.append(&DataBatch::new(sid("S"), vec!["a".into(), "b".into()], rows)).unwrap();
    reg.set_policy(PolicyLevel::per_attribute(sid("S"), "a"), PolicyValue::Retention(Retention::days(2))).unwrap();
    let engine = RollupEngine::new();
    let report = engine.run_retention(&reg, &store, 10 * DAY);
    assert_eq!(report.points_deleted, 0);
    assert_eq!(report.values_cleared, 8);
    let f = store.query(&sid("S"), &QuerySpec::default()).unwrap().frame;
    assert_eq!(f.len(), 10);
    assert!(f.points[..8].iter().all(|p| p.values[0].is_none() && p.values[1].is_some()));
    assert!(f.points[8].values[0].is_some());
}

#[test]
fn aggregates_outlive_raw_data() {
    let (mut reg, store) = setup(&["v"]);
    let per_day = 24 * 60;
    let data = minute_values(10 * per_day);
    append(&store, "v", &data);
    reg.set_policy(PolicyLevel::Global, PolicyValue::Retention(Retention::days(7))).unwrap();
    define_rollup(&mut reg, PolicyLevel::Global, rule(DAY, &[F::Sum, F::Count], Retention::Forever)).unwrap();
    let engine = RollupEngine::new();
    engine.run_rollup(&reg, &store, 10 * DAY);
    engine.run_retention(&reg, &store, 10 * DAY);
    let f =
        store.query(&sid("S.rollup-86400s"), &QuerySpec::default().with_channels(&["v.sum", "v.count"])).unwrap().frame;
    assert_eq!(f.len(), 10);
    for (p, chunk) in f.points.iter().zip(data.chunks(per_day as usize)) {
        let brute: f64 = chunk.iter().map(|(_, v)| v).sum();
        assert_eq!(p.values[0], Some(Scalar::Float(brute)));
        assert_eq!(p.values[1], Some(Scalar::Int(per_day)));
    }
    // a second rollup pass must not resurrect or rewrite purged-raw buckets
    assert_eq!(engine.run_rollup(&reg, &store, 10 * DAY).buckets_written, 0);
}

fn stored_levels(reg: &mut Registry) {
    define_rollup(reg, PolicyLevel::Global, rule(HOUR, &[F::Mean], Retention::Forever)).unwrap();
    define_rollup(reg, PolicyLevel::Global, rule(DAY, &[F::Mean], Retention::Forever)).unwrap();
}

#[test]
fn weekly_mean_uses_daily_level() {
    let (mut reg, store) = setup(&["v"]);
    stored_levels(&mut reg);
    let data = minute_values(14 * 24 * 60);
    append(&store, "v", &data);
    let engine = RollupEngine::new();
    engine.run_rollup(&reg, &store, 14 * DAY);
    let week = 7 * DAY;
    let plan = engine.plan_query(&reg, &store, &sid("S"), IndexRange::UNBOUNDED, Some(week), F::Mean, None).unwrap();
    assert_eq!(plan.level, PlanLevel::Rollup(DAY));
    let f = execute_aggregate(&store, &sid("S"), IndexRange::UNBOUNDED, week, F::Mean, None, &plan).unwrap();
    // 1970-01-01 is a Thursday; epoch-aligned weeks start there
    let mut groups: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for (i, v) in &data {
        groups.entry(i.div_euclid(week) * week).or_default().push(*v);
    }
    assert_eq!(f.indices(), groups.keys().copied().collect::<Vec<_>>());
    for (p, vals) in f.points.iter().zip(groups.values()) {
        let want = vals.iter().sum::<f64>() / vals.len() as f64;
        let got = p.values[0].as_ref().unwrap().as_f64().unwrap();
        assert!((got - want).abs() <= 1e-12 * want.abs());
    }
}

#[test]
fn non_dividing_resolution_falls_back_to_raw() {
    let (mut reg, store) = setup(&["v"]);
    define_rollup(&mut reg, PolicyLevel::Global, rule(HOUR, &[F::Sum, F::Count], Retention::Forever)).unwrap();
    append(&store, "v", &minute_values(300));
    let engine = RollupEngine::new();
    engine.run_rollup(&reg, &store, 5 * HOUR);
    let plan =
        engine.plan_query(&reg, &store, &sid("S"), IndexRange::UNBOUNDED, Some(45 * MIN), F::Mean, None).unwrap();
    assert_eq!(plan.level, PlanLevel::Raw);
    let plan = engine.plan_query(&reg, &store, &sid("S"), IndexRange::UNBOUNDED, Some(2 * HOUR), F::Min, None).unwrap();
    assert_eq!(plan.level, PlanLevel::Raw, "min is not composable from sum+count");
    let plan = engine.plan_query(&reg, &store, &sid("S"), IndexRange::UNBOUNDED, None, F::Mean, None).unwrap();
    assert_eq!(plan.level, PlanLevel::Raw);
}

#[test]
fn purged_range_without_rollup_is_unanswerable() {
    let (mut reg, store) = setup(&["v"]);
    append(&store, "v", &minute_values(3 * 24 * 60));
    reg.set_policy(PolicyLevel::Global, PolicyValue::Retention(Retention::days(1))).unwrap();
    let engine = RollupEngine::new();
    engine.run_retention(&reg, &store, 3 * DAY);
    let old = IndexRange::new(0, DAY).unwrap();
    assert!(matches!(
        engine.plan_query(&reg, &store, &sid("S"), old, None, F::Mean, None),
        Err(RollupError::Unanswerable(_))
    ));
    assert!(matches!(
        engine.plan_query(&reg, &store, &sid("S"), old, Some(HOUR), F::Mean, None),
        Err(RollupError::Unanswerable(_))
    ));
    assert!(matches!(
        engine.plan_query(&reg, &store, &sid("nope"), old, None, F::Mean, None),
        Err(RollupError::UnknownSeries(_))
    ));
}

#[test]
fn purged_range_with_rollup_is_answered_from_it() {
    let (mut reg, store) = setup(&["v"]);
    let data = minute_values(3 * 24 * 60);
    append(&store, "v", &data);
    reg.set_policy(PolicyLevel::Global, PolicyValue::Retention(Retention::days(1))).unwrap();
    define_rollup(&mut reg, PolicyLevel::Global, rule(HOUR, &[F::Max], Retention::Forever)).unwrap();
    let engine = RollupEngine::new();
    engine.run_rollup(&reg, &store, 3 * DAY);
    engine.run_retention(&reg, &store, 3 * DAY);
    let old = IndexRange::new(0, DAY).unwrap();
    let plan = engine.plan_query(&reg, &store, &sid("S"), old, Some(DAY), F::Max, None).unwrap();
    assert_eq!(plan.level, PlanLevel::Rollup(HOUR));
    let f = execute_aggregate(&store, &sid("S"), old, DAY, F::Max, None, &plan).unwrap();
    let want = data.iter().filter(|(i, _)| *i < DAY).map(|(_, v)| *v).fold(f64::MIN, f64::max);
    assert_eq!(f.points[0].values[0], Some(Scalar::Float(want)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn planned_answers_equal_raw_answers(
        values in proptest::collection::vec((0i64..3 * 24 * 60, -500i32..500), 1..400),
        level_steps in proptest::sample::subsequence(vec![5i64, 15, 60, 240, 1440], 1..4),
        request_steps in 1i64..2000,
        lo in 0i64..4000, width in 1i64..5000,
        now_min in 0i64..5000,
    ) {
        let (mut reg, store) = setup(&["v"]);
        let mut rows: BTreeMap<i64, f64> = BTreeMap::new();
        for (m, v) in values { rows.insert(m * MIN, v as f64); }
        let rows: Vec<(i64, f64)> = rows.into_iter().collect();
        append(&store, "v", &rows);
        for s in &level_steps {
            define_rollup(&mut reg, PolicyLevel::Global, rule(s * MIN, &[F::Mean, F::Min, F::Max, F::First, F::Last], Retention::Forever)).unwrap();
        }
        let engine = RollupEngine::new();
        engine.run_rollup(&reg, &store, now_min * MIN);
        let range = IndexRange::new(lo * MIN, (lo + width) * MIN).unwrap();
        let res = request_steps * MIN;
        for f in [F::Mean, F::Sum, F::Count, F::Min, F::Max, F::First, F::Last] {
            let plan = engine.plan_query(&reg, &store, &sid("S"), range, Some(res), f, None).unwrap();
            if let PlanLevel::Rollup(l) = plan.level {
                // planner soundness: divisibility and composability
                prop_assert_eq!(res % l, 0);
                prop_assert!(level_steps.iter().any(|s| s * MIN == l));
            }
            let got = execute_aggregate(&store, &sid("S"), range, res, f, None, &plan).unwrap();
            let want = store.aggregate_query(&sid("S"), range, res, f, None).unwrap();
            prop_assert_eq!(got.indices(), want.indices());
            for (g, w) in got.points.iter().zip(&want.points) {
                match (g.values[0].as_ref(), w.values[0].as_ref()) {
                    (Some(Scalar::Float(a)), Some(Scalar::Float(b))) if f == F::Mean => {
                        prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
                    }
                    // integer-valued data keeps float sums exact under any grouping
                    (a, b) => prop_assert_eq!(a, b),
                }
            }
        }
    }

    #[test]
    fn rollup_is_a_fixed_point(values in proptest::collection::btree_map(0i64..2000, -100i32..100, 0..200), now in 0i64..2500) {
        let (mut reg, store) = setup(&["v"]);
        let rows: Vec<(i64, f64)> = values.into_iter().map(|(m, v)| (m * MIN, v as f64)).collect();
        append(&store, "v", &rows);
        define_rollup(&mut reg, PolicyLevel::Global, rule(HOUR, &[F::Mean, F::Last], Retention::Forever)).unwrap();
        let engine = RollupEngine::new();
        engine.run_rollup(&reg, &store, now * MIN);
        prop_assert_eq!(engine.run_rollup(&reg, &store, now * MIN).buckets_written, 0);
        // a fresh engine reconciles against stored buckets and also writes nothing
        prop_assert_eq!(RollupEngine::new().run_rollup(&reg, &store, now * MIN).buckets_written, 0);
    }

    #[test]
    fn watermark_never_decreases(nows in proptest::collection::vec(0i64..20, 1..6), days in 1i64..5) {
        let (mut reg, store) = setup(&["v"]);
        append(&store, "v", &(0..20).map(|d| (d * DAY, 1.0)).collect::<Vec<_>>());
        reg.set_policy(PolicyLevel::Global, PolicyValue::Retention(Retention::days(days))).unwrap();
        let engine = RollupEngine::new();
        let mut last = None;
        for n in nows {
            engine.run_retention(&reg, &store, n * DAY);
            let w = store.watermark(&sid("S")).unwrap();
            prop_assert!(w >= last);
            last = w;
            let f = store.query(&sid("S"), &QuerySpec::default()).unwrap().frame;
            prop_assert!(f.points.iter().all(|p| w.is_none_or(|w| p.index >= w)));
        }
    }
}

#[test]
fn policy_kind_separation() {
    let (mut reg, _) = setup(&["v"]);
    define_rollup(&mut reg, PolicyLevel::Global, rule(HOUR, &[F::Mean], Retention::Forever)).unwrap();
    define_rollup(&mut reg, PolicyLevel::Global, rule(HOUR, &[F::Max], Retention::Forever)).unwrap();
    let v = reg.effective_policy(&sid("S"), "v", PolicyKind::Rollup).unwrap();
    let rules = v.as_rollup().unwrap();
    assert_eq!(rules.len(), 1, "same resolution replaces the rule");
    assert!(rules[0].functions.contains(&F::Max));
}
