use serde::Serialize;

use super::{ceil_to, effective_levels, stat_channel, Level, RollupEngine, RollupError};
use crate::model::{IndexRange, Registry, SeriesId, SeriesSchema, NANOS_PER_SECOND};
use crate::store::{
    bucket_start, buckets_of, finish_buckets, merge_buckets, Accumulator, AggregateFunction, BucketAcc, Frame, Stat,
    Store,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "level", content = "resolution_ns", rename_all = "lowercase")]
pub enum PlanLevel {
    Raw,
    Rollup(i64),
}

impl PlanLevel {
    /// `raw`, `minutely`, `hourly`, `daily`, `weekly`, or the resolution in seconds.
    pub fn label(&self) -> String {
        match *self {
            PlanLevel::Raw => "raw".into(),
            PlanLevel::Rollup(r) => match r / NANOS_PER_SECOND {
                60 if r % NANOS_PER_SECOND == 0 => "minutely".into(),
                3600 if r % NANOS_PER_SECOND == 0 => "hourly".into(),
                86_400 if r % NANOS_PER_SECOND == 0 => "daily".into(),
                604_800 if r % NANOS_PER_SECOND == 0 => "weekly".into(),
                _ => secs(r),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryPlan {
    pub level: PlanLevel,
    pub reason: String,
    /// Bucket starts the chosen rollup level can answer; the remainder comes from raw data.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage: Option<IndexRange>,
}

impl QueryPlan {
    pub fn raw(reason: impl Into<String>) -> Self {
        QueryPlan { level: PlanLevel::Raw, reason: reason.into(), coverage: None }
    }
}

fn secs(ns: i64) -> String {
    if ns % NANOS_PER_SECOND == 0 {
        format!("{}s", ns / NANOS_PER_SECOND)
    } else {
        format!("{ns}ns")
    }
}

/// Can `level` reconstruct `function` for every considered channel?
pub(super) fn composable(
    schema: &SeriesSchema,
    level: &Level,
    positions: &[usize],
    function: AggregateFunction,
) -> bool {
    positions.iter().all(|&p| {
        let ty = schema.channels[p].value_type;
        let mut needed = function.required_stats().iter().filter(|s| s.applies_to(ty)).peekable();
        if needed.peek().is_none() {
            return true;
        }
        match level.channel(p) {
            Some(lc) => needed.all(|s| lc.stats.contains(s)),
            None => false,
        }
    })
}

#[allow(clippy::too_many_arguments)]
pub(super) fn plan_query(
    engine: &RollupEngine,
    registry: &Registry,
    store: &Store,
    source: &SeriesId,
    range: IndexRange,
    resolution: Option<i64>,
    function: AggregateFunction,
    channels: Option<&[String]>,
) -> Result<QueryPlan, RollupError> {
    let schema = registry.series(source).map_err(|_| RollupError::UnknownSeries(source.clone()))?;
    if !store.contains(source) {
        return Err(RollupError::UnknownSeries(source.clone()));
    }
    range.validate()?;
    if let Some(r) = resolution {
        if r <= 0 {
            return Err(RollupError::InvalidResolution(r));
        }
    }
    let (names, positions) = Store::positions(schema, channels)?;
    let mut raw_lo: Option<i64> = None;
    for n in &names {
        if let Some(w) = store.channel_watermark(source, n)? {
            raw_lo = Some(raw_lo.map_or(w, |x| x.max(w)));
        }
    }
    let raw_readable = match raw_lo {
        Some(w) => range.intersect(&IndexRange::from(w)),
        None => range,
    };
    let purged = !range.is_empty() && raw_readable.is_empty();

    let Some(r) = resolution else {
        if purged {
            return Err(RollupError::Unanswerable("raw points in this range have been purged".into()));
        }
        return Ok(QueryPlan::raw("raw points requested"));
    };

    let chosen = effective_levels(registry.policies(), schema)
        .into_iter()
        .filter(|l| r % l.resolution == 0 && composable(schema, l, &positions, function))
        .max_by_key(|l| l.resolution);
    match chosen {
        None => {
            if purged {
                return Err(RollupError::Unanswerable(format!(
                    "raw data purged and no stored level composes {function} at {}",
                    secs(r)
                )));
            }
            Ok(QueryPlan::raw(format!("no stored level divides {} and composes {function}", secs(r))))
        }
        Some(level) => {
            let coverage = engine.coverage(store, source, &level)?;
            let covered = coverage.is_some_and(|c| !c.intersect(&range).is_empty());
            if purged && !covered {
                return Err(RollupError::Unanswerable(format!(
                    "raw data purged and level {} has no buckets in range",
                    secs(level.resolution)
                )));
            }
            let stats: Vec<&str> = function.required_stats().iter().map(|s| s.name()).collect();
            Ok(QueryPlan {
                level: PlanLevel::Rollup(level.resolution),
                reason: format!(
                    "coarsest stored level dividing {}: {} composes {function} from {}",
                    secs(r),
                    secs(level.resolution),
                    stats.join("+")
                ),
                coverage,
            })
        }
    }
}

/// Run an aggregate according to `plan`. Buckets of width `resolution` that lie wholly in
/// the plan's coverage come from the rollup level; everything else from raw data.
pub fn execute_aggregate(
    store: &Store,
    source: &SeriesId,
    range: IndexRange,
    resolution: i64,
    function: AggregateFunction,
    channels: Option<&[String]>,
    plan: &QueryPlan,
) -> Result<Frame, RollupError> {
    if resolution <= 0 {
        return Err(RollupError::InvalidResolution(resolution));
    }
    range.validate()?;
    let snap = store.snapshot(source)?;
    let (names, positions) = Store::positions(&snap.schema, channels)?;
    let (PlanLevel::Rollup(level_res), Some(cov)) = (plan.level, plan.coverage) else {
        return Ok(finish_buckets(names.clone(), &buckets_of(&snap, range, resolution, &positions), function));
    };
    let target = crate::model::rollup_series_id(source, level_res);
    let tsnap = store.snapshot(&target)?;
    let cov = cov.intersect(&range);
    let first = match (tsnap.first_index(), cov.start) {
        (Some(f), Some(s)) => Some(f.max(s)),
        (f, s) => f.or(s),
    };
    let (Some(first), Some(end)) = (first, cov.end) else {
        return Ok(finish_buckets(names.clone(), &buckets_of(&snap, range, resolution, &positions), function));
    };
    let c_lo = ceil_to(first, resolution);
    let c_hi = bucket_start(end, resolution);
    if c_lo >= c_hi {
        return Ok(finish_buckets(names.clone(), &buckets_of(&snap, range, resolution, &positions), function));
    }

    let stat_pos: Vec<Vec<(Stat, Option<usize>)>> = positions
        .iter()
        .map(|&p| {
            let name = &snap.schema.channels[p].name;
            Stat::ALL.iter().map(|&s| (s, tsnap.schema.channel_position(&stat_channel(name, s)))).collect()
        })
        .collect();
    let mut mid: Vec<BucketAcc> = Vec::new();
    for (seg, i) in tsnap.rows(IndexRange::new(c_lo, c_hi)?) {
        let b = bucket_start(seg.index()[i], resolution);
        if mid.last().is_none_or(|l| l.start != b) {
            mid.push(BucketAcc { start: b, accs: vec![Accumulator::default(); positions.len()] });
        }
        let bucket = mid.last_mut().expect("bucket pushed above");
        for (acc, sp) in bucket.accs.iter_mut().zip(&stat_pos) {
            let part = Accumulator::from_stats(|s| {
                sp.iter().find(|(x, _)| *x == s).and_then(|(_, p)| p.and_then(|p| seg.column(p).get(i)))
            });
            acc.merge(&part);
        }
    }
    let left = buckets_of(&snap, IndexRange { start: range.start, end: Some(c_lo) }, resolution, &positions);
    let right = buckets_of(&snap, IndexRange { start: Some(c_hi), end: range.end }, resolution, &positions);
    let all = merge_buckets(merge_buckets(left, mid), right);
    Ok(finish_buckets(names, &all, function))
}
