//! Rollup generation, retention and aggregation-level planning.
//!
//! A rollup level of a source series lives in its own derived series
//! (`<source>.rollup-<secs>s`). For each source channel `c` the target carries the
//! columns `c.sum`, `c.count`, `c.min`, `c.max`, `c.first` and `c.last` (numeric
//! channels) or `c.count`, `c.first`, `c.last` (others). Only the statistics the
//! configured functions need are filled. Buckets are epoch-aligned and written only
//! once they are fully closed.

mod plan;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use parking_lot::Mutex;
use serde::Serialize;
use thiserror::Error;

use crate::exec;
use crate::model::{
    rollup_series_id, Channel, IndexKind, IndexRange, ModelError, PolicyKind, PolicyLevel, PolicySet, PolicyValue,
    Registry, Retention, RollupRule, Scalar, SeriesId, SeriesKind, SeriesSchema,
};
use crate::store::{bucket_start, buckets_of, DataBatch, DataPoint, Stat, Store, StoreError};

pub use plan::{execute_aggregate, PlanLevel, QueryPlan};

#[derive(Debug, Error)]
pub enum RollupError {
    #[error("invalid resolution {0}")]
    InvalidResolution(i64),
    #[error("unknown series {0}")]
    UnknownSeries(SeriesId),
    #[error("unanswerable: {0}")]
    Unanswerable(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// One rolled-up source channel at a given resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelChannel {
    pub position: usize,
    pub stats: BTreeSet<Stat>,
    pub retention: Retention,
}

/// Everything configured at one resolution for one source series.
#[derive(Debug, Clone, PartialEq)]
pub struct Level {
    pub resolution: i64,
    pub target: SeriesId,
    pub channels: Vec<LevelChannel>,
}

impl Level {
    pub fn channel(&self, position: usize) -> Option<&LevelChannel> {
        self.channels.iter().find(|c| c.position == position)
    }
}

fn keeps_longer(a: Retention, b: Retention) -> Retention {
    match (a, b) {
        (Retention::Forever, _) | (_, Retention::Forever) => Retention::Forever,
        (Retention::After(x), Retention::After(y)) => Retention::After(x.max(y)),
    }
}

/// Whether rollup and retention policies apply to this series at all.
pub fn maintained(schema: &SeriesSchema) -> bool {
    schema.index_kind == IndexKind::Time && schema.series_kind != SeriesKind::Derived
}

/// Rollup levels in effect for `schema`, ascending by resolution.
pub fn effective_levels(policies: &PolicySet, schema: &SeriesSchema) -> Vec<Level> {
    if !maintained(schema) {
        return Vec::new();
    }
    let mut by_res: BTreeMap<i64, BTreeMap<usize, LevelChannel>> = BTreeMap::new();
    for (pos, ch) in schema.channels.iter().enumerate() {
        let PolicyValue::Rollup(rules) = policies.resolve(schema, &ch.name, PolicyKind::Rollup) else {
            continue;
        };
        for rule in rules {
            let stats: BTreeSet<Stat> = rule
                .functions
                .iter()
                .flat_map(|f| f.required_stats().iter().copied())
                .filter(|s| s.applies_to(ch.value_type))
                .collect();
            let entry = by_res.entry(rule.resolution).or_default().entry(pos).or_insert_with(|| LevelChannel {
                position: pos,
                stats: BTreeSet::new(),
                retention: rule.retention,
            });
            entry.stats.extend(stats);
            entry.retention = keeps_longer(entry.retention, rule.retention);
        }
    }
    by_res
        .into_iter()
        .map(|(resolution, chans)| Level {
            resolution,
            target: rollup_series_id(&schema.id, resolution),
            channels: chans.into_values().collect(),
        })
        .collect()
}

pub fn stat_channel(source_channel: &str, stat: Stat) -> String {
    format!("{source_channel}.{}", stat.name())
}

/// Schema of the derived series holding one rollup level of `source`.
pub fn target_schema(source: &SeriesSchema, resolution: i64) -> SeriesSchema {
    let mut channels = Vec::new();
    for c in &source.channels {
        for stat in Stat::ALL {
            if stat.applies_to(c.value_type) {
                let unit = if stat == Stat::Count { String::new() } else { c.unit.clone() };
                channels.push(Channel::new(stat_channel(&c.name, stat), unit, stat.value_type(c.value_type)));
            }
        }
    }
    let mut schema =
        SeriesSchema::new(rollup_series_id(&source.id, resolution), channels, IndexKind::Time, SeriesKind::Derived);
    schema.static_metadata.insert("rollup.source".into(), source.id.to_string());
    schema.static_metadata.insert("rollup.resolution_ns".into(), resolution.to_string());
    schema
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LevelState {
    /// Buckets starting below this have been computed.
    rolled_until: i64,
    /// Source version the computation saw.
    version: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RollupReport {
    pub buckets_written: usize,
    pub failures: Vec<(SeriesId, String)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RetentionReport {
    /// Whole points removed (raw and rollup levels).
    pub points_deleted: usize,
    /// Individual channel values cleared where channel retentions differ.
    pub values_cleared: usize,
    pub failures: Vec<(SeriesId, String)>,
}

/// Tracks what has been rolled up. Aggregates themselves live in the store.
#[derive(Default)]
pub struct RollupEngine {
    state: Mutex<HashMap<(SeriesId, i64), LevelState>>,
}

/// Add or replace the rule for `rule.resolution` at `level`.
pub fn define_rollup(registry: &mut Registry, level: PolicyLevel, rule: RollupRule) -> Result<(), RollupError> {
    if rule.resolution <= 0 {
        return Err(RollupError::InvalidResolution(rule.resolution));
    }
    let mut rules = registry
        .policies()
        .get(&level, PolicyKind::Rollup)
        .and_then(|v| v.as_rollup().map(|r| r.to_vec()))
        .unwrap_or_default();
    rules.retain(|r| r.resolution != rule.resolution);
    rules.push(rule);
    rules.sort_by_key(|r| r.resolution);
    registry.set_policy(level, PolicyValue::Rollup(rules))?;
    Ok(())
}

fn ceil_to(index: i64, resolution: i64) -> i64 {
    let b = bucket_start(index, resolution);
    if b == index {
        b
    } else {
        b.saturating_add(resolution)
    }
}

impl RollupEngine {
    pub fn new() -> Self {
        Self::default()
    }

    /// Compute every closed, not yet materialized bucket of every effective rule.
    pub fn run_rollup(&self, registry: &Registry, store: &Store, now: i64) -> RollupReport {
        let work: Vec<(SeriesSchema, Vec<Level>)> = registry
            .all_series()
            .filter_map(|s| {
                let levels = effective_levels(registry.policies(), s);
                (!levels.is_empty()).then(|| (s.clone(), levels))
            })
            .collect();
        let results = exec::map(&work, |(schema, levels)| {
            let mut written = 0;
            for level in levels {
                written += self.roll_level(store, schema, level, now)?;
            }
            Ok::<_, RollupError>(written)
        });
        let mut report = RollupReport::default();
        for ((schema, _), r) in work.iter().zip(results) {
            match r {
                Ok(n) => report.buckets_written += n,
                Err(e) => report.failures.push((schema.id.clone(), e.to_string())),
            }
        }
        report
    }

    fn roll_level(&self, store: &Store, source: &SeriesSchema, level: &Level, now: i64) -> Result<usize, RollupError> {
        let res = level.resolution;
        if !store.contains(&source.id) {
            return Ok(0);
        }
        let tschema = target_schema(source, res);
        store.create_series(&tschema)?;
        let key = (source.id.clone(), res);
        let snap = store.snapshot(&source.id)?;
        let closed_end = bucket_start(now, res);
        let prev = self.state.lock().get(&key).copied();

        let dirty = match prev {
            // First run in this process: reconcile everything readable.
            None => snap.first_index().map(|f| (bucket_start(f, res), closed_end)),
            Some(st) => {
                let mut span = (st.rolled_until < closed_end).then_some((st.rolled_until, closed_end));
                if let Some((lo, hi)) = store.changes_since(&source.id, st.version)? {
                    let c = (bucket_start(lo, res), bucket_start(hi, res).saturating_add(res).min(closed_end));
                    span = Some(match span {
                        None => c,
                        Some((a, b)) => (a.min(c.0), b.max(c.1)),
                    });
                }
                span
            }
        };

        let mut written = 0;
        if let Some((mut lo, hi)) = dirty {
            // Buckets that lost raw data, or were purged from the level, are never recomputed.
            if let Some(w) = snap.watermark {
                lo = lo.max(ceil_to(w, res));
            }
            if let Some(w) = store.watermark(&tschema.id)? {
                lo = lo.max(ceil_to(w, res));
            }
            if lo < hi {
                written = self.reconcile(store, &snap, &tschema, level, IndexRange::new(lo, hi)?)?;
            }
        }
        let mut state = self.state.lock();
        let entry = state.entry(key).or_insert(LevelState { rolled_until: closed_end, version: snap.version });
        entry.rolled_until = entry.rolled_until.max(closed_end);
        entry.version = snap.version;
        Ok(written)
    }

    /// Recompute buckets in `range` and write only those that differ from what is stored.
    fn reconcile(
        &self,
        store: &Store,
        snap: &crate::store::SeriesSnapshot,
        tschema: &SeriesSchema,
        level: &Level,
        range: IndexRange,
    ) -> Result<usize, RollupError> {
        let positions: Vec<usize> = level.channels.iter().map(|c| c.position).collect();
        let buckets = buckets_of(snap, range, level.resolution, &positions);
        let tnames = tschema.channel_names();
        let mut slots: Vec<(usize, usize, Stat)> = Vec::new();
        for (k, lc) in level.channels.iter().enumerate() {
            let name = &snap.schema.channels[lc.position].name;
            for &stat in &lc.stats {
                let tpos = tschema.channel_position(&stat_channel(name, stat)).expect("target has every stat column");
                slots.push((k, tpos, stat));
            }
        }
        let expected: Vec<DataPoint> = buckets
            .iter()
            .filter_map(|b| {
                let mut values: Vec<Option<Scalar>> = vec![None; tnames.len()];
                for &(k, tpos, stat) in &slots {
                    values[tpos] = b.accs[k].stat(stat);
                }
                values.iter().any(Option::is_some).then(|| DataPoint::new(b.start, values))
            })
            .collect();
        let tsnap = store.snapshot(&tschema.id)?;
        let all: Vec<usize> = (0..tnames.len()).collect();
        let existing: Vec<DataPoint> = tsnap.points(range, &all).collect();

        let mut to_write = Vec::new();
        let mut to_delete = Vec::new();
        let (mut i, mut j) = (0, 0);
        while i < expected.len() || j < existing.len() {
            match (expected.get(i), existing.get(j)) {
                (Some(e), Some(x)) if e.index == x.index => {
                    if !e.bit_eq(x) {
                        to_write.push(e.clone());
                    }
                    i += 1;
                    j += 1;
                }
                (Some(e), Some(x)) if e.index < x.index => {
                    to_write.push(e.clone());
                    i += 1;
                }
                (Some(e), None) => {
                    to_write.push(e.clone());
                    i += 1;
                }
                (_, Some(x)) => {
                    to_delete.push(x.index);
                    j += 1;
                }
                (None, None) => break,
            }
        }
        let n = to_write.len() + to_delete.len();
        for idx in to_delete {
            store.delete_range(&tschema.id, IndexRange::new(idx, idx + 1)?)?;
        }
        if !to_write.is_empty() {
            store.append(&DataBatch::new(tschema.id.clone(), tnames, to_write))?;
        }
        Ok(n)
    }

    /// Range of bucket starts a level can answer for, given what has been computed and
    /// what has changed in the source since.
    pub fn coverage(&self, store: &Store, source: &SeriesId, level: &Level) -> Result<Option<IndexRange>, RollupError> {
        let Some(st) = self.state.lock().get(&(source.clone(), level.resolution)).copied() else {
            return Ok(None);
        };
        let mut hi = st.rolled_until;
        if let Some((lo, _)) = store.changes_since(source, st.version)? {
            hi = hi.min(bucket_start(lo, level.resolution));
        }
        let mut lo = i64::MIN;
        if store.contains(&level.target) {
            if let Some(w) = store.watermark(&level.target)? {
                lo = ceil_to(w, level.resolution);
            }
            let tschema = store.schema(&level.target)?;
            let sschema = store.schema(source)?;
            for lc in &level.channels {
                let name = &sschema.channels[lc.position].name;
                for &stat in &lc.stats {
                    if let Some(w) = store.channel_watermark(&tschema.id, &stat_channel(name, stat))? {
                        lo = lo.max(ceil_to(w, level.resolution));
                    }
                }
            }
        } else {
            return Ok(None);
        }
        Ok((lo < hi).then(|| IndexRange { start: (lo != i64::MIN).then_some(lo), end: Some(hi) }))
    }

    /// Apply raw retention per channel, then each level's own retention.
    pub fn run_retention(&self, registry: &Registry, store: &Store, now: i64) -> RetentionReport {
        let work: Vec<SeriesSchema> = registry.all_series().filter(|s| maintained(s)).cloned().collect();
        let results = exec::map(&work, |schema| -> Result<(usize, usize), RollupError> {
            if !store.contains(&schema.id) {
                return Ok((0, 0));
            }
            let policies = registry.policies();
            let raw: Vec<(String, Option<i64>)> = schema
                .channels
                .iter()
                .map(|c| {
                    let r = policies.resolve(schema, &c.name, PolicyKind::Retention).as_retention().unwrap_or_default();
                    (c.name.clone(), r.cutoff(now))
                })
                .collect();
            let mut totals = apply_cutoffs(store, &schema.id, &raw)?;
            for level in effective_levels(policies, schema) {
                if !store.contains(&level.target) {
                    continue;
                }
                let ruled: HashMap<&str, Option<i64>> = level
                    .channels
                    .iter()
                    .map(|lc| (schema.channels[lc.position].name.as_str(), lc.retention.cutoff(now)))
                    .collect();
                // Columns of unruled channels stay empty; let them follow the shortest kept range.
                let fallback =
                    if ruled.values().all(Option::is_some) { ruled.values().flatten().min().copied() } else { None };
                let tschema = store.schema(&level.target)?;
                let mut cutoffs = Vec::new();
                for c in &schema.channels {
                    let cut = ruled.get(c.name.as_str()).copied().unwrap_or(fallback);
                    for stat in Stat::ALL {
                        let name = stat_channel(&c.name, stat);
                        if tschema.channel_position(&name).is_some() {
                            cutoffs.push((name, cut));
                        }
                    }
                }
                let (d, c) = apply_cutoffs(store, &level.target, &cutoffs)?;
                totals.0 += d;
                totals.1 += c;
            }
            Ok(totals)
        });
        let mut report = RetentionReport::default();
        for (schema, r) in work.iter().zip(results) {
            match r {
                Ok((d, c)) => {
                    report.points_deleted += d;
                    report.values_cleared += c;
                }
                Err(e) => report.failures.push((schema.id.clone(), e.to_string())),
            }
        }
        report
    }

    /// Plan an aggregate (or raw, when `resolution` is absent) query.
    pub fn plan_query(
        &self,
        registry: &Registry,
        store: &Store,
        source: &SeriesId,
        range: IndexRange,
        resolution: Option<i64>,
        function: crate::store::AggregateFunction,
        channels: Option<&[String]>,
    ) -> Result<QueryPlan, RollupError> {
        plan::plan_query(self, registry, store, source, range, resolution, function, channels)
    }
}

/// Delete whole rows below the cutoff shared by every channel, clear the rest per channel.
/// Returns (points deleted, values cleared).
fn apply_cutoffs(
    store: &Store,
    id: &SeriesId,
    cutoffs: &[(String, Option<i64>)],
) -> Result<(usize, usize), RollupError> {
    let mut deleted = 0;
    let mut cleared = 0;
    let common =
        if cutoffs.iter().all(|(_, c)| c.is_some()) { cutoffs.iter().filter_map(|(_, c)| *c).min() } else { None };
    if let Some(m) = common {
        deleted += store.delete_range(id, IndexRange::until(m))?;
        store.raise_watermark(id, m)?;
    }
    for (name, cut) in cutoffs {
        let Some(cut) = *cut else { continue };
        if common.is_some_and(|m| cut <= m) {
            continue;
        }
        let range = IndexRange { start: common, end: Some(cut) };
        let (c, removed) = store.clear_channel(id, name, range)?;
        cleared += c;
        deleted += removed;
        store.raise_channel_watermark(id, name, cut)?;
    }
    Ok((deleted, cleared))
}
