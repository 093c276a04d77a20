//! One object holding the registry, store, rollups, views and federation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::connectors::{BindingSpec, ConnectorError, Federation};
use crate::model::{
    Asset, AssetId, IndexRange, MetadataScope, MetadataSegment, ModelError, PolicyKind, PolicyLevel, PolicyValue,
    Registry, RegistrySnapshot, ResolvedReference, SeriesId, SeriesReference, SeriesSchema, ViewId,
};
use crate::rollup::{execute_aggregate, PlanLevel, QueryPlan, RollupEngine, RollupError};
use crate::store::{
    AggregateFunction, Cursor, DataBatch, DataPoint, Frame, QueryResult, QuerySpec, Store, StoreError, StoreOptions,
    StoreStats,
};
use crate::views::{ProductSlice, ProductTable, ViewDefinition, ViewEngine, ViewError};

#[derive(Debug, Error)]
pub enum PlatformError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Rollup(#[from] RollupError),
    #[error(transparent)]
    View(#[from] ViewError),
    #[error(transparent)]
    Connector(#[from] ConnectorError),
    #[error("{0} not found")]
    NotFound(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{0} disabled")]
    Disabled(&'static str),
    #[error("state file: {0}")]
    State(String),
}

/// Coarse error classes, used to pick HTTP status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    NotFound,
    Invalid,
    Conflict,
    Unanswerable,
    Unavailable,
    Disabled,
    Internal,
}

fn model_class(e: &ModelError) -> ErrorClass {
    match e {
        ModelError::UnknownAsset(_) | ModelError::UnknownSeries(_) => ErrorClass::NotFound,
        ModelError::DuplicateId(_) | ModelError::OverlappingSegment { .. } => ErrorClass::Conflict,
        _ => ErrorClass::Invalid,
    }
}

fn store_class(e: &StoreError) -> ErrorClass {
    match e {
        StoreError::UnknownSeries(_) => ErrorClass::NotFound,
        StoreError::TypeMismatch { .. } | StoreError::SchemaConflict(_) => ErrorClass::Conflict,
        StoreError::Io(_) | StoreError::Corrupt(_) => ErrorClass::Internal,
        _ => ErrorClass::Invalid,
    }
}

impl PlatformError {
    pub fn class(&self) -> ErrorClass {
        match self {
            PlatformError::Model(e) => model_class(e),
            PlatformError::Store(e) => store_class(e),
            PlatformError::Rollup(e) => match e {
                RollupError::InvalidResolution(_) => ErrorClass::Invalid,
                RollupError::UnknownSeries(_) => ErrorClass::NotFound,
                RollupError::Unanswerable(_) => ErrorClass::Unanswerable,
                RollupError::Model(e) => model_class(e),
                RollupError::Store(e) => store_class(e),
            },
            PlatformError::View(e) => match e {
                ViewError::UnknownProduct(_) | ViewError::UnknownView(_) | ViewError::UnknownSeries(_) => {
                    ErrorClass::NotFound
                }
                ViewError::InvalidDefinition(_) => ErrorClass::Invalid,
                ViewError::Store(e) => store_class(e),
                ViewError::Model(e) => model_class(e),
                _ => ErrorClass::Unanswerable,
            },
            PlatformError::Connector(e) => match e {
                ConnectorError::UnknownSeries(_) | ConnectorError::NotBound(_) => ErrorClass::NotFound,
                ConnectorError::DuplicateKind(_) | ConnectorError::WriteOutsideNative { .. } => ErrorClass::Conflict,
                ConnectorError::SegmentUnavailable { .. } | ConnectorError::Source(_) => ErrorClass::Unavailable,
                ConnectorError::Store(e) => store_class(e),
                _ => ErrorClass::Invalid,
            },
            PlatformError::NotFound(_) => ErrorClass::NotFound,
            PlatformError::Invalid(_) => ErrorClass::Invalid,
            PlatformError::Disabled(_) => ErrorClass::Disabled,
            PlatformError::State(_) => ErrorClass::Internal,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlatformOptions {
    /// Where store files and the state file live; `None` keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    pub store: StoreOptions,
    pub views_enabled: bool,
    /// Relative connector paths resolve against this directory.
    pub base_dir: PathBuf,
}

impl Default for PlatformOptions {
    fn default() -> Self {
        PlatformOptions {
            data_dir: None,
            store: StoreOptions::default(),
            views_enabled: true,
            base_dir: PathBuf::from("."),
        }
    }
}

/// Everything besides data points that survives a restart.
#[derive(Debug, Default, Serialize, Deserialize)]
struct PlatformState {
    registry: RegistrySnapshot,
    #[serde(default)]
    views: Vec<ViewDefinition>,
    #[serde(default)]
    bindings: Vec<BindingSpec>,
}

const STATE_FILE: &str = "state.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    /// Points in the batch that passed validation.
    pub accepted: usize,
    /// Points written; points whose values were all on non-historized channels are dropped.
    pub stored: usize,
    /// Channels skipped because historization is off for them.
    #[serde(rename = "notHistorized")]
    pub not_historized: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QueryOutcome {
    pub result: QueryResult,
    /// Aggregation level used; `None` for federated or derived series.
    pub plan: Option<QueryPlan>,
    /// Connector calls when the series is federated.
    pub subqueries: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct MaintenanceReport {
    #[serde(rename = "bucketsWritten")]
    pub buckets_written: usize,
    #[serde(rename = "pointsDeleted")]
    pub points_deleted: usize,
    #[serde(rename = "valuesCleared")]
    pub values_cleared: usize,
    #[serde(rename = "tablesRefreshed")]
    pub tables_refreshed: usize,
    pub failures: Vec<String>,
}

/// Reference of an asset with the metadata that applies to it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssetSeries {
    #[serde(flatten)]
    pub reference: ResolvedReference,
    #[serde(rename = "staticMetadata")]
    pub static_metadata: BTreeMap<String, String>,
    /// Metadata segments overlapping the reference range.
    pub segments: Vec<MetadataSegment>,
}

pub struct Platform {
    registry: RwLock<Registry>,
    store: Arc<Store>,
    rollups: RollupEngine,
    views: ViewEngine,
    federation: Federation,
    options: PlatformOptions,
    maintenance: Mutex<()>,
}

impl Platform {
    pub fn in_memory() -> Self {
        Self::open(PlatformOptions::default()).expect("in-memory platform")
    }

    /// Open a platform, recovering store contents and configuration from `data_dir`.
    pub fn open(options: PlatformOptions) -> Result<Self, PlatformError> {
        let store = Arc::new(match &options.data_dir {
            Some(dir) => Store::open(dir.join("store"), options.store)?,
            None => Store::in_memory_with(options.store),
        });
        let state = match &options.data_dir {
            Some(dir) if dir.join(STATE_FILE).exists() => {
                let text =
                    std::fs::read_to_string(dir.join(STATE_FILE)).map_err(|e| PlatformError::State(e.to_string()))?;
                serde_json::from_str(&text).map_err(|e| PlatformError::State(e.to_string()))?
            }
            _ => PlatformState::default(),
        };
        let registry = Registry::from_snapshot(state.registry)?;
        for s in registry.all_series() {
            store.create_series(s)?;
        }
        let platform = Platform {
            registry: RwLock::new(registry),
            federation: Federation::new(store.clone(), options.base_dir.clone()),
            store,
            rollups: RollupEngine::new(),
            views: ViewEngine::new(),
            options,
            maintenance: Mutex::new(()),
        };
        for b in state.bindings {
            platform.federation.bind(b)?;
        }
        if platform.options.views_enabled {
            for v in state.views {
                platform.views.define_view(&platform.store, v)?;
            }
        }
        Ok(platform)
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn federation(&self) -> &Federation {
        &self.federation
    }

    pub fn views_enabled(&self) -> bool {
        self.options.views_enabled
    }

    /// A copy of the registry as it is now.
    pub fn registry(&self) -> Registry {
        self.registry.read().clone()
    }

    fn persist(&self) -> Result<(), PlatformError> {
        let Some(dir) = &self.options.data_dir else { return Ok(()) };
        let state = PlatformState {
            registry: self.registry.read().snapshot(),
            views: self.views.definitions(),
            bindings: self.federation.bindings(),
        };
        let text = serde_json::to_string_pretty(&state).map_err(|e| PlatformError::State(e.to_string()))?;
        let tmp = dir.join(format!("{STATE_FILE}.tmp"));
        let write = || -> std::io::Result<()> {
            std::fs::create_dir_all(dir)?;
            std::fs::write(&tmp, text)?;
            std::fs::rename(&tmp, dir.join(STATE_FILE))
        };
        write().map_err(|e| PlatformError::State(e.to_string()))
    }

    // registry

    pub fn register_asset(&self, asset: Asset) -> Result<AssetId, PlatformError> {
        let id = self.registry.write().register_asset(asset)?;
        self.persist()?;
        Ok(id)
    }

    pub fn assets(&self) -> Vec<Asset> {
        self.registry.read().assets().cloned().collect()
    }

    pub fn asset(&self, id: &AssetId) -> Result<Asset, PlatformError> {
        Ok(self.registry.read().asset(id)?.clone())
    }

    /// Define a series. Re-defining one with an identical structure is a no-op.
    pub fn define_series(&self, schema: SeriesSchema) -> Result<SeriesId, PlatformError> {
        {
            let mut reg = self.registry.write();
            if let Ok(existing) = reg.series(&schema.id) {
                if existing.same_structure(&schema) {
                    return Ok(schema.id);
                }
                return Err(ModelError::DuplicateId(schema.id.to_string()).into());
            }
            self.store.create_series(&schema)?;
            reg.define_series(schema.clone())?;
        }
        self.persist()?;
        Ok(schema.id)
    }

    pub fn series_schemas(&self) -> Vec<SeriesSchema> {
        self.registry.read().all_series().cloned().collect()
    }

    /// Schema of a registered series, or of a store-only series such as a rollup target.
    pub fn schema(&self, id: &SeriesId) -> Result<SeriesSchema, PlatformError> {
        if let Ok(s) = self.registry.read().series(id) {
            return Ok(s.clone());
        }
        Ok((*self.store.schema(id)?).clone())
    }

    pub fn attach_reference(&self, reference: SeriesReference) -> Result<(), PlatformError> {
        self.registry.write().attach_reference(reference)?;
        self.persist()
    }

    pub fn resolve_series(&self, asset: &AssetId) -> Result<Vec<ResolvedReference>, PlatformError> {
        Ok(self.registry.read().resolve_series(asset)?)
    }

    pub fn asset_series(&self, asset: &AssetId) -> Result<Vec<AssetSeries>, PlatformError> {
        let reg = self.registry.read();
        let refs = reg.resolve_series(asset)?;
        refs.into_iter()
            .map(|r| {
                let schema = reg.series(&r.series_id)?;
                let segments = reg
                    .metadata_segments(&r.series_id)
                    .iter()
                    .filter(|s| s.range.overlaps(&r.range))
                    .cloned()
                    .collect();
                Ok(AssetSeries { static_metadata: schema.static_metadata.clone(), segments, reference: r })
            })
            .collect()
    }

    pub fn set_metadata(
        &self,
        series: &SeriesId,
        scope: MetadataScope,
        entries: BTreeMap<String, String>,
    ) -> Result<(), PlatformError> {
        self.registry.write().set_metadata(series, scope, entries)?;
        self.persist()
    }

    pub fn metadata_at(&self, series: &SeriesId, index: i64) -> Result<BTreeMap<String, String>, PlatformError> {
        Ok(self.registry.read().metadata_at(series, index)?)
    }

    pub fn metadata_bytes(&self) -> usize {
        self.registry.read().metadata_bytes()
    }

    pub fn set_policy(&self, level: PolicyLevel, value: PolicyValue) -> Result<(), PlatformError> {
        if let PolicyLevel::PerAttribute { series, channel } = &level {
            let reg = self.registry.read();
            let schema = reg.series(series)?;
            if schema.channel(channel).is_none() {
                return Err(StoreError::UnknownChannel(channel.clone()).into());
            }
        }
        self.registry.write().set_policy(level, value)?;
        self.persist()
    }

    pub fn clear_policy(&self, level: &PolicyLevel, kind: PolicyKind) -> Result<(), PlatformError> {
        self.registry.write().clear_policy(level, kind);
        self.persist()
    }

    pub fn effective_policy(
        &self,
        series: &SeriesId,
        channel: &str,
        kind: PolicyKind,
    ) -> Result<PolicyValue, PlatformError> {
        Ok(self.registry.read().effective_policy(series, channel, kind)?)
    }

    // data

    /// Validate and store a batch, keeping only channels whose historization is on.
    pub fn ingest(&self, batch: &DataBatch) -> Result<IngestReport, PlatformError> {
        let id = &batch.series_id;
        let keep: Vec<bool> = {
            let reg = self.registry.read();
            let schema = reg.series(id)?;
            batch
                .channels
                .iter()
                .map(|c| reg.policies().resolve(schema, c, PolicyKind::Historization).as_historization() == Some(true))
                .collect()
        };
        self.store.validate_batch(batch)?;
        self.federation.check_write(id, batch.points.iter().map(|p| p.index))?;
        let not_historized: Vec<String> =
            batch.channels.iter().zip(&keep).filter(|(_, k)| !**k).map(|(c, _)| c.clone()).collect();
        let stored = if not_historized.is_empty() {
            self.store.append(batch)?
        } else {
            let channels: Vec<String> =
                batch.channels.iter().zip(&keep).filter(|(_, k)| **k).map(|(c, _)| c.clone()).collect();
            let points: Vec<DataPoint> = batch
                .points
                .iter()
                .filter_map(|p| {
                    let values: Vec<_> =
                        p.values.iter().zip(&keep).filter(|(_, k)| **k).map(|(v, _)| v.clone()).collect();
                    values.iter().any(Option::is_some).then(|| DataPoint::new(p.index, values))
                })
                .collect();
            if points.is_empty() {
                0
            } else {
                self.store.append(&DataBatch::new(id.clone(), channels, points))?
            }
        };
        Ok(IngestReport { accepted: batch.points.len(), stored, not_historized })
    }

    pub fn query(&self, series: &SeriesId, spec: &QuerySpec) -> Result<QueryOutcome, PlatformError> {
        spec.validate()?;
        if self.federation.is_bound(series) {
            let r = self.federation.query(series, spec)?;
            return Ok(QueryOutcome { result: r.result, plan: None, subqueries: r.subqueries });
        }
        let registered = self.registry.read().has_series(series);
        if !registered {
            return Ok(QueryOutcome { result: self.store.query(series, spec)?, ..Default::default() });
        }
        let reg = self.registry();
        let channels = spec.channels.as_deref();
        let (resolution, function) = match spec.aggregation {
            Some(a) => (Some(a.resolution), a.function),
            None => (None, AggregateFunction::Count),
        };
        let plan = self.rollups.plan_query(&reg, &self.store, series, spec.range, resolution, function, channels)?;
        let result = match (plan.level, spec.aggregation) {
            (PlanLevel::Rollup(_), Some(agg)) => {
                let range = spec.resume_range()?;
                let mut frame = if range.is_empty() {
                    Frame::new(Store::positions(reg.series(series)?, channels)?.0)
                } else {
                    execute_aggregate(&self.store, series, range, agg.resolution, agg.function, channels, &plan)?
                };
                let mut next_cursor = None;
                if let Some(l) = spec.page.as_ref().map(|p| p.limit) {
                    if frame.points.len() > l {
                        frame.points.truncate(l);
                        next_cursor = frame.points.last().map(|p| Cursor::after(p.index));
                    }
                }
                QueryResult { frame, next_cursor }
            }
            _ => self.store.query(series, spec)?,
        };
        Ok(QueryOutcome { result, plan: Some(plan), subqueries: 0 })
    }

    /// Query through an asset's reference; the range is clamped to the reference subrange.
    pub fn query_asset(
        &self,
        asset: &AssetId,
        role: Option<&str>,
        spec: &QuerySpec,
    ) -> Result<(ResolvedReference, QueryOutcome), PlatformError> {
        let refs = self.resolve_series(asset)?;
        let mut matching: Vec<_> = refs.into_iter().filter(|r| role.is_none_or(|x| r.role == x)).collect();
        let reference = match matching.len() {
            0 => {
                return Err(PlatformError::NotFound(format!("reference of {asset} with role {}", role.unwrap_or("*"))))
            }
            1 => matching.remove(0),
            _ => return Err(PlatformError::Invalid(format!("asset {asset} has several references; pass a role"))),
        };
        let mut clamped = spec.clone();
        clamped.range = spec.range.intersect(&reference.range);
        if clamped.range.is_empty() {
            let schema = self.schema(&reference.series_id)?;
            let (names, _) = Store::positions(&schema, spec.channels.as_deref())?;
            let empty = QueryResult { frame: Frame::new(names), next_cursor: None };
            return Ok((reference, QueryOutcome { result: empty, ..Default::default() }));
        }
        let out = self.query(&reference.series_id, &clamped)?;
        Ok((reference, out))
    }

    pub fn delete_range(&self, series: &SeriesId, range: IndexRange) -> Result<usize, PlatformError> {
        Ok(self.store.delete_range(series, range)?)
    }

    pub fn stats(&self) -> StoreStats {
        self.store.stats()
    }

    // views

    fn require_views(&self) -> Result<(), PlatformError> {
        if self.options.views_enabled {
            Ok(())
        } else {
            Err(PlatformError::Disabled("views"))
        }
    }

    pub fn define_view(&self, def: ViewDefinition) -> Result<ViewId, PlatformError> {
        self.require_views()?;
        let id = self.views.define_view(&self.store, def)?;
        self.persist()?;
        Ok(id)
    }

    pub fn views(&self) -> Result<Vec<ViewDefinition>, PlatformError> {
        self.require_views()?;
        Ok(self.views.definitions())
    }

    pub fn view(&self, id: &ViewId) -> Result<ViewDefinition, PlatformError> {
        self.require_views()?;
        Ok(self.views.definition(id)?)
    }

    pub fn view_products(&self, id: &ViewId) -> Result<Vec<ProductSlice>, PlatformError> {
        self.require_views()?;
        Ok(self.views.products(&self.store, id)?)
    }

    pub fn query_view(&self, id: &ViewId, product: &AssetId) -> Result<ProductTable, PlatformError> {
        self.require_views()?;
        Ok(self.views.query_view(&self.store, id, product)?)
    }

    /// Product table plus whether it was read from a stored materialization.
    pub fn query_view_sourced(&self, id: &ViewId, product: &AssetId) -> Result<(ProductTable, bool), PlatformError> {
        self.require_views()?;
        Ok(self.views.query_view_sourced(&self.store, id, product)?)
    }

    /// Product table computed from source data, bypassing any stored table.
    pub fn compute_view(&self, id: &ViewId, product: &AssetId) -> Result<ProductTable, PlatformError> {
        self.require_views()?;
        let def = self.views.definition(id)?;
        Ok(crate::views::reindex_to_position(&def, &self.store, product)?)
    }

    pub fn refresh_view(&self, id: &ViewId) -> Result<usize, PlatformError> {
        self.require_views()?;
        Ok(self.views.refresh_materialized(&self.store, id)?)
    }

    // federation

    pub fn bind_segments(&self, binding: BindingSpec) -> Result<(), PlatformError> {
        if !self.registry.read().has_series(&binding.series) {
            return Err(ModelError::UnknownSeries(binding.series).into());
        }
        self.federation.bind(binding)?;
        self.persist()
    }

    pub fn bindings(&self) -> Vec<BindingSpec> {
        self.federation.bindings()
    }

    // maintenance

    /// Rollup, then retention, then refresh of materialized views. Runs are serialized.
    pub fn run_maintenance(&self, now: i64) -> MaintenanceReport {
        let _guard = self.maintenance.lock();
        let reg = self.registry();
        let rollup = self.rollups.run_rollup(&reg, &self.store, now);
        let retention = self.rollups.run_retention(&reg, &self.store, now);
        let mut report = MaintenanceReport {
            buckets_written: rollup.buckets_written,
            points_deleted: retention.points_deleted,
            values_cleared: retention.values_cleared,
            ..Default::default()
        };
        report.failures.extend(rollup.failures.iter().map(|(s, e)| format!("rollup {s}: {e}")));
        report.failures.extend(retention.failures.iter().map(|(s, e)| format!("retention {s}: {e}")));
        if self.options.views_enabled {
            for (id, r) in self.views.refresh_all(&self.store) {
                match r {
                    Ok(n) => report.tables_refreshed += n,
                    Err(e) => report.failures.push(format!("view {id}: {e}")),
                }
            }
        }
        report
    }

    /// Fold append logs into segment files.
    pub fn checkpoint(&self) -> Result<(), PlatformError> {
        Ok(self.store.checkpoint()?)
    }

    pub fn data_dir(&self) -> Option<&Path> {
        self.options.data_dir.as_deref()
    }
}
