//! Re-indexing of time-indexed casting data onto product positions.
//!
//! A sensor mounted `d` mm below the mould sees, at time `t`, the strand material that
//! passed the mould when the cast length was `L(t) - d`. Cut events delimit products in
//! that material coordinate. Each product becomes a table sampled every `step` mm.

mod length;
mod reindex;

use std::collections::BTreeMap;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec;
use crate::model::{
    AssetId, Channel, IndexKind, IndexRange, ModelError, Scalar, SeriesId, SeriesKind, SeriesSchema, ValueType, ViewId,
};
use crate::store::{DataBatch, DataPoint, SeriesSnapshot, Store, StoreError};

pub use length::{cumulative_length, invert_length, length_at, LengthPoint};
pub use reindex::{
    build_table, grid_len, inside, map_readings, resample, slice_products, validate_cuts, Cell, ChannelBounds,
    Coverage, CutEvent, MappedReading, ProductRow, ProductSlice, ProductTable, Resampled, TableBounds,
};

#[derive(Debug, Error)]
pub enum ViewError {
    #[error("negative casting speed at t={t}")]
    NegativeSpeed { t: i64 },
    #[error("input not strictly ascending at position {position}")]
    UnsortedInput { position: usize },
    #[error("cast length decreases at t={t}")]
    DecreasingLength { t: i64 },
    #[error("outside cast-length coverage")]
    OutOfCoverage,
    #[error("cut events {0} and {1} overlap")]
    OverlappingCuts(String, String),
    #[error("cut event for {0} has non-positive length")]
    InvalidCut(String),
    #[error("unknown product {0}")]
    UnknownProduct(AssetId),
    #[error("no readings for offset channel {0}")]
    MissingOffset(String),
    #[error("unknown view {0}")]
    UnknownView(ViewId),
    #[error("unknown series {0}")]
    UnknownSeries(SeriesId),
    #[error("invalid view definition: {0}")]
    InvalidDefinition(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorOffset {
    pub channel: String,
    /// Distance below the mould along the strand, mm.
    #[serde(rename = "offsetMm", alias = "offset_mm", alias = "offset")]
    pub offset: i64,
}

impl SensorOffset {
    pub fn new(channel: impl Into<String>, offset: i64) -> Self {
        SensorOffset { channel: channel.into(), offset }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CutSource {
    Static(Vec<CutEvent>),
    /// Time-indexed series with channels `product_id` (text), `start_mm` and `end_mm` (int).
    Series(SeriesId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum IndexMode {
    #[default]
    Position,
    AuxiliaryTimestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Materialization {
    #[default]
    OnDemand,
    Materialized,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewDefinition {
    pub id: ViewId,
    #[serde(rename = "sourceSeries", alias = "source_series")]
    pub source: SeriesId,
    /// Casting speed channel in m/min, integrated into cast length.
    #[serde(rename = "speedChannel", alias = "speed_channel", default, skip_serializing_if = "Option::is_none")]
    pub speed_channel: Option<String>,
    /// Alternatively, a channel already holding cast length in mm.
    #[serde(rename = "lengthChannel", alias = "length_channel", default, skip_serializing_if = "Option::is_none")]
    pub length_channel: Option<String>,
    pub offsets: Vec<SensorOffset>,
    #[serde(rename = "cutSource", alias = "cut_source")]
    pub cut_source: CutSource,
    #[serde(rename = "resampleStep", alias = "step_mm")]
    pub step: i64,
    #[serde(rename = "indexMode", alias = "index_mode", default)]
    pub index_mode: IndexMode,
    #[serde(default)]
    pub materialization: Materialization,
}

pub const CUT_PRODUCT: &str = "product_id";
pub const CUT_START: &str = "start_mm";
pub const CUT_END: &str = "end_mm";

/// Schema expected of a cut-event series.
pub fn cut_series_schema(id: SeriesId) -> SeriesSchema {
    SeriesSchema::new(
        id,
        vec![
            Channel::new(CUT_PRODUCT, "", ValueType::Text),
            Channel::new(CUT_START, "mm", ValueType::Int64),
            Channel::new(CUT_END, "mm", ValueType::Int64),
        ],
        IndexKind::Time,
        SeriesKind::Schedule,
    )
}

fn invalid(msg: impl Into<String>) -> ViewError {
    ViewError::InvalidDefinition(msg.into())
}

fn numeric(schema: &SeriesSchema, name: &str, what: &str) -> Result<(), ViewError> {
    match schema.channel(name) {
        None => Err(invalid(format!("{what} channel {name} not in {}", schema.id))),
        Some(c) if !c.value_type.is_numeric() => Err(invalid(format!("{what} channel {name} is not numeric"))),
        Some(_) => Ok(()),
    }
}

impl ViewDefinition {
    /// Check the definition against the current store contents.
    pub fn validate(&self, store: &Store) -> Result<(), ViewError> {
        if self.step <= 0 {
            return Err(invalid(format!("resampleStep must be positive, got {}", self.step)));
        }
        let schema = store.schema(&self.source).map_err(|_| ViewError::UnknownSeries(self.source.clone()))?;
        if schema.index_kind != IndexKind::Time {
            return Err(invalid("source series must be time-indexed"));
        }
        match (&self.speed_channel, &self.length_channel) {
            (Some(s), None) => numeric(&schema, s, "speed")?,
            (None, Some(l)) => numeric(&schema, l, "length")?,
            _ => return Err(invalid("exactly one of speedChannel and lengthChannel is required")),
        }
        if self.offsets.is_empty() {
            return Err(invalid("at least one sensor offset is required"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for o in &self.offsets {
            if o.offset < 0 {
                return Err(invalid(format!("offset of {} is negative", o.channel)));
            }
            if !seen.insert(&o.channel) {
                return Err(invalid(format!("channel {} listed twice", o.channel)));
            }
            numeric(&schema, &o.channel, "offset")?;
        }
        match &self.cut_source {
            CutSource::Static(cuts) => {
                validate_cuts(cuts)?;
            }
            CutSource::Series(id) => {
                let cs = store.schema(id).map_err(|_| ViewError::UnknownSeries(id.clone()))?;
                let want = cut_series_schema(id.clone());
                for c in &want.channels {
                    if cs.channel(&c.name).map(|x| x.value_type) != Some(c.value_type) {
                        return Err(invalid(format!("cut series {id} needs {} ({})", c.name, c.value_type)));
                    }
                }
            }
        }
        Ok(())
    }

    /// Derived series holding the materialized table of `product`.
    pub fn table_series(&self, product: &AssetId) -> SeriesId {
        SeriesId::new(format!("{}.{}", self.id, product)).expect("non-empty id")
    }

    pub fn table_schema(&self, product: &AssetId) -> SeriesSchema {
        let mut channels = vec![Channel::new("aux_time", "ns", ValueType::Int64)];
        for o in &self.offsets {
            channels.push(Channel::float(o.channel.clone(), ""));
            channels.push(Channel::new(format!("{}.t", o.channel), "ns", ValueType::Int64));
        }
        let mut schema =
            SeriesSchema::new(self.table_series(product), channels, IndexKind::Length, SeriesKind::Derived);
        schema.static_metadata.insert("view".into(), self.id.to_string());
        schema.static_metadata.insert("product".into(), product.to_string());
        schema
    }
}

/// Source data loaded once and shared by all products of a view.
pub struct Prepared {
    pub lengths: Vec<LengthPoint>,
    pub channels: Vec<(String, Vec<MappedReading>)>,
    pub cuts: Vec<CutEvent>,
    pub version: u64,
}

fn numeric_column(snap: &SeriesSnapshot, pos: usize) -> Vec<(i64, f64)> {
    snap.points(IndexRange::UNBOUNDED, &[pos])
        .filter_map(|p| p.values[0].as_ref().and_then(Scalar::as_f64).map(|v| (p.index, v)))
        .collect()
}

pub fn read_cuts(store: &Store, source: &CutSource) -> Result<Vec<CutEvent>, ViewError> {
    match source {
        CutSource::Static(c) => validate_cuts(c),
        CutSource::Series(id) => {
            let snap = store.snapshot(id)?;
            let pos: Vec<usize> = [CUT_PRODUCT, CUT_START, CUT_END]
                .iter()
                .map(|c| snap.schema.channel_position(c).ok_or_else(|| invalid(format!("cut series lacks {c}"))))
                .collect::<Result<_, _>>()?;
            // A product cut again later supersedes the earlier record.
            let mut latest: BTreeMap<AssetId, CutEvent> = BTreeMap::new();
            for p in snap.points(IndexRange::UNBOUNDED, &pos) {
                if let [Some(Scalar::Text(id)), Some(Scalar::Int(s)), Some(Scalar::Int(e))] = p.values.as_slice() {
                    if let Ok(id) = AssetId::new(id.clone()) {
                        latest.insert(id.clone(), CutEvent::new(id, *s, *e));
                    }
                }
            }
            validate_cuts(&latest.into_values().collect::<Vec<_>>())
        }
    }
}

impl Prepared {
    pub fn load(def: &ViewDefinition, store: &Store) -> Result<Prepared, ViewError> {
        let snap = store.snapshot(&def.source)?;
        let pos = |name: &str| snap.schema.channel_position(name).ok_or_else(|| ViewError::MissingOffset(name.into()));
        let lengths = match (&def.speed_channel, &def.length_channel) {
            (Some(s), _) => cumulative_length(&numeric_column(&snap, pos(s)?), 0)?,
            (None, Some(l)) => {
                let raw = numeric_column(&snap, pos(l)?);
                let mut out = Vec::with_capacity(raw.len());
                for (t, v) in raw {
                    let length = v.round() as i64;
                    if out.last().is_some_and(|p: &LengthPoint| p.length > length) {
                        return Err(ViewError::DecreasingLength { t });
                    }
                    out.push(LengthPoint { t, length });
                }
                out
            }
            (None, None) => return Err(invalid("no speed or length channel")),
        };
        let mut channels = Vec::with_capacity(def.offsets.len());
        for o in &def.offsets {
            let readings = numeric_column(&snap, pos(&o.channel)?);
            channels.push((o.channel.clone(), map_readings(&lengths, &readings, o.offset)));
        }
        let cuts = read_cuts(store, &def.cut_source)?;
        Ok(Prepared { lengths, channels, cuts, version: snap.version })
    }

    pub fn cut(&self, product: &AssetId) -> Result<&CutEvent, ViewError> {
        self.cuts.iter().find(|c| &c.product_id == product).ok_or_else(|| ViewError::UnknownProduct(product.clone()))
    }

    pub fn table(&self, def: &ViewDefinition, cut: &CutEvent) -> Result<(ProductTable, TableBounds), ViewError> {
        build_table(&self.lengths, &self.channels, cut, def.step, def.index_mode)
    }

    /// Timestamps of the readings of `channel` that fall inside `product`.
    pub fn product_readings(&self, channel: &str, product: &AssetId) -> Result<Vec<i64>, ViewError> {
        let cut = self.cut(product)?;
        let (_, pts) =
            self.channels.iter().find(|(c, _)| c == channel).ok_or_else(|| ViewError::MissingOffset(channel.into()))?;
        Ok(pts[inside(pts, cut.start, cut.end)].iter().map(|p| p.t).collect())
    }

    pub fn slices(&self) -> Result<Vec<ProductSlice>, ViewError> {
        slice_products(&self.lengths, &self.cuts)
    }
}

/// Convenience wrapper: load, then re-index one product.
pub fn reindex_to_position(def: &ViewDefinition, store: &Store, product: &AssetId) -> Result<ProductTable, ViewError> {
    let prepared = Prepared::load(def, store)?;
    let cut = prepared.cut(product)?.clone();
    Ok(prepared.table(def, &cut)?.0)
}

fn encode_rows(table: &ProductTable) -> Vec<DataPoint> {
    table
        .rows
        .iter()
        .filter(|r| r.aux_time.is_some() || r.cells.iter().any(Option::is_some))
        .map(|r| {
            let mut values = vec![r.aux_time.map(Scalar::Int)];
            for c in &r.cells {
                values.push(c.map(|c| Scalar::Float(c.value)));
                values.push(c.map(|c| Scalar::Int(c.source_time)));
            }
            DataPoint::new(r.position, values)
        })
        .collect()
}

fn decode_table(def: &ViewDefinition, cut: &CutEvent, snap: &SeriesSnapshot) -> ProductTable {
    let all: Vec<usize> = (0..snap.schema.channels.len()).collect();
    let stored: BTreeMap<i64, DataPoint> = snap.points(IndexRange::UNBOUNDED, &all).map(|p| (p.index, p)).collect();
    let n = grid_len(cut.length(), def.step);
    let mut rows = Vec::with_capacity(n);
    for k in 0..n {
        let position = k as i64 * def.step;
        let (aux_time, cells) = match stored.get(&position) {
            Some(p) => {
                let aux = match p.values[0] {
                    Some(Scalar::Int(t)) => Some(t),
                    _ => None,
                };
                let cells = (0..def.offsets.len())
                    .map(|i| match (&p.values[1 + 2 * i], &p.values[2 + 2 * i]) {
                        (Some(Scalar::Float(value)), Some(Scalar::Int(t))) => {
                            Some(Cell { value: *value, source_time: *t })
                        }
                        _ => None,
                    })
                    .collect();
                (aux, cells)
            }
            None => (None, vec![None; def.offsets.len()]),
        };
        if def.index_mode == IndexMode::AuxiliaryTimestamp && aux_time.is_none() {
            continue;
        }
        rows.push(ProductRow { position, aux_time, cells });
    }
    ProductTable {
        product_id: cut.product_id.clone(),
        index_mode: def.index_mode,
        step: def.step,
        start_length: cut.start,
        product_length: cut.length(),
        channels: def.offsets.iter().map(|o| o.channel.clone()).collect(),
        rows,
    }
}

#[derive(Debug, Clone, PartialEq)]
struct TableState {
    cut: CutEvent,
    /// Source version the table was computed from.
    version: u64,
    bounds: TableBounds,
    stored: bool,
}

struct ViewEntry {
    def: ViewDefinition,
    tables: Mutex<BTreeMap<AssetId, TableState>>,
}

/// Registered views and the bookkeeping for their materialized tables.
#[derive(Default)]
pub struct ViewEngine {
    views: RwLock<BTreeMap<ViewId, Arc<ViewEntry>>>,
}

impl ViewEngine {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register (or replace) a view. Materialized views are computed right away.
    pub fn define_view(&self, store: &Store, def: ViewDefinition) -> Result<ViewId, ViewError> {
        def.validate(store)?;
        let id = def.id.clone();
        if let Some(old) = self.views.write().remove(&id) {
            let tables = old.tables.lock();
            for (product, st) in tables.iter() {
                if st.stored {
                    let _ = store.delete_range(&old.def.table_series(product), IndexRange::UNBOUNDED);
                }
            }
        }
        let materialized = def.materialization == Materialization::Materialized;
        self.views.write().insert(id.clone(), Arc::new(ViewEntry { def, tables: Mutex::new(BTreeMap::new()) }));
        if materialized {
            self.refresh_materialized(store, &id)?;
        }
        Ok(id)
    }

    pub fn remove_view(&self, id: &ViewId) -> bool {
        self.views.write().remove(id).is_some()
    }

    pub fn definitions(&self) -> Vec<ViewDefinition> {
        self.views.read().values().map(|e| e.def.clone()).collect()
    }

    pub fn definition(&self, id: &ViewId) -> Result<ViewDefinition, ViewError> {
        Ok(self.entry(id)?.def.clone())
    }

    fn entry(&self, id: &ViewId) -> Result<Arc<ViewEntry>, ViewError> {
        self.views.read().get(id).cloned().ok_or_else(|| ViewError::UnknownView(id.clone()))
    }

    /// Products known to a view with their coverage.
    pub fn products(&self, store: &Store, id: &ViewId) -> Result<Vec<ProductSlice>, ViewError> {
        Prepared::load(&self.entry(id)?.def, store)?.slices()
    }

    /// Materialized views reading their cuts from `series`.
    pub fn views_cut_by(&self, series: &SeriesId) -> Vec<ViewId> {
        self.views
            .read()
            .values()
            .filter(|e| e.def.materialization == Materialization::Materialized)
            .filter(|e| matches!(&e.def.cut_source, CutSource::Series(s) if s == series))
            .map(|e| e.def.id.clone())
            .collect()
    }

    pub fn query_view(&self, store: &Store, id: &ViewId, product: &AssetId) -> Result<ProductTable, ViewError> {
        self.query_view_sourced(store, id, product).map(|(t, _)| t)
    }

    /// Like [`ViewEngine::query_view`]; the flag tells whether the table came from storage.
    pub fn query_view_sourced(
        &self,
        store: &Store,
        id: &ViewId,
        product: &AssetId,
    ) -> Result<(ProductTable, bool), ViewError> {
        let entry = self.entry(id)?;
        let def = &entry.def;
        if def.materialization == Materialization::Materialized {
            let tables = entry.tables.lock();
            if let Some(st) = tables.get(product).filter(|s| s.stored) {
                let snap = store.snapshot(&def.table_series(product))?;
                return Ok((decode_table(def, &st.cut, &snap), true));
            }
        }
        Ok((reindex_to_position(def, store, product)?, false))
    }

    /// Recompute stale tables of a materialized view. Returns the number recomputed.
    pub fn refresh_materialized(&self, store: &Store, id: &ViewId) -> Result<usize, ViewError> {
        let entry = self.entry(id)?;
        let def = &entry.def;
        if def.materialization != Materialization::Materialized {
            return Err(invalid(format!("view {id} is not materialized")));
        }
        let mut tables = entry.tables.lock();
        let prepared = Prepared::load(def, store)?;

        let gone: Vec<AssetId> =
            tables.keys().filter(|p| prepared.cuts.iter().all(|c| &c.product_id != *p)).cloned().collect();
        for p in gone {
            if tables.remove(&p).is_some_and(|st| st.stored) {
                store.delete_range(&def.table_series(&p), IndexRange::UNBOUNDED)?;
            }
        }

        let length_channel: Vec<&str> =
            def.speed_channel.iter().chain(&def.length_channel).map(String::as_str).collect();
        let mut stale = Vec::new();
        for cut in &prepared.cuts {
            let fresh = match tables.get(&cut.product_id) {
                None => false,
                Some(st) if st.cut != *cut => false,
                Some(st) => {
                    // cast length at t depends on every speed sample up to t
                    let length_hit = store
                        .channel_changes_since(&def.source, st.version, &length_channel)?
                        .is_some_and(|(lo, _)| st.bounds.horizon.is_none_or(|h| lo <= h));
                    let mut sensor_hit = false;
                    for (o, b) in def.offsets.iter().zip(&st.bounds.channels) {
                        sensor_hit |= store
                            .channel_changes_since(&def.source, st.version, &[o.channel.as_str()])?
                            .is_some_and(|(lo, hi)| b.affected_by(lo, hi));
                    }
                    !length_hit && !sensor_hit
                }
            };
            if !fresh {
                stale.push(cut.clone());
            }
        }

        let computed = exec::map(&stale, |cut| prepared.table(def, cut));
        let mut n = 0;
        for (cut, result) in stale.into_iter().zip(computed) {
            let sid = def.table_series(&cut.product_id);
            let previously_stored = tables.get(&cut.product_id).is_some_and(|s| s.stored);
            let (bounds, stored) = match result {
                Ok((table, bounds)) => {
                    store.create_series(&def.table_schema(&cut.product_id))?;
                    store.delete_range(&sid, IndexRange::UNBOUNDED)?;
                    let rows = encode_rows(&table);
                    if !rows.is_empty() {
                        let names = store.schema(&sid)?.channel_names();
                        store.append(&DataBatch::new(sid, names, rows))?;
                    }
                    (bounds, true)
                }
                Err(ViewError::OutOfCoverage) => {
                    if previously_stored {
                        store.delete_range(&sid, IndexRange::UNBOUNDED)?;
                    }
                    let unbounded =
                        TableBounds { channels: vec![ChannelBounds::default(); def.offsets.len()], horizon: None };
                    (unbounded, false)
                }
                Err(e) => return Err(e),
            };
            tables.insert(cut.product_id.clone(), TableState { cut, version: prepared.version, bounds, stored });
            n += 1;
        }
        Ok(n)
    }

    /// Refresh every materialized view; views are processed in parallel.
    pub fn refresh_all(&self, store: &Store) -> Vec<(ViewId, Result<usize, ViewError>)> {
        let ids: Vec<ViewId> = self
            .views
            .read()
            .values()
            .filter(|e| e.def.materialization == Materialization::Materialized)
            .map(|e| e.def.id.clone())
            .collect();
        let results = exec::map(&ids, |id| self.refresh_materialized(store, id));
        ids.into_iter().zip(results).collect()
    }

    /// Number of stored tables of a view.
    pub fn stored_tables(&self, id: &ViewId) -> Result<usize, ViewError> {
        Ok(self.entry(id)?.tables.lock().values().filter(|s| s.stored).count())
    }
}
