use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    metadata, Asset, AssetId, IndexRange, MetadataScope, MetadataSegment, ModelError, PolicyKind, PolicyLevel,
    PolicySet, PolicySetting, PolicyValue, SeriesId, SeriesReference, SeriesSchema,
};

/// A reference as seen from its asset: series, effective range and role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedReference {
    #[serde(rename = "seriesId")]
    pub series_id: SeriesId,
    pub range: IndexRange,
    pub role: String,
}

/// Assets, series schemas, references, metadata and policies.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    assets: BTreeMap<AssetId, Asset>,
    series: BTreeMap<SeriesId, SeriesSchema>,
    references: BTreeMap<AssetId, Vec<SeriesReference>>,
    segments: BTreeMap<SeriesId, Vec<MetadataSegment>>,
    policies: PolicySet,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_asset(&mut self, asset: Asset) -> Result<AssetId, ModelError> {
        if asset.asset_type.trim().is_empty() {
            return Err(ModelError::InvalidAsset(format!("asset {} has an empty type", asset.id)));
        }
        if let Some(existing) = self.assets.get(&asset.id) {
            if *existing == asset {
                return Ok(asset.id);
            }
            return Err(ModelError::DuplicateId(asset.id.to_string()));
        }
        let id = asset.id.clone();
        self.assets.insert(id.clone(), asset);
        Ok(id)
    }

    pub fn asset(&self, id: &AssetId) -> Result<&Asset, ModelError> {
        self.assets.get(id).ok_or_else(|| ModelError::UnknownAsset(id.clone()))
    }

    /// All assets ordered by id.
    pub fn assets(&self) -> impl Iterator<Item = &Asset> {
        self.assets.values()
    }

    pub fn define_series(&mut self, schema: SeriesSchema) -> Result<SeriesId, ModelError> {
        schema.validate()?;
        if self.series.contains_key(&schema.id) {
            return Err(ModelError::DuplicateId(schema.id.to_string()));
        }
        let id = schema.id.clone();
        self.series.insert(id.clone(), schema);
        Ok(id)
    }

    pub fn series(&self, id: &SeriesId) -> Result<&SeriesSchema, ModelError> {
        self.series.get(id).ok_or_else(|| ModelError::UnknownSeries(id.clone()))
    }

    pub fn has_series(&self, id: &SeriesId) -> bool {
        self.series.contains_key(id)
    }

    pub fn all_series(&self) -> impl Iterator<Item = &SeriesSchema> {
        self.series.values()
    }

    pub fn attach_reference(&mut self, reference: SeriesReference) -> Result<(), ModelError> {
        if !self.assets.contains_key(&reference.asset_id) {
            return Err(ModelError::UnknownAsset(reference.asset_id));
        }
        if !self.series.contains_key(&reference.series_id) {
            return Err(ModelError::UnknownSeries(reference.series_id));
        }
        if let Some(r) = &reference.subrange {
            r.validate()?;
        }
        let refs = self.references.entry(reference.asset_id.clone()).or_default();
        if !refs.contains(&reference) {
            refs.push(reference);
        }
        Ok(())
    }

    pub fn resolve_series(&self, asset: &AssetId) -> Result<Vec<ResolvedReference>, ModelError> {
        self.asset(asset)?;
        Ok(self
            .references
            .get(asset)
            .map(|refs| {
                refs.iter()
                    .map(|r| ResolvedReference {
                        series_id: r.series_id.clone(),
                        range: r.effective_range(),
                        role: r.role.clone(),
                    })
                    .collect()
            })
            .unwrap_or_default())
    }

    /// Assets and references pointing at a series.
    pub fn referrers(&self, series: &SeriesId) -> Vec<&SeriesReference> {
        self.references.values().flatten().filter(|r| &r.series_id == series).collect()
    }

    pub fn set_metadata(
        &mut self,
        series: &SeriesId,
        scope: MetadataScope,
        entries: BTreeMap<String, String>,
    ) -> Result<(), ModelError> {
        if entries.keys().any(|k| k.is_empty()) {
            return Err(ModelError::InvalidMetadataKey);
        }
        let schema = self.series.get_mut(series).ok_or_else(|| ModelError::UnknownSeries(series.clone()))?;
        match scope {
            MetadataScope::Static => {
                schema.static_metadata.extend(entries);
            }
            MetadataScope::Segment { range } => {
                range.validate()?;
                let segments = self.segments.entry(series.clone()).or_default();
                if let Some(same) = segments.iter_mut().find(|s| s.range == range) {
                    same.entries.extend(entries);
                    return Ok(());
                }
                if let Some(existing) = segments.iter().find(|s| s.range.overlaps(&range)) {
                    return Err(ModelError::OverlappingSegment { existing: existing.range, new: range });
                }
                segments.push(MetadataSegment { range, entries });
                segments.sort_by_key(|s| s.range.lower());
                debug_assert!(segments.windows(2).all(|w| !w[0].range.overlaps(&w[1].range)));
            }
        }
        Ok(())
    }

    pub fn metadata_segments(&self, series: &SeriesId) -> &[MetadataSegment] {
        self.segments.get(series).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Static entries overlaid by the segment containing `index` (segment keys shadow static keys).
    pub fn metadata_at(&self, series: &SeriesId, index: i64) -> Result<BTreeMap<String, String>, ModelError> {
        let schema = self.series(series)?;
        let segment = self.metadata_segments(series).iter().find(|s| s.range.contains(index));
        Ok(metadata::overlay(&schema.static_metadata, segment))
    }

    /// Serialized size of all stored metadata; used to check metadata is never per point.
    pub fn metadata_bytes(&self) -> usize {
        let statics: usize =
            self.series.values().map(|s| serde_json::to_vec(&s.static_metadata).map(|v| v.len()).unwrap_or(0)).sum();
        let segments = serde_json::to_vec(&self.segments).map(|v| v.len()).unwrap_or(0);
        statics + segments
    }

    pub fn set_policy(&mut self, level: PolicyLevel, value: PolicyValue) -> Result<(), ModelError> {
        if let PolicyLevel::PerType { asset_type } = &level {
            if asset_type.is_empty() {
                return Err(ModelError::InvalidPolicy("per-type policy needs a type".into()));
            }
        }
        if let PolicyValue::Rollup(rules) = &value {
            if let Some(bad) = rules.iter().find(|r| r.resolution <= 0) {
                return Err(ModelError::InvalidResolution(bad.resolution));
            }
        }
        self.policies.set(level, value);
        Ok(())
    }

    pub fn clear_policy(&mut self, level: &PolicyLevel, kind: PolicyKind) {
        self.policies.clear(level, kind);
    }

    pub fn policies(&self) -> &PolicySet {
        &self.policies
    }

    pub fn effective_policy(
        &self,
        series: &SeriesId,
        channel: &str,
        kind: PolicyKind,
    ) -> Result<PolicyValue, ModelError> {
        let schema = self.series(series)?;
        Ok(self.policies.resolve(schema, channel, kind))
    }

    pub fn snapshot(&self) -> RegistrySnapshot {
        RegistrySnapshot {
            assets: self.assets.values().cloned().collect(),
            series: self.series.values().cloned().collect(),
            references: self.references.values().flatten().cloned().collect(),
            segments: self
                .segments
                .iter()
                .flat_map(|(id, segs)| segs.iter().map(move |s| (id.clone(), s.clone())))
                .collect(),
            policies: self.policies.settings(),
        }
    }

    pub fn from_snapshot(snapshot: RegistrySnapshot) -> Result<Self, ModelError> {
        let mut r = Registry::new();
        for a in snapshot.assets {
            r.register_asset(a)?;
        }
        for s in snapshot.series {
            r.define_series(s)?;
        }
        for rf in snapshot.references {
            r.attach_reference(rf)?;
        }
        for (id, seg) in snapshot.segments {
            r.set_metadata(&id, MetadataScope::Segment { range: seg.range }, seg.entries)?;
        }
        for p in snapshot.policies {
            r.set_policy(p.level, p.value)?;
        }
        Ok(r)
    }
}

/// Serializable form of the registry.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RegistrySnapshot {
    pub assets: Vec<Asset>,
    pub series: Vec<SeriesSchema>,
    pub references: Vec<SeriesReference>,
    pub segments: Vec<(SeriesId, MetadataSegment)>,
    pub policies: Vec<PolicySetting>,
}
