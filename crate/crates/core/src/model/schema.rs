use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AssetId, IndexRange, ModelError, Scalar, SeriesId, ValueType};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Asset {
    pub id: AssetId,
    #[serde(rename = "type")]
    pub asset_type: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, Scalar>,
}

impl Asset {
    pub fn new(id: AssetId, asset_type: impl Into<String>) -> Self {
        Asset { id, asset_type: asset_type.into(), attributes: BTreeMap::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub name: String,
    #[serde(default)]
    pub unit: String,
    #[serde(rename = "valueType", alias = "value_type", default = "default_value_type")]
    pub value_type: ValueType,
    #[serde(default)]
    pub description: String,
}

fn default_value_type() -> ValueType {
    ValueType::Float64
}

impl Channel {
    pub fn new(name: impl Into<String>, unit: impl Into<String>, value_type: ValueType) -> Self {
        Channel { name: name.into(), unit: unit.into(), value_type, description: String::new() }
    }

    pub fn float(name: impl Into<String>, unit: impl Into<String>) -> Self {
        Self::new(name, unit, ValueType::Float64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexKind {
    /// Integer nanoseconds since the Unix epoch.
    Time,
    /// Integer millimetres along a product or strand.
    Length,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeriesKind {
    Historical,
    Forecast,
    Schedule,
    Derived,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSchema {
    pub id: SeriesId,
    pub channels: Vec<Channel>,
    #[serde(rename = "indexKind", alias = "index_kind")]
    pub index_kind: IndexKind,
    #[serde(rename = "seriesKind", alias = "series_kind")]
    pub series_kind: SeriesKind,
    /// Entity type used for per-type policy resolution (e.g. "machine").
    #[serde(rename = "entityType", alias = "entity_type", default, skip_serializing_if = "Option::is_none")]
    pub entity_type: Option<String>,
    #[serde(rename = "staticMetadata", alias = "static_metadata", default)]
    pub static_metadata: BTreeMap<String, String>,
}

impl SeriesSchema {
    pub fn new(id: SeriesId, channels: Vec<Channel>, index_kind: IndexKind, series_kind: SeriesKind) -> Self {
        SeriesSchema { id, channels, index_kind, series_kind, entity_type: None, static_metadata: BTreeMap::new() }
    }

    pub fn with_entity_type(mut self, entity_type: impl Into<String>) -> Self {
        self.entity_type = Some(entity_type.into());
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.channels.is_empty() {
            return Err(ModelError::EmptyChannelList);
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.channels {
            if c.name.is_empty() {
                return Err(ModelError::InvalidChannel("channel name must not be empty".into()));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(ModelError::DuplicateChannelName(c.name.clone()));
            }
        }
        if let Some(t) = &self.entity_type {
            if t.is_empty() {
                return Err(ModelError::InvalidChannel("entity type must not be empty".into()));
            }
        }
        Ok(())
    }

    pub fn channel_position(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c.name == name)
    }

    pub fn channel(&self, name: &str) -> Option<&Channel> {
        self.channels.iter().find(|c| c.name == name)
    }

    pub fn channel_names(&self) -> Vec<String> {
        self.channels.iter().map(|c| c.name.clone()).collect()
    }

    /// Identical apart from static metadata, which stays mutable after creation.
    pub fn same_structure(&self, other: &SeriesSchema) -> bool {
        self.id == other.id
            && self.channels == other.channels
            && self.index_kind == other.index_kind
            && self.series_kind == other.series_kind
            && self.entity_type == other.entity_type
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesReference {
    #[serde(rename = "assetId", alias = "asset_id")]
    pub asset_id: AssetId,
    #[serde(rename = "seriesId", alias = "series_id")]
    pub series_id: SeriesId,
    #[serde(default)]
    pub subrange: Option<IndexRange>,
    #[serde(default)]
    pub role: String,
}

impl SeriesReference {
    pub fn effective_range(&self) -> IndexRange {
        self.subrange.unwrap_or(IndexRange::UNBOUNDED)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn casting(channels: &[&str]) -> SeriesSchema {
        SeriesSchema::new(
            SeriesId::new("S").unwrap(),
            channels.iter().map(|c| Channel::float(*c, "")).collect(),
            IndexKind::Time,
            SeriesKind::Historical,
        )
    }

    #[test]
    fn schema_validation() {
        assert!(casting(&["v_c", "T_l", "T_s", "Q_w"]).validate().is_ok());
        assert_eq!(casting(&[]).validate(), Err(ModelError::EmptyChannelList));
        assert_eq!(casting(&["a", "a"]).validate(), Err(ModelError::DuplicateChannelName("a".into())));
    }

    #[test]
    fn schema_json_shape() {
        let json = r#"{"id":"S","channels":[{"name":"v_c","unit":"m/min","valueType":"float64"}],
                       "indexKind":"length","seriesKind":"derived"}"#;
        let s: SeriesSchema = serde_json::from_str(json).unwrap();
        assert_eq!(s.index_kind, IndexKind::Length);
        assert_eq!(s.series_kind, SeriesKind::Derived);
        assert!(s.static_metadata.is_empty());
    }
}
