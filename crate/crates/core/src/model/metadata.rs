use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::IndexRange;

/// Metadata valid only for a sub-range of a series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetadataSegment {
    pub range: IndexRange,
    pub entries: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scope", rename_all = "lowercase")]
pub enum MetadataScope {
    Static,
    Segment { range: IndexRange },
}

/// Static entries overlaid by the entries of the segment containing the index.
pub fn overlay(
    static_entries: &BTreeMap<String, String>,
    segment: Option<&MetadataSegment>,
) -> BTreeMap<String, String> {
    let mut merged = static_entries.clone();
    if let Some(seg) = segment {
        for (k, v) in &seg.entries {
            merged.insert(k.clone(), v.clone());
        }
    }
    merged
}
