use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use super::{ModelError, SeriesId, SeriesSchema};
use crate::store::AggregateFunction;

pub const NANOS_PER_SECOND: i64 = 1_000_000_000;

/// Where a policy setting applies. More specific levels win.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "level", rename_all = "lowercase")]
pub enum PolicyLevel {
    Global,
    #[serde(rename = "type")]
    PerType {
        #[serde(rename = "assetType", alias = "asset_type")]
        asset_type: String,
    },
    #[serde(rename = "attribute")]
    PerAttribute {
        series: SeriesId,
        channel: String,
    },
}

impl PolicyLevel {
    pub fn per_type(t: impl Into<String>) -> Self {
        PolicyLevel::PerType { asset_type: t.into() }
    }

    pub fn per_attribute(series: SeriesId, channel: impl Into<String>) -> Self {
        PolicyLevel::PerAttribute { series, channel: channel.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Historization,
    Rollup,
    Retention,
}

/// How long data is kept, measured against the series' time index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Retention {
    #[default]
    Forever,
    /// Keep points whose index is at least `now - nanos`.
    After(i64),
}

impl Retention {
    pub fn days(days: i64) -> Self {
        Retention::After(days * 86_400 * NANOS_PER_SECOND)
    }

    pub fn seconds(s: i64) -> Self {
        Retention::After(s * NANOS_PER_SECOND)
    }

    /// Points with index below the returned cutoff are expired.
    pub fn cutoff(self, now: i64) -> Option<i64> {
        match self {
            Retention::Forever => None,
            Retention::After(n) => Some(now.saturating_sub(n)),
        }
    }
}

// Wire form: the string "forever" or an integer number of seconds.
impl Serialize for Retention {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Retention::Forever => s.serialize_str("forever"),
            Retention::After(n) => s.serialize_i64(n / NANOS_PER_SECOND),
        }
    }
}

impl<'de> Deserialize<'de> for Retention {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Wire {
            Word(String),
            Seconds(i64),
        }
        match Wire::deserialize(d)? {
            Wire::Word(w) if w == "forever" => Ok(Retention::Forever),
            Wire::Word(w) => Err(de::Error::custom(format!("expected \"forever\" or seconds, got {w:?}"))),
            Wire::Seconds(s) if s > 0 => Ok(Retention::seconds(s)),
            Wire::Seconds(s) => Err(de::Error::custom(format!("retention must be positive, got {s}"))),
        }
    }
}

/// Automated aggregation of a series into a coarser, derived series.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RollupRuleWire", into = "RollupRuleWire")]
pub struct RollupRule {
    /// Bucket width in nanoseconds.
    pub resolution: i64,
    pub functions: BTreeSet<AggregateFunction>,
    pub retention: Retention,
}

#[derive(Serialize, Deserialize)]
struct RollupRuleWire {
    resolution_s: i64,
    functions: BTreeSet<AggregateFunction>,
    #[serde(default)]
    retention: Retention,
}

impl TryFrom<RollupRuleWire> for RollupRule {
    type Error = ModelError;
    fn try_from(w: RollupRuleWire) -> Result<Self, ModelError> {
        RollupRule::new(w.resolution_s.saturating_mul(NANOS_PER_SECOND), w.functions, w.retention)
    }
}

impl From<RollupRule> for RollupRuleWire {
    fn from(r: RollupRule) -> Self {
        RollupRuleWire { resolution_s: r.resolution / NANOS_PER_SECOND, functions: r.functions, retention: r.retention }
    }
}

impl RollupRule {
    pub fn new(
        resolution: i64,
        functions: impl IntoIterator<Item = AggregateFunction>,
        retention: Retention,
    ) -> Result<Self, ModelError> {
        if resolution <= 0 {
            return Err(ModelError::InvalidResolution(resolution));
        }
        let functions: BTreeSet<_> = functions.into_iter().collect();
        if functions.is_empty() {
            return Err(ModelError::InvalidPolicy("rollup rule needs at least one function".into()));
        }
        Ok(RollupRule { resolution, functions, retention })
    }

    /// Identifier of the derived series holding this level for `source`.
    pub fn target_series(&self, source: &SeriesId) -> SeriesId {
        rollup_series_id(source, self.resolution)
    }
}

pub fn rollup_series_id(source: &SeriesId, resolution: i64) -> SeriesId {
    let label = if resolution % NANOS_PER_SECOND == 0 {
        format!("{}s", resolution / NANOS_PER_SECOND)
    } else {
        format!("{resolution}ns")
    };
    SeriesId::new(format!("{source}.rollup-{label}")).expect("non-empty id")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum PolicyValue {
    Historization(bool),
    Rollup(Vec<RollupRule>),
    Retention(Retention),
}

impl PolicyValue {
    pub fn kind(&self) -> PolicyKind {
        match self {
            PolicyValue::Historization(_) => PolicyKind::Historization,
            PolicyValue::Rollup(_) => PolicyKind::Rollup,
            PolicyValue::Retention(_) => PolicyKind::Retention,
        }
    }

    pub fn default_for(kind: PolicyKind) -> Self {
        match kind {
            PolicyKind::Historization => PolicyValue::Historization(false),
            PolicyKind::Rollup => PolicyValue::Rollup(Vec::new()),
            PolicyKind::Retention => PolicyValue::Retention(Retention::Forever),
        }
    }

    pub fn as_historization(&self) -> Option<bool> {
        match self {
            PolicyValue::Historization(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_rollup(&self) -> Option<&[RollupRule]> {
        match self {
            PolicyValue::Rollup(r) => Some(r),
            _ => None,
        }
    }

    pub fn as_retention(&self) -> Option<Retention> {
        match self {
            PolicyValue::Retention(r) => Some(*r),
            _ => None,
        }
    }
}

impl fmt::Display for PolicyValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyValue::Historization(b) => write!(f, "historization={}", if *b { "on" } else { "off" }),
            PolicyValue::Rollup(r) => write!(f, "rollup({} rules)", r.len()),
            PolicyValue::Retention(Retention::Forever) => write!(f, "retention=forever"),
            PolicyValue::Retention(Retention::After(n)) => write!(f, "retention={}s", n / NANOS_PER_SECOND),
        }
    }
}

/// One policy assignment as accepted by the admin API and the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySetting {
    #[serde(flatten)]
    pub level: PolicyLevel,
    #[serde(flatten)]
    pub value: PolicyValue,
}

/// Three-level policy table for historization, rollup and retention.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PolicySet {
    entries: HashMap<(PolicyLevel, PolicyKind), PolicyValue>,
}

impl PolicySet {
    pub fn set(&mut self, level: PolicyLevel, value: PolicyValue) {
        self.entries.insert((level, value.kind()), value);
    }

    pub fn clear(&mut self, level: &PolicyLevel, kind: PolicyKind) -> Option<PolicyValue> {
        self.entries.remove(&(level.clone(), kind))
    }

    pub fn get(&self, level: &PolicyLevel, kind: PolicyKind) -> Option<&PolicyValue> {
        self.entries.get(&(level.clone(), kind))
    }

    /// Resolve PerAttribute > PerType > Global > built-in default.
    pub fn resolve(&self, schema: &SeriesSchema, channel: &str, kind: PolicyKind) -> PolicyValue {
        let attribute = PolicyLevel::per_attribute(schema.id.clone(), channel);
        if let Some(v) = self.get(&attribute, kind) {
            return v.clone();
        }
        if let Some(t) = &schema.entity_type {
            if let Some(v) = self.get(&PolicyLevel::per_type(t.clone()), kind) {
                return v.clone();
            }
        }
        if let Some(v) = self.get(&PolicyLevel::Global, kind) {
            return v.clone();
        }
        PolicyValue::default_for(kind)
    }

    pub fn settings(&self) -> Vec<PolicySetting> {
        let mut out: Vec<_> = self
            .entries
            .iter()
            .map(|((level, _), value)| PolicySetting { level: level.clone(), value: value.clone() })
            .collect();
        out.sort_by_key(|s| serde_json::to_string(s).unwrap_or_default());
        out
    }

    /// All series for which any per-attribute entry exists.
    pub fn attribute_series(&self) -> BTreeSet<SeriesId> {
        self.entries
            .keys()
            .filter_map(|(l, _)| match l {
                PolicyLevel::PerAttribute { series, .. } => Some(series.clone()),
                _ => None,
            })
            .collect()
    }
}
