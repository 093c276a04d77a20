//! Query-string parsing for the data endpoints.

use std::collections::BTreeMap;

use caster_core::connectors::csv::parse_index;
use caster_core::model::IndexRange;
use caster_core::store::{AggregateFunction, Aggregation, Cursor};
use serde_json::{json, Value};

use crate::wire::DOCUMENT_LIMIT;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Stream,
    Document,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataQuery {
    pub range: IndexRange,
    pub channels: Option<Vec<String>>,
    pub limit: Option<usize>,
    pub cursor: Option<Cursor>,
    pub aggregation: Option<Aggregation>,
    pub format: Format,
    pub role: Option<String>,
    /// Parsed parameters as echoed in the stream header.
    pub echo: Value,
}

const DATA_KEYS: [&str; 8] = ["from", "to", "channels", "limit", "cursor", "agg", "resolution", "format"];

/// Integer (native index units) or a number with a unit suffix: `ns`, `us`, `ms`, `s`, `m`, `h`, `d`, `w`.
pub fn parse_duration(text: &str) -> Result<i64, String> {
    let t = text.trim();
    let split = t.find(|c: char| !c.is_ascii_digit() && c != '-').unwrap_or(t.len());
    let (num, unit) = t.split_at(split);
    let n: i64 = num.parse().map_err(|_| format!("bad duration {text:?}"))?;
    let scale: i64 = match unit {
        "" | "ns" => 1,
        "us" => 1_000,
        "ms" => 1_000_000,
        "s" => 1_000_000_000,
        "m" | "min" => 60_000_000_000,
        "h" => 3_600_000_000_000,
        "d" => 86_400_000_000_000,
        "w" => 604_800_000_000_000,
        _ => return Err(format!("bad duration unit {unit:?} in {text:?}")),
    };
    n.checked_mul(scale).ok_or_else(|| format!("duration {text:?} overflows"))
}

fn bound(params: &BTreeMap<String, String>, key: &str) -> Result<Option<i64>, String> {
    params
        .get(key)
        .map(|v| {
            parse_index(v).ok_or_else(|| format!("{key}: expected an integer index or RFC 3339 timestamp, got {v:?}"))
        })
        .transpose()
}

/// Parse `pairs`; with `with_role` the asset-path `role` parameter is accepted too.
pub fn parse_data_query(pairs: &[(String, String)], with_role: bool) -> Result<DataQuery, String> {
    let mut params = BTreeMap::new();
    for (k, v) in pairs {
        if !DATA_KEYS.contains(&k.as_str()) && !(with_role && k == "role") {
            return Err(format!("unknown parameter {k:?}"));
        }
        if params.insert(k.clone(), v.clone()).is_some() {
            return Err(format!("parameter {k:?} given twice"));
        }
    }
    let from = bound(&params, "from")?;
    let to = bound(&params, "to")?;
    if let (Some(f), Some(t)) = (from, to) {
        if f >= t {
            return Err(format!("from ({f}) must be less than to ({t})"));
        }
    }
    let range = IndexRange { start: from, end: to };
    let channels = match params.get("channels") {
        None => None,
        Some(c) => {
            let names: Vec<String> = c.split(',').map(|s| s.trim().to_string()).collect();
            if names.iter().any(String::is_empty) {
                return Err(format!("channels: empty name in {c:?}"));
            }
            Some(names)
        }
    };
    let format = match params.get("format").map(String::as_str) {
        None | Some("stream") => Format::Stream,
        Some("document") => Format::Document,
        Some(f) => return Err(format!("format must be stream or document, got {f:?}")),
    };
    let limit = match params.get("limit") {
        None => None,
        Some(l) => match l.parse::<usize>() {
            Ok(n) if n >= 1 => Some(n),
            _ => return Err(format!("limit must be a positive integer, got {l:?}")),
        },
    };
    if format == Format::Document && limit.is_some_and(|l| l > DOCUMENT_LIMIT) {
        return Err(format!("limit must not exceed {DOCUMENT_LIMIT} in document format"));
    }
    let cursor = params.get("cursor").map(|c| Cursor::from_raw(c.clone()));
    let aggregation = match (params.get("agg"), params.get("resolution")) {
        (None, None) => None,
        (None, Some(_)) => return Err("resolution requires agg".into()),
        (Some(_), None) => return Err("agg requires resolution".into()),
        (Some(a), Some(r)) => {
            let function: AggregateFunction = a.parse().map_err(|e| format!("agg: {e}"))?;
            let resolution = parse_duration(r).map_err(|e| format!("resolution: {e}"))?;
            if resolution <= 0 {
                return Err(format!("resolution must be positive, got {r:?}"));
            }
            Some(Aggregation { function, resolution })
        }
    };
    let echo = json!({
        "from": from,
        "to": to,
        "channels": channels,
        "limit": limit,
        "cursor": params.get("cursor"),
        "agg": aggregation.map(|a| a.function.name()),
        "resolution": aggregation.map(|a| a.resolution),
        "format": if format == Format::Stream { "stream" } else { "document" },
        "role": params.get("role"),
    });
    Ok(DataQuery { range, channels, limit, cursor, aggregation, format, role: params.get("role").cloned(), echo })
}
