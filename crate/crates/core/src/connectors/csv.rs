//! CSV timeseries files.
//!
//! Header `index,<channel>,...`. The index is an integer nanosecond timestamp or an
//! RFC 3339 / ISO-8601 UTC timestamp. Empty cells are nulls. Rows must be strictly
//! ascending; anything unparseable is an error.

use std::fs::File;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use chrono::DateTime;

use super::{Capabilities, Connector, ConnectorError};
use crate::model::{IndexRange, Scalar, SeriesSchema, ValueType};
use crate::store::{DataPoint, Frame};

pub fn parse_index(text: &str) -> Option<i64> {
    let text = text.trim();
    if let Ok(v) = text.parse::<i64>() {
        return Some(v);
    }
    DateTime::parse_from_rfc3339(text).ok()?.timestamp_nanos_opt()
}

/// Write points as CSV with integer-nanosecond indices. Floats use the shortest
/// representation that parses back to the same bits.
pub fn write_csv<W: Write>(out: W, channels: &[String], points: &[DataPoint]) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["index".to_string()];
    header.extend(channels.iter().cloned());
    w.write_record(&header)?;
    let mut record: Vec<String> = Vec::with_capacity(header.len());
    for p in points {
        record.clear();
        record.push(p.index.to_string());
        record.extend(p.values.iter().map(|v| v.as_ref().map(|s| s.to_string()).unwrap_or_default()));
        w.write_record(&record)?;
    }
    w.flush()
}

/// Parsed header: channel names and their types.
#[derive(Debug, Clone)]
pub struct CsvLayout {
    pub channels: Vec<String>,
    pub types: Vec<ValueType>,
}

fn layout(headers: &csv::StringRecord, schema: &SeriesSchema) -> Result<CsvLayout, String> {
    let mut it = headers.iter();
    match it.next() {
        Some(h) if h.trim() == "index" => {}
        other => return Err(format!("first column must be `index`, found {:?}", other.unwrap_or(""))),
    }
    let mut channels = Vec::new();
    let mut types = Vec::new();
    for name in it {
        let name = name.trim();
        let ch = schema.channel(name).ok_or_else(|| format!("column {name} is not a channel of {}", schema.id))?;
        if channels.iter().any(|c| c == name) {
            return Err(format!("column {name} repeated"));
        }
        channels.push(name.to_string());
        types.push(ch.value_type);
    }
    Ok(CsvLayout { channels, types })
}

/// Scan a CSV stream, calling `visit` for every row (in file order) after validation.
pub fn scan<R: Read>(
    input: R,
    schema: &SeriesSchema,
    mut visit: impl FnMut(i64, Vec<Option<Scalar>>) -> bool,
) -> Result<CsvLayout, String> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(input);
    let headers = reader.headers().map_err(|e| e.to_string())?.clone();
    let layout = layout(&headers, schema)?;
    let mut prev: Option<i64> = None;
    for (n, rec) in reader.records().enumerate() {
        let line = n + 2;
        let rec = rec.map_err(|e| format!("line {line}: {e}"))?;
        let index = parse_index(&rec[0]).ok_or_else(|| format!("line {line}: bad index {:?}", &rec[0]))?;
        if prev.is_some_and(|p| p >= index) {
            return Err(format!("line {line}: index {index} not ascending"));
        }
        prev = Some(index);
        let mut values = Vec::with_capacity(layout.channels.len());
        for (i, ty) in layout.types.iter().enumerate() {
            let cell = &rec[i + 1];
            if cell.is_empty() {
                values.push(None);
            } else {
                let v = Scalar::parse_text(cell, *ty)
                    .ok_or_else(|| format!("line {line}: {cell:?} is not a {ty} for {}", layout.channels[i]))?;
                values.push(Some(v));
            }
        }
        if !visit(index, values) {
            break;
        }
    }
    Ok(layout)
}

/// Read a whole CSV file into a frame with the file's column order.
pub fn read_csv(path: &Path, schema: &SeriesSchema) -> Result<Frame, String> {
    let file = File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut points = Vec::new();
    let layout = scan(file, schema, |index, values| {
        if values.iter().any(Option::is_some) {
            points.push(DataPoint::new(index, values));
        }
        true
    })?;
    Ok(Frame { channels: layout.channels, points })
}

/// Serves a CSV file as a range-queryable segment. The file is validated once when the
/// connector is created and rescanned on every query; nothing is cached or copied.
pub struct CsvConnector {
    path: PathBuf,
    schema: SeriesSchema,
}

impl CsvConnector {
    pub fn open(path: PathBuf, schema: SeriesSchema) -> Result<Self, ConnectorError> {
        let fail = |reason: String| ConnectorError::InitFailure { kind: "csv-file".into(), reason };
        let file = File::open(&path).map_err(|e| fail(format!("{}: {e}", path.display())))?;
        scan(file, &schema, |_, _| true).map_err(fail)?;
        Ok(CsvConnector { path, schema })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Connector for CsvConnector {
    fn kind(&self) -> &str {
        "csv-file"
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { aggregation: false, paging: false }
    }

    fn range_query(&self, range: IndexRange, channels: &[String]) -> Result<Frame, ConnectorError> {
        let src = |reason: String| ConnectorError::Source(reason);
        let file = File::open(&self.path).map_err(|e| src(format!("{}: {e}", self.path.display())))?;
        let mut rows: Vec<(i64, Vec<Option<Scalar>>)> = Vec::new();
        let hi = range.upper();
        let layout = scan(file, &self.schema, |index, values| {
            if index >= hi {
                return false;
            }
            if range.contains(index) {
                rows.push((index, values));
            }
            true
        })
        .map_err(src)?;
        // Rows with no value at all cannot exist in a store and are skipped; rows whose
        // projected channels are all null are kept, as a projected store query does.
        let map: Vec<Option<usize>> = channels.iter().map(|c| layout.channels.iter().position(|x| x == c)).collect();
        let points = rows
            .into_iter()
            .filter(|(_, values)| values.iter().any(Option::is_some))
            .map(|(index, values)| {
                DataPoint::new(index, map.iter().map(|m| m.and_then(|i| values[i].clone())).collect())
            })
            .collect();
        Ok(Frame { channels: channels.to_vec(), points })
    }
}
