//! Records exchanged over HTTP.
//!
//! A stream is newline-delimited JSON: one `header`, any number of `data` (series) or `row`
//! (product table) records, then exactly one `footer`. The document format wraps the same
//! records in a single object.

use std::io::BufRead;

use caster_core::model::AssetId;
use caster_core::model::{Channel, IndexKind, ResolvedReference, Scalar, SeriesKind, SeriesSchema};
use caster_core::store::{DataPoint, Frame};
use caster_core::views::{IndexMode, ProductRow, ProductTable};
use serde::{Deserialize, Serialize};

pub const DEFAULT_BATCH: usize = 1000;
/// Upper bound on records in a document-format response.
pub const DOCUMENT_LIMIT: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Complete,
    Truncated,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub class: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Footer {
    pub count: u64,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorDetail>,
    #[serde(rename = "nextCursor", default, skip_serializing_if = "Option::is_none")]
    pub next_cursor: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSummary {
    pub id: String,
    #[serde(rename = "indexKind")]
    pub index_kind: IndexKind,
    #[serde(rename = "seriesKind")]
    pub series_kind: SeriesKind,
    pub channels: Vec<Channel>,
}

impl From<&SeriesSchema> for SeriesSummary {
    fn from(s: &SeriesSchema) -> Self {
        SeriesSummary {
            id: s.id.to_string(),
            index_kind: s.index_kind,
            series_kind: s.series_kind,
            channels: s.channels.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEcho {
    /// `raw`, `hourly`, `daily`, ... or `federated`.
    pub level: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductSummary {
    pub view: String,
    #[serde(rename = "productId")]
    pub product_id: AssetId,
    #[serde(rename = "indexMode")]
    pub index_mode: IndexMode,
    /// Grid spacing in mm.
    pub step: i64,
    #[serde(rename = "startLength")]
    pub start_length: i64,
    #[serde(rename = "productLength")]
    pub product_length: i64,
    /// `stored` for a materialized table, `computed` otherwise.
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Header {
    /// Id under which the server tracks this stream, see `GET /streams/{id}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stream: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub series: Option<SeriesSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub product: Option<ProductSummary>,
    /// Names of the value positions in each data record or row.
    pub columns: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<PlanEcho>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ResolvedReference>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataRecord {
    pub index: i64,
    pub values: Vec<Option<Scalar>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Record {
    Header(Header),
    Data(DataRecord),
    Row(ProductRow),
    Footer(Footer),
}

/// Non-streaming response body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub header: Header,
    pub records: Vec<Record>,
    pub footer: Footer,
}

/// Body of `POST /series/{id}/data`. Indices are integers or RFC 3339 timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestBody {
    pub channels: Vec<String>,
    pub points: Vec<IngestPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestPoint {
    pub index: serde_json::Value,
    pub values: Vec<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("stream ended without a footer after {0} records")]
    MissingFooter(u64),
    #[error("footer count {footer} does not match {seen} records")]
    CountMismatch { footer: u64, seen: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A fully read stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub header: Header,
    pub records: Vec<Record>,
    pub footer: Footer,
}

impl Decoded {
    /// Data records as a frame with the header's columns.
    pub fn frame(&self) -> Frame {
        Frame { channels: self.header.columns.clone(), points: data_points(&self.records) }
    }

    /// Rows reassembled into the product table they were serialized from.
    pub fn product_table(&self) -> Option<ProductTable> {
        product_table(&self.header, &self.records)
    }
}

pub fn data_points(records: &[Record]) -> Vec<DataPoint> {
    records
        .iter()
        .filter_map(|r| match r {
            Record::Data(d) => Some(DataPoint::new(d.index, d.values.clone())),
            _ => None,
        })
        .collect()
}

pub fn product_table(header: &Header, records: &[Record]) -> Option<ProductTable> {
    let p = header.product.as_ref()?;
    Some(ProductTable {
        product_id: p.product_id.clone(),
        index_mode: p.index_mode,
        step: p.step,
        start_length: p.start_length,
        product_length: p.product_length,
        channels: header.columns.clone(),
        rows: records
            .iter()
            .filter_map(|r| match r {
                Record::Row(row) => Some(row.clone()),
                _ => None,
            })
            .collect(),
    })
}

/// Incremental reader over an NDJSON stream. Checks header/footer placement and the count.
pub struct StreamReader<R> {
    input: R,
    line: usize,
    seen: u64,
    header: Option<Header>,
    done: bool,
    buf: String,
}

impl<R: BufRead> StreamReader<R> {
    /// Read up to and including the header.
    pub fn new(input: R) -> Result<Self, WireError> {
        let mut r = StreamReader { input, line: 0, seen: 0, header: None, done: false, buf: String::new() };
        match r.read_record()? {
            Some(Record::Header(h)) => r.header = Some(h),
            Some(_) => return Err(r.malformed("first record is not a header")),
            None => return Err(WireError::MissingFooter(0)),
        }
        Ok(r)
    }

    pub fn header(&self) -> &Header {
        self.header.as_ref().expect("header read in new")
    }

    fn malformed(&self, message: impl Into<String>) -> WireError {
        WireError::Malformed { line: self.line, message: message.into() }
    }

    fn read_record(&mut self) -> Result<Option<Record>, WireError> {
        self.buf.clear();
        if self.input.read_line(&mut self.buf)? == 0 {
            return Ok(None);
        }
        self.line += 1;
        let text = self.buf.trim_end_matches(['\n', '\r']);
        serde_json::from_str(text).map(Some).map_err(|e| self.malformed(e.to_string()))
    }

    /// Next data record or row; `Ok(Err(footer))` once the footer arrives.
    pub fn next_item(&mut self) -> Result<Result<Record, Footer>, WireError> {
        if self.done {
            return Err(self.malformed("read past footer"));
        }
        match self.read_record()? {
            None => Err(WireError::MissingFooter(self.seen)),
            Some(Record::Header(_)) => Err(self.malformed("second header")),
            Some(Record::Footer(f)) => {
                self.done = true;
                if f.count != self.seen {
                    return Err(WireError::CountMismatch { footer: f.count, seen: self.seen });
                }
                let mut rest = String::new();
                if self.input.read_line(&mut rest)? != 0 {
                    return Err(self.malformed("data after footer"));
                }
                Ok(Err(f))
            }
            Some(r) => {
                self.seen += 1;
                Ok(Ok(r))
            }
        }
    }

    /// Consume the remainder of the stream.
    pub fn finish(mut self) -> Result<Decoded, WireError> {
        let mut records = Vec::new();
        loop {
            match self.next_item()? {
                Ok(r) => records.push(r),
                Err(footer) => return Ok(Decoded { header: self.header.take().expect("header"), records, footer }),
            }
        }
    }
}

pub fn decode_stream(input: impl BufRead) -> Result<Decoded, WireError> {
    StreamReader::new(input)?.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_round_trip() {
        let lines = [
            r#"{"type":"header","columns":["a","b"]}"#,
            r#"{"type":"data","index":5,"values":[1.5,null]}"#,
            r#"{"type":"data","index":6,"values":[2.0,"x"]}"#,
            r#"{"type":"footer","count":2,"status":"complete"}"#,
        ];
        let text = lines.join("\n") + "\n";
        let d = decode_stream(text.as_bytes()).unwrap();
        assert_eq!(d.footer.status, Status::Complete);
        let f = d.frame();
        assert_eq!(f.points[1].values, vec![Some(Scalar::Float(2.0)), Some(Scalar::Text("x".into()))]);
        for (line, rec) in lines[1..3].iter().zip(&d.records) {
            assert_eq!(serde_json::to_string(rec).unwrap(), *line);
        }
    }

    #[test]
    fn integrity_violations() {
        let no_footer = "{\"type\":\"header\",\"columns\":[]}\n{\"type\":\"data\",\"index\":1,\"values\":[]}\n";
        assert!(matches!(decode_stream(no_footer.as_bytes()), Err(WireError::MissingFooter(1))));
        let bad_count =
            "{\"type\":\"header\",\"columns\":[]}\n{\"type\":\"footer\",\"count\":3,\"status\":\"complete\"}\n";
        assert!(matches!(decode_stream(bad_count.as_bytes()), Err(WireError::CountMismatch { footer: 3, seen: 0 })));
        let no_header = "{\"type\":\"footer\",\"count\":0,\"status\":\"complete\"}\n";
        assert!(matches!(decode_stream(no_header.as_bytes()), Err(WireError::Malformed { line: 1, .. })));
    }

    #[test]
    fn ints_and_floats_stay_apart() {
        let r: Record = serde_json::from_str(r#"{"type":"data","index":1,"values":[3,3.0,true]}"#).unwrap();
        let Record::Data(d) = r else { panic!() };
        assert_eq!(d.values, vec![Some(Scalar::Int(3)), Some(Scalar::Float(3.0)), Some(Scalar::Bool(true))]);
    }
}
