//! Series export to CSV. The file layout is described in `docs/csv.md`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use caster_service::wire::{Record, Status};

use crate::client::{encode, Client, ClientError};

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
    #[error("stream for {series} failed after {count} records: {message}")]
    Stream { series: String, count: u64, message: String },
}

#[derive(Debug, Clone, Default)]
pub struct ExportRequest {
    pub series: String,
    /// Integer index or RFC 3339 timestamp, as accepted by the data endpoint.
    pub from: Option<String>,
    pub to: Option<String>,
    pub channels: Option<Vec<String>>,
}

impl ExportRequest {
    pub fn path(&self) -> String {
        let mut q = Vec::new();
        if let Some(f) = &self.from {
            q.push(format!("from={}", encode(f)));
        }
        if let Some(t) = &self.to {
            q.push(format!("to={}", encode(t)));
        }
        if let Some(c) = &self.channels {
            q.push(format!("channels={}", encode(&c.join(","))));
        }
        let base = format!("/series/{}/data", encode(&self.series));
        if q.is_empty() {
            base
        } else {
            format!("{base}?{}", q.join("&"))
        }
    }
}

/// Stream a series into CSV, one row per record as it arrives. Returns the row count.
pub fn export<W: Write>(client: &Client, req: &ExportRequest, out: W) -> Result<u64, ExportError> {
    let io = |e: std::io::Error| ExportError::Io("write".into(), e);
    let csv_err = |e: csv::Error| ExportError::Io("write".into(), e.into());
    let mut reader = client.open_stream(&req.path())?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["index".to_string()];
    header.extend(reader.header().columns.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    let mut count = 0u64;
    let footer = loop {
        let item = reader.next_item().map_err(|e| ExportError::Stream {
            series: req.series.clone(),
            count,
            message: e.to_string(),
        })?;
        match item {
            Ok(Record::Data(d)) => {
                row.clear();
                row.push(d.index.to_string());
                row.extend(d.values.iter().map(|v| v.as_ref().map(|s| s.to_string()).unwrap_or_default()));
                w.write_record(&row).map_err(csv_err)?;
                count += 1;
            }
            Ok(other) => {
                return Err(ExportError::Stream {
                    series: req.series.clone(),
                    count,
                    message: format!("unexpected record {other:?}"),
                })
            }
            Err(footer) => break footer,
        }
    };
    if footer.status != Status::Complete {
        let message = footer
            .error
            .map(|e| format!("{}: {}", e.class, e.message))
            .unwrap_or_else(|| format!("{:?}", footer.status));
        return Err(ExportError::Stream { series: req.series.clone(), count, message });
    }
    w.flush().map_err(io)?;
    Ok(count)
}

/// Export to a file, removing it if the stream does not complete.
pub fn export_file(client: &Client, req: &ExportRequest, path: &Path) -> Result<u64, ExportError> {
    let file = File::create(path).map_err(|e| ExportError::Io(path.display().to_string(), e))?;
    let result = export(client, req, BufWriter::new(file));
    if result.is_err() {
        let _ = std::fs::remove_file(path);
    }
    result
}
