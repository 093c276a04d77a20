use serde::{Deserialize, Serialize};

use super::length::{invert_length, length_at, LengthPoint};
use super::{IndexMode, ViewError};
use crate::model::{AssetId, IndexRange};

/// A product occupying material coordinates `[start, end)` in cumulative cast length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutEvent {
    #[serde(rename = "productId", alias = "product_id")]
    pub product_id: AssetId,
    #[serde(rename = "startLength", alias = "start_mm")]
    pub start: i64,
    #[serde(rename = "endLength", alias = "end_mm")]
    pub end: i64,
}

impl CutEvent {
    pub fn new(product_id: AssetId, start: i64, end: i64) -> Self {
        CutEvent { product_id, start, end }
    }

    pub fn length(&self) -> i64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coverage {
    Full,
    Partial,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductSlice {
    #[serde(rename = "productId")]
    pub product_id: AssetId,
    #[serde(rename = "startLength")]
    pub start: i64,
    #[serde(rename = "endLength")]
    pub end: i64,
    pub coverage: Coverage,
    /// Part of the product inside the cast-length coverage; `None` if disjoint.
    pub usable: Option<IndexRange>,
}

/// Sort and check cut events: positive length, no overlaps.
pub fn validate_cuts(cuts: &[CutEvent]) -> Result<Vec<CutEvent>, ViewError> {
    let mut sorted = cuts.to_vec();
    sorted.sort_by_key(|c| (c.start, c.end));
    for c in &sorted {
        if c.end <= c.start {
            return Err(ViewError::InvalidCut(c.product_id.to_string()));
        }
    }
    for w in sorted.windows(2) {
        if w[1].start < w[0].end {
            return Err(ViewError::OverlappingCuts(w[0].product_id.to_string(), w[1].product_id.to_string()));
        }
    }
    Ok(sorted)
}

pub fn slice_products(lengths: &[LengthPoint], cuts: &[CutEvent]) -> Result<Vec<ProductSlice>, ViewError> {
    let sorted = validate_cuts(cuts)?;
    let cover = match (lengths.first(), lengths.last()) {
        (Some(a), Some(b)) => Some((a.length, b.length)),
        _ => None,
    };
    Ok(sorted
        .into_iter()
        .map(|c| {
            let (coverage, usable) = match cover {
                Some((lo, hi)) => {
                    let full = c.start >= lo && c.end <= hi;
                    let (s, e) = (c.start.max(lo), c.end.min(hi));
                    (
                        if full { Coverage::Full } else { Coverage::Partial },
                        (s < e).then(|| IndexRange::new(s, e).expect("s < e")),
                    )
                }
                None => (Coverage::Partial, None),
            };
            ProductSlice { product_id: c.product_id, start: c.start, end: c.end, coverage, usable }
        })
        .collect())
}

/// A reading placed on the strand: material coordinate `l = L(t) - d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MappedReading {
    pub l: f64,
    pub t: i64,
    pub value: f64,
}

/// Map ascending `(t, value)` readings of a sensor at offset `d` to material coordinates.
/// Readings outside the time span covered by `lengths` are dropped.
pub fn map_readings(lengths: &[LengthPoint], readings: &[(i64, f64)], d: i64) -> Vec<MappedReading> {
    readings
        .iter()
        .filter_map(|&(t, value)| length_at(lengths, t).map(|l| MappedReading { l: l - d as f64, t, value }))
        .collect()
}

/// Index range of readings whose material coordinate falls in `[start, end)`.
pub fn inside(points: &[MappedReading], start: i64, end: i64) -> std::ops::Range<usize> {
    let lo = points.partition_point(|p| p.l < start as f64);
    let hi = points.partition_point(|p| p.l < end as f64);
    lo..hi
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub value: f64,
    /// Source timestamp the value was interpolated at.
    #[serde(rename = "sourceTime")]
    pub source_time: i64,
}

impl Cell {
    fn bit_eq(&self, o: &Cell) -> bool {
        self.value.to_bits() == o.value.to_bits() && self.source_time == o.source_time
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductRow {
    /// Position along the product in mm.
    pub position: i64,
    /// When this slice passed the mould; set in auxiliary-timestamp mode.
    #[serde(rename = "auxTime")]
    pub aux_time: Option<i64>,
    pub cells: Vec<Option<Cell>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductTable {
    #[serde(rename = "productId")]
    pub product_id: AssetId,
    #[serde(rename = "indexMode")]
    pub index_mode: IndexMode,
    pub step: i64,
    #[serde(rename = "startLength")]
    pub start_length: i64,
    #[serde(rename = "productLength")]
    pub product_length: i64,
    pub channels: Vec<String>,
    pub rows: Vec<ProductRow>,
}

impl ProductTable {
    /// Equality with floats compared bit for bit.
    pub fn bit_eq(&self, o: &ProductTable) -> bool {
        self.product_id == o.product_id
            && self.index_mode == o.index_mode
            && self.step == o.step
            && self.start_length == o.start_length
            && self.product_length == o.product_length
            && self.channels == o.channels
            && self.rows.len() == o.rows.len()
            && self.rows.iter().zip(&o.rows).all(|(a, b)| {
                a.position == b.position
                    && a.aux_time == b.aux_time
                    && a.cells.len() == b.cells.len()
                    && a.cells.iter().zip(&b.cells).all(|(x, y)| match (x, y) {
                        (None, None) => true,
                        (Some(x), Some(y)) => x.bit_eq(y),
                        _ => false,
                    })
            })
    }
}

pub fn grid_len(product_length: i64, step: i64) -> usize {
    ((product_length + step - 1) / step).max(0) as usize
}

/// One channel resampled onto the product grid.
pub struct Resampled {
    pub cells: Vec<Option<Cell>>,
    /// Time of the last reading before the product start; `None` if there is none.
    pub low: Option<i64>,
    /// Time of the first reading at or past the product end; `None` while the product
    /// is not yet fully passed by this sensor.
    pub horizon: Option<i64>,
}

/// Source time window one channel of a table depends on. Unbounded sides are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ChannelBounds {
    pub low: Option<i64>,
    pub horizon: Option<i64>,
}

impl ChannelBounds {
    /// Whether a write touching `[lo, hi]` can change the channel's cells.
    pub fn affected_by(&self, lo: i64, hi: i64) -> bool {
        self.horizon.is_none_or(|h| lo <= h) && self.low.is_none_or(|l| hi >= l)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TableBounds {
    pub channels: Vec<ChannelBounds>,
    /// Cast length is needed up to here; `None` while any channel is incomplete.
    pub horizon: Option<i64>,
}

/// Interpolate one channel onto `start + k*step`. Besides the readings inside the
/// product, the nearest reading on either side is used so edge cells can be bracketed.
pub fn resample(points: &[MappedReading], cut: &CutEvent, step: i64) -> Resampled {
    let n = grid_len(cut.length(), step);
    let r = inside(points, cut.start, cut.end);
    let from = r.start.saturating_sub(1);
    let to = (r.end + 1).min(points.len());
    let used = &points[from..to];
    let low = (r.start > 0).then(|| points[r.start - 1].t);
    let horizon = (r.end < points.len()).then(|| points[r.end].t);
    let mut cells = Vec::with_capacity(n);
    let mut j = 0;
    for k in 0..n {
        let xk = (cut.start + k as i64 * step) as f64;
        while j < used.len() && used[j].l < xk {
            j += 1;
        }
        let cell = if j < used.len() && used[j].l == xk {
            // first reading at this coordinate: earliest on plateaus
            Some(Cell { value: used[j].value, source_time: used[j].t })
        } else if j > 0 && j < used.len() {
            let (a, b) = (used[j - 1], used[j]);
            let frac = (xk - a.l) / (b.l - a.l);
            let (lo, hi) = if a.value <= b.value { (a.value, b.value) } else { (b.value, a.value) };
            let value = (a.value + (b.value - a.value) * frac).clamp(lo, hi);
            let source_time = a.t + (frac * (b.t - a.t) as f64).round() as i64;
            Some(Cell { value, source_time: source_time.clamp(a.t, b.t) })
        } else {
            None
        };
        cells.push(cell);
    }
    Resampled { cells, low, horizon }
}

/// Build the product table from per-channel mapped readings.
pub fn build_table(
    lengths: &[LengthPoint],
    channels: &[(String, Vec<MappedReading>)],
    cut: &CutEvent,
    step: i64,
    mode: IndexMode,
) -> Result<(ProductTable, TableBounds), ViewError> {
    let n = grid_len(cut.length(), step);
    let resampled: Vec<Resampled> = channels.iter().map(|(_, pts)| resample(pts, cut, step)).collect();
    if resampled.iter().all(|r| r.cells.iter().all(Option::is_none)) {
        return Err(ViewError::OutOfCoverage);
    }
    let mut horizon = Some(i64::MIN);
    for r in &resampled {
        horizon = match (horizon, r.horizon) {
            (Some(a), Some(b)) => Some(a.max(b)),
            _ => None,
        };
    }
    // L at the horizon also depends on the next length sample.
    let horizon = horizon.map(|h| {
        let i = lengths.partition_point(|p| p.t < h);
        lengths.get(i).map_or(h, |p| p.t)
    });
    let mut rows = Vec::with_capacity(n);
    for k in 0..n {
        let position = k as i64 * step;
        let aux_time = match mode {
            IndexMode::Position => None,
            IndexMode::AuxiliaryTimestamp => match invert_length(lengths, cut.start + position) {
                Ok(t) => Some(t),
                Err(_) => continue,
            },
        };
        rows.push(ProductRow { position, aux_time, cells: resampled.iter().map(|r| r.cells[k]).collect() });
    }
    Ok((
        ProductTable {
            product_id: cut.product_id.clone(),
            index_mode: mode,
            step,
            start_length: cut.start,
            product_length: cut.length(),
            channels: channels.iter().map(|(c, _)| c.clone()).collect(),
            rows,
        },
        TableBounds {
            channels: resampled.iter().map(|r| ChannelBounds { low: r.low, horizon: r.horizon }).collect(),
            horizon,
        },
    ))
}
