use std::sync::Arc;

use super::persist::{SeriesFiles, WalOp};
use super::segment::Segment;
use super::{DataPoint, StoreError};
use crate::model::{IndexRange, Scalar, SeriesSchema};

const JOURNAL_CAP: usize = 1024;

/// Index range touched by one write, tagged with the series version it produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Change {
    pub version: u64,
    pub lo: i64,
    pub hi: i64,
    /// Bit `p` set if channel `p` may have changed; channels past 63 share bit 63.
    pub channels: u64,
}

pub(crate) fn channel_bit(pos: usize) -> u64 {
    1u64 << pos.min(63)
}

pub(crate) struct SeriesData {
    pub schema: Arc<SeriesSchema>,
    pub segments: Vec<Arc<Segment>>,
    /// File backing each segment, `None` when the in-memory copy is newer.
    pub files: Vec<Option<String>>,
    pub seal_at: usize,
    pub version: u64,
    journal: Vec<Change>,
    pub watermark: Option<i64>,
    pub channel_watermarks: Vec<Option<i64>>,
    pub disk: Option<SeriesFiles>,
}

impl SeriesData {
    pub fn new(schema: Arc<SeriesSchema>, seal_at: usize) -> Self {
        let n = schema.channels.len();
        SeriesData {
            schema,
            segments: Vec::new(),
            files: Vec::new(),
            seal_at: seal_at.max(1),
            version: 0,
            journal: Vec::new(),
            watermark: None,
            channel_watermarks: vec![None; n],
            disk: None,
        }
    }

    pub fn len(&self) -> usize {
        self.segments.iter().map(|s| s.len()).sum()
    }

    fn log(&mut self, op: &WalOp) -> Result<(), StoreError> {
        if let Some(disk) = self.disk.as_mut() {
            disk.append(op)?;
        }
        Ok(())
    }

    /// Persist then apply full-width rows (ascending, unique indices).
    pub fn write_rows(&mut self, rows: Vec<(i64, Vec<Option<Scalar>>)>, merge: bool) -> Result<(), StoreError> {
        if rows.is_empty() {
            return Ok(());
        }
        if self.disk.is_some() {
            let mut seg = Segment::empty(&self.schema);
            for (i, v) in &rows {
                seg.upsert(*i, v.clone());
            }
            let op = if merge { WalOp::Merge(seg) } else { WalOp::Upsert(seg) };
            self.log(&op)?;
        }
        self.apply_rows(rows, merge);
        self.maybe_checkpoint()
    }

    pub fn apply_rows(&mut self, rows: Vec<(i64, Vec<Option<Scalar>>)>, merge: bool) {
        let lo = rows.first().map(|r| r.0).unwrap_or(0);
        let hi = rows.last().map(|r| r.0).unwrap_or(0);
        let mut mask = 0u64;
        for (index, values) in rows {
            for (p, v) in values.iter().enumerate() {
                if v.is_some() {
                    mask |= channel_bit(p);
                }
            }
            let created = self.insert_row(index, values, merge);
            if !created && !merge {
                // a replaced row may have lost values in any channel
                mask = u64::MAX;
            }
        }
        self.record_change(lo, hi, mask);
    }

    /// Returns true if a new row was created.
    fn insert_row(&mut self, index: i64, values: Vec<Option<Scalar>>, merge: bool) -> bool {
        let n = self.segments.len();
        let p = self.segments.partition_point(|s| s.last_index().is_some_and(|l| l < index));
        let target = if p == n {
            match self.segments.last() {
                Some(last) if last.len() < self.seal_at => n - 1,
                _ => {
                    self.segments.push(Arc::new(Segment::empty(&self.schema)));
                    self.files.push(None);
                    n
                }
            }
        } else if self.segments[p].first_index().is_some_and(|f| f <= index) {
            p
        } else if p > 0 && self.segments[p - 1].len() < self.seal_at {
            p - 1
        } else {
            p
        };
        let seg = Arc::make_mut(&mut self.segments[target]);
        let created = if merge { seg.merge(index, values) } else { seg.upsert(index, values) };
        self.files[target] = None;
        if seg.len() > 2 * self.seal_at {
            let tail = seg.split_off(self.seal_at);
            self.segments.insert(target + 1, Arc::new(tail));
            self.files.insert(target + 1, None);
        }
        created
    }

    fn record_change(&mut self, lo: i64, hi: i64, channels: u64) {
        self.version += 1;
        self.journal.push(Change { version: self.version, lo, hi, channels });
        if self.journal.len() > JOURNAL_CAP {
            // Fold the two oldest entries; readers only ever see an over-approximation.
            let a = self.journal.remove(0);
            let b = &mut self.journal[0];
            b.lo = b.lo.min(a.lo);
            b.hi = b.hi.max(a.hi);
            b.channels |= a.channels;
        }
    }

    /// Union of index ranges written after `version`, restricted to writes that may
    /// have touched a channel in `mask`.
    pub fn changes_since(&self, version: u64, mask: u64) -> Option<(i64, i64)> {
        self.journal.iter().filter(|c| c.version > version && c.channels & mask != 0).fold(None, |acc, c| match acc {
            None => Some((c.lo, c.hi)),
            Some((lo, hi)) => Some((lo.min(c.lo), hi.max(c.hi))),
        })
    }

    pub fn delete_range(&mut self, range: IndexRange) -> Result<usize, StoreError> {
        let (lo, hi) = (range.lower(), range.upper());
        let touched = self
            .segments
            .iter()
            .any(|s| s.first_index().is_some_and(|f| f < hi) && s.last_index().is_some_and(|l| l >= lo));
        if !touched {
            return Ok(0);
        }
        self.log(&WalOp::Delete { lo, hi })?;
        let n = self.apply_delete(lo, hi);
        self.maybe_checkpoint()?;
        Ok(n)
    }

    pub fn apply_delete(&mut self, lo: i64, hi: i64) -> usize {
        let mut removed = 0;
        for (i, seg) in self.segments.iter_mut().enumerate() {
            let overlaps = seg.first_index().is_some_and(|f| f < hi) && seg.last_index().is_some_and(|l| l >= lo);
            if overlaps {
                let n = Arc::make_mut(seg).remove_range(lo, hi);
                if n > 0 {
                    removed += n;
                    self.files[i] = None;
                }
            }
        }
        self.drop_empty_segments();
        removed
    }

    pub fn clear_channel(&mut self, pos: usize, range: IndexRange) -> Result<(usize, usize), StoreError> {
        let (lo, hi) = (range.lower(), range.upper());
        self.log(&WalOp::ClearChannel { pos: pos as u16, lo, hi })?;
        let r = self.apply_clear_channel(pos, lo, hi);
        self.maybe_checkpoint()?;
        Ok(r)
    }

    pub fn apply_clear_channel(&mut self, pos: usize, lo: i64, hi: i64) -> (usize, usize) {
        let (mut cleared, mut removed) = (0, 0);
        for (i, seg) in self.segments.iter_mut().enumerate() {
            let overlaps = seg.first_index().is_some_and(|f| f < hi) && seg.last_index().is_some_and(|l| l >= lo);
            if overlaps {
                let (c, r) = Arc::make_mut(seg).clear_channel(pos, lo, hi);
                if c + r > 0 {
                    self.files[i] = None;
                }
                cleared += c;
                removed += r;
            }
        }
        self.drop_empty_segments();
        (cleared, removed)
    }

    fn drop_empty_segments(&mut self) {
        let mut i = 0;
        while i < self.segments.len() {
            if self.segments[i].is_empty() {
                self.segments.remove(i);
                self.files.remove(i);
            } else {
                i += 1;
            }
        }
    }

    /// Raise the watermark of the series (`channel = None`) or of one channel. Never lowers it.
    pub fn raise_watermark(&mut self, channel: Option<usize>, value: i64) -> Result<bool, StoreError> {
        let current = match channel {
            None => self.watermark,
            Some(p) => self.channel_watermarks[p],
        };
        if current.is_some_and(|c| c >= value) {
            return Ok(false);
        }
        self.log(&WalOp::Watermark { channel: channel.map(|c| c as u16), value })?;
        self.apply_watermark(channel, value);
        Ok(true)
    }

    pub fn apply_watermark(&mut self, channel: Option<usize>, value: i64) {
        let slot = match channel {
            None => &mut self.watermark,
            Some(p) => &mut self.channel_watermarks[p],
        };
        *slot = Some(slot.map_or(value, |c| c.max(value)));
    }

    fn maybe_checkpoint(&mut self) -> Result<(), StoreError> {
        if self.disk.as_ref().is_some_and(|d| d.needs_checkpoint()) {
            self.checkpoint()?;
        }
        Ok(())
    }

    pub fn checkpoint(&mut self) -> Result<(), StoreError> {
        let Some(mut disk) = self.disk.take() else {
            return Ok(());
        };
        let result = disk.checkpoint(self);
        self.disk = Some(disk);
        result
    }

    pub fn snapshot(&self) -> SeriesSnapshot {
        SeriesSnapshot {
            schema: self.schema.clone(),
            segments: self.segments.clone(),
            watermark: self.watermark,
            version: self.version,
        }
    }
}

/// Immutable view of a series at one point in time. Cheap to take: segments are shared.
#[derive(Clone)]
pub struct SeriesSnapshot {
    pub schema: Arc<SeriesSchema>,
    segments: Vec<Arc<Segment>>,
    pub watermark: Option<i64>,
    pub version: u64,
}

impl SeriesSnapshot {
    pub fn len(&self) -> usize {
        self.segments.iter().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.iter().all(|s| s.is_empty())
    }

    pub fn first_index(&self) -> Option<i64> {
        self.segments.first().and_then(|s| s.first_index())
    }

    pub fn last_index(&self) -> Option<i64> {
        self.segments.last().and_then(|s| s.last_index())
    }

    /// Range actually readable: the request clamped to the retention watermark.
    pub fn readable(&self, range: IndexRange) -> IndexRange {
        match self.watermark {
            Some(w) => range.intersect(&IndexRange::from(w)),
            None => range,
        }
    }

    /// Rows with index in `range` (clamped to the watermark), ascending.
    pub fn rows(&self, range: IndexRange) -> Rows<'_> {
        let range = self.readable(range);
        let (lo, hi) = (range.lower(), range.upper());
        let seg = self.segments.partition_point(|s| s.last_index().is_some_and(|l| l < lo));
        let pos = self.segments.get(seg).map(|s| s.lower_bound(lo)).unwrap_or(0);
        Rows { segments: &self.segments, seg, pos, hi, empty: range.is_empty() }
    }

    pub fn points<'a>(&'a self, range: IndexRange, positions: &'a [usize]) -> impl Iterator<Item = DataPoint> + 'a {
        self.rows(range).map(move |(s, i)| s.row(i, positions))
    }

    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }
}

pub struct Rows<'a> {
    segments: &'a [Arc<Segment>],
    seg: usize,
    pos: usize,
    hi: i64,
    empty: bool,
}

impl<'a> Iterator for Rows<'a> {
    type Item = (&'a Segment, usize);

    fn next(&mut self) -> Option<Self::Item> {
        if self.empty {
            return None;
        }
        loop {
            let seg = self.segments.get(self.seg)?;
            if self.pos < seg.len() {
                if seg.index[self.pos] >= self.hi {
                    self.empty = true;
                    return None;
                }
                let item = (seg.as_ref(), self.pos);
                self.pos += 1;
                return Some(item);
            }
            self.seg += 1;
            self.pos = 0;
        }
    }
}
