use std::io::{self, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::column::Column;
use super::DataPoint;
use crate::model::{Scalar, SeriesSchema, ValueType};

/// A run of points in columnar layout: one shared index column plus one column per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub(crate) index: Vec<i64>,
    pub(crate) columns: Vec<Column>,
}

impl Segment {
    pub fn empty(schema: &SeriesSchema) -> Self {
        Segment { index: Vec::new(), columns: schema.channels.iter().map(|c| Column::new(c.value_type)).collect() }
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn first_index(&self) -> Option<i64> {
        self.index.first().copied()
    }

    pub fn last_index(&self) -> Option<i64> {
        self.index.last().copied()
    }

    pub fn index(&self) -> &[i64] {
        &self.index
    }

    pub fn column(&self, pos: usize) -> &Column {
        &self.columns[pos]
    }

    /// Position of the first row with index >= `bound`.
    pub fn lower_bound(&self, bound: i64) -> usize {
        self.index.partition_point(|&i| i < bound)
    }

    pub fn row(&self, i: usize, positions: &[usize]) -> DataPoint {
        DataPoint { index: self.index[i], values: positions.iter().map(|&p| self.columns[p].get(i)).collect() }
    }

    fn row_is_empty(&self, i: usize) -> bool {
        !self.columns.iter().any(|c| c.is_present(i))
    }

    /// Insert or replace a full-width row. Returns true if a new row was created.
    pub fn upsert(&mut self, index: i64, values: Vec<Option<Scalar>>) -> bool {
        match self.index.binary_search(&index) {
            Ok(i) => {
                for (c, v) in self.columns.iter_mut().zip(values) {
                    c.set(i, v);
                }
                false
            }
            Err(i) => {
                self.index.insert(i, index);
                for (c, v) in self.columns.iter_mut().zip(values) {
                    c.insert(i, v);
                }
                true
            }
        }
    }

    /// Merge present values into the row at `index`, creating it if needed.
    pub fn merge(&mut self, index: i64, values: Vec<Option<Scalar>>) -> bool {
        match self.index.binary_search(&index) {
            Ok(i) => {
                for (c, v) in self.columns.iter_mut().zip(values) {
                    if v.is_some() {
                        c.set(i, v);
                    }
                }
                false
            }
            Err(_) => self.upsert(index, values),
        }
    }

    /// Remove rows with index in `[lo, hi)`; returns the number removed.
    pub fn remove_range(&mut self, lo: i64, hi: i64) -> usize {
        let from = self.lower_bound(lo);
        let to = self.lower_bound(hi);
        if from >= to {
            return 0;
        }
        self.index.drain(from..to);
        for c in &mut self.columns {
            c.drain_range(from, to);
        }
        to - from
    }

    /// Clear one channel for rows in `[lo, hi)`, then drop rows left without values.
    /// Returns (values cleared, rows removed).
    pub fn clear_channel(&mut self, pos: usize, lo: i64, hi: i64) -> (usize, usize) {
        let from = self.lower_bound(lo);
        let to = self.lower_bound(hi);
        let mut cleared = 0;
        for i in from..to {
            if self.columns[pos].is_present(i) {
                self.columns[pos].clear_at(i);
                cleared += 1;
            }
        }
        let mut removed = 0;
        let mut i = from;
        let mut end = to;
        while i < end {
            if self.row_is_empty(i) {
                self.index.remove(i);
                for c in &mut self.columns {
                    c.remove(i);
                }
                removed += 1;
                end -= 1;
            } else {
                i += 1;
            }
        }
        (cleared, removed)
    }

    pub fn split_off(&mut self, at: usize) -> Segment {
        Segment { index: self.index.split_off(at), columns: self.columns.iter_mut().map(|c| c.split_off(at)).collect() }
    }

    pub fn heap_bytes(&self) -> usize {
        self.index.len() * 8 + self.columns.iter().map(Column::heap_bytes).sum::<usize>()
    }

    pub fn encode<W: Write>(&self, w: &mut W) -> io::Result<()> {
        let n = self.index.len();
        w.write_u32::<LittleEndian>(n as u32)?;
        w.write_u16::<LittleEndian>(self.columns.len() as u16)?;
        for &i in &self.index {
            w.write_i64::<LittleEndian>(i)?;
        }
        for c in &self.columns {
            let tag = match c.value_type() {
                ValueType::Float64 => 0u8,
                ValueType::Int64 => 1,
                ValueType::Bool => 2,
                ValueType::Text => 3,
            };
            w.write_u8(tag)?;
            let mut bitmap = vec![0u8; n.div_ceil(8)];
            for (i, byte) in (0..n).map(|i| (i, i / 8)) {
                if c.is_present(i) {
                    bitmap[byte] |= 1 << (i % 8);
                }
            }
            w.write_all(&bitmap)?;
            match c {
                Column::Float(v) => {
                    for x in v.iter().flatten() {
                        w.write_u64::<LittleEndian>(x.to_bits())?;
                    }
                }
                Column::Int(v) => {
                    for x in v.iter().flatten() {
                        w.write_i64::<LittleEndian>(*x)?;
                    }
                }
                Column::Bool(v) => {
                    for x in v.iter().flatten() {
                        w.write_u8(*x as u8)?;
                    }
                }
                Column::Text(v) => {
                    for x in v.iter().flatten() {
                        w.write_u32::<LittleEndian>(x.len() as u32)?;
                        w.write_all(x.as_bytes())?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn decode<R: Read>(r: &mut R) -> io::Result<Segment> {
        let n = r.read_u32::<LittleEndian>()? as usize;
        let ncols = r.read_u16::<LittleEndian>()? as usize;
        let mut index = Vec::with_capacity(n);
        for _ in 0..n {
            index.push(r.read_i64::<LittleEndian>()?);
        }
        let mut columns = Vec::with_capacity(ncols);
        for _ in 0..ncols {
            let tag = r.read_u8()?;
            let mut bitmap = vec![0u8; n.div_ceil(8)];
            r.read_exact(&mut bitmap)?;
            let present = |i: usize| bitmap[i / 8] & (1 << (i % 8)) != 0;
            let col = match tag {
                0 => Column::Float(
                    (0..n)
                        .map(|i| {
                            if present(i) {
                                r.read_u64::<LittleEndian>().map(|b| Some(f64::from_bits(b)))
                            } else {
                                Ok(None)
                            }
                        })
                        .collect::<io::Result<_>>()?,
                ),
                1 => Column::Int(
                    (0..n)
                        .map(|i| if present(i) { r.read_i64::<LittleEndian>().map(Some) } else { Ok(None) })
                        .collect::<io::Result<_>>()?,
                ),
                2 => Column::Bool(
                    (0..n)
                        .map(|i| if present(i) { r.read_u8().map(|b| Some(b != 0)) } else { Ok(None) })
                        .collect::<io::Result<_>>()?,
                ),
                3 => Column::Text(
                    (0..n)
                        .map(|i| {
                            if !present(i) {
                                return Ok(None);
                            }
                            let len = r.read_u32::<LittleEndian>()? as usize;
                            let mut buf = vec![0u8; len];
                            r.read_exact(&mut buf)?;
                            String::from_utf8(buf).map(Some).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
                        })
                        .collect::<io::Result<_>>()?,
                ),
                t => return Err(io::Error::new(io::ErrorKind::InvalidData, format!("unknown column tag {t}"))),
            };
            columns.push(col);
        }
        Ok(Segment { index, columns })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Channel, IndexKind, SeriesId, SeriesKind};

    fn schema() -> SeriesSchema {
        SeriesSchema::new(
            SeriesId::new("s").unwrap(),
            vec![
                Channel::new("f", "", ValueType::Float64),
                Channel::new("i", "", ValueType::Int64),
                Channel::new("b", "", ValueType::Bool),
                Channel::new("t", "", ValueType::Text),
            ],
            IndexKind::Time,
            SeriesKind::Historical,
        )
    }

    #[test]
    fn encode_decode_preserves_bits_and_nulls() {
        let mut seg = Segment::empty(&schema());
        seg.upsert(1, vec![Some(Scalar::Float(-0.0)), None, Some(Scalar::Bool(true)), Some(Scalar::Text("ä".into()))]);
        seg.upsert(-7, vec![None, Some(Scalar::Int(i64::MIN)), None, None]);
        seg.upsert(9, vec![Some(Scalar::Float(f64::MAX)), Some(Scalar::Int(3)), Some(Scalar::Bool(false)), None]);
        let mut buf = Vec::new();
        seg.encode(&mut buf).unwrap();
        let back = Segment::decode(&mut buf.as_slice()).unwrap();
        assert_eq!(back.index, vec![-7, 1, 9]);
        assert_eq!(back.column(0).get(1).unwrap().as_f64().unwrap().to_bits(), (-0.0f64).to_bits());
        assert_eq!(back, seg);
    }

    #[test]
    fn clear_channel_drops_empty_rows() {
        let mut seg = Segment::empty(&schema());
        seg.upsert(1, vec![Some(Scalar::Float(1.0)), None, None, None]);
        seg.upsert(2, vec![Some(Scalar::Float(2.0)), Some(Scalar::Int(2)), None, None]);
        assert_eq!(seg.clear_channel(0, 0, 10), (2, 1));
        assert_eq!(seg.index, vec![2]);
    }
}
