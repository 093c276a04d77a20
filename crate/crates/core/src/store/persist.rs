//! On-disk layout, one directory per series:
//!
//! ```text
//! <root>/series/s-<escaped id>/manifest.json   schema, live segment files, watermarks
//! <root>/series/s-<escaped id>/seg-<seq>.bin   sealed columnar segments
//! <root>/series/s-<escaped id>/wal.bin         append log replayed on top of the manifest
//! ```
//!
//! Log records are framed as `len:u32 crc32:u32 payload`. A torn tail record is dropped on
//! recovery. Every logged operation is idempotent, so replaying a log that was already
//! folded into the manifest is harmless.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::segment::Segment;
use super::series::SeriesData;
use super::StoreError;
use crate::model::{SeriesId, SeriesSchema};

const MANIFEST: &str = "manifest.json";
const WAL: &str = "wal.bin";

#[derive(Debug)]
pub(crate) enum WalOp {
    Upsert(Segment),
    Merge(Segment),
    Delete { lo: i64, hi: i64 },
    ClearChannel { pos: u16, lo: i64, hi: i64 },
    Watermark { channel: Option<u16>, value: i64 },
}

impl WalOp {
    fn encode(&self) -> io::Result<Vec<u8>> {
        let mut buf = Vec::new();
        match self {
            WalOp::Upsert(seg) => {
                buf.write_u8(1)?;
                seg.encode(&mut buf)?;
            }
            WalOp::Merge(seg) => {
                buf.write_u8(2)?;
                seg.encode(&mut buf)?;
            }
            WalOp::Delete { lo, hi } => {
                buf.write_u8(3)?;
                buf.write_i64::<LittleEndian>(*lo)?;
                buf.write_i64::<LittleEndian>(*hi)?;
            }
            WalOp::ClearChannel { pos, lo, hi } => {
                buf.write_u8(4)?;
                buf.write_u16::<LittleEndian>(*pos)?;
                buf.write_i64::<LittleEndian>(*lo)?;
                buf.write_i64::<LittleEndian>(*hi)?;
            }
            WalOp::Watermark { channel, value } => {
                buf.write_u8(5)?;
                buf.write_u16::<LittleEndian>(channel.map_or(u16::MAX, |c| c))?;
                buf.write_i64::<LittleEndian>(*value)?;
            }
        }
        Ok(buf)
    }

    fn decode(mut payload: &[u8]) -> io::Result<WalOp> {
        let r = &mut payload;
        Ok(match r.read_u8()? {
            1 => WalOp::Upsert(Segment::decode(r)?),
            2 => WalOp::Merge(Segment::decode(r)?),
            3 => WalOp::Delete { lo: r.read_i64::<LittleEndian>()?, hi: r.read_i64::<LittleEndian>()? },
            4 => WalOp::ClearChannel {
                pos: r.read_u16::<LittleEndian>()?,
                lo: r.read_i64::<LittleEndian>()?,
                hi: r.read_i64::<LittleEndian>()?,
            },
            5 => {
                let c = r.read_u16::<LittleEndian>()?;
                WalOp::Watermark { channel: (c != u16::MAX).then_some(c), value: r.read_i64::<LittleEndian>()? }
            }
            t => return Err(io::Error::new(io::ErrorKind::InvalidData, format!("unknown log op {t}"))),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    schema: SeriesSchema,
    segments: Vec<String>,
    next_seq: u64,
    #[serde(default)]
    watermark: Option<i64>,
    #[serde(default)]
    channel_watermarks: Vec<Option<i64>>,
}

/// Directory name for a series id; anything outside `[A-Za-z0-9._-]` is percent-escaped.
pub(crate) fn series_dir_name(id: &SeriesId) -> String {
    let mut out = String::from("s-");
    for b in id.as_str().bytes() {
        if b.is_ascii_alphanumeric() || b == b'.' || b == b'_' || b == b'-' {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

pub(crate) struct SeriesFiles {
    dir: PathBuf,
    wal: BufWriter<File>,
    wal_bytes: u64,
    next_seq: u64,
    sync: bool,
    checkpoint_bytes: u64,
}

impl SeriesFiles {
    pub fn create(root: &Path, schema: &SeriesSchema, sync: bool, checkpoint_bytes: u64) -> Result<Self, StoreError> {
        let dir = root.join("series").join(series_dir_name(&schema.id));
        fs::create_dir_all(&dir)?;
        let manifest = Manifest {
            schema: schema.clone(),
            segments: Vec::new(),
            next_seq: 1,
            watermark: None,
            channel_watermarks: vec![None; schema.channels.len()],
        };
        write_manifest(&dir, &manifest)?;
        let wal = OpenOptions::new().create(true).append(true).open(dir.join(WAL))?;
        Ok(SeriesFiles { dir, wal: BufWriter::new(wal), wal_bytes: 0, next_seq: 1, sync, checkpoint_bytes })
    }

    pub fn append(&mut self, op: &WalOp) -> Result<(), StoreError> {
        let payload = op.encode()?;
        self.wal.write_u32::<LittleEndian>(payload.len() as u32)?;
        self.wal.write_u32::<LittleEndian>(crc32fast::hash(&payload))?;
        self.wal.write_all(&payload)?;
        self.wal.flush()?;
        if self.sync {
            self.wal.get_ref().sync_data()?;
        }
        self.wal_bytes += payload.len() as u64 + 8;
        Ok(())
    }

    pub fn needs_checkpoint(&self) -> bool {
        self.wal_bytes >= self.checkpoint_bytes
    }

    /// Write dirty segments, swap the manifest, then truncate the log.
    pub fn checkpoint(&mut self, data: &mut SeriesData) -> Result<(), StoreError> {
        for (seg, file) in data.segments.iter().zip(data.files.iter_mut()) {
            if file.is_none() {
                let name = format!("seg-{:08}.bin", self.next_seq);
                self.next_seq += 1;
                let tmp = self.dir.join(format!("{name}.tmp"));
                let mut w = BufWriter::new(File::create(&tmp)?);
                seg.encode(&mut w)?;
                let f = w.into_inner().map_err(|e| e.into_error())?;
                if self.sync {
                    f.sync_all()?;
                }
                fs::rename(&tmp, self.dir.join(&name))?;
                *file = Some(name);
            }
        }
        let live: Vec<String> = data.files.iter().map(|f| f.clone().expect("written above")).collect();
        let manifest = Manifest {
            schema: (*data.schema).clone(),
            segments: live.clone(),
            next_seq: self.next_seq,
            watermark: data.watermark,
            channel_watermarks: data.channel_watermarks.clone(),
        };
        write_manifest(&self.dir, &manifest)?;
        self.wal.flush()?;
        self.wal.get_ref().set_len(0)?;
        self.wal_bytes = 0;
        for entry in fs::read_dir(&self.dir)? {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if name.starts_with("seg-") && !live.contains(&name) {
                let _ = fs::remove_file(self.dir.join(name));
            }
        }
        Ok(())
    }
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<(), StoreError> {
    let tmp = dir.join("manifest.json.tmp");
    fs::write(&tmp, serde_json::to_vec_pretty(manifest).map_err(|e| StoreError::Corrupt(e.to_string()))?)?;
    fs::rename(tmp, dir.join(MANIFEST))?;
    Ok(())
}

/// Recover every series found below `root`.
pub(crate) fn recover_all(
    root: &Path,
    seal_at: usize,
    sync: bool,
    checkpoint_bytes: u64,
) -> Result<Vec<SeriesData>, StoreError> {
    let base = root.join("series");
    if !base.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    let mut dirs: Vec<_> = fs::read_dir(&base)?.collect::<Result<_, _>>()?;
    dirs.sort_by_key(|d| d.file_name());
    for entry in dirs {
        let dir = entry.path();
        if !dir.join(MANIFEST).exists() {
            continue;
        }
        out.push(recover(&dir, seal_at, sync, checkpoint_bytes)?);
    }
    Ok(out)
}

fn recover(dir: &Path, seal_at: usize, sync: bool, checkpoint_bytes: u64) -> Result<SeriesData, StoreError> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST))?)
        .map_err(|e| StoreError::Corrupt(format!("{}: {e}", dir.display())))?;
    let schema = Arc::new(manifest.schema);
    let mut data = SeriesData::new(schema.clone(), seal_at);
    for name in &manifest.segments {
        let mut r = BufReader::new(File::open(dir.join(name))?);
        let seg = Segment::decode(&mut r).map_err(|e| StoreError::Corrupt(format!("{name}: {e}")))?;
        data.segments.push(Arc::new(seg));
        data.files.push(Some(name.clone()));
    }
    data.watermark = manifest.watermark;
    if manifest.channel_watermarks.len() == schema.channels.len() {
        data.channel_watermarks = manifest.channel_watermarks;
    }

    let wal_path = dir.join(WAL);
    let mut valid_len = 0u64;
    if wal_path.exists() {
        let bytes = fs::read(&wal_path)?;
        let mut at = 0usize;
        while at + 8 <= bytes.len() {
            let len = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
            let crc = u32::from_le_bytes(bytes[at + 4..at + 8].try_into().unwrap());
            let Some(payload) = bytes.get(at + 8..at + 8 + len) else { break };
            if crc32fast::hash(payload) != crc {
                break;
            }
            let op = WalOp::decode(payload).map_err(|e| StoreError::Corrupt(format!("log: {e}")))?;
            replay(&mut data, op);
            at += 8 + len;
        }
        valid_len = at as u64;
        // Drop a torn tail so later appends start on a record boundary.
        OpenOptions::new().write(true).open(&wal_path)?.set_len(valid_len)?;
    }
    let wal = OpenOptions::new().create(true).append(true).open(&wal_path)?;
    data.disk = Some(SeriesFiles {
        dir: dir.to_path_buf(),
        wal: BufWriter::new(wal),
        wal_bytes: valid_len,
        next_seq: manifest.next_seq,
        sync,
        checkpoint_bytes,
    });
    Ok(data)
}

fn replay(data: &mut SeriesData, op: WalOp) {
    match op {
        WalOp::Upsert(seg) | WalOp::Merge(seg) if seg.is_empty() => {}
        WalOp::Upsert(seg) => data.apply_rows(rows_of(&seg), false),
        WalOp::Merge(seg) => data.apply_rows(rows_of(&seg), true),
        WalOp::Delete { lo, hi } => {
            data.apply_delete(lo, hi);
        }
        WalOp::ClearChannel { pos, lo, hi } => {
            data.apply_clear_channel(pos as usize, lo, hi);
        }
        WalOp::Watermark { channel, value } => data.apply_watermark(channel.map(|c| c as usize), value),
    }
}

fn rows_of(seg: &Segment) -> Vec<(i64, Vec<Option<crate::model::Scalar>>)> {
    let all: Vec<usize> = (0..seg.columns.len()).collect();
    (0..seg.len())
        .map(|i| {
            let p = seg.row(i, &all);
            (p.index, p.values)
        })
        .collect()
}
