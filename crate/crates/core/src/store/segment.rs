//! Immutable sorted segment files.
//!
//! Layout: magic `LMG1`, format version `u32`, entry count `u64`, the
//! entries in ascending key order, then a CRC32 of everything before it.
//! Segments are read fully into memory when the store opens.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::codec::{encode_entry, Entry, Reader};
use super::{CellKey, StoreError};

pub(crate) const MAGIC: &[u8; 4] = b"LMG1";
const VERSION: u32 = 1;

pub(crate) struct Segment {
    pub(crate) id: u64,
    pub(crate) entries: Vec<Entry>,
}

pub(crate) fn file_name(id: u64) -> String {
    format!("seg-{id:06}.lmg")
}

pub(crate) fn parse_file_name(name: &str) -> Option<u64> {
    name.strip_prefix("seg-")?.strip_suffix(".lmg")?.parse().ok()
}

pub(crate) fn path_for(dir: &Path, id: u64) -> PathBuf {
    dir.join(file_name(id))
}

impl Segment {
    /// Writes `entries` (already sorted, unique keys) and fsyncs the file.
    pub(crate) fn write(dir: &Path, id: u64, entries: Vec<Entry>) -> Result<Self, StoreError> {
        debug_assert!(entries.windows(2).all(|w| w[0].0 < w[1].0));
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(entries.len() as u64).to_le_bytes());
        for (key, val) in &entries {
            encode_entry(&mut buf, key, val.as_deref());
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        let mut file = File::create(path_for(dir, id))?;
        file.write_all(&buf)?;
        file.sync_all()?;
        Ok(Self { id, entries })
    }

    pub(crate) fn read(dir: &Path, id: u64) -> Result<Self, StoreError> {
        let buf = std::fs::read(path_for(dir, id))?;
        let corrupt = |msg: &str| StoreError::Corrupt(format!("{}: {msg}", file_name(id)));
        if buf.len() < 20 || &buf[..4] != MAGIC {
            return Err(corrupt("bad magic header"));
        }
        let (body, crc) = buf.split_at(buf.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().unwrap()) {
            return Err(corrupt("checksum mismatch"));
        }
        let mut r = Reader::new(&body[4..]);
        if r.u32()? != VERSION {
            return Err(corrupt("unsupported version"));
        }
        let n = r.u64()? as usize;
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            entries.push(r.entry()?);
        }
        if r.remaining() != 0 {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Self { id, entries })
    }

    pub(crate) fn get(&self, key: &CellKey) -> Option<&Option<String>> {
        self.entries
            .binary_search_by(|(k, _)| k.cmp(key))
            .ok()
            .map(|i| &self.entries[i].1)
    }

    /// Entries with keys `>= from`.
    pub(crate) fn tail(&self, from: &CellKey) -> &[Entry] {
        let i = self.entries.partition_point(|(k, _)| k < from);
        &self.entries[i..]
    }
}
