//! Write-ahead log: one framed record per write batch.
//!
//! Frame layout is `len:u32 crc:u32 payload`, where the payload is an entry
//! count followed by that many entries. A torn or corrupt tail is cut off on
//! replay, so a batch is either fully applied or not at all.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::Path;

use super::codec::{encode_entry, Entry, Reader};
use super::{CellKey, StoreError};

pub(crate) struct Wal {
    file: File,
    sync: bool,
}

impl Wal {
    /// Opens (or creates) the log and returns it with every intact batch.
    pub(crate) fn open(path: &Path, sync: bool) -> Result<(Self, Vec<Vec<Entry>>), StoreError> {
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)?;
        let mut buf = Vec::new();
        file.read_to_end(&mut buf)?;
        let (batches, valid_len) = replay(&buf);
        if valid_len < buf.len() {
            file.set_len(valid_len as u64)?;
            file.sync_data()?;
        }
        file.seek(SeekFrom::End(0))?;
        Ok((Self { file, sync }, batches))
    }

    pub(crate) fn append(&mut self, batch: &[(CellKey, Option<String>)]) -> Result<(), StoreError> {
        let mut payload = Vec::new();
        payload.extend_from_slice(&(batch.len() as u32).to_le_bytes());
        for (key, val) in batch {
            encode_entry(&mut payload, key, val.as_deref());
        }
        let mut frame = Vec::with_capacity(payload.len() + 8);
        frame.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        frame.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
        frame.extend_from_slice(&payload);
        self.file.write_all(&frame)?;
        if self.sync {
            self.file.sync_data()?;
        }
        Ok(())
    }

    /// Drops all logged batches once they are safely in a segment.
    pub(crate) fn reset(&mut self) -> Result<(), StoreError> {
        self.file.set_len(0)?;
        self.file.sync_data()?;
        Ok(())
    }

    pub(crate) fn sync(&mut self) -> Result<(), StoreError> {
        self.file.sync_data()?;
        Ok(())
    }
}

fn replay(buf: &[u8]) -> (Vec<Vec<Entry>>, usize) {
    let mut batches = Vec::new();
    let mut pos = 0;
    while buf.len() - pos >= 8 {
        let len = u32::from_le_bytes(buf[pos..pos + 4].try_into().unwrap()) as usize;
        let crc = u32::from_le_bytes(buf[pos + 4..pos + 8].try_into().unwrap());
        let Some(payload) = buf.get(pos + 8..pos + 8 + len) else {
            break;
        };
        if crc32fast::hash(payload) != crc {
            break;
        }
        let Ok(batch) = decode_batch(payload) else {
            break;
        };
        batches.push(batch);
        pos += 8 + len;
    }
    (batches, pos)
}

fn decode_batch(payload: &[u8]) -> Result<Vec<Entry>, StoreError> {
    let mut r = Reader::new(payload);
    let n = r.u32()? as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(r.entry()?);
    }
    if r.remaining() != 0 {
        return Err(StoreError::Corrupt("trailing bytes in log record".into()));
    }
    Ok(out)
}
