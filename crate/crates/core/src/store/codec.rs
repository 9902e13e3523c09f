//! Binary entry encoding shared by the write-ahead log and segment files.
//!
//! An entry is `table:u8 kind:u8 row col [val]`, each string a little-endian
//! `u32` length followed by UTF-8 bytes. `kind` 0 is a put, 1 a deletion
//! (no value follows).

use super::{CellKey, StoreError, Table};

pub(crate) type Entry = (CellKey, Option<String>);

const PUT: u8 = 0;
const DELETE: u8 = 1;

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

pub(crate) fn encode_entry(buf: &mut Vec<u8>, key: &CellKey, val: Option<&str>) {
    buf.push(key.table as u8);
    buf.push(if val.is_some() { PUT } else { DELETE });
    put_str(buf, &key.row);
    put_str(buf, &key.col);
    if let Some(v) = val {
        put_str(buf, v);
    }
}

/// Cursor over an in-memory byte slice.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn bytes(&mut self, n: usize) -> Result<&'a [u8], StoreError> {
        if self.remaining() < n {
            return Err(StoreError::Corrupt("unexpected end of data".into()));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u8(&mut self) -> Result<u8, StoreError> {
        Ok(self.bytes(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32, StoreError> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, StoreError> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, StoreError> {
        let len = self.u32()? as usize;
        let raw = self.bytes(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| StoreError::Corrupt("invalid UTF-8".into()))
    }

    pub(crate) fn entry(&mut self) -> Result<Entry, StoreError> {
        let table = Table::from_u8(self.u8()?)
            .ok_or_else(|| StoreError::Corrupt("unknown table id".into()))?;
        let kind = self.u8()?;
        let row = self.string()?;
        let col = self.string()?;
        let val = match kind {
            PUT => Some(self.string()?),
            DELETE => None,
            _ => return Err(StoreError::Corrupt("unknown entry kind".into())),
        };
        Ok((CellKey { table, row, col }, val))
    }
}
