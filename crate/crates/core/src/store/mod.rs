//! Exploded-schema tables over the embedded engine.
//!
//! | table      | row            | column             | value        |
//! |------------|----------------|--------------------|--------------|
//! | `Tedge`    | tweet id       | `field|value`      | `"1"`        |
//! | `TedgeT`   | `field|value`  | tweet id           | `"1"`        |
//! | `TedgeDeg` | `field|value`  | `degree`           | row count    |
//! | `TedgeTxt` | tweet id       | `text`, `meta|ts`  | raw text, ts |
//!
//! Indexed fields are `time` (UTC, minute resolution), `user`, `latlon`
//! (a [`GeoKey`](crate::geokey::GeoKey)) and one `word` column per distinct
//! token of the text.

mod codec;
mod engine;
mod segment;
mod wal;

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Bound;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use engine::{Engine, EngineOptions, Snapshot};

use crate::geokey::{encode_latlon, GeoKeyError, GeoKeyFormat};
use crate::ingest::{escape_field, TweetRecord};
use crate::tokenize::token_set;

pub const LATLON_PREFIX: &str = "latlon|";
pub const USER_PREFIX: &str = "user|";
pub const TIME_PREFIX: &str = "time|";
pub const WORD_PREFIX: &str = "word|";
pub const DEGREE_COL: &str = "degree";
pub const TEXT_COL: &str = "text";
pub const META_TS_COL: &str = "meta|ts";
const FORMAT_ROW: &str = "geokey-format";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt store: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Key(#[from] GeoKeyError),
    #[error("store was created with key format {stored:?}, opened with {requested:?}")]
    FormatMismatch { stored: GeoKeyFormat, requested: GeoKeyFormat },
    #[error("invalid cell: {0}")]
    InvalidCell(String),
}

pub type Result<T> = std::result::Result<T, StoreError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Table {
    Edge = 0,
    EdgeTranspose = 1,
    Degree = 2,
    Text = 3,
    /// Store metadata (key format); not part of the schema proper.
    Meta = 4,
}

impl Table {
    pub const SCHEMA: [Table; 4] = [Table::Edge, Table::EdgeTranspose, Table::Degree, Table::Text];

    pub fn name(self) -> &'static str {
        match self {
            Table::Edge => "Tedge",
            Table::EdgeTranspose => "TedgeT",
            Table::Degree => "TedgeDeg",
            Table::Text => "TedgeTxt",
            Table::Meta => "meta",
        }
    }

    pub(crate) fn from_u8(b: u8) -> Option<Self> {
        Some(match b {
            0 => Table::Edge,
            1 => Table::EdgeTranspose,
            2 => Table::Degree,
            3 => Table::Text,
            4 => Table::Meta,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub table: Table,
    pub row: String,
    pub col: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub row: String,
    pub col: String,
    pub val: String,
}

impl Cell {
    pub fn new(row: impl Into<String>, col: impl Into<String>, val: impl Into<String>) -> Self {
        Self { row: row.into(), col: col.into(), val: val.into() }
    }
}

fn check_key_part(what: &str, s: &str) -> Result<()> {
    if s.is_empty() {
        return Err(StoreError::InvalidCell(format!("empty {what}")));
    }
    if s.contains(['\t', '\n']) {
        return Err(StoreError::InvalidCell(format!("{what} contains a tab or newline")));
    }
    Ok(())
}

/// `time|` column value: ISO-8601 UTC truncated to the minute.
pub fn time_column(ts: i64) -> String {
    match chrono::DateTime::from_timestamp(ts, 0) {
        Some(t) => format!("{TIME_PREFIX}{}", t.format("%Y-%m-%dT%H:%MZ")),
        None => format!("{TIME_PREFIX}{ts}"),
    }
}

/// Every `Tedge` column a record produces.
pub fn record_columns(rec: &TweetRecord, fmt: GeoKeyFormat) -> Result<BTreeSet<String>> {
    let key = encode_latlon(rec.lat, rec.lon, fmt)?;
    let mut cols = BTreeSet::new();
    cols.insert(time_column(rec.timestamp));
    cols.insert(format!("{USER_PREFIX}{}", escape_field(&rec.user)));
    cols.insert(format!("{LATLON_PREFIX}{key}"));
    for word in token_set(&rec.text) {
        cols.insert(format!("{WORD_PREFIX}{word}"));
    }
    Ok(cols)
}

type Batch = Vec<(CellKey, Option<String>)>;

fn put(batch: &mut Batch, table: Table, row: &str, col: &str, val: String) {
    batch.push((CellKey { table, row: row.to_owned(), col: col.to_owned() }, Some(val)));
}

fn delete(batch: &mut Batch, table: Table, row: &str, col: &str) {
    batch.push((CellKey { table, row: row.to_owned(), col: col.to_owned() }, None));
}

/// The four schema tables in one engine. Writes are serialized; readers work
/// on snapshots and never block writers for longer than a map clone.
pub struct TableSet {
    engine: Engine,
    fmt: GeoKeyFormat,
    writer: Mutex<()>,
}

impl TableSet {
    pub fn open(dir: impl AsRef<Path>, fmt: GeoKeyFormat) -> Result<Self> {
        Self::open_with(dir, fmt, EngineOptions::default())
    }

    /// Opens a store, checking (or recording, for a new store) its key format.
    pub fn open_with(dir: impl AsRef<Path>, fmt: GeoKeyFormat, opts: EngineOptions) -> Result<Self> {
        fmt.validate()?;
        let engine = Engine::open(dir, opts)?;
        let snap = engine.snapshot();
        let stored = (
            snap.get(Table::Meta, FORMAT_ROW, "int_digits"),
            snap.get(Table::Meta, FORMAT_ROW, "frac_digits"),
        );
        match stored {
            (Some(i), Some(f)) => {
                let parse = |s: &str| s.parse::<usize>().map_err(|_| StoreError::Corrupt("bad stored key format".into()));
                let stored = GeoKeyFormat { int_digits: parse(&i)?, frac_digits: parse(&f)? };
                if stored != fmt {
                    return Err(StoreError::FormatMismatch { stored, requested: fmt });
                }
            }
            (None, None) => {
                let mut batch = Batch::new();
                put(&mut batch, Table::Meta, FORMAT_ROW, "int_digits", fmt.int_digits.to_string());
                put(&mut batch, Table::Meta, FORMAT_ROW, "frac_digits", fmt.frac_digits.to_string());
                engine.write(batch)?;
            }
            _ => return Err(StoreError::Corrupt("partial key format metadata".into())),
        }
        Ok(Self { engine, fmt, writer: Mutex::new(()) })
    }

    pub fn format(&self) -> GeoKeyFormat {
        self.fmt
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn snapshot(&self) -> TableSnapshot {
        TableSnapshot { inner: self.engine.snapshot() }
    }

    fn write_guard(&self) -> std::sync::MutexGuard<'_, ()> {
        self.writer.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Indexes `rec`, replacing any earlier record with the same id.
    pub fn put_record(&self, rec: &TweetRecord) -> Result<()> {
        check_key_part("id", &rec.id)?;
        let new_cols = record_columns(rec, self.fmt)?;
        let _guard = self.write_guard();
        let snap = self.engine.snapshot();
        let old_cols: BTreeSet<String> = snap
            .scan(Table::Edge, Bound::Included(&rec.id), Bound::Included(&rec.id))
            .map(|c| c.col)
            .collect();

        let mut batch = Batch::new();
        let adjust_degree = |batch: &mut Batch, col: &str, delta: i64| {
            let current: i64 = snap
                .get(Table::Degree, col, DEGREE_COL)
                .and_then(|v| v.parse().ok())
                .unwrap_or(0);
            let next = current + delta;
            if next > 0 {
                put(batch, Table::Degree, col, DEGREE_COL, next.to_string());
            } else {
                delete(batch, Table::Degree, col, DEGREE_COL);
            }
        };
        for col in old_cols.difference(&new_cols) {
            delete(&mut batch, Table::Edge, &rec.id, col);
            delete(&mut batch, Table::EdgeTranspose, col, &rec.id);
            adjust_degree(&mut batch, col, -1);
        }
        for col in new_cols.difference(&old_cols) {
            put(&mut batch, Table::Edge, &rec.id, col, "1".into());
            put(&mut batch, Table::EdgeTranspose, col, &rec.id, "1".into());
            adjust_degree(&mut batch, col, 1);
        }
        put(&mut batch, Table::Text, &rec.id, TEXT_COL, rec.text.clone());
        put(&mut batch, Table::Text, &rec.id, META_TS_COL, rec.timestamp.to_string());
        self.engine.write(batch)
    }

    /// Cells of `table` with `start <= row <= end`, in `(row, col)` order.
    pub fn scan_range(&self, table: Table, start: &str, end: &str) -> Vec<Cell> {
        self.snapshot().scan_range(table, start, end).collect()
    }

    pub fn get_text(&self, id: &str) -> Option<String> {
        self.snapshot().get_text(id)
    }

    /// Recomputes `TedgeDeg` from `Tedge`. Returns the number of degree
    /// entries that had to change.
    pub fn rebuild_degrees(&self) -> Result<usize> {
        let _guard = self.write_guard();
        let snap = self.snapshot();
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for cell in snap.scan_table(Table::Edge) {
            *counts.entry(cell.col).or_default() += 1;
        }
        let mut batch = Batch::new();
        for cell in snap.scan_table(Table::Degree) {
            let expected = counts.get(&cell.row);
            if cell.col != DEGREE_COL || expected.is_none() {
                delete(&mut batch, Table::Degree, &cell.row, &cell.col);
            }
        }
        for (col, n) in &counts {
            if snap.get(Table::Degree, col, DEGREE_COL).as_deref() != Some(n.to_string().as_str()) {
                put(&mut batch, Table::Degree, col, DEGREE_COL, n.to_string());
            }
        }
        let changed = batch.len();
        self.engine.write(batch)?;
        Ok(changed)
    }

    /// Writes one raw cell, bypassing the schema bookkeeping. Repair and
    /// testing tool; [`rebuild_degrees`](Self::rebuild_degrees) restores
    /// degree consistency afterwards.
    pub fn put_cell(&self, table: Table, cell: Cell) -> Result<()> {
        check_key_part("row", &cell.row)?;
        check_key_part("column", &cell.col)?;
        let _guard = self.write_guard();
        let mut batch = Batch::new();
        put(&mut batch, table, &cell.row, &cell.col, cell.val);
        self.engine.write(batch)
    }

    /// Number of stored records.
    pub fn record_count(&self) -> usize {
        self.snapshot().record_count()
    }

    pub fn flush(&self) -> Result<()> {
        self.engine.flush()
    }

    pub fn compact(&self) -> Result<()> {
        self.engine.flush()?;
        self.engine.compact()
    }

    pub fn sync(&self) -> Result<()> {
        self.engine.sync()
    }
}

/// Read-only view of all tables at one instant.
#[derive(Clone)]
pub struct TableSnapshot {
    inner: Snapshot,
}

impl TableSnapshot {
    pub fn scan_range<'a>(&'a self, table: Table, start: &'a str, end: &'a str) -> impl Iterator<Item = Cell> + 'a {
        self.inner.scan(table, Bound::Included(start), Bound::Included(end))
    }

    pub fn scan_table(&self, table: Table) -> impl Iterator<Item = Cell> + '_ {
        self.inner.scan(table, Bound::Unbounded, Bound::Unbounded)
    }

    /// Cells whose row starts with `prefix`.
    pub fn scan_prefix<'a>(&'a self, table: Table, prefix: &'a str) -> impl Iterator<Item = Cell> + 'a {
        self.inner
            .scan(table, Bound::Included(prefix), Bound::Unbounded)
            .take_while(move |c| c.row.starts_with(prefix))
    }

    pub fn get(&self, table: Table, row: &str, col: &str) -> Option<String> {
        self.inner.get(table, row, col)
    }

    pub fn get_text(&self, id: &str) -> Option<String> {
        self.get(Table::Text, id, TEXT_COL)
    }

    pub fn record_count(&self) -> usize {
        self.scan_table(Table::Text).filter(|c| c.col == TEXT_COL).count()
    }
}
