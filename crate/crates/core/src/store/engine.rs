//! Log-plus-sorted-runs key-value engine.
//!
//! Writes go to the write-ahead log and then into a persistent in-memory
//! map. When the map grows past its limit it is written out as a segment;
//! when there are too many segments they are merged into one. Reads merge
//! the map with the segments, newest source first.
//!
//! A [`Snapshot`] holds a structural-sharing clone of the map and the segment
//! list as of its creation, so later writes, flushes and compactions never
//! show through it.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::iter::Peekable;
use std::ops::Bound;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use imbl::OrdMap;

use super::codec::Entry;
use super::segment::{self, Segment};
use super::wal::Wal;
use super::{Cell, CellKey, StoreError, Table};

const WAL_FILE: &str = "wal.log";
const MANIFEST_FILE: &str = "MANIFEST";
const MANIFEST_HEADER: &str = "LMG1 manifest";

#[derive(Debug, Clone)]
pub struct EngineOptions {
    /// Entries held in memory before they are flushed to a segment.
    pub memtable_limit: usize,
    /// Segment count that triggers a full compaction.
    pub max_segments: usize,
    /// fsync the log after every write batch.
    pub sync_writes: bool,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self { memtable_limit: 64 * 1024, max_segments: 8, sync_writes: false }
    }
}

type Memtable = OrdMap<CellKey, Option<String>>;

struct Inner {
    wal: Wal,
    mem: Memtable,
    segments: Arc<Vec<Arc<Segment>>>,
    next_segment: u64,
}

pub struct Engine {
    dir: PathBuf,
    opts: EngineOptions,
    inner: Mutex<Inner>,
}

impl Engine {
    pub fn open(dir: impl AsRef<Path>, opts: EngineOptions) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let live = read_manifest(&dir)?;
        let mut segments = Vec::with_capacity(live.len());
        for &id in &live {
            segments.push(Arc::new(Segment::read(&dir, id)?));
        }
        // leftovers from an interrupted flush or compaction
        let mut max_seen = live.iter().copied().max().unwrap_or(0);
        for entry in fs::read_dir(&dir)? {
            let name = entry?.file_name();
            if let Some(id) = name.to_str().and_then(segment::parse_file_name) {
                max_seen = max_seen.max(id);
                if !live.contains(&id) {
                    fs::remove_file(dir.join(&name))?;
                }
            }
        }
        let (wal, batches) = Wal::open(&dir.join(WAL_FILE), opts.sync_writes)?;
        let mut mem = Memtable::new();
        for batch in batches {
            for (k, v) in batch {
                mem.insert(k, v);
            }
        }
        Ok(Self {
            dir,
            opts,
            inner: Mutex::new(Inner {
                wal,
                mem,
                segments: Arc::new(segments),
                next_segment: max_seen + 1,
            }),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Applies `batch` atomically: it is logged as one record.
    pub fn write(&self, batch: Vec<(CellKey, Option<String>)>) -> Result<(), StoreError> {
        if batch.is_empty() {
            return Ok(());
        }
        let mut inner = self.lock();
        inner.wal.append(&batch)?;
        for (k, v) in batch {
            inner.mem.insert(k, v);
        }
        if inner.mem.len() >= self.opts.memtable_limit {
            self.flush_locked(&mut inner)?;
        }
        Ok(())
    }

    pub fn snapshot(&self) -> Snapshot {
        let inner = self.lock();
        Snapshot { mem: inner.mem.clone(), segments: Arc::clone(&inner.segments) }
    }

    /// Writes the in-memory entries to a new segment and empties the log.
    pub fn flush(&self) -> Result<(), StoreError> {
        let mut inner = self.lock();
        self.flush_locked(&mut inner)
    }

    /// Merges every segment into one, dropping deletions and shadowed values.
    pub fn compact(&self) -> Result<(), StoreError> {
        let mut inner = self.lock();
        self.compact_locked(&mut inner)
    }

    pub fn sync(&self) -> Result<(), StoreError> {
        self.lock().wal.sync()
    }

    pub fn segment_count(&self) -> usize {
        self.lock().segments.len()
    }

    fn flush_locked(&self, inner: &mut Inner) -> Result<(), StoreError> {
        if inner.mem.is_empty() {
            return Ok(());
        }
        let entries: Vec<Entry> = inner.mem.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        let id = inner.next_segment;
        let seg = Segment::write(&self.dir, id, entries)?;
        let mut segments: Vec<Arc<Segment>> = inner.segments.iter().cloned().collect();
        segments.push(Arc::new(seg));
        write_manifest(&self.dir, segments.iter().map(|s| s.id))?;
        inner.next_segment += 1;
        inner.segments = Arc::new(segments);
        inner.mem = Memtable::new();
        inner.wal.reset()?;
        if inner.segments.len() > self.opts.max_segments {
            self.compact_locked(inner)?;
        }
        Ok(())
    }

    fn compact_locked(&self, inner: &mut Inner) -> Result<(), StoreError> {
        if inner.segments.len() <= 1 {
            return Ok(());
        }
        let sources: Vec<&[Entry]> = inner.segments.iter().rev().map(|s| &s.entries[..]).collect();
        let merged: Vec<Entry> = MergeIter::new(sources.into_iter().map(|s| s.iter().map(|(k, v)| (k, v))))
            .filter(|(_, v)| v.is_some())
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let id = inner.next_segment;
        let seg = Segment::write(&self.dir, id, merged)?;
        write_manifest(&self.dir, [id])?;
        inner.next_segment += 1;
        let old = std::mem::replace(&mut inner.segments, Arc::new(vec![Arc::new(seg)]));
        for s in old.iter() {
            // snapshots keep the in-memory copy alive; the file can go
            let _ = fs::remove_file(segment::path_for(&self.dir, s.id));
        }
        Ok(())
    }
}

impl Drop for Engine {
    fn drop(&mut self) {
        let _ = self.lock().wal.sync();
    }
}

fn read_manifest(dir: &Path) -> Result<Vec<u64>, StoreError> {
    let path = dir.join(MANIFEST_FILE);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut lines = text.lines();
    if lines.next() != Some(MANIFEST_HEADER) {
        return Err(StoreError::Corrupt("bad manifest header".into()));
    }
    let mut ids = Vec::new();
    let mut seen = BTreeSet::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let id: u64 = line.parse().map_err(|_| StoreError::Corrupt(format!("bad manifest line {line:?}")))?;
        if !seen.insert(id) {
            return Err(StoreError::Corrupt("duplicate segment in manifest".into()));
        }
        ids.push(id);
    }
    Ok(ids)
}

/// Replaces the manifest atomically (write, fsync, rename).
fn write_manifest(dir: &Path, ids: impl IntoIterator<Item = u64>) -> Result<(), StoreError> {
    let mut text = String::from(MANIFEST_HEADER);
    text.push('\n');
    for id in ids {
        text.push_str(&id.to_string());
        text.push('\n');
    }
    let tmp = dir.join("MANIFEST.tmp");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(text.as_bytes())?;
    f.sync_all()?;
    fs::rename(&tmp, dir.join(MANIFEST_FILE))?;
    if let Ok(d) = fs::File::open(dir) {
        let _ = d.sync_all();
    }
    Ok(())
}

/// Point-in-time view of the engine.
#[derive(Clone)]
pub struct Snapshot {
    mem: Memtable,
    segments: Arc<Vec<Arc<Segment>>>,
}

impl Snapshot {
    pub fn get(&self, table: Table, row: &str, col: &str) -> Option<String> {
        let key = CellKey { table, row: row.to_owned(), col: col.to_owned() };
        if let Some(v) = self.mem.get(&key) {
            return v.clone();
        }
        self.segments
            .iter()
            .rev()
            .find_map(|s| s.get(&key))
            .and_then(Clone::clone)
    }

    /// Cells of `table` whose row lies within the bounds, ascending by
    /// `(row, col)`.
    pub fn scan<'a>(&'a self, table: Table, start: Bound<&str>, end: Bound<&'a str>) -> impl Iterator<Item = Cell> + 'a {
        let (from, skip_row) = match start {
            Bound::Included(r) => (r.to_owned(), None),
            Bound::Excluded(r) => (r.to_owned(), Some(r.to_owned())),
            Bound::Unbounded => (String::new(), None),
        };
        let lower = CellKey { table, row: from, col: String::new() };
        let mem = self.mem.range(lower.clone()..).map(|(k, v)| (k, v));
        let mut sources: Vec<Box<dyn Iterator<Item = (&CellKey, &Option<String>)> + 'a>> = vec![Box::new(mem)];
        for seg in self.segments.iter().rev() {
            sources.push(Box::new(seg.tail(&lower).iter().map(|(k, v)| (k, v))));
        }
        MergeIter::new(sources)
            .skip_while(move |(k, _)| skip_row.as_deref() == Some(k.row.as_str()))
            .take_while(move |(k, _)| {
                k.table == table
                    && match end {
                        Bound::Included(e) => k.row.as_str() <= e,
                        Bound::Excluded(e) => k.row.as_str() < e,
                        Bound::Unbounded => true,
                    }
            })
            .filter_map(|(k, v)| {
                v.as_ref().map(|v| Cell { row: k.row.clone(), col: k.col.clone(), val: v.clone() })
            })
    }
}

/// K-way merge over sorted sources; on equal keys the earliest source wins
/// and the rest are skipped.
struct MergeIter<'a, I: Iterator<Item = (&'a CellKey, &'a Option<String>)>> {
    sources: Vec<Peekable<I>>,
}

impl<'a, I: Iterator<Item = (&'a CellKey, &'a Option<String>)>> MergeIter<'a, I> {
    fn new(sources: impl IntoIterator<Item = I>) -> Self {
        Self { sources: sources.into_iter().map(Iterator::peekable).collect() }
    }
}

impl<'a, I: Iterator<Item = (&'a CellKey, &'a Option<String>)>> Iterator for MergeIter<'a, I> {
    type Item = (&'a CellKey, &'a Option<String>);

    fn next(&mut self) -> Option<Self::Item> {
        let mut best: Option<(usize, &'a CellKey)> = None;
        for (i, src) in self.sources.iter_mut().enumerate() {
            if let Some(&(k, _)) = src.peek() {
                if best.is_none_or(|(_, bk)| k < bk) {
                    best = Some((i, k));
                }
            }
        }
        let (winner, key) = best?;
        let item = self.sources[winner].next();
        for (i, src) in self.sources.iter_mut().enumerate() {
            if i != winner {
                src.next_if(|(k, _)| *k == key);
            }
        }
        item
    }
}
