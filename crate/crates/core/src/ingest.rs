//! Feed parsing and the canonical TSV form of a record.
//!
//! Feed lines are JSON objects of the form
//! `{"id": "...", "ts": 1388534400, "user": "...", "text": "...", "geo": [lon, lat]}`;
//! `geo` may be absent or `null` for posts without a location.
//!
//! TSV lines carry six tab-separated fields (id, timestamp, lat, lon, user,
//! text) and end in a single newline. Tab, newline, carriage return and
//! backslash inside `user` and `text` are written as `\t`, `\n`, `\r`, `\\`.

use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geokey::format_fixed;

pub const DEFAULT_FRAC_DIGITS: usize = 3;

#[derive(Debug, Error)]
pub enum IngestError<E> {
    #[error("reading feed: {0}")]
    Io(#[from] std::io::Error),
    #[error("record sink failed: {0}")]
    Sink(E),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed line: {0}")]
pub struct Malformed(pub String);

/// One geo-tagged post.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TweetRecord {
    pub id: String,
    /// UTC seconds since the epoch.
    pub timestamp: i64,
    pub lat: f64,
    pub lon: f64,
    pub user: String,
    pub text: String,
}

impl TweetRecord {
    pub fn validate(&self) -> Result<(), Malformed> {
        if self.id.is_empty() {
            return Err(Malformed("empty id".into()));
        }
        if self.id.contains(['\t', '\n', '\r']) {
            return Err(Malformed("id contains a tab or line break".into()));
        }
        if !(self.lat.is_finite() && (-90.0..=90.0).contains(&self.lat)) {
            return Err(Malformed(format!("latitude {} out of range", self.lat)));
        }
        if !(self.lon.is_finite() && (-180.0..=180.0).contains(&self.lon)) {
            return Err(Malformed(format!("longitude {} out of range", self.lon)));
        }
        Ok(())
    }
}

/// Outcome of parsing one feed line.
#[derive(Debug, Clone, PartialEq)]
pub enum FeedLine {
    Record(TweetRecord),
    NoGeo,
    Malformed(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub lines_read: u64,
    pub records_kept: u64,
    pub records_dropped_no_geo: u64,
    pub records_dropped_malformed: u64,
}

impl IngestStats {
    pub fn merge(&mut self, other: &IngestStats) {
        self.lines_read += other.lines_read;
        self.records_kept += other.records_kept;
        self.records_dropped_no_geo += other.records_dropped_no_geo;
        self.records_dropped_malformed += other.records_dropped_malformed;
    }
}

#[derive(Deserialize)]
struct RawFeedLine {
    id: String,
    ts: i64,
    user: String,
    text: String,
    #[serde(default)]
    geo: Option<[f64; 2]>,
}

pub fn parse_feed_line(line: &str) -> FeedLine {
    let raw: RawFeedLine = match serde_json::from_str(line) {
        Ok(raw) => raw,
        Err(e) => return FeedLine::Malformed(e.to_string()),
    };
    let Some([lon, lat]) = raw.geo else {
        return FeedLine::NoGeo;
    };
    let rec = TweetRecord {
        id: raw.id,
        timestamp: raw.ts,
        lat,
        lon,
        user: raw.user,
        text: raw.text,
    };
    match rec.validate() {
        Ok(()) => FeedLine::Record(rec),
        Err(Malformed(reason)) => FeedLine::Malformed(reason),
    }
}

/// Serializes a record back into the feed schema. Used for test fixtures and
/// for replaying stored records.
pub fn to_feed_line(rec: &TweetRecord) -> String {
    serde_json::json!({
        "id": rec.id,
        "ts": rec.timestamp,
        "user": rec.user,
        "text": rec.text,
        "geo": [rec.lon, rec.lat],
    })
    .to_string()
}

pub fn escape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\\' => out.push_str("\\\\"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape_field(s: &str) -> Result<String, Malformed> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('\\') => out.push('\\'),
            Some(other) => return Err(Malformed(format!("bad escape \\{other}"))),
            None => return Err(Malformed("dangling backslash".into())),
        }
    }
    Ok(out)
}

pub fn to_tsv(rec: &TweetRecord) -> String {
    to_tsv_with(rec, DEFAULT_FRAC_DIGITS)
}

pub fn to_tsv_with(rec: &TweetRecord, frac_digits: usize) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\n",
        rec.id,
        rec.timestamp,
        format_fixed(rec.lat, frac_digits),
        format_fixed(rec.lon, frac_digits),
        escape_field(&rec.user),
        escape_field(&rec.text),
    )
}

pub fn from_tsv(line: &str) -> Result<TweetRecord, Malformed> {
    let line = line.strip_suffix('\n').unwrap_or(line);
    if line.is_empty() {
        return Err(Malformed("empty line".into()));
    }
    let fields: Vec<&str> = line.split('\t').collect();
    let [id, ts, lat, lon, user, text] = fields[..] else {
        return Err(Malformed(format!("expected 6 fields, found {}", fields.len())));
    };
    let number = |name: &str, v: &str| Malformed(format!("bad {name} {v:?}"));
    let rec = TweetRecord {
        id: id.to_owned(),
        timestamp: ts.parse().map_err(|_| number("timestamp", ts))?,
        lat: lat.parse().map_err(|_| number("latitude", lat))?,
        lon: lon.parse().map_err(|_| number("longitude", lon))?,
        user: unescape_field(user)?,
        text: unescape_field(text)?,
    };
    rec.validate()?;
    Ok(rec)
}

/// Runs every line through [`parse_feed_line`] and hands kept records to
/// `sink` in input order. Parse failures are counted, never fatal.
pub fn ingest_stream<L, E>(
    lines: impl IntoIterator<Item = L>,
    mut sink: impl FnMut(TweetRecord) -> Result<(), E>,
) -> Result<IngestStats, E>
where
    L: AsRef<str>,
{
    let mut stats = IngestStats::default();
    for line in lines {
        stats.lines_read += 1;
        let line = line.as_ref();
        match parse_feed_line(line.strip_suffix('\r').unwrap_or(line)) {
            FeedLine::Record(rec) => {
                stats.records_kept += 1;
                sink(rec)?;
            }
            FeedLine::NoGeo => stats.records_dropped_no_geo += 1,
            FeedLine::Malformed(_) => stats.records_dropped_malformed += 1,
        }
    }
    Ok(stats)
}

/// [`ingest_stream`] over a buffered reader.
pub fn ingest_reader<E>(
    reader: impl BufRead,
    sink: impl FnMut(TweetRecord) -> Result<(), E>,
) -> Result<IngestStats, IngestError<E>> {
    let mut io_err = None;
    let lines = reader.lines().map_while(|l| match l {
        Ok(l) => Some(l),
        Err(e) => {
            io_err = Some(e);
            None
        }
    });
    let stats = ingest_stream(lines, sink).map_err(IngestError::Sink)?;
    match io_err {
        Some(e) => Err(IngestError::Io(e)),
        None => Ok(stats),
    }
}

/// Reads TSV lines (bulk-load input), handing each record to `sink`.
/// Blank lines are skipped; any other bad line aborts with its line number.
pub fn read_tsv<E>(
    reader: impl BufRead,
    mut sink: impl FnMut(TweetRecord) -> Result<(), E>,
) -> Result<u64, TsvLoadError<E>> {
    let mut count = 0;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let rec = from_tsv(&line).map_err(|e| TsvLoadError::Malformed { line: idx + 1, source: e })?;
        sink(rec).map_err(TsvLoadError::Sink)?;
        count += 1;
    }
    Ok(count)
}

#[derive(Debug, Error)]
pub enum TsvLoadError<E> {
    #[error("reading TSV: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Malformed { line: usize, source: Malformed },
    #[error("record sink failed: {0}")]
    Sink(E),
}
