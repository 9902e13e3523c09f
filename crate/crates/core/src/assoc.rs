//! Associative-array selection over the store, `A = T(:, range)` style.
//!
//! Column ranges are answered from the transpose table, where each
//! `latlon|<key>` column is a row, so a box query is one contiguous scan per
//! sign quadrant followed by exact refinement.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::geokey::{self, box_range, decode_str, round_to, BBox, GeoKey, GeoKeyError, GeoKeyFormat, GeoKeyRange};
use crate::ingest::{unescape_field, TweetRecord};
use crate::store::{TableSnapshot, Table, LATLON_PREFIX, META_TS_COL, USER_PREFIX};
use crate::tokenize::{normalize_keyword, token_set};

#[derive(Debug, Error)]
pub enum AssocError {
    #[error(transparent)]
    Key(#[from] GeoKeyError),
    #[error("store integrity violation for id {id:?}: {what}")]
    Integrity { id: String, what: &'static str },
    #[error("invalid query: {0}")]
    InvalidQuery(String),
}

pub type Result<T> = std::result::Result<T, AssocError>;

/// Sparse `(row, col) -> val` mapping kept in `(row, col)` order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AssocArray {
    triples: BTreeMap<(String, String), String>,
}

impl AssocArray {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets `(row, col)`, replacing any existing value.
    pub fn insert(&mut self, row: impl Into<String>, col: impl Into<String>, val: impl Into<String>) {
        self.triples.insert((row.into(), col.into()), val.into());
    }

    pub fn get(&self, row: &str, col: &str) -> Option<&str> {
        self.triples.get(&(row.to_owned(), col.to_owned())).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, &str)> {
        self.triples.iter().map(|((r, c), v)| (r.as_str(), c.as_str(), v.as_str()))
    }

    /// Distinct row keys, ascending.
    pub fn rows(&self) -> Vec<&str> {
        let mut rows: Vec<&str> = self.triples.keys().map(|(r, _)| r.as_str()).collect();
        rows.dedup();
        rows
    }
}

impl FromIterator<(String, String, String)> for AssocArray {
    fn from_iter<I: IntoIterator<Item = (String, String, String)>>(iter: I) -> Self {
        let mut a = Self::new();
        for (r, c, v) in iter {
            a.insert(r, c, v);
        }
        a
    }
}

/// All rows, `latlon|` columns within `range` (inclusive).
pub fn select_cols(snap: &TableSnapshot, range: &GeoKeyRange) -> AssocArray {
    let start = format!("{LATLON_PREFIX}{}", range.start);
    let end = format!("{LATLON_PREFIX}{}", range.end);
    snap.scan_range(Table::EdgeTranspose, &start, &end)
        .map(|cell| (cell.col, cell.row, cell.val))
        .collect()
}

/// Joins each `(id, latlon|key)` triple with the stored text, user and
/// timestamp. Output is sorted by id.
pub fn extract_tweets(snap: &TableSnapshot, a: &AssocArray, fmt: GeoKeyFormat) -> Result<Vec<TweetRecord>> {
    let mut out = Vec::with_capacity(a.len());
    for (id, col, _) in a.iter() {
        let integrity = |what| AssocError::Integrity { id: id.to_owned(), what };
        let key = col.strip_prefix(LATLON_PREFIX).ok_or_else(|| integrity("column is not a latlon column"))?;
        let (lat, lon) = decode_str(key, fmt)?;
        let text = snap.get_text(id).ok_or_else(|| integrity("missing text"))?;
        let timestamp = snap
            .get(Table::Text, id, META_TS_COL)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| integrity("missing timestamp"))?;
        let user_col = snap
            .scan_range(Table::Edge, id, id)
            .find(|c| c.col.starts_with(USER_PREFIX))
            .ok_or_else(|| integrity("missing user column"))?;
        let user = unescape_field(&user_col.col[USER_PREFIX.len()..]).map_err(|_| integrity("bad user column"))?;
        out.push(TweetRecord { id: id.to_owned(), timestamp, lat, lon, user, text });
    }
    Ok(out)
}

/// Splits `bbox` into boxes that each lie in one key sign quadrant. A value
/// belongs to the negative side when it rounds (at the key precision) below
/// zero; zero is positive.
pub fn split_quadrants(bbox: &BBox, fmt: GeoKeyFormat) -> Vec<BBox> {
    let axis = |lo: f64, hi: f64| -> Vec<(f64, f64)> {
        let mut parts = Vec::with_capacity(2);
        if round_to(lo, fmt.frac_digits) < 0.0 {
            let neg_hi = if round_to(hi, fmt.frac_digits) < 0.0 { hi } else { (-fmt.unit()).max(lo) };
            parts.push((lo, neg_hi));
        }
        if hi >= 0.0 {
            let pos_lo = lo.max(0.0);
            parts.push((pos_lo, hi));
        }
        parts
    };
    let mut out = Vec::new();
    for &(lat_min, lat_max) in &axis(bbox.lat_min, bbox.lat_max) {
        for &(lon_min, lon_max) in &axis(bbox.lon_min, bbox.lon_max) {
            out.push(BBox { lat_min, lat_max, lon_min, lon_max });
        }
    }
    out
}

/// Box, optional inclusive time window, optional keyword.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub bbox: BBox,
    pub t0: Option<i64>,
    pub t1: Option<i64>,
    pub keyword: Option<String>,
}

impl Query {
    pub fn bbox(bbox: BBox) -> Self {
        Self { bbox, t0: None, t1: None, keyword: None }
    }

    pub fn between(mut self, t0: Option<i64>, t1: Option<i64>) -> Self {
        self.t0 = t0;
        self.t1 = t1;
        self
    }

    pub fn keyword(mut self, keyword: impl Into<String>) -> Self {
        self.keyword = Some(keyword.into());
        self
    }
}

/// Records inside the box (and window, and carrying the keyword as an exact
/// token), sorted by `(timestamp, id)`. Membership is decided on the stored
/// coordinates, i.e. rounded to the key precision.
///
/// A keyword that is not a single token matches nothing; an empty keyword
/// is ignored.
pub fn query_bbox(snap: &TableSnapshot, query: &Query, fmt: GeoKeyFormat) -> Result<Vec<TweetRecord>> {
    let bbox = query.bbox;
    bbox.validate()?;
    if let (Some(t0), Some(t1)) = (query.t0, query.t1) {
        if t0 > t1 {
            return Err(AssocError::InvalidQuery(format!("time window {t0} > {t1}")));
        }
    }
    let keyword = match query.keyword.as_deref().map(str::trim) {
        None | Some("") => None,
        Some(k) => match normalize_keyword(k) {
            Some(token) => Some(token),
            None => return Ok(Vec::new()),
        },
    };

    // nothing beyond the format's magnitude can be stored
    let max = fmt.max_magnitude();
    let clamped = BBox {
        lat_min: bbox.lat_min.max(-max),
        lat_max: bbox.lat_max.min(max),
        lon_min: bbox.lon_min.max(-max),
        lon_max: bbox.lon_max.min(max),
    };
    if clamped.lat_min > clamped.lat_max || clamped.lon_min > clamped.lon_max {
        return Ok(Vec::new());
    }

    let mut selected = AssocArray::new();
    for sub in split_quadrants(&clamped, fmt) {
        let range = box_range(&sub, fmt)?;
        let hits = select_cols(snap, &range);
        let candidates = hits.iter().map(|(id, col, val)| {
            let key = GeoKey::parse(&col[LATLON_PREFIX.len()..], fmt);
            (key, (id.to_owned(), col.to_owned(), val.to_owned()))
        });
        let mut parsed = Vec::with_capacity(hits.len());
        for (key, triple) in candidates {
            parsed.push((key?, triple));
        }
        for (_, (id, col, val)) in geokey::refine(parsed, &bbox, fmt)? {
            selected.insert(id, col, val);
        }
    }

    let mut records: Vec<TweetRecord> = extract_tweets(snap, &selected, fmt)?
        .into_iter()
        .filter(|r| query.t0.is_none_or(|t0| r.timestamp >= t0))
        .filter(|r| query.t1.is_none_or(|t1| r.timestamp <= t1))
        .filter(|r| keyword.as_ref().is_none_or(|k| token_set(&r.text).contains(k)))
        .collect();
    records.sort_by(|a, b| (a.timestamp, &a.id).cmp(&(b.timestamp, &b.id)));
    Ok(records)
}
