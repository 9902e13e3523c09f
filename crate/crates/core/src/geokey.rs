//! Digit-interleaved latitude/longitude keys.
//!
//! A key is two sign characters (latitude first) followed by the
//! character-wise interleaving of the fixed-width decimal renderings of
//! `|lat|` and `|lon|`. With the default format (2 integer digits, 3
//! fractional digits) the point `(+42.350, -71.090)` becomes
//! `+-4721..305900`: `"42.350"` and `"71.090"` zipped together, the two
//! decimal points landing next to each other.
//!
//! Within one sign quadrant, lexicographic order on keys is Morton order on
//! the digit tuples, so a bounding box maps onto a single key range that is a
//! superset of the box. [`refine`] removes the false positives.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoKeyError {
    #[error("coordinate out of range: lat={lat}, lon={lon}")]
    OutOfRange { lat: f64, lon: f64 },
    #[error("integer part of {value} does not fit in {int_digits} digits")]
    WidthOverflow { value: f64, int_digits: usize },
    #[error("malformed key {key:?}: {reason}")]
    MalformedKey { key: String, reason: &'static str },
    #[error("bounding box crosses a quadrant boundary (lat=0 or lon=0)")]
    QuadrantSplit,
    #[error("invalid key format: int_digits={int_digits}, frac_digits={frac_digits}")]
    InvalidFormat { int_digits: usize, frac_digits: usize },
    #[error("invalid bounding box: {0}")]
    InvalidBBox(String),
}

pub type Result<T> = std::result::Result<T, GeoKeyError>;

const MAX_INT_DIGITS: usize = 9;
const MAX_FRAC_DIGITS: usize = 9;

/// Fixed widths shared by both axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GeoKeyFormat {
    pub int_digits: usize,
    pub frac_digits: usize,
}

impl Default for GeoKeyFormat {
    fn default() -> Self {
        Self { int_digits: 2, frac_digits: 3 }
    }
}

impl GeoKeyFormat {
    pub fn new(int_digits: usize, frac_digits: usize) -> Result<Self> {
        let fmt = Self { int_digits, frac_digits };
        fmt.validate()?;
        Ok(fmt)
    }

    /// Three integer digits: covers the whole globe.
    pub fn global(frac_digits: usize) -> Result<Self> {
        Self::new(3, frac_digits)
    }

    pub fn validate(&self) -> Result<()> {
        if (1..=MAX_INT_DIGITS).contains(&self.int_digits) && self.frac_digits <= MAX_FRAC_DIGITS {
            Ok(())
        } else {
            Err(GeoKeyError::InvalidFormat {
                int_digits: self.int_digits,
                frac_digits: self.frac_digits,
            })
        }
    }

    /// Width of one axis rendering, e.g. `"42.350"` is 6.
    pub fn axis_width(&self) -> usize {
        self.int_digits + self.frac_digits + usize::from(self.frac_digits > 0)
    }

    pub fn key_len(&self) -> usize {
        2 + 2 * self.axis_width()
    }

    /// Smallest representable step, `10^-frac_digits`.
    pub fn unit(&self) -> f64 {
        10f64.powi(-(self.frac_digits as i32))
    }

    /// Largest magnitude an axis can hold, e.g. `99.999` for the default.
    pub fn max_magnitude(&self) -> f64 {
        let s = format!(
            "{}.{}",
            "9".repeat(self.int_digits),
            "9".repeat(self.frac_digits)
        );
        s.parse().expect("digit string parses")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GeoKey(String);

impl GeoKey {
    /// Wraps `text` after checking it is a well-formed key for `fmt`.
    pub fn parse(text: &str, fmt: GeoKeyFormat) -> Result<Self> {
        decode_str(text, fmt)?;
        Ok(Self(text.to_owned()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl fmt::Display for GeoKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for GeoKey {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// Geographic bounding box, inclusive on all sides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl BBox {
    pub fn new(lat_min: f64, lat_max: f64, lon_min: f64, lon_max: f64) -> Result<Self> {
        let bbox = Self { lat_min, lat_max, lon_min, lon_max };
        bbox.validate()?;
        Ok(bbox)
    }

    /// Builds a box from two corners given in any order.
    pub fn from_corners(a: (f64, f64), b: (f64, f64)) -> Result<Self> {
        Self::new(a.0.min(b.0), a.0.max(b.0), a.1.min(b.1), a.1.max(b.1))
    }

    /// The campus box `(+42.350, -71.090)` to `(+42.357, -71.099)`.
    pub fn mit_campus() -> Self {
        Self { lat_min: 42.350, lat_max: 42.357, lon_min: -71.099, lon_max: -71.090 }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.lat_min, self.lat_max, self.lon_min, self.lon_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(GeoKeyError::InvalidBBox("non-finite bound".into()));
        }
        if self.lat_min < -90.0 || self.lat_max > 90.0 || self.lon_min < -180.0 || self.lon_max > 180.0 {
            return Err(GeoKeyError::InvalidBBox("bound outside valid degrees".into()));
        }
        if self.lat_min > self.lat_max || self.lon_min > self.lon_max {
            return Err(GeoKeyError::InvalidBBox("min exceeds max".into()));
        }
        Ok(())
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        self.lat_min <= lat && lat <= self.lat_max && self.lon_min <= lon && lon <= self.lon_max
    }
}

/// Inclusive key range; both ends share one sign prefix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeoKeyRange {
    pub start: GeoKey,
    pub end: GeoKey,
}

impl GeoKeyRange {
    pub fn contains(&self, key: &GeoKey) -> bool {
        &self.start <= key && key <= &self.end
    }
}

/// `|x|` rounded half away from zero, as decimal digit strings.
struct Rounded {
    negative: bool,
    int: String,
    frac: String,
}

/// Rounds the shortest decimal representation of `x`, so literals such as
/// `42.3505` round the way they read rather than by their binary value.
fn round_half_away(x: f64, frac_digits: usize) -> Rounded {
    debug_assert!(x.is_finite());
    // f64 Display never uses exponent notation.
    let text = format!("{}", x.abs());
    let (int_part, frac_part) = text.split_once('.').unwrap_or((&text, ""));
    let mut digits: Vec<u8> = int_part
        .bytes()
        .chain(frac_part.bytes().chain(std::iter::repeat(b'0')).take(frac_digits))
        .map(|b| b - b'0')
        .collect();
    let mut int_len = int_part.len();
    if frac_part.as_bytes().get(frac_digits).is_some_and(|&d| d >= b'5') {
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, 1);
                int_len += 1;
                break;
            }
            i -= 1;
            if digits[i] == 9 {
                digits[i] = 0;
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let to_str = |ds: &[u8]| ds.iter().map(|d| char::from(b'0' + d)).collect::<String>();
    let mut int = to_str(&digits[..int_len]);
    let frac = to_str(&digits[int_len..]);
    let trimmed = int.trim_start_matches('0');
    int = if trimmed.is_empty() { "0".to_owned() } else { trimmed.to_owned() };
    let zero = digits.iter().all(|&d| d == 0);
    Rounded { negative: x < 0.0 && !zero, int, frac }
}

/// Renders `x` with exactly `frac_digits` decimals, rounded half away from
/// zero. Negative values that round to zero render without a sign.
pub fn format_fixed(x: f64, frac_digits: usize) -> String {
    let r = round_half_away(x, frac_digits);
    let sign = if r.negative { "-" } else { "" };
    if frac_digits == 0 {
        format!("{sign}{}", r.int)
    } else {
        format!("{sign}{}.{}", r.int, r.frac)
    }
}

/// Rounds `x` to `frac_digits` decimals (half away from zero).
pub fn round_to(x: f64, frac_digits: usize) -> f64 {
    format_fixed(x, frac_digits).parse().expect("fixed rendering parses")
}

/// Sign flag and fixed-width magnitude of one axis.
fn render_axis(x: f64, fmt: GeoKeyFormat) -> Result<(bool, String)> {
    let r = round_half_away(x, fmt.frac_digits);
    if r.int.len() > fmt.int_digits {
        return Err(GeoKeyError::WidthOverflow { value: x, int_digits: fmt.int_digits });
    }
    let mut out = String::with_capacity(fmt.axis_width());
    for _ in r.int.len()..fmt.int_digits {
        out.push('0');
    }
    out.push_str(&r.int);
    if fmt.frac_digits > 0 {
        out.push('.');
        out.push_str(&r.frac);
    }
    Ok((r.negative, out))
}

fn sign_char(negative: bool) -> char {
    if negative {
        '-'
    } else {
        '+'
    }
}

fn assemble(lat_neg: bool, lon_neg: bool, lat: &str, lon: &str) -> GeoKey {
    let mut key = String::with_capacity(2 + lat.len() + lon.len());
    key.push(sign_char(lat_neg));
    key.push(sign_char(lon_neg));
    for (a, b) in lat.chars().zip(lon.chars()) {
        key.push(a);
        key.push(b);
    }
    GeoKey(key)
}

fn check_coords(lat: f64, lon: f64) -> Result<()> {
    if lat.is_finite() && lon.is_finite() && (-90.0..=90.0).contains(&lat) && (-180.0..=180.0).contains(&lon) {
        Ok(())
    } else {
        Err(GeoKeyError::OutOfRange { lat, lon })
    }
}

pub fn encode_latlon(lat: f64, lon: f64, fmt: GeoKeyFormat) -> Result<GeoKey> {
    fmt.validate()?;
    check_coords(lat, lon)?;
    let (lat_neg, lat_s) = render_axis(lat, fmt)?;
    let (lon_neg, lon_s) = render_axis(lon, fmt)?;
    Ok(assemble(lat_neg, lon_neg, &lat_s, &lon_s))
}

pub fn decode_latlon(key: &GeoKey, fmt: GeoKeyFormat) -> Result<(f64, f64)> {
    decode_str(key.as_str(), fmt)
}

/// Decodes a key held as plain text, e.g. a column qualifier suffix.
pub fn decode_str(text: &str, fmt: GeoKeyFormat) -> Result<(f64, f64)> {
    fmt.validate()?;
    let malformed = |reason| GeoKeyError::MalformedKey { key: text.to_owned(), reason };
    let bytes = text.as_bytes();
    if bytes.len() != fmt.key_len() {
        return Err(malformed("wrong length"));
    }
    let sign = |b: u8| match b {
        b'+' => Ok(false),
        b'-' => Ok(true),
        _ => Err(malformed("bad sign character")),
    };
    let lat_neg = sign(bytes[0])?;
    let lon_neg = sign(bytes[1])?;
    let body = &bytes[2..];
    let lat: Vec<u8> = body.iter().step_by(2).copied().collect();
    let lon: Vec<u8> = body.iter().skip(1).step_by(2).copied().collect();
    let lat = parse_axis(&lat, lat_neg, fmt).ok_or_else(|| malformed("bad latitude digits"))?;
    let lon = parse_axis(&lon, lon_neg, fmt).ok_or_else(|| malformed("bad longitude digits"))?;
    check_coords(lat, lon).map_err(|_| malformed("coordinate outside valid degrees"))?;
    Ok((lat, lon))
}

fn parse_axis(chars: &[u8], negative: bool, fmt: GeoKeyFormat) -> Option<f64> {
    let (int, rest) = chars.split_at(fmt.int_digits);
    if !int.iter().all(u8::is_ascii_digit) {
        return None;
    }
    let frac = if fmt.frac_digits > 0 {
        let (point, frac) = rest.split_first()?;
        if *point != b'.' || !frac.iter().all(u8::is_ascii_digit) {
            return None;
        }
        frac
    } else {
        rest
    };
    let all_zero = int.iter().chain(frac).all(|&d| d == b'0');
    if negative && all_zero {
        // zero is always '+'
        return None;
    }
    let text = std::str::from_utf8(chars).ok()?;
    let magnitude: f64 = text.parse().ok()?;
    Some(if negative { -magnitude } else { magnitude })
}

/// Key range covering `bbox` within a single sign quadrant.
///
/// Bounds are rounded to the key format before use, so the range always
/// contains every point whose rounded coordinates lie in the box.
pub fn box_range(bbox: &BBox, fmt: GeoKeyFormat) -> Result<GeoKeyRange> {
    fmt.validate()?;
    bbox.validate()?;
    let (lat_lo_neg, lat_lo) = render_axis(bbox.lat_min, fmt)?;
    let (lat_hi_neg, lat_hi) = render_axis(bbox.lat_max, fmt)?;
    let (lon_lo_neg, lon_lo) = render_axis(bbox.lon_min, fmt)?;
    let (lon_hi_neg, lon_hi) = render_axis(bbox.lon_max, fmt)?;
    if lat_lo_neg != lat_hi_neg || lon_lo_neg != lon_hi_neg {
        return Err(GeoKeyError::QuadrantSplit);
    }
    // On a negative axis the smallest magnitude is the max bound.
    let (lat_small, lat_big) = if lat_lo_neg { (lat_hi, lat_lo) } else { (lat_lo, lat_hi) };
    let (lon_small, lon_big) = if lon_lo_neg { (lon_hi, lon_lo) } else { (lon_lo, lon_hi) };
    Ok(GeoKeyRange {
        start: assemble(lat_lo_neg, lon_lo_neg, &lat_small, &lon_small),
        end: assemble(lat_lo_neg, lon_lo_neg, &lat_big, &lon_big),
    })
}

/// Keeps the candidates whose decoded coordinates fall inside `bbox`.
pub fn refine<P>(
    candidates: impl IntoIterator<Item = (GeoKey, P)>,
    bbox: &BBox,
    fmt: GeoKeyFormat,
) -> Result<Vec<(GeoKey, P)>> {
    let mut kept = Vec::new();
    for (key, payload) in candidates {
        let (lat, lon) = decode_latlon(&key, fmt)?;
        if bbox.contains(lat, lon) {
            kept.push((key, payload));
        }
    }
    Ok(kept)
}
