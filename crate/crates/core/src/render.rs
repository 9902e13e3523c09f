//! Frame rendering: one RGB8 pixel per grid cell, row 0 south.
//!
//! All pixel arithmetic rounds half up (colormap steps round half away from
//! zero on the signed channel delta) and clamps to `[0, 255]`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridmap::{GridSpec, HeightGrid};
use crate::ingest::TweetRecord;
use crate::tokenize::{normalize_keyword, token_set, tokens};

#[derive(Debug, Error, PartialEq)]
pub enum RenderError {
    #[error("frame is {got:?}, expected {expected:?} (width, height)")]
    DimensionMismatch { expected: (usize, usize), got: (usize, usize) },
    #[error("invalid scheme: {0}")]
    InvalidScheme(String),
}

pub type Result<T> = std::result::Result<T, RenderError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rgb(pub u8, pub u8, pub u8);

impl Rgb {
    pub const BLACK: Rgb = Rgb(0, 0, 0);
    pub const WHITE: Rgb = Rgb(255, 255, 255);

    fn channels(self) -> [u8; 3] {
        [self.0, self.1, self.2]
    }

    fn from_channels(c: [u8; 3]) -> Self {
        Rgb(c[0], c[1], c[2])
    }
}

/// Moves from `a` toward `b` by `t` of the way; the step is rounded half
/// away from zero so both directions are symmetric.
fn step_channel(a: u8, b: u8, t: f64) -> u8 {
    let delta = f64::from(b) - f64::from(a);
    let step = (delta.abs() * t + 0.5).floor().copysign(delta);
    (f64::from(a) + step).clamp(0.0, 255.0) as u8
}

/// Two-endpoint linear colormap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Colormap {
    pub low: Rgb,
    pub high: Rgb,
}

impl Default for Colormap {
    fn default() -> Self {
        Self { low: Rgb(0, 0, 64), high: Rgb(255, 255, 0) }
    }
}

impl Colormap {
    pub fn new(low: Rgb, high: Rgb) -> Self {
        Self { low, high }
    }

    /// Color at `t` in `[0, 1]` (clamped).
    pub fn map(&self, t: f64) -> Rgb {
        let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
        let (lo, hi) = (self.low.channels(), self.high.channels());
        Rgb::from_channels([0, 1, 2].map(|i| step_channel(lo[i], hi[i], t)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameBuffer {
    pub width: usize,
    pub height: usize,
    /// Position in the frame stream; 0 for frames not yet broadcast.
    pub seq: u64,
    /// Row-major RGB8, row 0 is the southern grid row.
    pub pixels: Vec<u8>,
}

impl FrameBuffer {
    pub fn filled(width: usize, height: usize, color: Rgb) -> Self {
        let pixels = color.channels().iter().copied().cycle().take(width * height * 3).collect();
        Self { width, height, seq: 0, pixels }
    }

    pub fn for_grid(spec: &GridSpec, color: Rgb) -> Self {
        Self::filled(spec.ncols, spec.nrows, color)
    }

    pub fn pixel(&self, row: usize, col: usize) -> Rgb {
        let i = (row * self.width + col) * 3;
        Rgb(self.pixels[i], self.pixels[i + 1], self.pixels[i + 2])
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, c: Rgb) {
        let i = (row * self.width + col) * 3;
        self.pixels[i..i + 3].copy_from_slice(&c.channels());
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Binary PPM (P6), north-up: the last grid row is written first.
    pub fn write_ppm(&self, mut w: impl Write) -> std::io::Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        let stride = self.width * 3;
        for row in (0..self.height).rev() {
            w.write_all(&self.pixels[row * stride..(row + 1) * stride])?;
        }
        Ok(())
    }
}

pub fn render_height(hg: &HeightGrid, cmap: &Colormap) -> FrameBuffer {
    let max = hg.max_height();
    let mut frame = FrameBuffer::for_grid(&hg.spec, cmap.low);
    if max <= 0.0 {
        return frame;
    }
    for r in 0..hg.spec.nrows {
        for c in 0..hg.spec.ncols {
            frame.set_pixel(r, c, cmap.map(hg.get(r, c) / max));
        }
    }
    frame
}

/// Number of in-box records per cell, row-major.
pub fn bin_counts<'a>(recs: impl IntoIterator<Item = &'a TweetRecord>, spec: &GridSpec) -> Vec<u32> {
    let mut counts = vec![0; spec.cell_count()];
    for r in recs {
        if let Some((row, col)) = spec.align(r.lat, r.lon) {
            counts[spec.index(row, col)] += 1;
        }
    }
    counts
}

fn scale(count: u32, max: u32, log_scale: bool) -> f64 {
    if count == 0 || max == 0 {
        0.0
    } else if log_scale {
        f64::from(count).ln_1p() / f64::from(max).ln_1p()
    } else {
        f64::from(count) / f64::from(max)
    }
}

/// Colors `counts` against `max`, which may exceed the local maximum.
pub fn render_counts(counts: &[u32], spec: &GridSpec, cmap: &Colormap, log_scale: bool, max: u32) -> FrameBuffer {
    let mut frame = FrameBuffer::for_grid(spec, cmap.low);
    for r in 0..spec.nrows {
        for c in 0..spec.ncols {
            let n = counts[spec.index(r, c)];
            if n > 0 {
                frame.set_pixel(r, c, cmap.map(scale(n, max, log_scale)));
            }
        }
    }
    frame
}

pub fn render_density(recs: &[TweetRecord], spec: &GridSpec, cmap: &Colormap, log_scale: bool) -> FrameBuffer {
    let counts = bin_counts(recs, spec);
    let max = counts.iter().copied().max().unwrap_or(0);
    render_counts(&counts, spec, cmap, log_scale, max)
}

/// Per-pixel `round((1 - alpha) * base + alpha * overlay)`.
pub fn composite(base: &FrameBuffer, overlay: &FrameBuffer, alpha: f64) -> Result<FrameBuffer> {
    if base.dims() != overlay.dims() {
        return Err(RenderError::DimensionMismatch { expected: base.dims(), got: overlay.dims() });
    }
    let alpha = alpha.clamp(0.0, 1.0);
    let pixels = base
        .pixels
        .iter()
        .zip(&overlay.pixels)
        .map(|(&b, &o)| {
            let v = (1.0 - alpha) * f64::from(b) + alpha * f64::from(o);
            (v + 0.5).floor().clamp(0.0, 255.0) as u8
        })
        .collect();
    Ok(FrameBuffer { width: base.width, height: base.height, seq: 0, pixels })
}

/// Records whose token set contains `keyword` (normalized like the index).
pub fn keyword_filter<'a>(recs: &'a [TweetRecord], keyword: &str) -> Vec<&'a TweetRecord> {
    match normalize_keyword(keyword) {
        Some(k) => recs.iter().filter(|r| token_set(&r.text).contains(&k)).collect(),
        None => Vec::new(),
    }
}

/// Density of the keyword matches blended over `base`.
pub fn render_keyword(
    recs: &[TweetRecord],
    keyword: &str,
    spec: &GridSpec,
    base: &FrameBuffer,
    alpha: f64,
    cmap: &Colormap,
    log_scale: bool,
) -> Result<FrameBuffer> {
    let expected = (spec.ncols, spec.nrows);
    if base.dims() != expected {
        return Err(RenderError::DimensionMismatch { expected, got: base.dims() });
    }
    let hits = keyword_filter(recs, keyword);
    let counts = bin_counts(hits.iter().copied(), spec);
    let max = counts.iter().copied().max().unwrap_or(0);
    let overlay = render_counts(&counts, spec, cmap, log_scale, max);
    composite(base, &overlay, alpha)
}

pub fn default_stopwords() -> BTreeSet<String> {
    include_str!("../data/stopwords.txt")
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect()
}

/// Top `k` terms per cell (row-major) by count, ties broken alphabetically.
pub fn top_terms(recs: &[TweetRecord], spec: &GridSpec, k: usize, stopwords: &BTreeSet<String>) -> Vec<Vec<(String, u32)>> {
    let mut freq: Vec<BTreeMap<String, u32>> = vec![BTreeMap::new(); spec.cell_count()];
    for r in recs {
        if let Some((row, col)) = spec.align(r.lat, r.lon) {
            let cell = &mut freq[spec.index(row, col)];
            for t in tokens(&r.text).filter(|t| !stopwords.contains(t)) {
                *cell.entry(t).or_default() += 1;
            }
        }
    }
    freq.into_iter()
        .map(|cell| {
            let mut terms: Vec<(String, u32)> = cell.into_iter().collect();
            terms.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            terms.truncate(k);
            terms
        })
        .collect()
}

/// Bin of `ts` when `[t0, t1]` is cut into `bins` equal intervals, half-open
/// except the last, which includes `t1`.
pub fn animation_bin(ts: i64, t0: i64, t1: i64, bins: usize) -> Option<usize> {
    if ts < t0 || ts > t1 || t1 <= t0 || bins == 0 {
        return None;
    }
    let offset = i128::from(ts) - i128::from(t0);
    let span = i128::from(t1) - i128::from(t0);
    let b = (offset * bins as i128 / span) as usize;
    Some(b.min(bins - 1))
}

/// Per-bin cell counts.
pub fn animation_counts(recs: &[TweetRecord], spec: &GridSpec, t0: i64, t1: i64, bins: usize) -> Vec<Vec<u32>> {
    let mut per_bin = vec![vec![0u32; spec.cell_count()]; bins];
    for r in recs {
        if let (Some(b), Some((row, col))) = (animation_bin(r.timestamp, t0, t1, bins), spec.align(r.lat, r.lon)) {
            per_bin[b][spec.index(row, col)] += 1;
        }
    }
    per_bin
}

/// One density frame per time bin, all normalized to the largest count in
/// any bin.
pub fn animate(
    recs: &[TweetRecord],
    spec: &GridSpec,
    t0: i64,
    t1: i64,
    bins: usize,
    cmap: &Colormap,
    log_scale: bool,
) -> Result<Vec<FrameBuffer>> {
    if t1 <= t0 {
        return Err(RenderError::InvalidScheme(format!("animation window needs t0 < t1, got {t0}..{t1}")));
    }
    if bins == 0 {
        return Err(RenderError::InvalidScheme("animation needs at least one bin".into()));
    }
    let per_bin = animation_counts(recs, spec, t0, t1, bins);
    let max = per_bin.iter().flatten().copied().max().unwrap_or(0);
    Ok(per_bin.iter().map(|c| render_counts(c, spec, cmap, log_scale, max)).collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeMode {
    #[default]
    Height,
    Density,
    Keyword,
    Topics,
    Animate,
}

/// The active visualization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeConfig {
    pub mode: SchemeMode,
    pub keyword: String,
    pub t0: Option<i64>,
    pub t1: Option<i64>,
    pub bins: usize,
    pub alpha: f64,
    pub colormap: Colormap,
    pub log_scale: bool,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self {
            mode: SchemeMode::Height,
            keyword: String::new(),
            t0: None,
            t1: None,
            bins: 12,
            alpha: 0.6,
            colormap: Colormap::default(),
            log_scale: false,
        }
    }
}

impl SchemeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins < 1 {
            return Err(RenderError::InvalidScheme("bins must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(RenderError::InvalidScheme(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if let (Some(t0), Some(t1)) = (self.t0, self.t1) {
            if t0 > t1 {
                return Err(RenderError::InvalidScheme(format!("time window {t0} > {t1}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geokey::BBox;

    fn spec() -> GridSpec {
        GridSpec::new(BBox::new(0.0, 2.0, 0.0, 3.0).unwrap(), 2, 3).unwrap()
    }

    fn rec(id: &str, ts: i64, lat: f64, lon: f64, text: &str) -> TweetRecord {
        TweetRecord { id: id.into(), timestamp: ts, lat, lon, user: "u".into(), text: text.into() }
    }

    #[test]
    fn height_endpoints_and_midpoint() {
        let cmap = Colormap::new(Rgb(0, 0, 255), Rgb(255, 0, 0));
        let hg = HeightGrid { spec: spec(), heights: vec![0.0, 5.0, 10.0, 0.0, 0.0, 0.0] };
        let f = render_height(&hg, &cmap);
        assert_eq!(f.pixel(0, 0), cmap.low);
        assert_eq!(f.pixel(0, 2), cmap.high);
        assert_eq!(f.pixel(0, 1), Rgb(128, 0, 127));
        assert_eq!(f.pixels.len(), 18);
    }

    #[test]
    fn all_zero_heights_render_low() {
        let cmap = Colormap::default();
        let f = render_height(&HeightGrid::zeros(spec()), &cmap);
        assert_eq!(f, FrameBuffer::for_grid(&spec(), cmap.low));
    }

    #[test]
    fn density_single_max_and_empty() {
        let cmap = Colormap::default();
        let recs: Vec<_> = (0..3).map(|i| rec(&i.to_string(), 0, 1.5, 2.5, "x")).collect();
        let f = render_density(&recs, &spec(), &cmap, false);
        for r in 0..2 {
            for c in 0..3 {
                let expect = if (r, c) == (1, 2) { cmap.high } else { cmap.low };
                assert_eq!(f.pixel(r, c), expect);
            }
        }
        assert_eq!(render_density(&[], &spec(), &cmap, true), FrameBuffer::for_grid(&spec(), cmap.low));
    }

    #[test]
    fn log_scale_brightens_small_counts() {
        let cmap = Colormap::new(Rgb::BLACK, Rgb::WHITE);
        let mut recs: Vec<_> = (0..9).map(|i| rec(&i.to_string(), 0, 0.5, 0.5, "x")).collect();
        recs.push(rec("a", 0, 1.5, 1.5, "x"));
        let lin = render_density(&recs, &spec(), &cmap, false);
        let log = render_density(&recs, &spec(), &cmap, true);
        // 1/9 of the way vs ln2/ln10 of the way
        assert_eq!(lin.pixel(1, 1), Rgb(28, 28, 28));
        assert_eq!(log.pixel(1, 1), Rgb(77, 77, 77));
    }

    #[test]
    fn compositing_identities_and_midpoint() {
        let base = FrameBuffer::for_grid(&spec(), Rgb::BLACK);
        let white = FrameBuffer::for_grid(&spec(), Rgb::WHITE);
        assert_eq!(composite(&base, &white, 0.0).unwrap(), base);
        assert_eq!(composite(&base, &white, 1.0).unwrap(), white);
        assert_eq!(composite(&base, &white, 0.5).unwrap(), FrameBuffer::for_grid(&spec(), Rgb(128, 128, 128)));
        let small = FrameBuffer::filled(1, 1, Rgb::BLACK);
        assert!(matches!(composite(&base, &small, 0.5), Err(RenderError::DimensionMismatch { .. })));
    }

    #[test]
    fn keyword_overlay() {
        let cmap = Colormap::default();
        let recs = vec![rec("1", 0, 0.5, 0.5, "Go MIT"), rec("2", 0, 1.5, 2.5, "other")];
        let base = render_height(&HeightGrid::zeros(spec()), &cmap);
        let full = render_keyword(&recs, "mit", &spec(), &base, 1.0, &cmap, false).unwrap();
        assert_eq!(full.pixel(0, 0), cmap.high);
        assert_eq!(full.pixel(1, 2), cmap.low);
        assert_eq!(render_keyword(&recs, "mit", &spec(), &base, 0.0, &cmap, false).unwrap(), base);
        let wrong = FrameBuffer::filled(2, 2, Rgb::BLACK);
        assert!(render_keyword(&recs, "mit", &spec(), &wrong, 0.5, &cmap, false).is_err());
    }

    #[test]
    fn top_terms_tie_break() {
        let recs = vec![rec("1", 0, 0.5, 0.5, "go tech"), rec("2", 0, 0.5, 0.5, "tech day")];
        let terms = top_terms(&recs, &spec(), 2, &BTreeSet::new());
        assert_eq!(terms[0], vec![("tech".to_owned(), 2), ("day".to_owned(), 1)]);
        assert!(terms[1].is_empty());
        let stop: BTreeSet<String> = ["go", "tech", "day"].map(String::from).into();
        assert!(top_terms(&recs, &spec(), 2, &stop)[0].is_empty());
    }

    #[test]
    fn stopword_list_has_fifty_entries() {
        let s = default_stopwords();
        assert_eq!(s.len(), 50);
        assert!(s.contains("the"));
    }

    #[test]
    fn animation_bins() {
        assert_eq!(animation_bin(0, 0, 100, 4), Some(0));
        assert_eq!(animation_bin(24, 0, 100, 4), Some(0));
        assert_eq!(animation_bin(25, 0, 100, 4), Some(1));
        assert_eq!(animation_bin(99, 0, 100, 4), Some(3));
        assert_eq!(animation_bin(100, 0, 100, 4), Some(3));
        assert_eq!(animation_bin(101, 0, 100, 4), None);
        assert_eq!(animation_bin(-1, 0, 100, 4), None);
    }

    #[test]
    fn animate_uses_global_max() {
        let cmap = Colormap::default();
        let recs = vec![rec("1", 0, 0.5, 0.5, "x"), rec("2", 1, 0.5, 0.5, "x"), rec("3", 60, 0.5, 0.5, "x")];
        let frames = animate(&recs, &spec(), 0, 100, 2, &cmap, false).unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[0].pixel(0, 0), cmap.high);
        assert_eq!(frames[1].pixel(0, 0), cmap.map(0.5));
        let single = animate(&recs, &spec(), 0, 100, 1, &cmap, false).unwrap();
        assert_eq!(single, vec![render_density(&recs, &spec(), &cmap, false)]);
        assert!(animate(&recs, &spec(), 5, 5, 1, &cmap, false).is_err());
        assert!(animate(&recs, &spec(), 0, 5, 0, &cmap, false).is_err());
    }

    #[test]
    fn ppm_is_north_up() {
        let mut f = FrameBuffer::for_grid(&spec(), Rgb::BLACK);
        f.set_pixel(0, 0, Rgb(1, 2, 3));
        let mut buf = Vec::new();
        f.write_ppm(&mut buf).unwrap();
        let header = b"P6\n3 2\n255\n";
        assert_eq!(&buf[..header.len()], header);
        let body = &buf[header.len()..];
        assert_eq!(body.len(), 18);
        assert_eq!(&body[9..12], &[1, 2, 3]);
    }

    #[test]
    fn scheme_json_defaults_and_validation() {
        let s: SchemeConfig = serde_json::from_str(r#"{"mode":"height"}"#).unwrap();
        assert_eq!(s, SchemeConfig::default());
        let s: SchemeConfig = serde_json::from_str(r#"{"mode":"keyword","keyword":"mit","alpha":0.5}"#).unwrap();
        assert_eq!(s.mode, SchemeMode::Keyword);
        assert!(serde_json::from_str::<SchemeConfig>(r#"{"mode":"nope"}"#).is_err());
        assert!(serde_json::from_str::<SchemeConfig>(r#"{"colour":1}"#).is_err());
        let bad = SchemeConfig { alpha: 1.5, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SchemeConfig { bins: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SchemeConfig { t0: Some(5), t1: Some(4), ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
