//! Scheme rendering and the frame wire format.

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use luminocity::assoc::{query_bbox, AssocError};
use luminocity::render::{animate, render_density, render_height, render_keyword, RenderError};
use luminocity::store::TableSnapshot;
use luminocity::{FrameBuffer, GeoKeyFormat, GridSpec, HeightGrid, Query, SchemeConfig, SchemeMode, TweetRecord};
use serde::{Deserialize, Serialize};

/// One WS message: `{"seq", "w", "h", "pix"}`, `pix` being base64 of the
/// row-major RGB8 buffer (row 0 south).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameMessage {
    pub seq: u64,
    pub w: usize,
    pub h: usize,
    pub pix: String,
}

impl FrameMessage {
    pub fn encode(frame: &FrameBuffer) -> Self {
        Self { seq: frame.seq, w: frame.width, h: frame.height, pix: STANDARD.encode(&frame.pixels) }
    }

    pub fn decode(&self) -> Result<FrameBuffer, base64::DecodeError> {
        let pixels = STANDARD.decode(&self.pix)?;
        Ok(FrameBuffer { width: self.w, height: self.h, seq: self.seq, pixels })
    }
}

/// In-grid records within the scheme's time window, as `query_bbox` returns
/// them.
pub fn window_records(
    snap: &TableSnapshot,
    spec: &GridSpec,
    fmt: GeoKeyFormat,
    t0: Option<i64>,
    t1: Option<i64>,
) -> Result<Vec<TweetRecord>, AssocError> {
    query_bbox(snap, &Query::bbox(spec.bbox).between(t0, t1), fmt)
}

/// Animation window: the scheme's bounds, falling back to the data extent.
fn animation_window(scheme: &SchemeConfig, recs: &[TweetRecord]) -> (i64, i64) {
    let lo = recs.iter().map(|r| r.timestamp).min().unwrap_or(0);
    let hi = recs.iter().map(|r| r.timestamp).max().unwrap_or(0);
    let t0 = scheme.t0.unwrap_or(lo);
    let t1 = scheme.t1.unwrap_or(hi);
    if t1 > t0 {
        (t0, t1)
    } else {
        (t0, t0 + 1)
    }
}

/// The frame `scheme` shows at animation step `tick`. `recs` are the
/// window records; height mode ignores them. Topics mode paints density,
/// its labels come from the topics endpoint.
pub fn render_scheme(
    scheme: &SchemeConfig,
    hg: &HeightGrid,
    recs: &[TweetRecord],
    tick: u64,
) -> Result<FrameBuffer, RenderError> {
    let spec = &hg.spec;
    let cmap = &scheme.colormap;
    match scheme.mode {
        SchemeMode::Height => Ok(render_height(hg, cmap)),
        SchemeMode::Density | SchemeMode::Topics => Ok(render_density(recs, spec, cmap, scheme.log_scale)),
        SchemeMode::Keyword => {
            let base = render_height(hg, cmap);
            render_keyword(recs, &scheme.keyword, spec, &base, scheme.alpha, cmap, scheme.log_scale)
        }
        SchemeMode::Animate => {
            let (t0, t1) = animation_window(scheme, recs);
            let mut frames = animate(recs, spec, t0, t1, scheme.bins, cmap, scheme.log_scale)?;
            let i = (tick % frames.len() as u64) as usize;
            Ok(frames.swap_remove(i))
        }
    }
}
