//! Geo-tagged post pipeline: digit-interleaved location keys, an embedded
//! exploded-schema store, associative-array selection, height grids and
//! frame rendering.

pub mod assoc;
pub mod geokey;
pub mod gridmap;
pub mod ingest;
pub mod render;
pub mod store;
pub mod tokenize;

pub use assoc::{query_bbox, select_cols, AssocArray, Query};
pub use geokey::{box_range, decode_latlon, encode_latlon, refine, BBox, GeoKey, GeoKeyFormat, GeoKeyRange};
pub use gridmap::{GridSpec, HeightGrid, PointCloud};
pub use ingest::{IngestStats, TweetRecord};
pub use render::{Colormap, FrameBuffer, Rgb, SchemeConfig, SchemeMode};
pub use store::{Cell, Table, TableSet};
